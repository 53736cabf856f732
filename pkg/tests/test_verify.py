"""Scaled norms, predicted exponents, slope fits and the sweep pipeline."""

import math
import subprocess
import sys

import numpy as np
import pytest

from thinflow.constitutive import build_derived, corey
from thinflow.problem import Geometry, ProblemSpec, classify, preset_coefficients, preset_forcing
from thinflow.reconstruct import VectorField, reconstruct_on_mesh
from thinflow.reduced1d import Grid1D, solve_limit
from thinflow.reference import AxisymMesh, FullSolution, cross_section_mean
from thinflow.verify import (
    DEFAULT_EPS_LADDER,
    NORM_IDS,
    NormSpec,
    SweepGrids,
    fit_rate,
    predicted_rate,
    reference_velocities,
    report_from_records,
    scaled_norm,
    sweep,
    write_sweep_artifacts,
)

DERIVED = build_derived(corey())

STATE_IDS = ("maxT_L2", "L2T_H1_weighted", "maxT_H1")
MEAN_IDS = ("crosssection_mean_sup", "crosssection_mean_H1")
VELOCITY_IDS = ("velocity_maxT_L2", "velocity_L2T")


def make_spec(
    ell=1.0,
    horizon_T=0.5,
    alpha=1.0,
    beta=0.0,
    epsilon=0.25,
    s_mean=0.45,
    s_amplitude=0.15,
    trace_amplitude=0.08,
    q_amplitude=1.0,
):
    geom = Geometry(length_ell=ell, epsilon=epsilon, horizon_T=horizon_T)
    coeff = preset_coefficients(ell, beta)
    forcing = preset_forcing(
        ell, horizon_T, alpha,
        s_mean=s_mean, s_amplitude=s_amplitude, trace_amplitude=trace_amplitude,
        q_amplitude=q_amplitude,
    )
    return ProblemSpec(geometry=geom, coefficients=coeff, forcing=forcing, derived=DERIVED)


def flat_mesh(n_x=64, n_r=32, epsilon=0.5):
    mesh = AxisymMesh(n_x=n_x, n_r=n_r, ell=1.0, epsilon=epsilon)
    times = np.linspace(0.0, 1.0, 5)
    return mesh, times


# ---------------------------------------------------------------------------
# scaled norms
# ---------------------------------------------------------------------------


def test_unknown_norm_id_rejected():
    with pytest.raises(ValueError, match="unknown norm id"):
        NormSpec("energy")
    with pytest.raises(ValueError, match="unknown norm id"):
        predicted_rate(classify(1.0, 0.0), "energy")


def test_zero_field_scores_zero_in_every_norm():
    mesh, times = flat_mesh(n_x=16, n_r=8)
    zero = np.zeros((times.size, mesh.n_x + 1, mesh.n_r))
    for nid in NORM_IDS:
        field = VectorField(zero, zero) if nid.startswith("velocity") else zero
        assert scaled_norm(field, nid, mesh, times, 0.5, 0.0) == 0.0


def test_constant_field_norm_is_its_absolute_value():
    mesh, times = flat_mesh(n_x=32, n_r=16, epsilon=0.01)
    c = np.full((times.size, mesh.n_x + 1, mesh.n_r), -2.131)
    assert scaled_norm(c, "maxT_L2", mesh, times, 0.01) == pytest.approx(2.131, rel=1e-12)
    assert scaled_norm(c, "maxT_H1", mesh, times, 0.01) == pytest.approx(2.131, rel=1e-12)


def test_linear_profile_matches_analytic_integral():
    mesh, times = flat_mesh(n_x=256, n_r=8)
    shape = (times.size, mesh.n_x + 1, mesh.n_r)
    fx = np.broadcast_to(mesh.x[None, :, None], shape).copy()
    got = scaled_norm(fx, "maxT_L2", mesh, times, 0.5)
    assert got == pytest.approx(1.0 / math.sqrt(3.0), rel=1e-5)
    full_h1 = scaled_norm(fx, "maxT_H1", mesh, times, 0.5)
    assert full_h1 == pytest.approx(math.sqrt(4.0 / 3.0), rel=1e-5)


def test_transverse_gradient_weight_follows_beta():
    mesh, times = flat_mesh(n_x=16, n_r=64, epsilon=1.0)
    shape = (times.size, mesh.n_x + 1, mesh.n_r)
    r2 = np.broadcast_to((mesh.rho ** 2)[None, None, :], shape).copy()

    at_unit = [scaled_norm(r2, "L2T_H1_weighted", mesh, times, 1.0, b)
               for b in (0.0, 1.3, -0.7)]
    assert at_unit[0] == at_unit[1] == at_unit[2]
    assert at_unit[0] == pytest.approx(math.sqrt(1.0 / 3.0 + 2.0), rel=1e-3)

    mesh_thin, _ = flat_mesh(n_x=16, n_r=64, epsilon=0.5)
    lo = scaled_norm(r2, "L2T_H1_weighted", mesh_thin, times, 0.5, 1.0)
    hi = scaled_norm(r2, "L2T_H1_weighted", mesh_thin, times, 0.5, 1.5)
    assert lo > hi
    assert lo == pytest.approx(math.sqrt(1.0 / 3.0 + 2.0 * 0.5 ** (1.0 - 2.0)), rel=1e-3)


def test_velocity_norm_combines_components():
    mesh, times = flat_mesh(n_x=16, n_r=8)
    shape = (times.size, mesh.n_x + 1, mesh.n_r)
    v = VectorField(np.full(shape, 3.0), np.full(shape, 4.0))
    assert scaled_norm(v, "velocity_maxT_L2", mesh, times, 0.5) == pytest.approx(5.0, rel=1e-12)
    with pytest.raises(ValueError, match="scalar field"):
        scaled_norm(v, "maxT_L2", mesh, times, 0.5)


def test_norm_rejects_mismatched_shapes():
    mesh, times = flat_mesh(n_x=16, n_r=8)
    bad = np.zeros((times.size, mesh.n_x, mesh.n_r))
    with pytest.raises(ValueError, match="does not match"):
        scaled_norm(bad, "maxT_L2", mesh, times, 0.5)


# ---------------------------------------------------------------------------
# cross-section means
# ---------------------------------------------------------------------------


def test_mean_sup_norm_is_plain_maximum_over_axis_and_time():
    mesh, times = flat_mesh(n_x=32, n_r=8)
    shape = (times.size, mesh.n_x + 1, mesh.n_r)
    ramp = (times / times[-1])[:, None, None]
    field = (np.broadcast_to(mesh.x[None, :, None], shape) * ramp).copy()
    got = scaled_norm(field, "crosssection_mean_sup", mesh, times, 0.5)
    assert got == pytest.approx(1.0, rel=1e-12)


def test_mean_of_radius_independent_field_is_itself():
    mesh, times = flat_mesh(n_x=24, n_r=16)
    profile = np.cos(mesh.x)[None, :, None]
    field = np.broadcast_to(profile, (times.size, mesh.n_x + 1, mesh.n_r)).copy()
    mean = cross_section_mean(field, mesh)
    assert mean == pytest.approx(np.broadcast_to(np.cos(mesh.x), mean.shape), rel=1e-13)


def test_mean_of_radius_squared_is_one_half():
    mesh, _ = flat_mesh(n_x=16, n_r=64, epsilon=1.0)
    field = np.broadcast_to((mesh.rho ** 2)[None, :], (mesh.n_x + 1, mesh.n_r)).copy()
    mean = cross_section_mean(field, mesh)
    assert mean == pytest.approx(np.full(mesh.n_x + 1, 0.5), rel=1e-3)


def test_mean_of_composite_pressure_recovers_limit_pressure():
    spec = make_spec(epsilon=0.5)
    grid = Grid1D(n_x=24, n_t=12, ell=1.0, horizon_T=0.5)
    reduced = solve_limit(spec, grid, pressure_method="fv")
    mesh = AxisymMesh(n_x=24, n_r=32, ell=1.0, epsilon=0.5)
    approx = reconstruct_on_mesh(spec, reduced, 0.5, mesh=mesh)
    mean_p = cross_section_mean(approx.P_approx, mesh)
    assert np.abs(mean_p - reduced.p0).max() < 1e-4


# ---------------------------------------------------------------------------
# predicted exponents
# ---------------------------------------------------------------------------


def test_predicted_rate_published_examples():
    for nid in STATE_IDS + MEAN_IDS:
        assert predicted_rate(classify(2.0, 1.0), nid) == pytest.approx(1.0)
    for nid in NORM_IDS:
        assert predicted_rate(classify(3.0, 0.0), nid) == pytest.approx(4.0)
    for nid in VELOCITY_IDS:
        assert predicted_rate(classify(1.0, 1.0), nid) == pytest.approx(0.5)


def test_predicted_rate_case1_table():
    base = classify(1.0, 0.0)
    assert all(predicted_rate(base, nid) == 2.0 for nid in NORM_IDS)

    slow = classify(1.0, 0.8)
    assert predicted_rate(slow, "maxT_L2") == pytest.approx(0.6)
    assert predicted_rate(slow, "pressure_phase_L2T_H1") == pytest.approx(0.6)
    assert predicted_rate(slow, "velocity_L2T") == pytest.approx(0.6)

    negative = classify(1.0, -1.0)
    assert predicted_rate(negative, "maxT_L2") == pytest.approx(1.5)
    assert predicted_rate(negative, "velocity_L2T") == pytest.approx(1.0)


def test_predicted_rate_case2_table():
    assert predicted_rate(classify(1.5, 0.0), "maxT_L2") == pytest.approx(1.0)
    assert predicted_rate(classify(1.5, 0.0), "velocity_L2T") == pytest.approx(1.0)

    fast = classify(2.5, 1.0)
    assert predicted_rate(fast, "crosssection_mean_H1") == pytest.approx(1.25)
    assert predicted_rate(fast, "velocity_maxT_L2") == pytest.approx(1.25)

    slow = classify(1.5, 1.0)
    assert predicted_rate(slow, "maxT_L2") == pytest.approx(0.5)
    assert predicted_rate(slow, "velocity_maxT_L2") == pytest.approx(0.5)

    # velocity branches meet where the state minimum switches over
    meet = classify(2.0, 1.0)
    assert predicted_rate(meet, "velocity_L2T") == pytest.approx(1.0)
    assert predicted_rate(meet, "maxT_L2") == pytest.approx(1.0)


def test_predicted_rate_negative_beta_velocity_branches():
    assert predicted_rate(classify(4.0, -2.0), "velocity_L2T") == pytest.approx(2.0)
    assert predicted_rate(classify(6.0, -2.0), "velocity_L2T") == pytest.approx(3.5)
    assert predicted_rate(classify(1.5, -2.0), "velocity_L2T") is None
    assert predicted_rate(classify(1.5, -2.0), "maxT_L2") == pytest.approx(0.5)


def test_predicted_rate_rejects_unsupported_regime():
    with pytest.raises(ValueError, match="no predicted rates"):
        predicted_rate(classify(0.5, 0.0), "maxT_L2")


# ---------------------------------------------------------------------------
# slope fits and report assembly
# ---------------------------------------------------------------------------


def test_fit_recovers_exact_power_law():
    fit = fit_rate([0.2, 0.1, 0.05], [0.04, 0.01, 0.0025])
    assert fit.slope == pytest.approx(2.0, abs=1e-12)
    assert fit.residual < 1e-12


def test_fit_recovers_slope_and_intercept():
    eps = np.array(DEFAULT_EPS_LADDER)
    fit = fit_rate(eps, 3.0 * eps ** 1.5)
    assert fit.slope == pytest.approx(1.5, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-12)
    assert fit.residual < 1e-12


def test_fit_uses_finest_rungs_only():
    eps = [0.4, 0.3, 0.2, 0.1, 0.05]
    err = [10.0 * e ** 2 if e > 0.25 else e ** 2 for e in eps]
    assert fit_rate(eps, err).slope == pytest.approx(2.0, abs=1e-12)
    assert fit_rate(eps, err, tail=5).slope != pytest.approx(2.0, abs=1e-3)


def test_fit_with_vanishing_errors_reports_infinite_slope():
    fit = fit_rate([0.2, 0.1, 0.05], [0.0, 0.0, 0.0])
    assert math.isinf(fit.slope)
    assert fit.residual == 0.0


def test_report_verdicts_per_norm():
    regime = classify(1.0, 0.0)
    eps = (0.2, 0.1, 0.05)
    records = [(e, "maxT_L2", e ** 2) for e in eps]
    records += [(e, "velocity_L2T", 0.3 * e) for e in eps]
    report = report_from_records(regime, records)
    assert report.eps_ladder == eps
    assert report.predicted["maxT_L2"] == 2.0
    assert report.verdict["maxT_L2"] == "pass"
    assert report.verdict["velocity_L2T"] == "fail"
    assert not report.passed
    assert report.fitted_slope["velocity_L2T"] == pytest.approx(1.0, abs=1e-12)


def test_report_skips_norms_without_prediction():
    regime = classify(1.5, -2.0)
    records = [(e, "velocity_L2T", e) for e in (0.2, 0.1, 0.05)]
    report = report_from_records(regime, records)
    assert report.verdict["velocity_L2T"] == "skip"
    assert report.predicted["velocity_L2T"] is None
    assert report.passed


# ---------------------------------------------------------------------------
# reference velocities
# ---------------------------------------------------------------------------


def test_reference_velocities_on_manufactured_fields():
    spec = make_spec(epsilon=0.3)
    mesh = AxisymMesh(n_x=16, n_r=8, ell=1.0, epsilon=0.3)
    times = np.linspace(0.0, 0.5, 4)
    shape = (times.size, mesh.n_x + 1, mesh.n_r)
    P = np.broadcast_to(1.0 - mesh.x[None, :, None], shape).copy()
    S = np.full(shape, 0.45)
    full = FullSolution(mesh=mesh, times=times, P=P, S=S,
                        epsilon=0.3, alpha=1.0, beta=0.0)
    vt, vw = reference_velocities(spec, full)
    lam = float(DERIVED.lambda_total(np.array(0.45)))
    lam_w = float(DERIVED.lambda_w(np.array(0.45)))
    assert vt.longitudinal == pytest.approx(np.full(shape, lam), rel=1e-12)
    assert np.all(vt.transverse == 0.0)
    assert vw.longitudinal == pytest.approx(np.full(shape, lam_w), rel=1e-12)


# ---------------------------------------------------------------------------
# the sweep
# ---------------------------------------------------------------------------


def test_sweep_validates_ladder_and_regime():
    spec = make_spec()
    with pytest.raises(ValueError, match="at least 3"):
        sweep(spec, eps_ladder=(0.2, 0.1))
    with pytest.raises(ValueError, match="strictly decreasing"):
        sweep(spec, eps_ladder=(0.1, 0.2, 0.05))
    with pytest.raises(ValueError, match="disagrees"):
        sweep(spec, regime=classify(2.0, 0.0), eps_ladder=(0.2, 0.1, 0.05))
    bad = make_spec(alpha=0.5)
    with pytest.raises(ValueError, match="no rate predictions"):
        sweep(bad, eps_ladder=(0.2, 0.1, 0.05))


def test_case1_sweep_meets_predicted_rates():
    spec = make_spec()
    grids = SweepGrids(n_x=96, n_t=96, n_r=24, disk_n_r=48, disk_n_theta=32)
    report = sweep(spec, eps_ladder=(0.2, 0.1, 0.05), grids=grids)

    assert len(report.records) == 3 * len(NORM_IDS)
    assert report.fitted_slope["maxT_L2"] >= 1.7
    assert report.passed
    for nid in NORM_IDS:
        assert report.verdict[nid] == "pass"
        values = [v for _, n, v in report.records if n == nid]
        assert all(b <= a for a, b in zip(values, values[1:])), nid
    assert report.meta["separable_cells"]


def test_sweep_artifacts_round_trip(tmp_path):
    regime = classify(1.0, 0.0)
    eps = (0.2, 0.1, 0.05)
    records = []
    for nid in NORM_IDS:
        records += [(e, nid, 0.7 * e ** 2) for e in eps]
    report = report_from_records(regime, records)

    paths = write_sweep_artifacts(report, tmp_path, header_lines=["ladder = 0.2 0.1 0.05"])
    for key in ("errors", "rates", "plot_script", "figure"):
        assert paths[key].exists()

    errors_text = paths["errors"].read_text().splitlines()
    assert errors_text[0].startswith("#")
    assert "eps,norm_id,value" in errors_text
    data_rows = [r for r in errors_text if r and not r.startswith("#")][1:]
    assert len(data_rows) == len(records)
    first = data_rows[0].split(",")
    assert float(first[0]) == 0.2 and float(first[2]) == 0.7 * 0.2 ** 2

    rates_text = [r for r in paths["rates"].read_text().splitlines()
                  if r and not r.startswith("#")]
    assert rates_text[0] == "norm_id,fitted,predicted,verdict"
    assert len(rates_text) == 1 + len(NORM_IDS)
    assert all(row.endswith(",pass") for row in rates_text[1:])

    assert paths["figure"].read_bytes()[:4] == b"\x89PNG"

    # the standalone script reproduces the figure from the CSV alone
    paths["figure"].unlink()
    subprocess.run([sys.executable, str(paths["plot_script"])],
                   check=True, timeout=120, capture_output=True)
    assert paths["figure"].read_bytes()[:4] == b"\x89PNG"
