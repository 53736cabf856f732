"""Acceptance suite: one pass/fail test per release criterion.

Each test prints a single summary line with the measured quantities next to
the thresholds it asserts, so a verbose run reads as a checklist. The four
epsilon sweeps run at release resolution and dominate the runtime; every
criterion that reads a sweep shares it through a module-scoped fixture.
"""

import numpy as np
import pytest
import sympy as sym

from thinflow.cell import evaluate_polar, make_disk_mesh, solve_cell
from thinflow.constitutive import build_derived, corey
from thinflow.problem import (
    Geometry,
    ProblemSpec,
    classify,
    preset_coefficients,
    preset_forcing,
    validate_problem,
)
from thinflow.reconstruct import reconstruct_on_mesh
from thinflow.reduced1d import Grid1D, solve_corrector, solve_limit
from thinflow.reference import AxisymMesh, solve_reference
from thinflow.verify import DEFAULT_EPS_LADDER, sweep

DERIVED = build_derived(corey())

STATE_IDS = ("maxT_L2", "L2T_H1_weighted", "maxT_H1")


def make_spec(alpha, beta, ell=1.0, horizon_T=0.5, epsilon=0.1, **forcing_kw):
    forcing_kw.setdefault("s_amplitude", 0.15)
    forcing_kw.setdefault("trace_amplitude", 0.08)
    forcing_kw.setdefault("q_amplitude", 1.0)
    return ProblemSpec(
        geometry=Geometry(length_ell=ell, epsilon=epsilon, horizon_T=horizon_T),
        coefficients=preset_coefficients(ell, beta),
        forcing=preset_forcing(ell, horizon_T, alpha, **forcing_kw),
        derived=DERIVED,
    )


def run_sweep(alpha, beta):
    report = sweep(make_spec(alpha, beta), eps_ladder=DEFAULT_EPS_LADDER)
    slopes = " ".join(
        "%s=%.2f" % (nid, report.fitted_slope[nid]) for nid in report.fitted_slope
    )
    print("sweep alpha=%g beta=%g: %s" % (alpha, beta, slopes))
    return report


@pytest.fixture(scope="module")
def report_a1b0():
    return run_sweep(1.0, 0.0)


@pytest.fixture(scope="module")
def report_a1b1():
    return run_sweep(1.0, 1.0)


@pytest.fixture(scope="module")
def report_a2b0():
    return run_sweep(2.0, 0.0)


@pytest.fixture(scope="module")
def report_a2b1():
    return run_sweep(2.0, 1.0)


# ---------------------------------------------------------------------------
# criterion 1: analytic disk benchmark for the cell solver
# ---------------------------------------------------------------------------


def test_cell_solver_analytic_disk():
    # node values of the quadratic are exact to the solver floor, so the
    # halving ratio is measured on the interpolated field, which carries
    # the honest second-order representation error
    probe_r = np.linspace(0.0, 1.0, 157)
    probe_t = np.linspace(0.0, 2.0 * np.pi, 157)
    node_errs, interp_errs = [], []
    for n in (16, 32, 64):
        sol = solve_cell(make_disk_mesh(n, n), None, 2.0, 1.0)
        exact = 0.25 - 0.5 * sol.mesh.rho[:, None] ** 2
        node_errs.append(float(np.max(np.abs(sol.values - exact))))
        vals = evaluate_polar(sol, probe_r, probe_t)
        interp_errs.append(float(np.max(np.abs(vals - (0.25 - 0.5 * probe_r ** 2)))))
    ratios = [interp_errs[i] / interp_errs[i + 1] for i in range(2)]
    print("cell benchmark: node err64=%.2e (need <=1e-5), halving ratios %s (need >=3.5)"
          % (node_errs[-1], ["%.2f" % r for r in ratios]))
    assert node_errs[-1] <= 1e-5
    assert min(ratios) >= 3.5


# ---------------------------------------------------------------------------
# criterion 2: manufactured-solution orders for the reduced solver
# ---------------------------------------------------------------------------


def _manufactured_residual(ell, horizon_T, s_mean, s_amp):
    x, t = sym.symbols("x t", nonnegative=True)
    s = s_mean + s_amp * sym.sin(sym.pi * x / ell) ** 2 * (t / horizon_T) ** 2
    lw = s ** 2
    lo = (1 - s) ** 2
    lam_cap = lw * lo / (lw + lo)
    resid = sym.Rational(35, 100) * sym.diff(s, t) - sym.diff(lam_cap * sym.diff(s, x), x)
    f = sym.lambdify((x, t), resid, "numpy")
    s_fn = sym.lambdify((x, t), s, "numpy")
    return (
        lambda xv, tv: np.asarray(f(np.asarray(xv, dtype=float), tv), dtype=float),
        lambda xv, tv: np.asarray(s_fn(np.asarray(xv, dtype=float), tv), dtype=float),
    )


def test_reduced_solver_manufactured_orders():
    ell, horizon = 1.0, 0.5
    spec = make_spec(1.0, 0.0, trace_amplitude=0.0, q_amplitude=0.0,
                     q0_coeffs=(), q_ell_coeffs=())
    extra, s_exact = _manufactured_residual(ell, horizon, 0.45, 0.15)

    def err(n_x, n_t):
        grid = Grid1D(n_x=n_x, n_t=n_t, ell=ell, horizon_T=horizon)
        sol = solve_limit(spec, grid, extra_source=extra, validate=False)
        diff = sol.s0[-1] - s_exact(grid.x, horizon)
        return float(np.sqrt(np.trapezoid(diff ** 2, dx=grid.dx)))

    spatial = [err(16, 8), err(32, 32), err(64, 128)]
    temporal = [err(256, 12), err(256, 24), err(256, 48)]
    p_space = min(np.log2(spatial[i] / spatial[i + 1]) for i in range(2))
    p_time = min(np.log2(temporal[i] / temporal[i + 1]) for i in range(2))
    print("manufactured orders: spatial=%.2f (need >=1.8), temporal=%.2f (need >=0.9)"
          % (p_space, p_time))
    assert p_space >= 1.8
    assert p_time >= 0.9


# ---------------------------------------------------------------------------
# criterion 3: saturation corridor on randomized admissible problems
# ---------------------------------------------------------------------------


def test_saturation_stays_in_data_corridor():
    rng = np.random.default_rng(20260817)
    checked = 0
    for case in ("Case1", "Case2"):
        for _ in range(10):
            if case == "Case1":
                alpha, beta = 1.0, float(rng.uniform(-1.0, 1.5))
            else:
                alpha = float(rng.uniform(1.3, 2.8))
                beta = float(rng.uniform(-1.0, min(alpha + 0.5, 2.5)))
            spec = make_spec(
                alpha, beta, epsilon=0.3,
                s_mean=float(rng.uniform(0.35, 0.5)),
                s_amplitude=float(rng.uniform(0.02, 0.12)),
                trace_amplitude=float(rng.uniform(-0.08, 0.08)),
                q_amplitude=float(rng.uniform(0.2, 1.5)),
                q0_coeffs=(float(rng.uniform(0.5, 1.5)),),
                q_ell_coeffs=(float(rng.uniform(-0.5, 0.3)),),
            )
            assert spec.regime.tag == case
            report = validate_problem(spec)
            assert report.passed, report.violations
            lo, hi = report.delta0 - 1e-6, report.delta1 + 1e-3

            grid = Grid1D(n_x=32, n_t=16, ell=1.0, horizon_T=0.5)
            reduced = solve_limit(spec, grid)
            mesh = AxisymMesh(n_x=24, n_r=8, ell=1.0, epsilon=0.3)
            full = solve_reference(spec, 0.3, mesh, dt=0.5 / 16)
            for field in (reduced.s0, full.S):
                assert lo <= field.min() and field.max() <= hi, (alpha, beta)
            checked += 1
    print("saturation corridor held on %d randomized problems (2 fields each)" % checked)


# ---------------------------------------------------------------------------
# criteria 4-7: convergence rates per regime
# ---------------------------------------------------------------------------


def test_rates_alpha1_beta0_state_and_pressure(report_a1b0):
    s_slope = report_a1b0.fitted_slope["maxT_L2"]
    p_slope = report_a1b0.fitted_slope["maxT_H1"]
    print("alpha=1 beta=0: saturation maxT_L2 %.2f, pressure maxT_H1 %.2f (need >=1.7)"
          % (s_slope, p_slope))
    assert s_slope >= 1.7
    assert p_slope >= 1.7


def test_rates_alpha1_beta1_weighted_energy(report_a1b1):
    s_slope = report_a1b1.fitted_slope["L2T_H1_weighted"]
    p_slope = report_a1b1.fitted_slope["maxT_H1"]
    print("alpha=1 beta=1: weighted energies %.2f / %.2f (need >=0.35)"
          % (s_slope, p_slope))
    assert s_slope >= 0.35
    assert p_slope >= 0.35


def test_rates_alpha2_beta0_two_term(report_a2b0):
    slopes = [report_a2b0.fitted_slope[nid] for nid in STATE_IDS]
    print("alpha=2 beta=0: state slopes %s (need >=1.7)"
          % ["%.2f" % s for s in slopes])
    assert min(slopes) >= 1.7


def test_rates_alpha2_beta1_two_term(report_a2b1):
    slopes = [report_a2b1.fitted_slope[nid] for nid in STATE_IDS]
    print("alpha=2 beta=1: state slopes %s (need >=0.7)"
          % ["%.2f" % s for s in slopes])
    assert min(slopes) >= 0.7


# ---------------------------------------------------------------------------
# criterion 8: cross-sectional pressure mean in the sup norm
# ---------------------------------------------------------------------------


def test_pressure_mean_sup_rate(report_a1b0):
    slope = report_a1b0.fitted_slope["crosssection_mean_sup"]
    print("pressure mean sup slope %.2f (need >=1.7)" % slope)
    assert slope >= 1.7


# ---------------------------------------------------------------------------
# criterion 9: velocity rates and the exact phase split
# ---------------------------------------------------------------------------


def test_velocity_rates_and_exact_phase_split(report_a1b0):
    vt_slope = report_a1b0.fitted_slope["velocity_maxT_L2"]
    vw_slope = report_a1b0.fitted_slope["velocity_L2T"]

    spec = make_spec(1.0, 0.0, epsilon=0.25)
    grid = Grid1D(n_x=48, n_t=16, ell=1.0, horizon_T=0.5)
    reduced = solve_limit(spec, grid, pressure_method="fv")
    mesh = AxisymMesh(n_x=48, n_r=16, ell=1.0, epsilon=0.25)
    approx = reconstruct_on_mesh(spec, reduced, 0.25, mesh=mesh)
    exact = (
        np.array_equal(approx.V_o.longitudinal + approx.V_w.longitudinal,
                       approx.V_total.longitudinal)
        and np.array_equal(approx.V_o.transverse + approx.V_w.transverse,
                           approx.V_total.transverse)
    )
    print("velocity slopes %.2f / %.2f (need >=1.7); phase split exact: %s"
          % (vt_slope, vw_slope, exact))
    assert vt_slope >= 1.7
    assert vw_slope >= 1.7
    assert exact


# ---------------------------------------------------------------------------
# criterion 10: closure invariants across Corey exponents
# ---------------------------------------------------------------------------


def test_closure_invariants_across_corey_exponents():
    s = np.linspace(0.0, 1.0, 1001)
    for exponent in (2, 3, 4):
        d = build_derived(corey(n_w=exponent, n_o=exponent))
        b = d.frac_flow_b(s)
        assert b[0] == 0.0 and b[-1] == pytest.approx(1.0, abs=1e-15)
        assert np.all(np.diff(b) >= -1e-14)
        lam_cap = d.cap_diff_Lambda(s)
        assert lam_cap[0] == 0.0 and lam_cap[-1] == 0.0
        assert np.all(lam_cap[1:-1] > 0)
        lam = d.lambda_total(s)
        assert d.c1 > 0
        assert np.all(lam >= d.c1 - 1e-14) and np.all(lam <= d.c2 + 1e-14)
    print("closure invariants hold for Corey exponents 2, 3, 4 on 1001-point grids")


# ---------------------------------------------------------------------------
# criterion 11: regime partition of the exponent plane
# ---------------------------------------------------------------------------


def test_regime_partition_grid():
    alphas = np.linspace(0.0, 4.0, 200)
    betas = np.linspace(-2.0, 4.0, 200)
    tags = {"Case1": 0, "Case2": 0, "Unsupported": 0}
    for a in alphas:
        for b in betas:
            r = classify(a, b)
            tags[r.tag] += 1
            if a == 1.0 and b < 2.0:
                assert r.tag == "Case1", (a, b)
            elif a > 1.0 and a > b - 1.0:
                assert r.tag == "Case2", (a, b)
            else:
                assert r.tag == "Unsupported", (a, b)
                assert r.reason != ""
    assert sum(tags.values()) == 200 * 200

    # the boundary lines themselves: the critical inflow ray, its beta >= 2
    # continuation, and the balanced longitudinal/transverse line
    for b in betas:
        on_ray = classify(1.0, float(b))
        assert on_ray.tag == ("Case1" if b < 2.0 else "Unsupported")
        if b >= 2.0:
            assert on_ray.reason == "critical-line"
        if b - 1.0 > 1.0:
            balanced = classify(float(b) - 1.0, float(b))
            assert balanced.tag == "Unsupported"
            assert balanced.reason == "dual-porosity-boundary"
    print("regime partition exclusive and exhaustive on the 200x200 grid "
          "with correct boundary lines: %s" % tags)


# ---------------------------------------------------------------------------
# criterion 12: correctors vanish at leading order
# ---------------------------------------------------------------------------


def test_correctors_vanish_at_leading_order():
    spec = make_spec(1.0, 0.0, q_amplitude=0.0)
    grid = Grid1D(n_x=32, n_t=12, ell=1.0, horizon_T=0.5)
    reduced = solve_limit(spec, grid, pressure_method="fv")
    p_corr, s_corr = solve_corrector(spec, reduced)
    assert np.all(p_corr == 0.0) and np.all(s_corr == 0.0)

    mesh = AxisymMesh(n_x=32, n_r=8, ell=1.0, epsilon=0.25)
    approx = reconstruct_on_mesh(spec, reduced, 0.25, mesh=mesh)
    assert np.all(approx.V_total.transverse == 0.0)
    assert np.all(approx.V_w.transverse == 0.0)
    print("zero-data correctors identically zero: pressure, saturation, transverse velocity")
