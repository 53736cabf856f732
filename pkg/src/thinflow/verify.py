"""Scaled error norms, epsilon sweeps and convergence-rate verdicts.

Norms follow the thin-domain convention: every cylinder integral is divided
by the square root of the cylinder volume pi epsilon^2 ell, so a constant
field has norm equal to its absolute value no matter how thin the domain.
Weighted Sobolev norms put weight one on longitudinal derivatives and
epsilon^beta on the physical transverse gradient; since the mesh stores the
scaled radius, this shows up as a factor epsilon^(beta - 2) on the squared
rho derivative. Cross-section mean norms live on the axis segment: the sup
variant is the plain maximum over axis and time, the H1 variant integrates
the length-averaged H1 energy over time.

A sweep drives the whole pipeline down a ladder of decreasing radii: the
axisymmetric reference solve on one side, the dimension-reduced solution
with its cell profiles and reconstructed velocities on the other. Both
sides share the x grid, the time step and the difference stencils, so
discretization error largely cancels and the recorded differences isolate
the model gap. Error slopes are fitted by least squares in log-log
coordinates over the finest rungs and compared with the predicted exponent
for the active regime; a norm passes when its fitted slope is no more than
a configurable slack below the prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from thinflow._stencils import ddx
from thinflow.cell import make_disk_mesh
from thinflow.problem import ProblemSpec, Regime
from thinflow.reconstruct import (
    ApproxFields,
    CellBank,
    VectorField,
    reconstruct_on_mesh,
)
from thinflow.reduced1d import Grid1D, solve_limit, solve_with_correctors
from thinflow.reference import (
    AxisymMesh,
    FullSolution,
    cross_section_mean,
    solve_reference,
)

NORM_IDS = (
    "maxT_L2",
    "L2T_H1_weighted",
    "maxT_H1",
    "crosssection_mean_sup",
    "crosssection_mean_H1",
    "velocity_maxT_L2",
    "velocity_L2T",
    "pressure_phase_L2T_H1",
)

_VELOCITY_IDS = frozenset({"velocity_maxT_L2", "velocity_L2T"})
_MEAN_IDS = frozenset({"crosssection_mean_sup", "crosssection_mean_H1"})

DEFAULT_EPS_LADDER = (0.2, 0.1, 0.05, 0.025)


@dataclass(frozen=True)
class NormSpec:
    """One entry of the fixed norm menu; every value carries the volume scaling."""

    id: str

    def __post_init__(self):
        if self.id not in NORM_IDS:
            raise ValueError(
                "unknown norm id %r; expected one of %s" % (self.id, ", ".join(NORM_IDS))
            )


@dataclass(frozen=True)
class SweepGrids:
    """Discretization bundle shared by every rung of a sweep."""

    n_x: int = 192
    n_t: int = 160
    n_r: int = 32
    disk_n_r: int = 64
    disk_n_theta: int = 64


@dataclass(frozen=True)
class RateFit:
    """Least-squares line through (log eps, log error) points."""

    slope: float
    intercept: float
    residual: float


@dataclass
class RateReport:
    """Everything a sweep measured: raw errors, fits, predictions, verdicts."""

    regime: Regime
    eps_ladder: tuple
    records: list
    fitted_slope: dict
    intercept: dict
    fit_residual: dict
    predicted: dict
    verdict: dict
    slack: float = 0.3
    tail: int = 3
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v != "fail" for v in self.verdict.values())


# ---------------------------------------------------------------------------
# scaled norms
# ---------------------------------------------------------------------------


def _volume_mean(squared: np.ndarray, mesh: AxisymMesh) -> np.ndarray:
    """Volume average of a squared integrand, one value per time slice."""
    ring = cross_section_mean(squared, mesh)
    return ring @ mesh.weights_x / mesh.ell


def scaled_norm(field_values, norm, mesh: AxisymMesh, times, epsilon: float,
                beta: float = 0.0) -> float:
    """Evaluate one scaled norm of a difference field on a reference mesh.

    field_values has shape (n_slices, n_x + 1, n_r); the velocity norms also
    accept a VectorField with components of that shape, and a plain array is
    then read as a single nonzero component. times must match the leading
    axis. epsilon and beta enter only through the transverse-gradient
    weight epsilon^(beta - 2); the volume scaling cancels against the
    cross-section measure, which is why a constant field c scores |c| in
    maxT_L2 at every radius.
    """
    if isinstance(norm, str):
        norm = NormSpec(norm)
    nid = norm.id
    if not epsilon > 0.0:
        raise ValueError("epsilon must be positive")
    times = np.asarray(times, dtype=float)

    if isinstance(field_values, VectorField):
        if nid not in _VELOCITY_IDS:
            raise ValueError("norm %s expects a scalar field" % nid)
        parts = (field_values.longitudinal, field_values.transverse)
        arrays = [np.asarray(p, dtype=float) for p in parts]
    else:
        arrays = [np.asarray(field_values, dtype=float)]
    shape = (times.size, mesh.n_x + 1, mesh.n_r)
    for arr in arrays:
        if arr.shape != shape:
            raise ValueError(
                "field shape %s does not match %d time slices on a %d x %d mesh"
                % (arr.shape, times.size, mesh.n_x + 1, mesh.n_r)
            )

    if nid in _VELOCITY_IDS:
        sq = sum(a * a for a in arrays)
        g = _volume_mean(sq, mesh)
        if nid == "velocity_maxT_L2":
            return float(np.sqrt(np.max(g)))
        return float(np.sqrt(np.trapezoid(g, times)))

    f = arrays[0]
    if nid == "maxT_L2":
        g = _volume_mean(f * f, mesh)
        return float(np.sqrt(np.max(g)))

    if nid in ("maxT_H1", "L2T_H1_weighted", "pressure_phase_L2T_H1"):
        weight = epsilon ** (beta - 2.0)
        energy = (
            f * f
            + ddx(f, mesh.dx, axis=1) ** 2
            + weight * ddx(f, mesh.drho, axis=2) ** 2
        )
        g = _volume_mean(energy, mesh)
        if nid == "maxT_H1":
            return float(np.sqrt(np.max(g)))
        return float(np.sqrt(np.trapezoid(g, times)))

    # cross-section mean norms on the axis segment
    m = cross_section_mean(f, mesh)
    if nid == "crosssection_mean_sup":
        return float(np.max(np.abs(m)))
    energy = m * m + ddx(m, mesh.dx, axis=1) ** 2
    g = energy @ mesh.weights_x / mesh.ell
    return float(np.sqrt(np.trapezoid(g, times)))


# ---------------------------------------------------------------------------
# predicted exponents
# ---------------------------------------------------------------------------


def predicted_rate(regime: Regime, norm_id: str):
    """Predicted decay exponent of one scaled error norm, or None.

    With unit-order lateral inflow (Case1) and unscaled transverse
    permeability (beta = 0) every tracked norm decays at order 2. Scaling
    the transverse permeability (beta != 0) slows the state, mean and phase
    pressure norms to 1 - beta/2 and caps the velocity norms at order one.
    With weak lateral inflow (Case2) the exponents become
    min{2(alpha - 1), alpha + 1} at beta = 0 and
    min{alpha - 1, (alpha - beta + 1)/2} otherwise, while the velocity
    norms follow a piecewise table in (alpha, beta). For strongly
    conductive cross sections (beta < 0) with alpha <= 1 - beta/2 the
    two-term expansion does not control the velocity error; the function
    then returns None, which callers must treat as "no prediction" rather
    than as a failure.
    """
    if norm_id not in NORM_IDS:
        raise ValueError(
            "unknown norm id %r; expected one of %s" % (norm_id, ", ".join(NORM_IDS))
        )
    if not regime.supported:
        raise ValueError(
            "regime %s (%s) has no predicted rates" % (regime.tag, regime.reason)
        )
    alpha, beta = regime.alpha, regime.beta
    velocity = norm_id in _VELOCITY_IDS

    if regime.tag == "Case1":
        if beta == 0.0:
            return 2.0
        state = 1.0 - beta / 2.0
        return min(state, 1.0) if velocity else state

    if beta == 0.0:
        return min(2.0 * (alpha - 1.0), alpha + 1.0)
    state = min(alpha - 1.0, (alpha - beta + 1.0) / 2.0)
    if not velocity:
        return state
    if alpha >= 3.0 - beta:
        if beta > 0.0:
            return (alpha - beta + 1.0) / 2.0
        return (alpha + 1.0) / 2.0
    if beta > 0.0:
        return alpha - 1.0
    if alpha > 1.0 - beta / 2.0:
        return alpha - 1.0 + beta / 2.0
    return None


# ---------------------------------------------------------------------------
# slope fitting and report assembly
# ---------------------------------------------------------------------------


def fit_rate(eps_values, errors, tail: int = 3) -> RateFit:
    """Least-squares slope of log error against log epsilon.

    Only the finest `tail` rungs enter the fit, to keep coarse
    pre-asymptotic rungs from dragging the slope. Intercepts are natural
    log. Rungs whose error is zero or not finite are dropped; if fewer than
    two usable rungs remain, the approximation is exact to roundoff and the
    fit reports an infinite slope.
    """
    eps = np.asarray(eps_values, dtype=float)
    err = np.asarray(errors, dtype=float)
    if eps.shape != err.shape or eps.ndim != 1:
        raise ValueError("epsilon and error lists must be 1d with matching shapes")
    if eps.size < 2:
        raise ValueError("need at least two rungs to fit a slope")
    if tail < 2:
        raise ValueError("tail must keep at least two rungs")

    order = np.argsort(eps)[::-1]
    keep = order[-min(tail, eps.size):]
    sel_eps = eps[keep]
    sel_err = err[keep]
    usable = np.isfinite(sel_err) & (sel_err > 0.0)
    if int(usable.sum()) < 2:
        return RateFit(slope=math.inf, intercept=math.nan, residual=0.0)
    x = np.log(sel_eps[usable])
    y = np.log(sel_err[usable])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return RateFit(
        slope=float(slope),
        intercept=float(intercept),
        residual=float(np.sqrt(np.mean(resid * resid))),
    )


def report_from_records(regime: Regime, records, slack: float = 0.3,
                        tail: int = 3) -> RateReport:
    """Fit slopes per norm id and attach predictions and verdicts.

    records is a flat list of (epsilon, norm id, error value) tuples, in
    ladder order. The verdict is one-sided: the predictions bound the error
    from above, so a steeper observed decay passes while a shallower one
    fails. Norms without a prediction are marked "skip".
    """
    records = [(float(e), str(n), float(v)) for e, n, v in records]
    ids = []
    ladder = []
    for eps, nid, _ in records:
        if nid not in ids:
            ids.append(nid)
        if eps not in ladder:
            ladder.append(eps)

    fitted, inter, resid, pred, verdict = {}, {}, {}, {}, {}
    for nid in ids:
        eps = [e for e, n, _ in records if n == nid]
        err = [v for e, n, v in records if n == nid]
        fit = fit_rate(eps, err, tail=tail)
        fitted[nid] = fit.slope
        inter[nid] = fit.intercept
        resid[nid] = fit.residual
        expected = predicted_rate(regime, nid)
        pred[nid] = expected
        if expected is None:
            verdict[nid] = "skip"
        else:
            verdict[nid] = "pass" if fit.slope >= expected - slack else "fail"

    return RateReport(
        regime=regime,
        eps_ladder=tuple(ladder),
        records=records,
        fitted_slope=fitted,
        intercept=inter,
        fit_residual=resid,
        predicted=pred,
        verdict=verdict,
        slack=slack,
        tail=tail,
    )


# ---------------------------------------------------------------------------
# reference-side velocities
# ---------------------------------------------------------------------------


def reference_velocities(spec: ProblemSpec, full: FullSolution):
    """Darcy velocities of a reference solution on its own mesh.

    Longitudinal permeability is k1; the transverse block carries
    epsilon^beta k_perp, and taking the radial derivative in the scaled
    coordinate leaves epsilon^(beta - 1) on the transverse component. The
    same difference stencils as the reconstruction formulas keep the two
    sides comparable. Returns (total, water) vector fields.
    """
    mesh = full.mesh
    closures = spec.derived
    x = mesh.x
    k1 = np.asarray(spec.coefficients.k1(x), dtype=float)[None, :, None]
    kp = np.asarray(
        spec.coefficients.k_perp(x[:, None], mesh.rho[None, :]), dtype=float
    )[None]
    lam = np.asarray(closures.lambda_total(full.S), dtype=float)
    cap = np.asarray(closures.cap_diff_Lambda(full.S), dtype=float)
    frac = np.asarray(closures.frac_flow_b(full.S), dtype=float)

    dpdx = ddx(full.P, mesh.dx, axis=1)
    dpdr = ddx(full.P, mesh.drho, axis=2)
    dsdx = ddx(full.S, mesh.dx, axis=1)
    dsdr = ddx(full.S, mesh.drho, axis=2)
    tfac = full.epsilon ** (spec.coefficients.beta - 1.0)

    vt_long = -(lam * k1 * dpdx)
    vt_trans = -(tfac * lam * kp * dpdr)
    vw_long = -(cap * k1 * dsdx) + frac * vt_long
    vw_trans = -(tfac * cap * kp * dsdr) + frac * vt_trans
    return (
        VectorField(longitudinal=vt_long, transverse=vt_trans),
        VectorField(longitudinal=vw_long, transverse=vw_trans),
    )


# ---------------------------------------------------------------------------
# the sweep pipeline
# ---------------------------------------------------------------------------


def _epsilon_records(spec: ProblemSpec, full: FullSolution, approx: ApproxFields,
                     epsilon: float):
    """All eight scaled error norms between one reference/reconstruction pair.

    Saturation carries the L2-type state norms and the mean H1 norm, pressure
    the full H1 norm and the mean sup norm; the velocity norms compare total
    and wetting Darcy fluxes, and the phase norm compares wetting pressures.
    """
    mesh = full.mesh
    times = full.times
    beta = spec.coefficients.beta
    closures = spec.derived

    dS = full.S - approx.S_approx
    dP = full.P - approx.P_approx
    vt_ref, vw_ref = reference_velocities(spec, full)
    dVt = VectorField(
        longitudinal=vt_ref.longitudinal - approx.V_total.longitudinal,
        transverse=vt_ref.transverse - approx.V_total.transverse,
    )
    dVw = VectorField(
        longitudinal=vw_ref.longitudinal - approx.V_w.longitudinal,
        transverse=vw_ref.transverse - approx.V_w.transverse,
    )
    pw_ref = full.P - np.asarray(closures.reduced_shift(full.S), dtype=float)
    dPw = pw_ref - approx.Pw_approx

    fields = {
        "maxT_L2": dS,
        "L2T_H1_weighted": dS,
        "maxT_H1": dP,
        "crosssection_mean_sup": dP,
        "crosssection_mean_H1": dS,
        "velocity_maxT_L2": dVt,
        "velocity_L2T": dVw,
        "pressure_phase_L2T_H1": dPw,
    }
    return [
        (epsilon, nid, scaled_norm(fields[nid], NormSpec(nid), mesh, times, epsilon, beta))
        for nid in NORM_IDS
    ]


def sweep(spec: ProblemSpec, regime: Regime | None = None,
          eps_ladder=DEFAULT_EPS_LADDER, grids: SweepGrids | None = None, *,
          slack: float = 0.3, tail: int = 3) -> RateReport:
    """Run the full comparison pipeline down an epsilon ladder.

    Per rung: solve the axisymmetric reference problem, reconstruct the
    composite approximation from the (epsilon-independent) reduced solution
    and cell bank, and record every scaled norm of the difference fields.
    The reduced problem is solved once with the finite-volume pressure so
    its fluxes match the reference discretization; Case2 regimes get the
    corrector pair on top. Any solver failure aborts the sweep naming the
    offending epsilon.
    """
    if regime is None:
        regime = spec.regime
    elif regime != spec.regime:
        raise ValueError(
            "regime %r disagrees with the problem data, which classify as %r"
            % (regime.tag, spec.regime.tag)
        )
    if not regime.supported:
        raise ValueError(
            "regime %s (%s) has no rate predictions" % (regime.tag, regime.reason)
        )
    ladder = tuple(float(e) for e in eps_ladder)
    if len(ladder) < 3:
        raise ValueError("sweep needs at least 3 epsilon values, got %d" % len(ladder))
    if ladder[-1] <= 0.0:
        raise ValueError("epsilon values must be positive")
    if any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise ValueError("epsilon ladder must be strictly decreasing")

    grids = grids if grids is not None else SweepGrids()
    geom = spec.geometry
    grid = Grid1D(n_x=grids.n_x, n_t=grids.n_t, ell=geom.length_ell,
                  horizon_T=geom.horizon_T)
    if regime.tag == "Case2":
        reduced = solve_with_correctors(spec, grid, pressure_method="fv")
    else:
        reduced = solve_limit(spec, grid, pressure_method="fv")
    bank = CellBank(spec, reduced,
                    disk=make_disk_mesh(grids.disk_n_r, grids.disk_n_theta))

    records = []
    for eps in ladder:
        try:
            mesh = AxisymMesh(n_x=grids.n_x, n_r=grids.n_r, ell=geom.length_ell,
                              epsilon=eps)
            full = solve_reference(spec, eps, mesh, dt=grid.dt)
            approx = reconstruct_on_mesh(spec, reduced, eps, mesh=mesh, cells=bank)
        except Exception as exc:
            raise RuntimeError("sweep aborted at epsilon = %g: %s" % (eps, exc)) from exc
        records.extend(_epsilon_records(spec, full, approx, eps))

    report = report_from_records(spec.regime, records, slack=slack, tail=tail)
    report.meta.update(grids=grids, separable_cells=bank.separable)
    return report


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

_PLOT_SCRIPT = '''#!/usr/bin/env python3
"""Render log-log error curves from errors.csv into rates.png."""

import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent
curves = defaultdict(list)
with open(here / "errors.csv", newline="") as fh:
    rows = csv.reader(line for line in fh if not line.startswith("#"))
    for row in rows:
        if row and row[0] != "eps":
            curves[row[1]].append((float(row[0]), float(row[2])))

fig, ax = plt.subplots(figsize=(7.0, 5.0))
for name in sorted(curves):
    points = sorted(curves[name], reverse=True)
    eps = [e for e, v in points if v > 0.0]
    val = [v for e, v in points if v > 0.0]
    if eps:
        ax.loglog(eps, val, marker="o", label=name)
ax.set_xlabel("epsilon")
ax.set_ylabel("scaled error norm")
ax.grid(True, which="both", alpha=0.3)
ax.legend(fontsize=8)
fig.tight_layout()
fig.savefig(here / "rates.png", dpi=150)
print("wrote", here / "rates.png")
'''


def _format(value) -> str:
    if value is None:
        return "unavailable"
    return "%.17g" % value


def _render_rates_png(report: RateReport, path: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    curves = {}
    for eps, nid, value in report.records:
        curves.setdefault(nid, []).append((eps, value))
    fig, ax = plt.subplots(figsize=(7.0, 5.0))
    for nid in NORM_IDS:
        if nid not in curves:
            continue
        points = sorted(curves[nid], reverse=True)
        eps = [e for e, v in points if v > 0.0]
        val = [v for e, v in points if v > 0.0]
        if not eps:
            continue
        slope = report.fitted_slope.get(nid)
        label = nid if slope is None or not math.isfinite(slope) \
            else "%s (slope %.2f)" % (nid, slope)
        ax.loglog(eps, val, marker="o", label=label)
    ax.set_xlabel("epsilon")
    ax.set_ylabel("scaled error norm")
    ax.set_title("empirical convergence, regime %s" % report.regime.tag)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_sweep_artifacts(report: RateReport, out_dir, header_lines=()):
    """Write errors.csv, rates.csv, a standalone plot script and rates.png.

    Text artifacts start with '#' comment lines: the caller's header
    (typically the resolved run configuration) followed by the regime and
    the verdict slack. Floats carry 17 significant digits so the files
    round-trip exactly. Returns the paths keyed by artifact name.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    head = ["# " + line for line in header_lines]
    head.append("# regime = %s (alpha=%g, beta=%g)"
                % (report.regime.tag, report.regime.alpha, report.regime.beta))
    head.append("# slack = %s, fit tail = %d" % (_format(report.slack), report.tail))

    errors_path = out / "errors.csv"
    lines = list(head)
    lines.append("eps,norm_id,value")
    for eps, nid, value in report.records:
        lines.append("%s,%s,%s" % (_format(eps), nid, _format(value)))
    errors_path.write_text("\n".join(lines) + "\n")

    rates_path = out / "rates.csv"
    lines = list(head)
    lines.append("norm_id,fitted,predicted,verdict")
    for nid in report.fitted_slope:
        lines.append("%s,%s,%s,%s" % (
            nid,
            _format(report.fitted_slope[nid]),
            _format(report.predicted[nid]),
            report.verdict[nid],
        ))
    rates_path.write_text("\n".join(lines) + "\n")

    script_path = out / "plot_rates.py"
    shebang, body = _PLOT_SCRIPT.split("\n", 1)
    script_path.write_text("\n".join([shebang] + head) + "\n" + body)

    figure_path = out / "rates.png"
    _render_rates_png(report, figure_path)

    return {
        "errors": errors_path,
        "rates": rates_path,
        "plot_script": script_path,
        "figure": figure_path,
    }
