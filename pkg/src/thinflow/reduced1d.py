"""The one-dimensional limit problem and its first-order correctors.

The limit pressure solves (lambda(s0) k1 p0')' = qhat with Dirichlet ends,
and the limit saturation solves

    phi ds0/dt = d/dx (Lambda(s0) k1 ds0/dx + lambda_w(s0) k1 dp0/dx) - b(s0) qhat

with saturation traces taken from S0 at the ends. In the regime where the
lateral inflow only enters at first order (Case2), qhat is dropped from both
equations and a linear corrector pair carries it instead.

Discretization: node-centered grid, implicit Euler, central diffusive fluxes
with arithmetic-mean face coefficients, and the advective flux in fractional
flow form b(s_up) * G_f, upwinded by the sign of the face total flux G_f.
The wetting front travels with velocity proportional to -G, so the donor
node sits on the right exactly when G_f > 0. Each Newton iterate refreshes
the pressure from the current saturation iterate, so an accepted step
satisfies the coupled pair to the Newton tolerance.

Two pressure paths are available: the closed-form representation evaluated
by composite trapezoid quadrature (endpoint values hold exactly), and a
finite-volume solve whose face stencil matches the axisymmetric reference
solver. Epsilon sweeps use the second path so that the longitudinal
discretization error of the two solvers cancels in the comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import solve_banded

from thinflow.problem import ProblemSpec, qhat_nodes, validate_problem

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 40
MAX_LINE_SEARCH_HALVINGS = 8
MAX_DT_HALVINGS = 10
MAX_PRINCIPLE_TOL = 1e-6


class SolverError(RuntimeError):
    """Any failure of the nonlinear or linear solves."""


class NewtonError(SolverError):
    """Newton did not converge; the caller may retry with a smaller step."""


class MaxPrincipleError(SolverError):
    """A computed saturation left the admissible corridor; never retried."""


@dataclass(frozen=True)
class Grid1D:
    """Uniform space-time grid: n_x cells (n_x + 1 nodes) by n_t steps."""

    n_x: int
    n_t: int
    ell: float
    horizon_T: float

    def __post_init__(self):
        if self.n_x < 8:
            raise ValueError("n_x must be at least 8")
        if self.n_t < 8:
            raise ValueError("n_t must be at least 8")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.ell, self.n_x + 1)

    @property
    def dx(self) -> float:
        return self.ell / self.n_x

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon_T, self.n_t + 1)

    @property
    def dt(self) -> float:
        return self.horizon_T / self.n_t


def default_grid(spec: ProblemSpec, n_x: int = 400) -> Grid1D:
    n_t = max(8, int(round(400 * spec.geometry.horizon_T)))
    return Grid1D(
        n_x=n_x, n_t=n_t, ell=spec.geometry.length_ell, horizon_T=spec.geometry.horizon_T
    )


@dataclass
class ReducedSolution:
    """Time-indexed nodal fields of the limit problem, correctors optional."""

    grid: Grid1D
    p0: np.ndarray
    s0: np.ndarray
    regime_tag: str
    p_corr: np.ndarray | None = None
    s_corr: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# pressure
# ---------------------------------------------------------------------------


def _cumtrapz(f: np.ndarray, dx: float) -> np.ndarray:
    out = np.empty_like(f)
    out[0] = 0.0
    np.cumsum(0.5 * (f[1:] + f[:-1]) * dx, out=out[1:])
    return out


def _representation(spec, x, s_slice, t, use_qhat):
    """Shared quadrature core: nodal pressure and nodal total flux G."""
    dx = x[1] - x[0]
    lamk = np.asarray(
        spec.derived.lambda_total(s_slice) * spec.coefficients.k1(x), dtype=float
    )
    inv = 1.0 / lamk
    if use_qhat:
        qh = qhat_nodes(spec.forcing, x, t)
        G_run = _cumtrapz(qh, dx)
    else:
        G_run = np.zeros_like(x)
    cum_inv = _cumtrapz(inv, dx)
    cum_invG = _cumtrapz(inv * G_run, dx)
    q0 = float(spec.forcing.q0(t))
    q_ell = float(spec.forcing.q_ell(t))
    C = (q_ell - q0 - cum_invG[-1]) / cum_inv[-1]
    p = q0 + cum_invG + C * cum_inv
    p[0] = q0
    p[-1] = q_ell
    return p, G_run + C


def pressure_from_representation(
    spec: ProblemSpec, x: np.ndarray, s_slice: np.ndarray, t: float, use_qhat: bool = True
) -> np.ndarray:
    """Closed-form pressure p0(x) = q0 + int_0^x (G + C) / (lambda k1).

    G is the running integral of qhat and the constant C is fixed by the
    condition p0(ell) = q_ell. Composite trapezoids on the node grid, so
    both endpoint values hold exactly.
    """
    p, _ = _representation(spec, x, s_slice, t, use_qhat)
    return p


def representation_total_flux(
    spec: ProblemSpec, x: np.ndarray, s_slice: np.ndarray, t: float, use_qhat: bool = True
) -> np.ndarray:
    """Nodal total flux G = lambda(s) k1 dp0/dx from the same quadrature."""
    _, G = _representation(spec, x, s_slice, t, use_qhat)
    return G


def pressure_fv(
    spec: ProblemSpec, x: np.ndarray, s_slice: np.ndarray, t: float, use_qhat: bool = True
):
    """Finite-volume pressure with arithmetic-mean face conductances.

    Matches the longitudinal stencil of the axisymmetric reference solver.
    Returns (p, G_faces); the discrete divergence of G_faces reproduces the
    nodal qhat source exactly.
    """
    dx = x[1] - x[0]
    n = x.size - 1
    lamk = np.asarray(
        spec.derived.lambda_total(s_slice) * spec.coefficients.k1(x), dtype=float
    )
    sigma = 0.5 * (lamk[:-1] + lamk[1:])
    qh = qhat_nodes(spec.forcing, x, t) if use_qhat else np.zeros_like(x)
    q0 = float(spec.forcing.q0(t))
    q_ell = float(spec.forcing.q_ell(t))

    m = n - 1
    ab = np.zeros((3, m))
    ab[0, 1:] = sigma[1:-1]
    ab[1, :] = -(sigma[:-1] + sigma[1:])
    ab[2, :-1] = sigma[1:-1]
    rhs = qh[1:-1] * dx * dx
    rhs[0] -= sigma[0] * q0
    rhs[-1] -= sigma[-1] * q_ell
    interior = solve_banded((1, 1), ab, rhs)
    p = np.empty(n + 1)
    p[0] = q0
    p[-1] = q_ell
    p[1:-1] = interior
    G_faces = sigma * np.diff(p) / dx
    return p, G_faces


def _pressure_and_faces(spec, x, s_slice, t, use_qhat, method):
    """Pressure plus face fluxes whose discrete divergence is exactly qhat.

    The exact divergence identity is what lets the fractional-flow source
    telescope against the advective flux, which is the discrete form of the
    maximum principle; a merely second-order-accurate face flux would let
    the saturation creep out of the admissibility corridor.
    """
    if method == "fv":
        return pressure_fv(spec, x, s_slice, t, use_qhat)
    if method != "representation":
        raise ValueError("unknown pressure method %r" % method)
    p, G_nodes = _representation(spec, x, s_slice, t, use_qhat)
    dx = x[1] - x[0]
    G_faces = np.empty(x.size - 1)
    G_faces[0] = 0.5 * (G_nodes[0] + G_nodes[1])
    if use_qhat:
        qh = qhat_nodes(spec.forcing, x, t)
        np.cumsum(dx * qh[1:-1], out=G_faces[1:])
        G_faces[1:] += G_faces[0]
    else:
        G_faces[1:] = G_faces[0]
    return p, G_faces


# ---------------------------------------------------------------------------
# saturation step
# ---------------------------------------------------------------------------


def _transport_fluxes(spec, x, s, G_faces):
    """Diffusive plus fractional-flow advective flux on the n_x faces."""
    d = spec.derived
    dx = x[1] - x[0]
    node_D = d.cap_diff_Lambda(s) * spec.coefficients.k1(x)
    D_f = 0.5 * (node_D[:-1] + node_D[1:])
    b_nodes = d.frac_flow_b(s)
    b_up = np.where(G_faces > 0.0, b_nodes[1:], b_nodes[:-1])
    return D_f * np.diff(s) / dx + b_up * G_faces


def _saturation_residual(spec, x, s, s_prev, dt, G_faces, qh, extra):
    dx = x[1] - x[0]
    phi = spec.coefficients.porosity(x)
    flux = _transport_fluxes(spec, x, s, G_faces)
    R = phi[1:-1] * (s[1:-1] - s_prev[1:-1]) / dt
    R -= (flux[1:] - flux[:-1]) / dx
    R += spec.derived.frac_flow_b(s[1:-1]) * qh[1:-1]
    if extra is not None:
        R -= extra[1:-1]
    return R


def _saturation_jacobian(spec, x, s, dt, G_faces, qh):
    """Banded tridiagonal Jacobian of the residual in solve_banded layout."""
    d = spec.derived
    dx = x[1] - x[0]
    k1 = spec.coefficients.k1(x)
    phi = spec.coefficients.porosity(x)
    node_D = d.cap_diff_Lambda(s) * k1
    node_dD = d.d_cap_diff_Lambda(s) * k1
    D_f = 0.5 * (node_D[:-1] + node_D[1:])
    ds = np.diff(s)
    dfd_left = (0.5 * node_dD[:-1] * ds - D_f) / dx
    dfd_right = (0.5 * node_dD[1:] * ds + D_f) / dx
    up_right = G_faces > 0.0
    db = d.d_frac_flow_b(s)
    dfl = dfd_left + np.where(up_right, 0.0, db[:-1] * G_faces)
    dfr = dfd_right + np.where(up_right, db[1:] * G_faces, 0.0)

    m = x.size - 2
    diag = phi[1:-1] / dt - (dfl[1:] - dfr[:-1]) / dx + db[1:-1] * qh[1:-1]
    ab = np.zeros((3, m))
    ab[1, :] = diag
    if m > 1:
        ab[0, 1:] = -dfr[1:-1] / dx
        ab[2, :-1] = dfl[1:-1] / dx
    return ab


def _newton_saturation(spec, x, s_init, s_prev, t_new, dt, use_qhat, method, extra, tol):
    """Damped Newton with the pressure refreshed at every iterate."""
    s = s_init.copy()
    s[0] = float(np.asarray(spec.forcing.S0(np.asarray(x[0]), t_new), dtype=float))
    s[-1] = float(np.asarray(spec.forcing.S0(np.asarray(x[-1]), t_new), dtype=float))
    qh = qhat_nodes(spec.forcing, x, t_new) if use_qhat else np.zeros_like(x)
    extra_vals = None if extra is None else np.asarray(extra(x, t_new), dtype=float)

    p, G_faces = _pressure_and_faces(spec, x, s, t_new, use_qhat, method)
    R = _saturation_residual(spec, x, s, s_prev, dt, G_faces, qh, extra_vals)
    scale = max(1.0, float(np.max(np.abs(R))))
    n_pressure = 1
    for _ in range(NEWTON_MAX_ITER):
        rnorm = float(np.max(np.abs(R)))
        if rnorm <= tol * scale:
            return s, p, G_faces, n_pressure
        ab = _saturation_jacobian(spec, x, s, dt, G_faces, qh)
        delta = solve_banded((1, 1), ab, -R)
        lam = 1.0
        accepted = False
        for _ in range(MAX_LINE_SEARCH_HALVINGS + 1):
            s_try = s.copy()
            s_try[1:-1] += lam * delta
            R_try = _saturation_residual(spec, x, s_try, s_prev, dt, G_faces, qh, extra_vals)
            if float(np.max(np.abs(R_try))) < rnorm:
                s = s_try
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            raise NewtonError("line search stalled at t = %g" % t_new)
        p, G_faces = _pressure_and_faces(spec, x, s, t_new, use_qhat, method)
        n_pressure += 1
        R = _saturation_residual(spec, x, s, s_prev, dt, G_faces, qh, extra_vals)
    raise NewtonError("no convergence in %d iterations at t = %g" % (NEWTON_MAX_ITER, t_new))


def step_saturation(
    spec: ProblemSpec,
    x: np.ndarray,
    s_prev: np.ndarray,
    t_new: float,
    dt: float,
    use_qhat: bool = True,
    pressure_method: str = "representation",
    extra_source: Callable | None = None,
    corridor: tuple[float, float] | None = None,
    newton_tol: float = NEWTON_TOL,
    _depth: int = 0,
):
    """One implicit step ending at t_new, halving dt on Newton failure.

    Returns (s_new, p_new, info). A maximum-principle breach beyond the
    1e-6 corridor tolerance aborts immediately; Newton failures retry on
    two half steps, at most MAX_DT_HALVINGS levels deep.
    """
    try:
        s_new, p_new, _, n_press = _newton_saturation(
            spec, x, s_prev, s_prev, t_new, dt, use_qhat, pressure_method,
            extra_source, newton_tol,
        )
    except NewtonError:
        if _depth >= MAX_DT_HALVINGS:
            raise SolverError(
                "saturation step failed after %d dt halvings at t = %g"
                % (MAX_DT_HALVINGS, t_new)
            )
        s_half, _, info_a = step_saturation(
            spec, x, s_prev, t_new - dt / 2.0, dt / 2.0, use_qhat, pressure_method,
            extra_source, corridor, newton_tol, _depth + 1,
        )
        s_new, p_new, info_b = step_saturation(
            spec, x, s_half, t_new, dt / 2.0, use_qhat, pressure_method,
            extra_source, corridor, newton_tol, _depth + 1,
        )
        return s_new, p_new, {
            "pressure_solves": info_a["pressure_solves"] + info_b["pressure_solves"]
        }

    if corridor is not None:
        lo, hi = corridor
        smin, smax = float(np.min(s_new)), float(np.max(s_new))
        if smin < lo - MAX_PRINCIPLE_TOL or smax > hi + MAX_PRINCIPLE_TOL:
            raise MaxPrincipleError(
                "saturation left [%g, %g] at t = %g: range [%g, %g]"
                % (lo, hi, t_new, smin, smax)
            )
    return s_new, p_new, {"pressure_solves": n_press}


def solve_limit(
    spec: ProblemSpec,
    grid: Grid1D,
    pressure_method: str = "representation",
    extra_source: Callable | None = None,
    validate: bool = True,
    newton_tol: float = NEWTON_TOL,
) -> ReducedSolution:
    """March the limit problem over the full horizon.

    The admissibility corridor [delta0, delta1] is enforced after every
    step unless a manufactured extra source is present, in which case the
    maximum principle does not apply.
    """
    report = validate_problem(spec)
    if validate and not report.passed:
        raise ValueError("inadmissible problem: " + "; ".join(report.violations))
    if not spec.regime.supported:
        raise ValueError(
            "regime %s (%s) has no limit problem" % (spec.regime.tag, spec.regime.reason)
        )
    use_qhat = spec.regime.tag == "Case1"
    corridor = None if extra_source is not None else (report.delta0, report.delta1)

    x = grid.x
    times = grid.times
    s = np.asarray(spec.forcing.S0(x, 0.0), dtype=float).copy()
    p, _ = _pressure_and_faces(spec, x, s, 0.0, use_qhat, pressure_method)
    p0 = np.empty((grid.n_t + 1, grid.n_x + 1))
    s0 = np.empty_like(p0)
    p0[0] = p
    s0[0] = s
    pressure_solves = 1
    for n in range(grid.n_t):
        s, p, info = step_saturation(
            spec, x, s, float(times[n + 1]), grid.dt,
            use_qhat=use_qhat,
            pressure_method=pressure_method,
            extra_source=extra_source,
            corridor=corridor,
            newton_tol=newton_tol,
        )
        pressure_solves += info["pressure_solves"]
        p0[n + 1] = p
        s0[n + 1] = s
    return ReducedSolution(
        grid=grid,
        p0=p0,
        s0=s0,
        regime_tag=spec.regime.tag,
        meta={
            "pressure_method": pressure_method,
            "pressure_solves": pressure_solves,
            "corridor": (report.delta0, report.delta1),
            "extra_source": extra_source,
            "use_qhat": use_qhat,
            "newton_tol": newton_tol,
        },
    )


# ---------------------------------------------------------------------------
# corrector
# ---------------------------------------------------------------------------


def solve_corrector(spec: ProblemSpec, base: ReducedSolution, grid: Grid1D | None = None):
    """Linear corrector pair carrying the lateral source at first order.

    Assembled as the exact directional derivative of the discrete limit
    scheme with respect to the lateral-source amplitude. Per implicit step
    the coupled linear block is

        div(sigma grad p_c + lambda'(s0) k1 s_c grad p0) = qhat,
        phi ds_c/dt - div(linearized transport flux) = -b(s0) qhat,

    around the base fields at the new time level. The continuum limit of
    these rows carries the advective coefficients
    a1 = Lambda'(s0) k1 s0' + lambda_w'(s0) k1 p0' and a2 = lambda_w(s0) k1.
    Boundary and initial values are zero. In the regime where the inflow
    already drives the limit problem (Case1) the same machinery runs with
    zero sources, so the returned pair vanishes identically.
    """
    if grid is None:
        grid = base.grid
    elif grid.n_x != base.grid.n_x or grid.n_t != base.grid.n_t:
        raise ValueError("corrector grid must match the base solution grid")
    d = spec.derived
    x = grid.x
    dx = grid.dx
    dt = grid.dt
    n = grid.n_x
    m = n - 1
    k1 = np.asarray(spec.coefficients.k1(x), dtype=float)
    phi = np.asarray(spec.coefficients.porosity(x), dtype=float)

    zero_source = spec.regime.tag != "Case2"

    p_corr = np.zeros((grid.n_t + 1, n + 1))
    s_corr = np.zeros_like(p_corr)
    sc_prev = np.zeros(n + 1)

    for step in range(grid.n_t):
        t_new = float(grid.times[step + 1])
        s0 = base.s0[step + 1]
        p0 = base.p0[step + 1]
        qh = np.zeros_like(x) if zero_source else qhat_nodes(spec.forcing, x, t_new)

        lam_nodes = d.lambda_total(s0) * k1
        sigma = 0.5 * (lam_nodes[:-1] + lam_nodes[1:])
        dp0 = np.diff(p0)
        G_faces = sigma * dp0 / dx
        up_right = G_faces > 0.0

        a_nodes = d.d_lambda_total(s0) * k1
        node_D = d.cap_diff_Lambda(s0) * k1
        node_dD = d.d_cap_diff_Lambda(s0) * k1
        D_f = 0.5 * (node_D[:-1] + node_D[1:])
        ds0 = np.diff(s0)
        b0 = d.frac_flow_b(s0)
        db0 = d.d_frac_flow_b(s0)
        b_up = np.where(up_right, b0[1:], b0[:-1])
        db_up = np.where(up_right, db0[1:], db0[:-1])

        rows: list[int] = []
        cols: list[int] = []
        vals: list[float] = []
        rhs = np.zeros(2 * m)

        def add(r, node, offset, v):
            # offset 0 addresses p_corr unknowns, offset m addresses s_corr
            if 1 <= node <= n - 1:
                rows.append(r)
                cols.append(offset + node - 1)
                vals.append(v)

        for i in range(1, n):
            rp = i - 1
            rs = m + i - 1
            add(rs, i, m, phi[i] / dt)
            rhs[rp] = qh[i]
            rhs[rs] = phi[i] * sc_prev[i] / dt - b0[i] * qh[i]
            for f, sgn in ((i, 1.0), (i - 1, -1.0)):
                # pressure row: div of (sigma dpc + mean(a sc) dp0) equals qhat
                cp = sgn / (dx * dx)
                add(rp, f + 1, 0, cp * sigma[f])
                add(rp, f, 0, -cp * sigma[f])
                add(rp, f, m, cp * 0.5 * a_nodes[f] * dp0[f])
                add(rp, f + 1, m, cp * 0.5 * a_nodes[f + 1] * dp0[f])
                # saturation row: the residual carries -div(flux); the flux is
                # linear in (pc, sc) via diffusion, upwind advection, and the
                # flux corrector Gc = (sigma dpc + mean(a sc) dp0) / dx
                cs = -sgn / dx
                add(rs, f, m, cs * (-D_f[f] + 0.5 * node_dD[f] * ds0[f]) / dx)
                add(rs, f + 1, m, cs * (D_f[f] + 0.5 * node_dD[f + 1] * ds0[f]) / dx)
                up_node = f + 1 if up_right[f] else f
                add(rs, up_node, m, cs * db_up[f] * G_faces[f])
                add(rs, f + 1, 0, cs * b_up[f] * sigma[f] / dx)
                add(rs, f, 0, -cs * b_up[f] * sigma[f] / dx)
                add(rs, f, m, cs * b_up[f] * 0.5 * a_nodes[f] * dp0[f] / dx)
                add(rs, f + 1, m, cs * b_up[f] * 0.5 * a_nodes[f + 1] * dp0[f] / dx)

        A = sp.csr_matrix(
            (np.asarray(vals), (np.asarray(rows), np.asarray(cols))),
            shape=(2 * m, 2 * m),
        )
        sol = spla.spsolve(A, rhs)
        pc = np.zeros(n + 1)
        sc = np.zeros(n + 1)
        pc[1:-1] = sol[:m]
        sc[1:-1] = sol[m:]
        p_corr[step + 1] = pc
        s_corr[step + 1] = sc
        sc_prev = sc

    return p_corr, s_corr


def solve_with_correctors(
    spec: ProblemSpec,
    grid: Grid1D,
    pressure_method: str = "fv",
    validate: bool = True,
) -> ReducedSolution:
    """Limit solve plus the corrector pair attached to the result."""
    base = solve_limit(spec, grid, pressure_method=pressure_method, validate=validate)
    p_corr, s_corr = solve_corrector(spec, base)
    base.p_corr = p_corr
    base.s_corr = s_corr
    return base


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def advective_form_check(spec: ProblemSpec, sol: ReducedSolution):
    """Residual of the scalar advective form of the saturation equation.

    Expanding the fractional-flow divergence turns the limit equation into

        phi ds/dt = d/dx (Lambda(s) k1 ds/dx) + a ds/dx,  a = b'(s) G,

    with G the total flux; the lateral source cancels between b(s) qhat and
    the divergence of b G. The stored solution is evaluated with central
    stencils and a backward time difference, so the residual measures the
    consistency of the marching scheme and shrinks under refinement.
    Returns the worst interior residual and the advective coefficient field.
    """
    from thinflow._stencils import ddx

    grid = sol.grid
    x = grid.x
    use_qhat = sol.meta.get("use_qhat", sol.regime_tag == "Case1")
    k1 = np.asarray(spec.coefficients.k1(x), dtype=float)
    phi = np.asarray(spec.coefficients.porosity(x), dtype=float)
    d = spec.derived

    a_field = np.zeros_like(sol.s0)
    for nstep in range(grid.n_t + 1):
        G = representation_total_flux(
            spec, x, sol.s0[nstep], float(grid.times[nstep]), use_qhat
        )
        a_field[nstep] = d.d_frac_flow_b(sol.s0[nstep]) * G
    worst = 0.0
    for nstep in range(1, grid.n_t + 1):
        s = sol.s0[nstep]
        dsdt = (s - sol.s0[nstep - 1]) / grid.dt
        diff_flux = d.cap_diff_Lambda(s) * k1 * ddx(s, grid.dx)
        resid = phi * dsdt - ddx(diff_flux, grid.dx) - a_field[nstep] * ddx(s, grid.dx)
        worst = max(worst, float(np.max(np.abs(resid[1:-1]))))
    return {"max_residual": worst, "advective_coefficient": a_field}


def discrete_mass_balance(spec: ProblemSpec, sol: ReducedSolution) -> float:
    """Worst per-step defect of the telescoped discrete mass balance.

    Summing the accepted interior residuals against the cell width leaves
    storage change minus boundary fluxes plus the distributed source; the
    result closes to the Newton tolerance when the march was consistent.
    """
    grid = sol.grid
    x = grid.x
    dx = grid.dx
    phi = np.asarray(spec.coefficients.porosity(x), dtype=float)
    method = sol.meta.get("pressure_method", "representation")
    use_qhat = sol.meta.get("use_qhat", sol.regime_tag == "Case1")
    extra = sol.meta.get("extra_source")

    worst = 0.0
    for nstep in range(1, grid.n_t + 1):
        t = float(grid.times[nstep])
        s = sol.s0[nstep]
        _, G_faces = _pressure_and_faces(spec, x, s, t, use_qhat, method)
        flux = _transport_fluxes(spec, x, s, G_faces)
        qh = qhat_nodes(spec.forcing, x, t) if use_qhat else np.zeros_like(x)
        storage = float(
            np.sum(phi[1:-1] * (s[1:-1] - sol.s0[nstep - 1][1:-1]) / grid.dt) * dx
        )
        boundary = float(flux[-1] - flux[0])
        source = float(np.sum(spec.derived.frac_flow_b(s[1:-1]) * qh[1:-1]) * dx)
        defect = storage - boundary + source
        if extra is not None:
            defect -= float(np.sum(np.asarray(extra(x, t))[1:-1]) * dx)
        worst = max(worst, abs(defect))
    return worst
