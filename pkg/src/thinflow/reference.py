"""Axisymmetric solver for the two-phase system on the thin cylinder.

This is the yardstick the dimension-reduced solvers are measured against:
the same pressure and saturation equations, but posed on the full section
(0, ell) x (0, epsilon) instead of the midline. For a disk cross section
with angle-independent data the axisymmetric reduction is exact, so nothing
is lost relative to the three-dimensional problem.

The radius is rescaled internally to rho = r / epsilon in (0, 1), which
keeps the transverse resolution independent of epsilon. In these
coordinates the transverse conductances pick up a factor epsilon^(beta-2)
and the prescribed lateral flux enters as epsilon^(alpha-1) Q per unit
column width. The wetting phase crosses the mantle carrying the fraction
b(S) of the total flux, evaluated at the resident saturation of the outer
ring, so lateral inflow does not by itself change the local composition.

Cells are node columns in x (composite trapezoid widths, so the column grid
is the 1D solver's node grid) times annular rings of equal thickness. Face
coefficients are arithmetic means of the adjacent cell values and the
advective flux is upwinded by the sign of the face total flux, both exactly
as in the 1D solver; with Q = 0 and radially uniform data every ring then
satisfies the 1D discrete equations, which is the cross-solver oracle the
tests lean on. Time stepping is implicit Euler with damped Newton, and the
pressure system is re-solved from the current saturation iterate before
every residual evaluation, again matching the 1D solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from thinflow._stencils import trapezoid_weights
from thinflow.problem import ProblemSpec, validate_problem
from thinflow.reduced1d import (
    MAX_DT_HALVINGS,
    MAX_LINE_SEARCH_HALVINGS,
    NEWTON_MAX_ITER,
    NEWTON_TOL,
    MaxPrincipleError,
    NewtonError,
    SolverError,
)

MAX_PRINCIPLE_TOL_INNER = 1e-6
MAX_PRINCIPLE_TOL_OUTER = 1e-3


@dataclass(frozen=True)
class AxisymMesh:
    """Node columns in x times annular rings in the scaled radius.

    Rings live at centers rho_j = (j + 1/2) / n_r and carry volume
    2 pi epsilon^2 rho_j drho per unit column width; column widths are the
    trapezoid weights of the x node grid. The volumes sum to the exact
    cylinder volume pi epsilon^2 ell.
    """

    n_x: int
    n_r: int
    ell: float
    epsilon: float

    def __post_init__(self):
        if self.n_x < 8:
            raise ValueError("n_x must be at least 8")
        if self.n_r < 4:
            raise ValueError("n_r must be at least 4")
        if not (self.ell > 0.0 and self.epsilon > 0.0):
            raise ValueError("ell and epsilon must be positive")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.ell, self.n_x + 1)

    @property
    def dx(self) -> float:
        return self.ell / self.n_x

    @property
    def drho(self) -> float:
        return 1.0 / self.n_r

    @property
    def rho(self) -> np.ndarray:
        return (np.arange(self.n_r) + 0.5) * self.drho

    @property
    def rho_faces(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_r + 1)

    @property
    def weights_x(self) -> np.ndarray:
        return trapezoid_weights(self.n_x + 1, self.dx)

    @property
    def cell_volumes(self) -> np.ndarray:
        ring = 2.0 * np.pi * self.epsilon**2 * self.rho * self.drho
        return np.outer(self.weights_x, ring)


def default_mesh(spec: ProblemSpec, n_x: int = 192, n_r: int = 32,
                 epsilon: float | None = None) -> AxisymMesh:
    eps = spec.geometry.epsilon if epsilon is None else epsilon
    return AxisymMesh(n_x=n_x, n_r=n_r, ell=spec.geometry.length_ell, epsilon=eps)


@dataclass
class FullSolution:
    """Pressure and saturation over (step, column, ring), exponents recorded."""

    mesh: AxisymMesh
    times: np.ndarray
    P: np.ndarray
    S: np.ndarray
    epsilon: float
    alpha: float
    beta: float
    meta: dict = field(default_factory=dict)


def cross_section_mean(field_values: np.ndarray, mesh: AxisymMesh) -> np.ndarray:
    """Average over the unit disk: 2 sum_j f_j rho_j drho along the ring axis."""
    return 2.0 * np.sum(field_values * (mesh.rho * mesh.drho), axis=-1)


def _lateral_profile(forcing, x: np.ndarray, t: float) -> np.ndarray:
    q = np.asarray(forcing.Q(x, 0.0, t), dtype=float)
    if q.shape != x.shape:
        q = np.broadcast_to(q, x.shape).copy()
    return q


def _require_angle_independent(spec: ProblemSpec):
    forcing = spec.forcing
    if forcing.cos_amplitude != 0.0:
        raise ValueError(
            "axisymmetric solver needs angle-independent lateral data; "
            "cos_amplitude is %g" % forcing.cos_amplitude
        )
    ell = spec.geometry.length_ell
    xs = np.array([0.3, 0.5, 0.7]) * ell
    t = spec.geometry.horizon_T
    base = np.asarray(forcing.Q(xs, 0.0, t), dtype=float)
    scale = max(1.0, float(np.max(np.abs(base))))
    for theta in (1.0, 2.5, 4.0):
        other = np.asarray(forcing.Q(xs, theta, t), dtype=float)
        if float(np.max(np.abs(other - base))) > 1e-12 * scale:
            raise ValueError(
                "axisymmetric solver needs angle-independent lateral data; "
                "Q varies with theta"
            )


def _coefficient_tables(spec, mesh):
    """Nodal k1, porosity and the materialized k_perp(x, rho) table."""
    x = mesh.x
    k1 = np.asarray(spec.coefficients.k1(x), dtype=float)
    phi = np.asarray(spec.coefficients.porosity(x), dtype=float)
    kperp = np.ones((mesh.n_x + 1, mesh.n_r)) * np.asarray(
        spec.coefficients.k_perp(x[:, None], mesh.rho[None, :]), dtype=float
    )
    return k1, phi, kperp


def _pressure_solve(spec, mesh, tables, s, t, e_trans, e_lat):
    """Solve the total-flow equation for the current saturation field.

    Returns the full pressure array plus the face fluxes the transport step
    consumes: G_x on x faces per ring (sigma dP/dx form, one value per ring)
    and G_rho on interior ring faces (epsilon^(beta-2) lambda k_perp dP/drho),
    along with the lateral column outflux epsilon^(alpha-1) Q w.
    """
    k1, _, kperp = tables
    n_x, n_r = mesh.n_x, mesh.n_r
    dx, drho = mesh.dx, mesh.drho
    w = mesh.weights_x
    ring = mesh.rho * drho

    lam = np.asarray(spec.derived.lambda_total(s), dtype=float)
    lamk1 = lam * k1[:, None]
    lamkp = lam * kperp
    sigma_x = 0.5 * (lamk1[:-1] + lamk1[1:])
    kap = 0.5 * (lamkp[:, :-1] + lamkp[:, 1:])

    Tx = ring[None, :] * sigma_x / dx
    Trho = e_trans * mesh.rho_faces[1:-1][None, :] * kap * w[:, None] / drho

    q0 = float(spec.forcing.q0(t))
    q_ell = float(spec.forcing.q_ell(t))
    lat = e_lat * _lateral_profile(spec.forcing, mesh.x, t) * w

    m = (n_x - 1) * n_r

    def idx(i, j):
        return (i - 1) * n_r + j

    cols_i = np.arange(1, n_x)
    jj = np.arange(n_r)
    diag = np.zeros(m)
    rhs = np.zeros(m)

    # x faces between two interior columns
    i_f = np.arange(1, n_x - 1)
    left = idx(i_f[:, None], jj[None, :]).ravel()
    right = idx(i_f[:, None] + 1, jj[None, :]).ravel()
    t_int = Tx[1:-1].ravel()
    rows = [left, right]
    colsl = [right, left]
    data = [-t_int, -t_int]
    np.add.at(diag, left, t_int)
    np.add.at(diag, right, t_int)

    # x faces touching the Dirichlet end columns
    first = idx(1, jj)
    np.add.at(diag, first, Tx[0])
    np.add.at(rhs, first, Tx[0] * q0)
    last = idx(n_x - 1, jj)
    np.add.at(diag, last, Tx[-1])
    np.add.at(rhs, last, Tx[-1] * q_ell)

    # ring faces inside each interior column
    j_f = np.arange(n_r - 1)
    low = idx(cols_i[:, None], j_f[None, :]).ravel()
    high = idx(cols_i[:, None], j_f[None, :] + 1).ravel()
    t_rho = Trho[1:-1].ravel()
    rows += [low, high]
    colsl += [high, low]
    data += [-t_rho, -t_rho]
    np.add.at(diag, low, t_rho)
    np.add.at(diag, high, t_rho)

    # lateral flux on the outer ring
    rhs[idx(cols_i, n_r - 1)] -= lat[1:-1]

    rows.append(np.arange(m))
    colsl.append(np.arange(m))
    data.append(diag)
    A = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(colsl))),
        shape=(m, m),
    ).tocsc()
    interior = spla.spsolve(A, rhs)

    P = np.empty((n_x + 1, n_r))
    P[0] = q0
    P[-1] = q_ell
    P[1:-1] = interior.reshape(n_x - 1, n_r)

    Gx = sigma_x * np.diff(P, axis=0) / dx
    Grho = e_trans * kap * np.diff(P, axis=1) / drho
    return P, Gx, Grho, lat


def _transport_terms(spec, mesh, tables, s, Gx, Grho, e_trans):
    """Per-face wetting fluxes in the same form as the 1D solver.

    Fx carries the ring weight rho_j drho, Frho the face radius times the
    column width; dividing their divergence by the cell volume reproduces
    the 1D density-form residual ring by ring. The radial capillary flux
    carries the same epsilon^(beta - 2) factor as the radial total flux:
    both come from the transverse block of the permeability tensor.
    """
    d = spec.derived
    k1, _, kperp = tables
    dx, drho = mesh.dx, mesh.drho
    ring = mesh.rho * drho
    w = mesh.weights_x

    Lam = d.cap_diff_Lambda(s)
    Dx = 0.5 * ((Lam * k1[:, None])[:-1] + (Lam * k1[:, None])[1:])
    Drho = 0.5 * e_trans * ((Lam * kperp)[:, :-1] + (Lam * kperp)[:, 1:])
    b = d.frac_flow_b(s)
    b_up_x = np.where(Gx > 0.0, b[1:], b[:-1])
    b_up_rho = np.where(Grho > 0.0, b[:, 1:], b[:, :-1])

    Fx = ring[None, :] * (Dx * np.diff(s, axis=0) / dx + b_up_x * Gx)
    face_w = mesh.rho_faces[1:-1][None, :] * w[:, None]
    Frho = face_w * (Drho * np.diff(s, axis=1) / drho + b_up_rho * Grho)
    return Fx, Frho, b


def _saturation_residual(spec, mesh, tables, s, s_prev, dt, Gx, Grho, lat,
                         e_trans):
    """Density-form residual on interior columns, all rings."""
    _, phi, _ = tables
    vol = mesh.weights_x[:, None] * (mesh.rho * mesh.drho)[None, :]
    Fx, Frho, b = _transport_terms(spec, mesh, tables, s, Gx, Grho, e_trans)

    R = phi[1:-1, None] * (s[1:-1] - s_prev[1:-1]) / dt
    R -= (Fx[1:] - Fx[:-1]) / vol[1:-1]
    div_rho = np.zeros_like(R)
    div_rho[:, :-1] += Frho[1:-1]
    div_rho[:, 1:] -= Frho[1:-1]
    R -= div_rho / vol[1:-1]
    R[:, -1] += b[1:-1, -1] * lat[1:-1] / vol[1:-1, -1]
    return R


def _saturation_jacobian(spec, mesh, tables, s, dt, Gx, Grho, lat, e_trans):
    """Sparse Jacobian with the pressure field frozen, as in the 1D solver."""
    d = spec.derived
    k1, phi, kperp = tables
    n_x, n_r = mesh.n_x, mesh.n_r
    dx, drho = mesh.dx, mesh.drho
    ring = mesh.rho * drho
    w = mesh.weights_x
    vol = w[:, None] * ring[None, :]

    Lam = d.cap_diff_Lambda(s)
    dLam = d.d_cap_diff_Lambda(s)
    node_Dx = Lam * k1[:, None]
    node_dDx = dLam * k1[:, None]
    node_Dr = e_trans * Lam * kperp
    node_dDr = e_trans * dLam * kperp
    db = d.d_frac_flow_b(s)

    Dx = 0.5 * (node_Dx[:-1] + node_Dx[1:])
    ds_x = np.diff(s, axis=0)
    up_x = Gx > 0.0
    dfx_left = ring[None, :] * (
        (0.5 * node_dDx[:-1] * ds_x - Dx) / dx
        + np.where(up_x, 0.0, db[:-1] * Gx)
    )
    dfx_right = ring[None, :] * (
        (0.5 * node_dDx[1:] * ds_x + Dx) / dx
        + np.where(up_x, db[1:] * Gx, 0.0)
    )

    Dr = 0.5 * (node_Dr[:, :-1] + node_Dr[:, 1:])
    ds_r = np.diff(s, axis=1)
    up_r = Grho > 0.0
    face_w = mesh.rho_faces[1:-1][None, :] * w[:, None]
    dfr_low = face_w * (
        (0.5 * node_dDr[:, :-1] * ds_r - Dr) / drho
        + np.where(up_r, 0.0, db[:, :-1] * Grho)
    )
    dfr_high = face_w * (
        (0.5 * node_dDr[:, 1:] * ds_r + Dr) / drho
        + np.where(up_r, db[:, 1:] * Grho, 0.0)
    )

    def idx(i, j):
        return (i - 1) * n_r + j

    m = (n_x - 1) * n_r
    ii = np.arange(1, n_x)[:, None]
    jj = np.arange(n_r)[None, :]
    rows_c = idx(ii, jj)

    diag = phi[1:-1, None] / dt + np.zeros((n_x - 1, n_r))
    # d/dS_ij of -(Fx_i - Fx_{i-1}) / vol
    diag -= (dfx_left[1:] - dfx_right[:-1]) / vol[1:-1]
    # d/dS_ij of -(Frho_j - Frho_{j-1}) / vol
    dd = np.zeros((n_x - 1, n_r))
    dd[:, :-1] += dfr_low[1:-1]
    dd[:, 1:] -= dfr_high[1:-1]
    diag -= dd / vol[1:-1]
    diag[:, -1] += db[1:-1, -1] * lat[1:-1] / vol[1:-1, -1]

    rows = [rows_c.ravel()]
    cols = [rows_c.ravel()]
    data = [diag.ravel()]

    # east neighbor (i+1, j): -dFx_i/dS_right / vol, skip the end column
    east_rows = rows_c[:-1]
    rows.append(east_rows.ravel())
    cols.append(idx(ii[:-1] + 1, jj).ravel())
    data.append((-dfx_right[1:-1] / vol[1:-2]).ravel())
    # west neighbor (i-1, j): +dFx_{i-1}/dS_left / vol
    west_rows = rows_c[1:]
    rows.append(west_rows.ravel())
    cols.append(idx(ii[1:] - 1, jj).ravel())
    data.append((dfx_left[1:-1] / vol[2:-1]).ravel())
    # outer neighbor (i, j+1): -dFrho_j/dS_high / vol
    rows.append(rows_c[:, :-1].ravel())
    cols.append(idx(ii, jj[:, :-1] + 1).ravel())
    data.append((-dfr_high[1:-1] / vol[1:-1, :-1]).ravel())
    # inner neighbor (i, j-1): +dFrho_{j-1}/dS_low / vol
    rows.append(rows_c[:, 1:].ravel())
    cols.append(idx(ii, jj[:, 1:] - 1).ravel())
    data.append((dfr_low[1:-1] / vol[1:-1, 1:]).ravel())

    return sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(m, m),
    ).tocsc()


def _pin_traces(spec, s, t):
    s[0, :] = float(np.asarray(spec.forcing.S0(np.asarray(0.0), t), dtype=float))
    ell = spec.geometry.length_ell
    s[-1, :] = float(np.asarray(spec.forcing.S0(np.asarray(ell), t), dtype=float))


def _newton_step(spec, mesh, tables, s_prev, t_new, dt, e_trans, e_lat, tol):
    s = s_prev.copy()
    _pin_traces(spec, s, t_new)
    P, Gx, Grho, lat = _pressure_solve(spec, mesh, tables, s, t_new, e_trans, e_lat)
    R = _saturation_residual(spec, mesh, tables, s, s_prev, dt, Gx, Grho, lat,
                             e_trans)
    scale = max(1.0, float(np.max(np.abs(R))))
    n_pressure = 1
    for _ in range(NEWTON_MAX_ITER):
        rnorm = float(np.max(np.abs(R)))
        if rnorm <= tol * scale:
            return s, P, n_pressure
        J = _saturation_jacobian(spec, mesh, tables, s, dt, Gx, Grho, lat,
                                 e_trans)
        delta = spla.spsolve(J, -R.ravel()).reshape(R.shape)
        lam = 1.0
        accepted = False
        for _ in range(MAX_LINE_SEARCH_HALVINGS + 1):
            s_try = s.copy()
            s_try[1:-1] += lam * delta
            R_try = _saturation_residual(
                spec, mesh, tables, s_try, s_prev, dt, Gx, Grho, lat, e_trans
            )
            if float(np.max(np.abs(R_try))) < rnorm:
                s = s_try
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            raise NewtonError("line search stalled at t = %g" % t_new)
        P, Gx, Grho, lat = _pressure_solve(spec, mesh, tables, s, t_new, e_trans, e_lat)
        n_pressure += 1
        R = _saturation_residual(spec, mesh, tables, s, s_prev, dt, Gx, Grho, lat,
                                 e_trans)
    raise NewtonError("no convergence in %d iterations at t = %g" % (NEWTON_MAX_ITER, t_new))


def _check_corridor(s, corridor, t_new):
    lo, hi = corridor
    inner = s[:, :-1]
    outer = s[:, -1]
    bad_inner = (
        float(np.min(inner)) < lo - MAX_PRINCIPLE_TOL_INNER
        or float(np.max(inner)) > hi + MAX_PRINCIPLE_TOL_INNER
    )
    bad_outer = (
        float(np.min(outer)) < lo - MAX_PRINCIPLE_TOL_OUTER
        or float(np.max(outer)) > hi + MAX_PRINCIPLE_TOL_OUTER
    )
    if bad_inner or bad_outer:
        raise MaxPrincipleError(
            "saturation left [%g, %g] at t = %g: range [%g, %g]"
            % (lo, hi, t_new, float(np.min(s)), float(np.max(s)))
        )


def _step(spec, mesh, tables, s_prev, t_new, dt, e_trans, e_lat, corridor, tol,
          depth=0):
    try:
        s_new, P_new, n_press = _newton_step(
            spec, mesh, tables, s_prev, t_new, dt, e_trans, e_lat, tol
        )
    except NewtonError:
        if depth >= MAX_DT_HALVINGS:
            raise SolverError(
                "saturation step failed after %d dt halvings at t = %g"
                % (MAX_DT_HALVINGS, t_new)
            )
        s_half, _, n_a = _step(
            spec, mesh, tables, s_prev, t_new - dt / 2.0, dt / 2.0,
            e_trans, e_lat, corridor, tol, depth + 1,
        )
        s_new, P_new, n_b = _step(
            spec, mesh, tables, s_half, t_new, dt / 2.0,
            e_trans, e_lat, corridor, tol, depth + 1,
        )
        return s_new, P_new, n_a + n_b
    if corridor is not None:
        _check_corridor(s_new, corridor, t_new)
    return s_new, P_new, n_press


def solve_reference(
    spec: ProblemSpec,
    epsilon: float,
    mesh: AxisymMesh,
    dt: float,
    validate: bool = True,
    newton_tol: float = NEWTON_TOL,
) -> FullSolution:
    """March the axisymmetric system from t = 0 to the horizon.

    dt must divide the horizon; the mesh must carry the same epsilon and
    length as the arguments and the problem data must be angle independent.
    """
    geom = spec.geometry
    if mesh.epsilon != epsilon:
        raise ValueError(
            "mesh epsilon %g does not match requested epsilon %g"
            % (mesh.epsilon, epsilon)
        )
    if mesh.ell != geom.length_ell:
        raise ValueError("mesh length does not match the problem geometry")
    regime = spec.regime
    if not regime.supported:
        raise ValueError(
            "regime %s (%s) has no reference run" % (regime.tag, regime.reason)
        )
    _require_angle_independent(spec)

    report = validate_problem(spec)
    if validate and not report.passed:
        raise ValueError("inadmissible problem: " + "; ".join(report.violations))
    corridor = (report.delta0, report.delta1)

    T = geom.horizon_T
    n_t = int(round(T / dt))
    if n_t < 1 or abs(n_t * dt - T) > 1e-8 * T:
        raise ValueError("dt = %g does not divide the horizon %g" % (dt, T))
    times = np.linspace(0.0, T, n_t + 1)

    alpha = spec.forcing.alpha
    beta = spec.coefficients.beta
    e_trans = epsilon ** (beta - 2.0)
    e_lat = epsilon ** (alpha - 1.0)

    tables = _coefficient_tables(spec, mesh)
    n_x, n_r = mesh.n_x, mesh.n_r
    s = np.ones((n_x + 1, n_r)) * np.asarray(
        spec.forcing.S0(mesh.x, 0.0), dtype=float
    )[:, None]
    P0, _, _, _ = _pressure_solve(spec, mesh, tables, s, 0.0, e_trans, e_lat)

    P = np.empty((n_t + 1, n_x + 1, n_r))
    S = np.empty_like(P)
    P[0] = P0
    S[0] = s
    pressure_solves = 1
    for step in range(n_t):
        t_new = float(times[step + 1])
        dt_step = float(times[step + 1] - times[step])
        s, p, n_press = _step(
            spec, mesh, tables, s, t_new, dt_step, e_trans, e_lat, corridor,
            newton_tol,
        )
        pressure_solves += n_press
        P[step + 1] = p
        S[step + 1] = s

    return FullSolution(
        mesh=mesh,
        times=times,
        P=P,
        S=S,
        epsilon=epsilon,
        alpha=alpha,
        beta=beta,
        meta={
            "regime_tag": regime.tag,
            "corridor": corridor,
            "pressure_solves": pressure_solves,
            "newton_tol": newton_tol,
        },
    )


def mass_balance_report(solution: FullSolution, spec: ProblemSpec) -> dict:
    """Discrete conservation audit of a stored run.

    Per step: storage rate of phi S over the interior control volumes, the
    wetting flux through the end faces, and the wetting share of the lateral
    flux, all in physical units. The residual is their sum normalized by the
    pore volume integral of phi. It closes to the nonlinear tolerance unless
    a step was internally halved, since only accepted step states are stored.
    """
    mesh = solution.mesh
    tables = _coefficient_tables(spec, mesh)
    _, phi, _ = tables
    e_trans = solution.epsilon ** (solution.beta - 2.0)
    e_lat = solution.epsilon ** (solution.alpha - 1.0)
    scale3d = 2.0 * np.pi * solution.epsilon**2
    vol = mesh.weights_x[:, None] * (mesh.rho * mesh.drho)[None, :]
    pore = scale3d * float(np.sum(phi[:, None] * vol))

    n_t = solution.times.size - 1
    residual = np.empty(n_t)
    storage_rate = np.empty(n_t)
    end_flux = np.empty(n_t)
    lateral = np.empty(n_t)
    d = spec.derived
    k1, _, kperp = tables
    for n in range(1, n_t + 1):
        t = float(solution.times[n])
        dt = float(solution.times[n] - solution.times[n - 1])
        s = solution.S[n]
        p = solution.P[n]
        lam = np.asarray(d.lambda_total(s), dtype=float)
        sigma_x = 0.5 * ((lam * k1[:, None])[:-1] + (lam * k1[:, None])[1:])
        Gx = sigma_x * np.diff(p, axis=0) / mesh.dx
        kap = 0.5 * ((lam * kperp)[:, :-1] + (lam * kperp)[:, 1:])
        Grho = e_trans * kap * np.diff(p, axis=1) / mesh.drho
        lat = e_lat * _lateral_profile(spec.forcing, mesh.x, t) * mesh.weights_x
        Fx, _, b = _transport_terms(spec, mesh, tables, s, Gx, Grho, e_trans)

        ds = s[1:-1] - solution.S[n - 1][1:-1]
        storage = scale3d * float(np.sum(phi[1:-1, None] * vol[1:-1] * ds)) / dt
        through_ends = scale3d * float(np.sum(Fx[-1]) - np.sum(Fx[0]))
        lat_wet = scale3d * float(np.sum(b[1:-1, -1] * lat[1:-1]))
        storage_rate[n - 1] = storage
        end_flux[n - 1] = through_ends
        lateral[n - 1] = lat_wet
        residual[n - 1] = abs(storage - through_ends + lat_wet) / pore
    return {
        "residual": residual,
        "storage_rate": storage_rate,
        "end_flux": end_flux,
        "lateral_wetting_flux": lateral,
    }


def max_pressure_divergence(solution: FullSolution, spec: ProblemSpec) -> float:
    """Worst interior-cell total-flux imbalance over all stored steps.

    Rebuilds the face fluxes of the stored pressure fields and forms the
    discrete divergence minus the lateral source, normalized by the largest
    single face flux of the step. Direct sparse solves keep this at the
    linear-solve tolerance.
    """
    mesh = solution.mesh
    tables = _coefficient_tables(spec, mesh)
    k1, _, kperp = tables
    e_trans = solution.epsilon ** (solution.beta - 2.0)
    e_lat = solution.epsilon ** (solution.alpha - 1.0)
    ring = mesh.rho * mesh.drho
    w = mesh.weights_x
    d = spec.derived

    worst = 0.0
    for n in range(solution.times.size):
        t = float(solution.times[n])
        s = solution.S[n]
        p = solution.P[n]
        lam = np.asarray(d.lambda_total(s), dtype=float)
        sigma_x = 0.5 * ((lam * k1[:, None])[:-1] + (lam * k1[:, None])[1:])
        Fx = ring[None, :] * sigma_x * np.diff(p, axis=0) / mesh.dx
        kap = 0.5 * ((lam * kperp)[:, :-1] + (lam * kperp)[:, 1:])
        face_w = mesh.rho_faces[1:-1][None, :] * w[:, None]
        Frho = face_w * e_trans * kap * np.diff(p, axis=1) / mesh.drho
        lat = e_lat * _lateral_profile(spec.forcing, mesh.x, t) * w

        div = Fx[1:] - Fx[:-1]
        div[:, :-1] += Frho[1:-1]
        div[:, 1:] -= Frho[1:-1]
        div[:, -1] -= lat[1:-1]
        scale = max(
            float(np.max(np.abs(Fx))),
            float(np.max(np.abs(Frho))) if Frho.size else 0.0,
            float(np.max(np.abs(lat))),
            1e-300,
        )
        worst = max(worst, float(np.max(np.abs(div))) / scale)
    return worst
