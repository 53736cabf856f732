"""Mean-zero Neumann problems on the unit disk.

The transverse profile of the pressure approximation solves, at each axial
station and time,

    -div_xi (K grad_xi u) = source   in the unit disk,
    -(K grad_xi u) . nu   = flux     on the unit circle,
    mean of u over the disk = 0,

with source = qhat / lambda(s0) and flux = Q / lambda(s0). The same problem
serves every transverse term of the asymptotic ansatz; only the epsilon
prefactor changes between regimes.

The discretization is a polar finite-volume scheme on cell-centered rings
(no node sits at the origin; the innermost face has zero length, so no
artificial axis condition is needed). For isotropic or polar-diagonal K the
system is symmetric and solved by preconditioned conjugate gradients on the
compatibility-projected right-hand side; a general anisotropic K adds
cross-derivative face terms and falls back to a direct sparse solve. The
zero-mean normalization uses a midpoint quadrature with an endpoint
correction in radius, which keeps the normalization error at fourth order
instead of second.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from thinflow.problem import ProblemSpec, qhat


@dataclass(frozen=True)
class DiskMesh:
    """Cell-centered polar mesh: n_r rings times n_theta sectors."""

    n_r: int
    n_theta: int
    rho: np.ndarray  # ring centers, shape (n_r,)
    theta: np.ndarray  # sector centers, shape (n_theta,)
    drho: float
    dtheta: float
    areas: np.ndarray  # shape (n_r, n_theta)

    @property
    def rho_faces(self) -> np.ndarray:
        return np.arange(self.n_r + 1) * self.drho


def make_disk_mesh(n_r: int = 64, n_theta: int = 64) -> DiskMesh:
    if n_r < 3:
        raise ValueError("need at least 3 rings")
    if n_theta < 4 or n_theta % 2 != 0:
        raise ValueError("n_theta must be even and at least 4")
    drho = 1.0 / n_r
    dtheta = 2.0 * math.pi / n_theta
    rho = (np.arange(n_r) + 0.5) * drho
    theta = np.arange(n_theta) * dtheta
    areas = np.outer(rho * drho * dtheta, np.ones(n_theta))
    return DiskMesh(
        n_r=n_r, n_theta=n_theta, rho=rho, theta=theta, drho=drho, dtheta=dtheta, areas=areas
    )


@dataclass
class CellSolution:
    mesh: DiskMesh
    values: np.ndarray  # (n_r, n_theta)
    grad_xi2: np.ndarray
    grad_xi3: np.ndarray
    x1: float
    t: float
    residual: float
    mean_value: float


def disk_mean(mesh: DiskMesh, values: np.ndarray) -> float:
    """Disk average with an endpoint-corrected midpoint rule in radius.

    The angular average reduces the integral to 2 * int_0^1 rho g(rho) drho.
    The composite midpoint rule carries an O(drho^2) error proportional to
    h'(1) - h'(0) for h = rho g; adding that Euler-Maclaurin term (with the
    endpoint slopes estimated from quadratic fits) leaves O(drho^4), which is
    what lets coarse meshes meet tight mean-zero tolerances.
    """
    gbar = np.mean(values, axis=1)
    h = mesh.rho * gbar
    mid = float(np.sum(h) * mesh.drho)
    r_in, h_in = mesh.rho[:3], h[:3]
    r_out, h_out = mesh.rho[-3:], h[-3:]
    c_in = np.polyfit(r_in, h_in, 2)
    c_out = np.polyfit(r_out, h_out, 2)
    dh0 = 2.0 * c_in[0] * 0.0 + c_in[1]
    dh1 = 2.0 * c_out[0] * 1.0 + c_out[1]
    return 2.0 * (mid + mesh.drho**2 / 24.0 * (dh1 - dh0))


def _polar_components(K, rho: np.ndarray, theta: np.ndarray):
    """(K_rr, K_rt, K_tt) of the permeability in the local polar frame.

    K may be None (identity), a positive scalar, a constant symmetric 2x2
    array, or a callable of (rho, theta) returning a scalar field (isotropic)
    or a 2x2 matrix per point.
    """
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)
    shape = np.broadcast_shapes(rho.shape, theta.shape)
    if K is None:
        one = np.ones(shape)
        return one, np.zeros(shape), one.copy()
    if np.isscalar(K):
        if K <= 0:
            raise ValueError("scalar K must be positive")
        one = np.full(shape, float(K))
        return one, np.zeros(shape), one.copy()
    if isinstance(K, np.ndarray) and K.shape == (2, 2):
        if abs(K[0, 1] - K[1, 0]) > 1e-12 * max(1.0, abs(K[0, 1])):
            raise ValueError("K must be symmetric")
        if np.any(np.linalg.eigvalsh(K) <= 0):
            raise ValueError("K must be positive definite")
        c, s = np.cos(theta), np.sin(theta)
        c = np.broadcast_to(c, shape)
        s = np.broadcast_to(s, shape)
        krr = K[0, 0] * c**2 + 2 * K[0, 1] * c * s + K[1, 1] * s**2
        ktt = K[0, 0] * s**2 - 2 * K[0, 1] * c * s + K[1, 1] * c**2
        krt = (K[1, 1] - K[0, 0]) * c * s + K[0, 1] * (c**2 - s**2)
        return krr, krt, ktt
    if callable(K):
        val = np.asarray(K(rho, theta), dtype=float)
        if val.shape == shape:
            if np.any(val <= 0):
                raise ValueError("isotropic K field must be positive")
            return val, np.zeros(shape), val.copy()
        raise ValueError("callable K must return a positive scalar field on (rho, theta)")
    raise TypeError("unsupported K specification: %r" % (K,))


def _as_source_array(source, mesh: DiskMesh) -> np.ndarray:
    if source is None:
        return np.zeros((mesh.n_r, mesh.n_theta))
    if np.isscalar(source):
        return np.full((mesh.n_r, mesh.n_theta), float(source))
    if callable(source):
        rr, tt = np.meshgrid(mesh.rho, mesh.theta, indexing="ij")
        return np.asarray(source(rr, tt), dtype=float) * np.ones((mesh.n_r, mesh.n_theta))
    arr = np.asarray(source, dtype=float)
    if arr.shape != (mesh.n_r, mesh.n_theta):
        raise ValueError("source array must have shape (n_r, n_theta)")
    return arr


def _as_flux_array(flux, mesh: DiskMesh) -> np.ndarray:
    if flux is None:
        return np.zeros(mesh.n_theta)
    if np.isscalar(flux):
        return np.full(mesh.n_theta, float(flux))
    if callable(flux):
        return np.asarray(flux(mesh.theta), dtype=float) * np.ones(mesh.n_theta)
    arr = np.asarray(flux, dtype=float)
    if arr.shape != (mesh.n_theta,):
        raise ValueError("flux array must have shape (n_theta,)")
    return arr


def solve_cell(
    mesh: DiskMesh,
    K,
    source,
    flux,
    tol: float = 1e-12,
    x1: float = 0.0,
    t: float = 0.0,
) -> CellSolution:
    """Solve the mean-zero Neumann problem on the disk.

    Raises ValueError when the data violate the compatibility condition
    (integral of the source must match the boundary flux integral).
    """
    nr, nt = mesh.n_r, mesh.n_theta
    n = nr * nt
    src = _as_source_array(source, mesh)
    flx = _as_flux_array(flux, mesh)

    total_source = float(np.sum(src * mesh.areas))
    total_flux = float(np.sum(flx) * mesh.dtheta)
    abs_flux = float(np.sum(np.abs(flx)) * mesh.dtheta)
    if abs(total_source - total_flux) > 1e-10 * max(1.0, abs_flux):
        raise ValueError(
            "incompatible data: source integral %.3e vs flux integral %.3e"
            % (total_source, total_flux)
        )

    def idx(i, j):
        return i * nt + np.mod(j, nt)

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []

    def add(r, c, v):
        rows.append(np.asarray(r).ravel())
        cols.append(np.asarray(c).ravel())
        vals.append(np.asarray(v).ravel())

    jj = np.arange(nt)

    # radial faces between ring i-1 and ring i, at rho_f = i*drho
    rf = mesh.rho_faces[1:nr]  # interior faces only
    krr_f, krt_f, _ = _polar_components(K, rf[:, None], mesh.theta[None, :])
    has_cross = bool(np.max(np.abs(krt_f)) > 1e-14) if krt_f.size else False
    for i in range(1, nr):
        lo = idx(i - 1, jj)
        up = idx(i, jj)
        a1 = krr_f[i - 1] * rf[i - 1] * mesh.dtheta / mesh.drho
        # F = a1 (u_up - u_lo) + a2 (u_lo,j+1 + u_up,j+1 - u_lo,j-1 - u_up,j-1)
        add(lo, up, -a1)
        add(lo, lo, a1)
        add(up, up, a1)
        add(up, lo, -a1)
        a2 = krt_f[i - 1] / 4.0
        if np.max(np.abs(a2)) > 0:
            for sgn_cell, cell in ((-1.0, lo), (1.0, up)):
                for sgn_t, nb in ((1.0, 1), (-1.0, -1)):
                    add(cell, idx(i - 1, jj + nb), sgn_cell * sgn_t * a2)
                    add(cell, idx(i, jj + nb), sgn_cell * sgn_t * a2)

    # angular faces between sector j and j+1, at theta = (j + 1/2) dtheta
    tf = mesh.theta + mesh.dtheta / 2.0
    krr_t, krt_t, ktt_t = _polar_components(K, mesh.rho[:, None], tf[None, :])
    if krt_t.size and np.max(np.abs(krt_t)) > 1e-14:
        has_cross = True
    for i in range(nr):
        me = idx(i, jj)
        right = idx(i, jj + 1)
        b1 = ktt_t[i] * mesh.drho / (mesh.rho[i] * mesh.dtheta)
        # G = b1 (u_right - u_me) + cross-term with d_rho u averaged across the face
        add(me, right, -b1)
        add(me, me, b1)
        add(right, right, b1)
        add(right, me, -b1)
        b2 = krt_t[i] * mesh.drho / 4.0
        if np.max(np.abs(b2)) > 0:
            if 0 < i < nr - 1:
                pairs = ((1.0, idx(i + 1, jj), idx(i + 1, jj + 1)), (-1.0, idx(i - 1, jj), idx(i - 1, jj + 1)))
                w = 1.0
            elif i == 0:
                pairs = ((1.0, idx(1, jj), idx(1, jj + 1)), (-1.0, idx(0, jj), idx(0, jj + 1)))
                w = 2.0
            else:
                pairs = ((1.0, idx(i, jj), idx(i, jj + 1)), (-1.0, idx(i - 1, jj), idx(i - 1, jj + 1)))
                w = 2.0
            for sgn_t, na, nb_ in pairs:
                for cell_sgn, cell in ((-1.0, me), (1.0, right)):
                    add(cell, na, cell_sgn * sgn_t * w * b2 / mesh.drho)
                    add(cell, nb_, cell_sgn * sgn_t * w * b2 / mesh.drho)

    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )

    b = (src * mesh.areas).ravel()
    b = b.copy()
    b[idx(nr - 1, jj)] -= flx * mesh.dtheta
    b -= np.mean(b)

    if not np.any(b):
        u = np.zeros(n)
        res = 0.0
    elif not has_cross:
        diag = A.diagonal()
        M = spla.LinearOperator((n, n), matvec=lambda v: v / diag)
        try:
            u, info = spla.cg(A, b, rtol=tol, atol=0.0, maxiter=20 * n, M=M)
        except TypeError:  # older scipy spells the relative tolerance 'tol'
            u, info = spla.cg(A, b, tol=tol, atol=0.0, maxiter=20 * n, M=M)
        if info != 0:
            u = _pinned_solve(A, b)
        res = float(np.linalg.norm(A @ u - b) / np.linalg.norm(b))
    else:
        u = _pinned_solve(A, b)
        res = float(np.linalg.norm(A @ u - b) / np.linalg.norm(b))

    u = u.reshape(nr, nt)
    u = u - disk_mean(mesh, u)
    mean_val = disk_mean(mesh, u)

    g_r, g_t = _polar_gradient(mesh, u)
    ct, st = np.cos(mesh.theta), np.sin(mesh.theta)
    grad2 = g_r * ct[None, :] - g_t * st[None, :]
    grad3 = g_r * st[None, :] + g_t * ct[None, :]

    return CellSolution(
        mesh=mesh,
        values=u,
        grad_xi2=grad2,
        grad_xi3=grad3,
        x1=x1,
        t=t,
        residual=res,
        mean_value=mean_val,
    )


def _pinned_solve(A: sp.csr_matrix, b: np.ndarray) -> np.ndarray:
    """Direct solve of the singular-consistent system with one pinned unknown."""
    n = A.shape[0]
    Ap = A.tolil(copy=True)
    Ap[0, :] = 0.0
    Ap[0, 0] = 1.0
    bp = b.copy()
    bp[0] = 0.0
    return spla.spsolve(Ap.tocsr(), bp)


def _polar_gradient(mesh: DiskMesh, u: np.ndarray):
    """(d_rho u, (1/rho) d_theta u) at cell centers, second order."""
    nr, nt = mesh.n_r, mesh.n_theta
    g_r = np.empty_like(u)
    opp = (np.arange(nt) + nt // 2) % nt
    # the ring centers are dr/2 from the origin, so the point diametrically
    # opposite the first ring is exactly one spacing away: central formula
    g_r[0] = (u[1] - u[0, opp]) / (2.0 * mesh.drho)
    if nr > 2:
        g_r[1:-1] = (u[2:] - u[:-2]) / (2.0 * mesh.drho)
    g_r[-1] = (3.0 * u[-1] - 4.0 * u[-2] + u[-3]) / (2.0 * mesh.drho)
    g_t = (np.roll(u, -1, axis=1) - np.roll(u, 1, axis=1)) / (2.0 * mesh.dtheta)
    g_t = g_t / mesh.rho[:, None]
    return g_r, g_t


def evaluate_cell(sol: CellSolution, xi2, xi3, field: str = "values"):
    """Bilinear evaluation at Cartesian points of the closed unit disk."""
    xi2 = np.asarray(xi2, dtype=float)
    xi3 = np.asarray(xi3, dtype=float)
    rho = np.hypot(xi2, xi3)
    theta = np.arctan2(xi3, xi2)
    return evaluate_polar(sol, rho, theta, field=field)


def evaluate_polar(sol: CellSolution, rho, theta, field: str = "values"):
    """Bilinear evaluation in (rho, theta); rho may not exceed 1."""
    mesh = sol.mesh
    data = getattr(sol, field)
    scalar_in = np.ndim(rho) == 0 and np.ndim(theta) == 0
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    rho, theta = np.broadcast_arrays(rho, theta)
    if np.any(rho > 1.0 + 1e-12):
        raise ValueError("evaluation point outside the unit disk: max rho = %g" % np.max(rho))
    if np.any(rho < 0):
        raise ValueError("negative radius")

    nt = mesh.n_theta
    tpos = np.mod(theta, 2.0 * math.pi) / mesh.dtheta
    j0 = np.floor(tpos).astype(int) % nt
    wt = tpos - np.floor(tpos)
    j1 = (j0 + 1) % nt

    def ring(i):
        return data[i, j0] * (1.0 - wt) + data[i, j1] * wt

    def ring_at(i, jA, jB):
        return data[i, jA] * (1.0 - wt) + data[i, jB] * wt

    out = np.empty_like(rho)

    pos = rho / mesh.drho - 0.5
    inner = pos < 0.0
    outer = pos > mesh.n_r - 1.0
    mid = ~(inner | outer)

    if np.any(mid):
        i0 = np.clip(np.floor(pos[mid]).astype(int), 0, mesh.n_r - 2)
        wr = pos[mid] - i0
        j0m, j1m, wtm = j0[mid], j1[mid], wt[mid]
        v0 = data[i0, j0m] * (1.0 - wtm) + data[i0, j1m] * wtm
        v1 = data[i0 + 1, j0m] * (1.0 - wtm) + data[i0 + 1, j1m] * wtm
        out[mid] = v0 * (1.0 - wr) + v1 * wr

    if np.any(inner):
        # interpolate along the diameter through each point, between the
        # first-ring values at theta and theta + pi
        j0i, j1i, wti = j0[inner], j1[inner], wt[inner]
        j0o = (j0i + nt // 2) % nt
        j1o = (j1i + nt // 2) % nt
        v_plus = data[0, j0i] * (1.0 - wti) + data[0, j1i] * wti
        v_minus = data[0, j0o] * (1.0 - wti) + data[0, j1o] * wti
        w_in = (rho[inner] + mesh.rho[0]) / (2.0 * mesh.rho[0])
        out[inner] = v_minus * (1.0 - w_in) + v_plus * w_in

    if np.any(outer):
        j0e, j1e, wte = j0[outer], j1[outer], wt[outer]
        v_last = data[-1, j0e] * (1.0 - wte) + data[-1, j1e] * wte
        v_prev = data[-2, j0e] * (1.0 - wte) + data[-2, j1e] * wte
        slope = (v_last - v_prev) / mesh.drho
        out[outer] = v_last + slope * (rho[outer] - mesh.rho[-1])

    return float(out[0]) if scalar_in else out


def build_cell_inputs(spec: ProblemSpec, s0_value: float, x1: float, t: float):
    """Source and boundary flux of the transverse problem at one station.

    Returns (source, flux) with source the constant qhat / lambda(s0) and
    flux a callable of theta evaluating Q / lambda(s0). Inside the support
    margins both are exactly zero.
    """
    lam = float(spec.derived.lambda_total(s0_value))
    f = spec.forcing
    if f.q_profile is not None:
        prof = float(f.q_profile(np.asarray(x1, dtype=float), t))
        if prof == 0.0:
            return 0.0, (lambda theta: np.zeros_like(np.asarray(theta, dtype=float)))
    qh = qhat(f, x1, t)

    def flux(theta):
        return np.asarray(f.Q(np.asarray(x1, dtype=float), theta, t), dtype=float) / lam

    return qh / lam, flux
