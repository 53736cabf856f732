"""Composite approximation fields on the axisymmetric reference mesh.

Starting from a solved one-dimensional limit problem (with its corrector
pair where the regime has one) and the transverse disk profiles, this module
assembles the regime-specific pressure and saturation approximations, the
total / wetting / non-wetting velocity triple, and the two phase pressures.
Everything is sampled at the x1 nodes and scaled-radius ring centers of the
reference mesh so the fields can be subtracted from a full axisymmetric
solution nodewise.

The composite state is

    Case1:  P = p0 + eps^(2 - beta) * u,            S = s0,
    Case2:  P = p0 + eps^(alpha - 1) * p_corr
               + eps^(alpha - beta + 1) * u,        S = s0 + eps^(alpha - 1) * s_corr,

with u the mean-zero transverse profile evaluated at xi = (transverse
coordinates) / eps. The total velocity is minus mobility times permeability
times the gradient of the composite pressure, truncated at the order each
regime keeps; the wetting velocity adds the capillary-diffusion part and the
fractional-flow multiple of the total velocity; the non-wetting velocity is
their difference by definition. Wetting pressure subtracts the reduced
pressure shift evaluated at the regime's saturation field, and the
non-wetting pressure adds the capillary curve on top.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from thinflow._stencils import ddx
from thinflow.cell import (
    CellSolution,
    DiskMesh,
    build_cell_inputs,
    evaluate_polar,
    make_disk_mesh,
    solve_cell,
)
from thinflow.constitutive import DerivedClosures
from thinflow.problem import ProblemSpec, Regime
from thinflow.reduced1d import ReducedSolution
from thinflow.reference import AxisymMesh, default_mesh


@dataclass(frozen=True)
class VectorField:
    """Velocity sampled on the reference mesh, split by direction.

    longitudinal is the x1 component; transverse is the radial component in
    the cross-sectional plane (the only one that survives on the
    axisymmetric mesh). Both have shape (n_t + 1, n_x + 1, n_r).
    """

    longitudinal: np.ndarray
    transverse: np.ndarray


@dataclass
class ApproxFields:
    """All reconstructed fields of one regime at one epsilon."""

    mesh: AxisymMesh
    times: np.ndarray
    epsilon: float
    regime: Regime
    P_approx: np.ndarray
    S_approx: np.ndarray
    V_total: VectorField
    V_w: VectorField
    V_o: VectorField
    Pw_approx: np.ndarray
    Po_approx: np.ndarray


class CellBank:
    """Transverse pressure profiles for every station of a reduced solution.

    The disk problem at station (x1 node i, time step n) has interior source
    qhat / lambda(s0) and boundary flux Q / lambda(s0). Stations where the
    lateral data vanish short-circuit to the zero profile, and solved
    stations are cached under the key (i, n). When the lateral flux factors
    into profile(x1, t) * shape(theta) and k_perp does not vary over the
    cross-section, every station is a scalar multiple of a single unit disk
    solution, which is solved once and rescaled; otherwise each supported
    station gets its own solve.
    """

    def __init__(
        self,
        spec: ProblemSpec,
        reduced: ReducedSolution,
        disk: DiskMesh | None = None,
        tol: float = 1e-12,
    ):
        self.spec = spec
        self.reduced = reduced
        self.disk = disk if disk is not None else make_disk_mesh()
        self.tol = tol
        self._cache: dict[tuple[int, int], CellSolution | None] = {}
        f = spec.forcing
        self.separable = (
            f.q_profile is not None
            and f.q_angular is not None
            and spec.coefficients.kperp_rho_independent
        )
        self._template: CellSolution | None = None
        self._scales: np.ndarray | None = None

    # -- separable fast path ------------------------------------------------

    def _unit_solution(self) -> CellSolution:
        """Disk solution for unit flux profile: K = I, flux = shape(theta)."""
        if self._template is None:
            ang = np.asarray(self.spec.forcing.q_angular(self.disk.theta), dtype=float)
            source = 2.0 * float(np.mean(ang))
            self._template = solve_cell(
                self.disk, None, source, self.spec.forcing.q_angular, tol=self.tol
            )
        return self._template

    def scales(self) -> np.ndarray:
        """Multiplier profile(x, t) / (lambda(s0) k_perp) per station.

        Shape (n_t + 1, n_x + 1); exact zeros wherever the profile vanishes.
        Only meaningful on the separable path.
        """
        if not self.separable:
            raise RuntimeError("station scales only exist for separable lateral data")
        if self._scales is None:
            grid = self.reduced.grid
            f = self.spec.forcing
            prof = np.stack(
                [np.asarray(f.q_profile(grid.x, t), dtype=float) for t in grid.times]
            )
            lam = np.asarray(
                self.spec.derived.lambda_total(self.reduced.s0), dtype=float
            )
            kp = np.asarray(
                self.spec.coefficients.k_perp(grid.x, np.full_like(grid.x, 0.5)),
                dtype=float,
            )
            self._scales = np.where(prof == 0.0, 0.0, prof / (lam * kp[None, :]))
        return self._scales

    # -- per-station access --------------------------------------------------

    def solution(self, i: int, n: int) -> CellSolution | None:
        """Profile at x1 node i, time step n; None where the data vanish."""
        grid = self.reduced.grid
        x1 = float(grid.x[i])
        t = float(grid.times[n])
        if self.separable:
            g = float(self.scales()[n, i])
            if g == 0.0:
                return None
            base = self._unit_solution()
            return CellSolution(
                mesh=base.mesh,
                values=g * base.values,
                grad_xi2=g * base.grad_xi2,
                grad_xi3=g * base.grad_xi3,
                x1=x1,
                t=t,
                residual=base.residual,
                mean_value=g * base.mean_value,
            )
        key = (i, n)
        if key not in self._cache:
            self._cache[key] = self._solve_station(x1, t, float(self.reduced.s0[n, i]))
        return self._cache[key]

    def _solve_station(self, x1: float, t: float, s0_value: float) -> CellSolution | None:
        source, flux = build_cell_inputs(self.spec, s0_value, x1, t)
        flx = np.asarray(flux(self.disk.theta), dtype=float)
        if source == 0.0 and not np.any(flx):
            return None
        kp = self.spec.coefficients.k_perp

        def K(rho, theta):
            rho = np.asarray(rho, dtype=float)
            theta = np.asarray(theta, dtype=float)
            shape = np.broadcast_shapes(rho.shape, theta.shape)
            return np.broadcast_to(
                np.asarray(kp(x1, rho), dtype=float), shape
            ).copy()

        return solve_cell(self.disk, K, source, flux, tol=self.tol, x1=x1, t=t)

    def tables(self, rho: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Values and radial derivatives at the given scaled radii.

        Returns (U, dU), each of shape (n_t + 1, n_x + 1, len(rho)),
        evaluated along the theta = 0 ray.
        """
        rho = np.asarray(rho, dtype=float)
        grid = self.reduced.grid
        shape = (grid.n_t + 1, grid.n_x + 1, rho.size)
        if self.separable:
            g = self.scales()
            if not np.any(g):
                return np.zeros(shape), np.zeros(shape)
            base = self._unit_solution()
            u_ray = np.atleast_1d(evaluate_polar(base, rho, 0.0))
            du_ray = np.atleast_1d(evaluate_polar(base, rho, 0.0, field="grad_xi2"))
            return g[:, :, None] * u_ray, g[:, :, None] * du_ray
        U = np.zeros(shape)
        dU = np.zeros(shape)
        for n in range(grid.n_t + 1):
            for i in range(grid.n_x + 1):
                sol = self.solution(i, n)
                if sol is None:
                    continue
                U[n, i] = np.atleast_1d(evaluate_polar(sol, rho, 0.0))
                dU[n, i] = np.atleast_1d(evaluate_polar(sol, rho, 0.0, field="grad_xi2"))
        return U, dU


def _check_regime(regime: Regime, reduced: ReducedSolution) -> None:
    if not regime.supported:
        raise ValueError(
            "regime %s (%s) has no reconstruction" % (regime.tag, regime.reason)
        )
    if reduced.regime_tag != regime.tag:
        raise ValueError(
            "reduced solution was computed for regime %s, not %s"
            % (reduced.regime_tag, regime.tag)
        )


def _correctors(reduced: ReducedSolution) -> tuple[np.ndarray, np.ndarray]:
    if reduced.p_corr is None or reduced.s_corr is None:
        raise ValueError(
            "this regime's composite state needs the corrector pair; "
            "solve with solve_with_correctors first"
        )
    return reduced.p_corr, reduced.s_corr


def assemble_state(
    regime: Regime,
    reduced: ReducedSolution,
    cells: CellBank,
    epsilon: float,
    rho: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Composite pressure and saturation at the given scaled radii.

    Returns (P_approx, S_approx) of shape (n_t + 1, n_x + 1, len(rho)).
    """
    _check_regime(regime, reduced)
    rho = np.asarray(rho, dtype=float)
    U, _ = cells.tables(rho)
    if regime.tag == "Case1":
        P = reduced.p0[:, :, None] + epsilon ** (2.0 - regime.beta) * U
        S = np.broadcast_to(reduced.s0[:, :, None], P.shape).copy()
        return P, S
    p_corr, s_corr = _correctors(reduced)
    e_corr = epsilon ** (regime.alpha - 1.0)
    e_cell = epsilon ** (regime.alpha - regime.beta + 1.0)
    P = (reduced.p0 + e_corr * p_corr)[:, :, None] + e_cell * U
    S = np.broadcast_to(
        (reduced.s0 + e_corr * s_corr)[:, :, None], P.shape
    ).copy()
    return P, S


def reconstruct_velocities(
    regime: Regime,
    reduced: ReducedSolution,
    cells: CellBank,
    epsilon: float,
    closures: DerivedClosures,
    rho: np.ndarray,
) -> tuple[VectorField, VectorField, VectorField]:
    """Total, wetting and non-wetting velocity fields of the approximation.

    The longitudinal total velocity is minus the mobility-weighted gradient
    of the one-dimensional pressure terms the regime keeps; the transverse
    component carries the scaled gradient of the disk profile and appears
    only when beta = 0. The wetting field adds the capillary-diffusion part
    and the fractional-flow multiple of the total field, and the non-wetting
    field is the exact difference.
    """
    _check_regime(regime, reduced)
    rho = np.asarray(rho, dtype=float)
    grid = reduced.grid
    spec = cells.spec

    k1 = np.asarray(spec.coefficients.k1(grid.x), dtype=float)
    dpdx = ddx(reduced.p0, grid.dx, axis=1)
    dsdx = ddx(reduced.s0, grid.dx, axis=1)
    lam = np.asarray(closures.lambda_total(reduced.s0), dtype=float)
    cap = np.asarray(closures.cap_diff_Lambda(reduced.s0), dtype=float)
    frac = np.asarray(closures.frac_flow_b(reduced.s0), dtype=float)

    v_long = -(lam * k1 * dpdx)
    vw_diff = -(cap * k1 * dsdx)
    b_factor = frac
    transverse_power: float | None = None

    if regime.tag == "Case1":
        if regime.beta == 0.0:
            transverse_power = 1.0
    else:
        p_corr, s_corr = _correctors(reduced)
        if regime.beta == 0.0:
            e_corr = epsilon ** (regime.alpha - 1.0)
            dpcdx = ddx(p_corr, grid.dx, axis=1)
            dscdx = ddx(s_corr, grid.dx, axis=1)
            d_lam = np.asarray(closures.d_lambda_total(reduced.s0), dtype=float)
            d_cap = np.asarray(closures.d_cap_diff_Lambda(reduced.s0), dtype=float)
            d_frac = np.asarray(closures.d_frac_flow_b(reduced.s0), dtype=float)
            v_long = v_long - e_corr * k1 * (lam * dpcdx + d_lam * dpdx * s_corr)
            vw_diff = vw_diff - e_corr * k1 * (cap * dscdx + d_cap * dsdx * s_corr)
            b_factor = frac + e_corr * d_frac * s_corr
            transverse_power = regime.alpha

    shape = (grid.n_t + 1, grid.n_x + 1, rho.size)
    vt_long = np.broadcast_to(v_long[:, :, None], shape).copy()
    if transverse_power is None:
        vt_trans = np.zeros(shape)
    else:
        _, dU = cells.tables(rho)
        kperp = np.asarray(
            spec.coefficients.k_perp(grid.x[:, None], rho[None, :]), dtype=float
        ) * np.ones((grid.n_x + 1, rho.size))
        vt_trans = -(epsilon ** transverse_power) * lam[:, :, None] * kperp[None] * dU

    vw_long = vw_diff[:, :, None] + b_factor[:, :, None] * vt_long
    vw_trans = b_factor[:, :, None] * vt_trans

    v_w = VectorField(longitudinal=vw_long, transverse=vw_trans)
    v_o = VectorField(
        longitudinal=vt_long - vw_long, transverse=vt_trans - vw_trans
    )
    # Rebuild the total as the float sum of the phase fluxes: the phase
    # split then holds exactly at every node, not merely to roundoff.
    v_total = VectorField(
        longitudinal=v_o.longitudinal + vw_long,
        transverse=v_o.transverse + vw_trans,
    )
    return v_total, v_w, v_o


def reconstruct_phase_pressures(
    S_approx: np.ndarray, P_approx: np.ndarray, closures: DerivedClosures
) -> tuple[np.ndarray, np.ndarray]:
    """Wetting and non-wetting pressures from the composite fields.

    Pw subtracts the reduced pressure shift at the approximation's own
    saturation field; Po adds the capillary curve at that saturation.
    Saturations must lie in the unit interval for the closures to mean
    anything, so values outside it raise.
    """
    S = np.asarray(S_approx, dtype=float)
    if np.any(S < 0.0) or np.any(S > 1.0) or not np.all(np.isfinite(S)):
        raise ValueError(
            "saturation values outside the unit interval: range [%g, %g]"
            % (np.min(S), np.max(S))
        )
    Pw = np.asarray(P_approx, dtype=float) - np.asarray(
        closures.reduced_shift(S), dtype=float
    )
    Po = Pw + np.asarray(closures.closures.capillary(S), dtype=float)
    return Pw, Po


def reconstruct_on_mesh(
    spec: ProblemSpec,
    reduced: ReducedSolution,
    epsilon: float,
    mesh: AxisymMesh | None = None,
    disk: DiskMesh | None = None,
    cells: CellBank | None = None,
) -> ApproxFields:
    """Assemble every reconstructed field of the regime on one mesh."""
    regime = spec.regime
    if not regime.supported:
        raise ValueError(
            "regime %s (%s) has no reconstruction" % (regime.tag, regime.reason)
        )
    if mesh is None:
        mesh = default_mesh(spec, n_x=reduced.grid.n_x, epsilon=epsilon)
    if mesh.epsilon != epsilon:
        raise ValueError(
            "mesh epsilon %g does not match requested epsilon %g"
            % (mesh.epsilon, epsilon)
        )
    if mesh.n_x != reduced.grid.n_x or mesh.ell != reduced.grid.ell:
        raise ValueError(
            "reference mesh has %d x-cells on [0, %g] but the reduced grid has "
            "%d on [0, %g]" % (mesh.n_x, mesh.ell, reduced.grid.n_x, reduced.grid.ell)
        )
    if cells is None:
        cells = CellBank(spec, reduced, disk=disk)
    P, S = assemble_state(regime, reduced, cells, epsilon, mesh.rho)
    v_total, v_w, v_o = reconstruct_velocities(
        regime, reduced, cells, epsilon, spec.derived, mesh.rho
    )
    Pw, Po = reconstruct_phase_pressures(S, P, spec.derived)
    return ApproxFields(
        mesh=mesh,
        times=reduced.grid.times,
        epsilon=epsilon,
        regime=regime,
        P_approx=P,
        S_approx=S,
        V_total=v_total,
        V_w=v_w,
        V_o=v_o,
        Pw_approx=Pw,
        Po_approx=Po,
    )
