"""Problem data: geometry, coefficients, boundary forcing and regime.

The flow domain is a straight cylinder of length ell whose cross section is
the disk of radius epsilon. The permeability is diagonal: a longitudinal
component k1(x1) and a transverse block epsilon^beta * K(x1, xi) acting on
the scaled cross-section variable xi = xbar / epsilon in the unit disk.
Lateral inflow enters through a Neumann flux epsilon^alpha * Q on the mantle,
supported away from the ends and switched on smoothly in time. The pair
(alpha, beta) selects the asymptotic regime:

    Case1        alpha == 1 and beta < 2   (lateral inflow at leading order)
    Case2        alpha > 1 and alpha > beta - 1   (lateral inflow enters the
                 correctors only)
    Unsupported  anything else, with a reason tag

qhat is the angular average of the lateral flux scaled by the circumference
to cross-section area ratio of the unit disk: the effective line source of
the one-dimensional limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from thinflow.constitutive import DerivedClosures

_QHAT_QUAD_POINTS = 256


@dataclass(frozen=True)
class Geometry:
    """Cylinder length, radius and time horizon. Cross section is the unit disk scaled by epsilon."""

    length_ell: float
    epsilon: float
    horizon_T: float
    cross_section: str = "unit_disk"

    def __post_init__(self):
        if not (0.0 < self.epsilon < self.length_ell):
            raise ValueError(
                "need 0 < epsilon < ell, got epsilon=%g ell=%g"
                % (self.epsilon, self.length_ell)
            )
        if self.horizon_T <= 0:
            raise ValueError("horizon_T must be positive")
        if self.cross_section != "unit_disk":
            raise ValueError("only the unit-disk cross section is supported")


@dataclass(frozen=True)
class CoefficientFields:
    """Rock coefficients.

    k1(x1) is the longitudinal permeability, bounded below by a positive
    constant. k_perp(x1, rho) is the isotropic transverse permeability as a
    function of the scaled radius rho = r / epsilon in [0, 1]; the transverse
    block of the permeability tensor is epsilon^beta * k_perp * I. porosity
    phi(x1) lies strictly inside (0, 1). kperp_rho_independent marks fields
    whose transverse permeability does not vary over the cross section, which
    enables the separable fast path for the cell problems.
    """

    k1: Callable[[np.ndarray], np.ndarray]
    porosity: Callable[[np.ndarray], np.ndarray]
    k_perp: Callable[[np.ndarray, np.ndarray], np.ndarray]
    beta: float
    kperp_rho_independent: bool = True


@dataclass(frozen=True)
class BoundaryForcing:
    """End pressures, initial saturation and the lateral source.

    q0(t), q_ell(t) are the pressures imposed on the end disks; both vanish
    at t = 0 and q0 dominates q_ell afterwards so the longitudinal drive is
    one-directional. S0(x1, t) supplies the initial saturation (at t = 0) and
    the saturation traces at the ends (x1 = 0 and x1 = ell). Q(x1, theta, t)
    is the lateral flux density on the mantle, supported in
    [support_delta, ell - support_delta] and zero at t = 0; the wetting phase
    carries the fraction b(S) of it. alpha is the lateral scaling exponent.

    q_profile/q_angular, when set, factor Q as q_profile(x1, t) * q_angular(theta).
    cos_amplitude records the amplitude of the cos(theta) angular mode; the
    axisymmetric reference solver requires it to be zero.
    """

    q0: Callable[[float], float]
    q_ell: Callable[[float], float]
    S0: Callable[[np.ndarray, float], np.ndarray]
    Q: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    support_delta: float
    alpha: float
    cos_amplitude: float = 0.0
    q_profile: Callable[[np.ndarray, float], np.ndarray] | None = None
    q_angular: Callable[[np.ndarray], np.ndarray] | None = None


@dataclass(frozen=True)
class Regime:
    tag: str  # "Case1" | "Case2" | "Unsupported"
    alpha: float
    beta: float
    reason: str = ""

    @property
    def supported(self) -> bool:
        return self.tag != "Unsupported"


@dataclass(frozen=True)
class ProblemSpec:
    """A full admissible problem: geometry + coefficients + forcing + closures."""

    geometry: Geometry
    coefficients: CoefficientFields
    forcing: BoundaryForcing
    derived: DerivedClosures
    regime: Regime = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "regime", classify(self.forcing.alpha, self.coefficients.beta)
        )


def classify(alpha: float, beta: float) -> Regime:
    """Place (alpha, beta) in the regime diagram.

    Boundaries are decided by exact comparison, so alpha = 1.0 means the
    critically scaled lateral inflow and anything above it is Case2 provided
    alpha > beta - 1.
    """
    if alpha < 1:
        return Regime("Unsupported", alpha, beta, "high-lateral-conductivity")
    if alpha == 1:
        if beta < 2:
            return Regime("Case1", alpha, beta)
        return Regime("Unsupported", alpha, beta, "critical-line")
    if alpha > beta - 1:
        return Regime("Case2", alpha, beta)
    if alpha == beta - 1:
        return Regime("Unsupported", alpha, beta, "dual-porosity-boundary")
    return Regime("Unsupported", alpha, beta, "high-lateral-conductivity")


def qhat(forcing: BoundaryForcing, x1: float, t: float, n_quad: int = _QHAT_QUAD_POINTS) -> float:
    """Angular mean source (1/pi) * contour integral of Q over the unit circle.

    Uniform-angle trapezoid quadrature, which is exact for constants and
    kills every pure Fourier mode up to the grid size; for the preset data
    families the result is exact up to roundoff.
    """
    theta = np.arange(n_quad) * (2.0 * math.pi / n_quad)
    vals = np.asarray(forcing.Q(np.asarray(x1, dtype=float), theta, t), dtype=float)
    return float(np.sum(vals) * (2.0 * math.pi / n_quad) / math.pi)


def qhat_nodes(forcing: BoundaryForcing, x: np.ndarray, t: float) -> np.ndarray:
    """Vectorized qhat over an array of x1 nodes."""
    if forcing.q_profile is not None and forcing.q_angular is not None:
        theta = np.arange(_QHAT_QUAD_POINTS) * (2.0 * math.pi / _QHAT_QUAD_POINTS)
        ang_mean = float(np.mean(forcing.q_angular(theta)))
        return 2.0 * ang_mean * np.asarray(forcing.q_profile(x, t), dtype=float)
    return np.array([qhat(forcing, xi, t) for xi in np.asarray(x, dtype=float)])


# ---------------------------------------------------------------------------
# preset data families
# ---------------------------------------------------------------------------


def _poly_zero_at_origin(coeffs):
    """t -> c1*t + c2*t^2 + ... with no constant term."""
    cs = [float(c) for c in coeffs]

    def f(t):
        acc = 0.0
        p = 1.0
        for c in cs:
            p = p * t
            acc += c * p
        return acc

    return f


def smooth_bump(x, lo, hi):
    """C-infinity bump equal to exp(-1/(y(1-y))) * e^4 shape on (lo, hi), zero outside.

    Normalized to peak value 1 at the midpoint. Vectorized; returns exact
    zeros outside the open interval.
    """
    x = np.asarray(x, dtype=float)
    y = (x - lo) / (hi - lo)
    out = np.zeros_like(y)
    inside = (y > 0.0) & (y < 1.0)
    yi = y[inside]
    out[inside] = np.exp(4.0 - 1.0 / (yi * (1.0 - yi)))
    return out


def cosine_field(mean: float, amplitude: float, ell: float):
    """x -> mean + amplitude * cos(pi x / ell), vectorized."""

    def f(x):
        return mean + amplitude * np.cos(math.pi * np.asarray(x, dtype=float) / ell)

    return f


def preset_coefficients(
    ell: float,
    beta: float,
    k1_mean: float = 1.0,
    k1_cos: float = 0.0,
    porosity_mean: float = 0.35,
    porosity_cos: float = 0.0,
    kperp_mean: float = 1.0,
    kperp_cos: float = 0.0,
) -> CoefficientFields:
    k1 = cosine_field(k1_mean, k1_cos, ell)
    poro = cosine_field(porosity_mean, porosity_cos, ell)
    kp1d = cosine_field(kperp_mean, kperp_cos, ell)

    def k_perp(x, rho):
        return np.broadcast_arrays(kp1d(x), np.asarray(rho, dtype=float))[0].copy()

    return CoefficientFields(
        k1=k1, porosity=poro, k_perp=k_perp, beta=beta, kperp_rho_independent=True
    )


def preset_forcing(
    ell: float,
    horizon_T: float,
    alpha: float,
    q0_coeffs=(1.0,),
    q_ell_coeffs=(0.0,),
    s_mean: float = 0.45,
    s_amplitude: float = 0.15,
    trace_amplitude: float = 0.0,
    q_amplitude: float = 1.0,
    q_cos_amplitude: float = 0.0,
    support_delta: float | None = None,
) -> BoundaryForcing:
    """The standard data family.

    End pressures are polynomials in t vanishing at t = 0. The initial/trace
    saturation is

        s_mean + s_amplitude * sin^2(pi x / ell) * (t/T)^2
               + trace_amplitude * cos(pi x / ell) * (t/T)^2,

    constant at t = 0 and with a time derivative vanishing at t = 0, so the
    corner compatibility condition holds by construction. The s_amplitude
    mode is flat to second order at both ends and so never moves the end
    traces; because the lateral inflow carries the fraction b(S) of the
    resident mixture, data with constant traces keep the saturation constant
    for all time, in the full problem and in the limit problem alike. The
    trace_amplitude mode raises the inflow-end trace and lowers the
    outflow-end one, which is what gives convergence studies a saturation
    field with actual dynamics. The lateral flux is a smooth bump in x1
    supported in [delta, ell - delta], switched on like (t/T)^2, with an
    optional cos(theta) angular mode.
    """
    delta = 0.1 * ell if support_delta is None else float(support_delta)
    q0 = _poly_zero_at_origin(q0_coeffs)
    q_ell = _poly_zero_at_origin(q_ell_coeffs)

    def S0(x, t):
        x = np.asarray(x, dtype=float)
        w = np.sin(math.pi * x / ell) ** 2
        v = np.cos(math.pi * x / ell)
        ramp = (t / horizon_T) ** 2
        return s_mean + (s_amplitude * w + trace_amplitude * v) * ramp

    def q_profile(x, t):
        return q_amplitude * smooth_bump(x, delta, ell - delta) * (t / horizon_T) ** 2

    def q_angular(theta):
        return 1.0 + q_cos_amplitude * np.cos(np.asarray(theta, dtype=float))

    def Q(x, theta, t):
        prof = q_profile(x, t)
        ang = q_angular(theta)
        return prof * ang

    return BoundaryForcing(
        q0=q0,
        q_ell=q_ell,
        S0=S0,
        Q=Q,
        support_delta=delta,
        alpha=alpha,
        cos_amplitude=q_cos_amplitude,
        q_profile=q_profile,
        q_angular=q_angular,
    )


# ---------------------------------------------------------------------------
# admissibility validation
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    violations: list[str]
    delta0: float
    delta1: float

    @property
    def passed(self) -> bool:
        return not self.violations


def validate_problem(spec: ProblemSpec, n_samples: int = 201) -> ValidationReport:
    """Check every admissibility assumption on sampled grids.

    Each violation names the assumption and a sample point. delta0/delta1 are
    the observed bounds of the initial/trace saturation, used downstream as
    the maximum-principle corridor.
    """
    g = spec.geometry
    co = spec.coefficients
    f = spec.forcing
    out: list[str] = []

    x = np.linspace(0.0, g.length_ell, n_samples)
    t_in = np.linspace(0.0, g.horizon_T, n_samples)[1:]

    k1 = np.asarray(co.k1(x), dtype=float)
    if np.any(k1 <= 0):
        i = int(np.argmax(k1 <= 0))
        out.append("k1 must be positive; k1(%.4f) = %.3g" % (x[i], k1[i]))
    phi = np.asarray(co.porosity(x), dtype=float)
    if np.any((phi <= 0) | (phi >= 1)):
        i = int(np.argmax((phi <= 0) | (phi >= 1)))
        out.append("porosity must lie in (0,1); phi(%.4f) = %.3g" % (x[i], phi[i]))
    rho_s = np.linspace(0.0, 1.0, 9)
    for r in rho_s:
        kp = np.asarray(co.k_perp(x, np.full_like(x, r)), dtype=float)
        if np.any(kp <= 0):
            i = int(np.argmax(kp <= 0))
            out.append(
                "transverse permeability must be positive; k_perp(%.4f, rho=%.2f) = %.3g"
                % (x[i], r, kp[i])
            )
            break

    if f.q0(0.0) != 0.0 or f.q_ell(0.0) != 0.0:
        out.append("end pressures must vanish at t = 0")
    q0_v = np.array([f.q0(t) for t in t_in])
    ql_v = np.array([f.q_ell(t) for t in t_in])
    if np.any(q0_v <= 0):
        i = int(np.argmax(q0_v <= 0))
        out.append("q0 must be positive on (0,T]; q0(%.4f) = %.3g" % (t_in[i], q0_v[i]))
    if np.any(q0_v <= ql_v):
        i = int(np.argmax(q0_v <= ql_v))
        out.append(
            "q0 must dominate q_ell on (0,T]; at t = %.4f: %.3g <= %.3g"
            % (t_in[i], q0_v[i], ql_v[i])
        )

    svals = []
    for t in np.concatenate([[0.0], t_in]):
        svals.append(np.asarray(f.S0(x, t), dtype=float))
    sarr = np.stack(svals)
    delta0 = float(np.min(sarr))
    delta1 = float(np.max(sarr))
    if delta0 <= 0.0 or delta1 >= 1.0:
        out.append(
            "initial/trace saturation must stay strictly inside (0,1); observed [%.4g, %.4g]"
            % (delta0, delta1)
        )

    if f.support_delta <= 0 or 2 * f.support_delta >= g.length_ell:
        out.append("support margin must satisfy 0 < delta < ell/2")
    theta = np.linspace(0.0, 2.0 * math.pi, 17)[:-1]
    margin_x = np.concatenate(
        [
            np.linspace(0.0, f.support_delta, 9),
            np.linspace(g.length_ell - f.support_delta, g.length_ell, 9),
        ]
    )
    for t in (0.5 * g.horizon_T, g.horizon_T):
        for th in theta:
            qv = np.asarray(f.Q(margin_x, np.full_like(margin_x, th), t), dtype=float)
            if np.any(qv != 0.0):
                i = int(np.argmax(qv != 0.0))
                out.append(
                    "lateral flux must vanish in the end margins; Q(%.4f, theta=%.2f, t=%.3f) = %.3g"
                    % (margin_x[i], th, t, qv[i])
                )
                break
        else:
            continue
        break
    q_t0 = np.asarray(f.Q(x, np.zeros_like(x), 0.0), dtype=float)
    if np.any(q_t0 != 0.0):
        i = int(np.argmax(q_t0 != 0.0))
        out.append("lateral flux must vanish at t = 0; Q(%.4f, 0, 0) = %.3g" % (x[i], q_t0[i]))

    if f.alpha < 1:
        out.append("alpha must be >= 1, got %g" % f.alpha)

    # corner compatibility: dS0/dt = d/dx(Lambda(S0) dS0/dx) at both ends, t = 0.
    # One-sided three-point time difference, exact for the quadratic switch-on
    # used by the preset families.
    Lam = spec.derived.cap_diff_Lambda
    h = 1e-3
    for xe in (0.0, g.length_ell):
        dt_term = (
            -3.0 * f.S0(np.asarray(xe), 0.0)
            + 4.0 * f.S0(np.asarray(xe), h)
            - f.S0(np.asarray(xe), 2.0 * h)
        ) / (2.0 * h)
        if xe == 0.0:
            xs = np.asarray([0.0, h, 2 * h])
        else:
            xs = np.asarray([xe - 2 * h, xe - h, xe])
        s3 = np.asarray(f.S0(xs, 0.0), dtype=float)
        flux_half = Lam(0.5 * (s3[:-1] + s3[1:])) * np.diff(s3) / h
        dx_term = (flux_half[1] - flux_half[0]) / h
        resid = float(dt_term - dx_term)
        if abs(resid) > 1e-10:
            out.append(
                "corner compatibility violated at x = %g: |dS/dt - d/dx(Lambda dS/dx)| = %.3g"
                % (xe, abs(resid))
            )

    return ValidationReport(violations=out, delta0=delta0, delta1=delta1)
