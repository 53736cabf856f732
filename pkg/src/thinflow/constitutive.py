"""Phase closures and the derived fractional-flow quantities.

The model works with wetting/non-wetting relative permeabilities k_rw, k_ro,
constant viscosities mu_w, mu_o and a capillary pressure p_c(S), from which
everything else follows:

    lambda_w = k_rw / mu_w          wetting mobility
    lambda_o = k_ro / mu_o          non-wetting mobility
    lambda   = lambda_w + lambda_o  total mobility, bounded in [c1, c2]
    b        = lambda_w / lambda    fractional flow, monotone from 0 to 1
    Lambda   = -(lambda_w lambda_o / lambda) p_c'   capillary diffusivity

The reduced pressure is the total pressure shifted by

    shift(S) = int_0^S (lambda_o / lambda)(eta) p_c'(eta) d eta,

so that the wetting phase pressure is P - shift(S) and the non-wetting one
differs from it by p_c(S).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad

ArrayFn = Callable[[np.ndarray], np.ndarray]

_SHIFT_TABLE_SIZE = 65537


@dataclass(frozen=True)
class PhaseClosures:
    """Primitive constitutive functions of saturation, vectorized over numpy arrays."""

    relperm_w: ArrayFn
    relperm_o: ArrayFn
    d_relperm_w: ArrayFn
    d_relperm_o: ArrayFn
    visc_w: float
    visc_o: float
    capillary: ArrayFn
    d_capillary: ArrayFn
    d2_capillary: ArrayFn
    name: str = "custom"


@dataclass(frozen=True)
class DerivedClosures:
    """Mobilities, fractional flow and capillary diffusivity with derivatives.

    c1 and c2 are the certified bounds of the total mobility on a dense
    saturation grid. reduced_shift is a fast vectorized evaluation of the
    pressure shift built from a dense cumulative-trapezoid table; the
    adaptive-quadrature definition is reduced_pressure_shift below and the
    two agree to table accuracy (checked in the test suite).
    """

    closures: PhaseClosures
    lambda_w: ArrayFn
    lambda_o: ArrayFn
    lambda_total: ArrayFn
    d_lambda_w: ArrayFn
    d_lambda_o: ArrayFn
    d_lambda_total: ArrayFn
    frac_flow_b: ArrayFn
    d_frac_flow_b: ArrayFn
    cap_diff_Lambda: ArrayFn
    d_cap_diff_Lambda: ArrayFn
    reduced_shift: ArrayFn
    c1: float
    c2: float


def corey(
    n_w: float = 2.0,
    n_o: float = 2.0,
    visc_w: float = 1.0,
    visc_o: float = 1.0,
    entry_pressure: float = 1.0,
) -> PhaseClosures:
    """Corey power-law relative permeabilities with a linear capillary curve.

    k_rw = S^n_w, k_ro = (1-S)^n_o with exponents >= 2, and
    p_c = entry_pressure * (1 - S) with entry_pressure > 0, so p_c' < 0.
    """
    if n_w < 2 or n_o < 2:
        raise ValueError("corey exponents must be >= 2, got n_w=%g n_o=%g" % (n_w, n_o))
    if entry_pressure <= 0:
        raise ValueError("entry_pressure must be positive, got %g" % entry_pressure)
    if visc_w <= 0 or visc_o <= 0:
        raise ValueError("viscosities must be positive")

    def krw(s):
        return np.asarray(s, dtype=float) ** n_w

    def kro(s):
        return (1.0 - np.asarray(s, dtype=float)) ** n_o

    def d_krw(s):
        return n_w * np.asarray(s, dtype=float) ** (n_w - 1.0)

    def d_kro(s):
        return -n_o * (1.0 - np.asarray(s, dtype=float)) ** (n_o - 1.0)

    def pc(s):
        return entry_pressure * (1.0 - np.asarray(s, dtype=float))

    def d_pc(s):
        return np.full_like(np.asarray(s, dtype=float), -entry_pressure)

    def d2_pc(s):
        return np.zeros_like(np.asarray(s, dtype=float))

    return PhaseClosures(
        relperm_w=krw,
        relperm_o=kro,
        d_relperm_w=d_krw,
        d_relperm_o=d_kro,
        visc_w=visc_w,
        visc_o=visc_o,
        capillary=pc,
        d_capillary=d_pc,
        d2_capillary=d2_pc,
        name="corey(n_w=%g,n_o=%g,mu_w=%g,mu_o=%g,pe=%g)"
        % (n_w, n_o, visc_w, visc_o, entry_pressure),
    )


def validate_closures(closures: PhaseClosures, n_samples: int = 1001) -> list[str]:
    """Check the structural assumptions on a dense saturation grid.

    Returns a list of human-readable violations; empty means admissible.
    """
    s = np.linspace(0.0, 1.0, n_samples)
    out: list[str] = []
    krw = np.asarray(closures.relperm_w(s), dtype=float)
    kro = np.asarray(closures.relperm_o(s), dtype=float)
    dpc = np.asarray(closures.d_capillary(s), dtype=float)

    if closures.visc_w <= 0 or closures.visc_o <= 0:
        out.append("viscosities must be positive")
    if krw[0] != 0.0:
        out.append("relperm_w(0) must vanish, got %.3g" % krw[0])
    if kro[-1] != 0.0:
        out.append("relperm_o(1) must vanish, got %.3g" % kro[-1])
    if np.any(krw < 0) or np.any(kro < 0):
        i = int(np.argmax((krw < 0) | (kro < 0)))
        out.append("relative permeabilities must be nonnegative (violated at S=%.4f)" % s[i])
    dkrw = np.diff(krw)
    dkro = np.diff(kro)
    if np.any(dkrw < -1e-14):
        i = int(np.argmax(dkrw < -1e-14))
        out.append("relperm_w must be nondecreasing (violated near S=%.4f)" % s[i])
    if np.any(dkro > 1e-14):
        i = int(np.argmax(dkro > 1e-14))
        out.append("relperm_o must be nonincreasing (violated near S=%.4f)" % s[i])
    if np.any(dpc >= 0):
        i = int(np.argmax(dpc >= 0))
        out.append("capillary pressure must be strictly decreasing (p_c' >= 0 at S=%.4f)" % s[i])
    lam = krw / closures.visc_w + kro / closures.visc_o
    if np.any(lam <= 0):
        i = int(np.argmax(lam <= 0))
        out.append("total mobility must stay positive (vanishes at S=%.4f)" % s[i])
    return out


def build_derived(closures: PhaseClosures) -> DerivedClosures:
    """Assemble the derived fractional-flow quantities from validated closures."""
    bad = validate_closures(closures)
    if bad:
        raise ValueError("inadmissible closures: " + "; ".join(bad))

    mu_w = closures.visc_w
    mu_o = closures.visc_o

    def lam_w(s):
        return closures.relperm_w(s) / mu_w

    def lam_o(s):
        return closures.relperm_o(s) / mu_o

    def d_lam_w(s):
        return closures.d_relperm_w(s) / mu_w

    def d_lam_o(s):
        return closures.d_relperm_o(s) / mu_o

    def lam(s):
        return lam_w(s) + lam_o(s)

    def d_lam(s):
        return d_lam_w(s) + d_lam_o(s)

    def b(s):
        return lam_w(s) / lam(s)

    def d_b(s):
        lw, lo = lam_w(s), lam_o(s)
        lt = lw + lo
        return (d_lam_w(s) * lt - lw * d_lam(s)) / lt**2

    def Lambda(s):
        return -(lam_w(s) * lam_o(s) / lam(s)) * closures.d_capillary(s)

    def d_Lambda(s):
        lw, lo = lam_w(s), lam_o(s)
        lt = lw + lo
        dlw, dlo = d_lam_w(s), d_lam_o(s)
        ratio = lw * lo / lt
        d_ratio = ((dlw * lo + lw * dlo) * lt - lw * lo * (dlw + dlo)) / lt**2
        return -d_ratio * closures.d_capillary(s) - ratio * closures.d2_capillary(s)

    grid = np.linspace(0.0, 1.0, 1001)
    lam_grid = lam(grid)
    c1 = float(np.min(lam_grid))
    c2 = float(np.max(lam_grid))

    table_s = np.linspace(0.0, 1.0, _SHIFT_TABLE_SIZE)
    integrand = (lam_o(table_s) / lam(table_s)) * closures.d_capillary(table_s)
    table_v = np.concatenate([[0.0], cumulative_trapezoid(integrand, table_s)])

    def shift(s):
        return np.interp(np.asarray(s, dtype=float), table_s, table_v)

    return DerivedClosures(
        closures=closures,
        lambda_w=lam_w,
        lambda_o=lam_o,
        lambda_total=lam,
        d_lambda_w=d_lam_w,
        d_lambda_o=d_lam_o,
        d_lambda_total=d_lam,
        frac_flow_b=b,
        d_frac_flow_b=d_b,
        cap_diff_Lambda=Lambda,
        d_cap_diff_Lambda=d_Lambda,
        reduced_shift=shift,
        c1=c1,
        c2=c2,
    )


def reduced_pressure_shift(closures: PhaseClosures, S: float) -> float:
    """Pressure shift int_0^S (lambda_o/lambda) p_c' d eta by adaptive quadrature."""
    mu_w = closures.visc_w
    mu_o = closures.visc_o

    def integrand(eta):
        lw = closures.relperm_w(eta) / mu_w
        lo = closures.relperm_o(eta) / mu_o
        return (lo / (lw + lo)) * closures.d_capillary(eta)

    if S == 0.0:
        return 0.0
    val, _ = quad(integrand, 0.0, S, epsabs=1e-13, epsrel=1e-13, limit=200)
    return float(val)
