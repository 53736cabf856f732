"""Shared finite-difference stencils and quadrature weights.

Both the dimension-reduced solver and the axisymmetric reference solver, as
well as the error norms that compare them, differentiate fields with these
same routines. Using one implementation on both sides of every difference
makes the stencil truncation error cancel in the comparison instead of
polluting the small-epsilon error levels.
"""

from __future__ import annotations

import numpy as np


def ddx(f: np.ndarray, dx: float, axis: int = -1) -> np.ndarray:
    """Second-order first derivative: central inside, 3-point one-sided at ends."""
    f = np.asarray(f, dtype=float)
    f = np.moveaxis(f, axis, -1)
    if f.shape[-1] < 3:
        raise ValueError("need at least 3 points along the derivative axis")
    out = np.empty_like(f)
    out[..., 1:-1] = (f[..., 2:] - f[..., :-2]) / (2.0 * dx)
    out[..., 0] = (-3.0 * f[..., 0] + 4.0 * f[..., 1] - f[..., 2]) / (2.0 * dx)
    out[..., -1] = (3.0 * f[..., -1] - 4.0 * f[..., -2] + f[..., -3]) / (2.0 * dx)
    return np.moveaxis(out, -1, axis)


def trapezoid_weights(n_nodes: int, dx: float) -> np.ndarray:
    """Composite trapezoid weights on a uniform node grid."""
    w = np.full(n_nodes, dx)
    w[0] = w[-1] = dx / 2.0
    return w
