"""Triangular smoothing kernel and its normalized antiderivative.

``hat`` smears a particle over a radial window of half-width delta; its
integral over the window equals delta, so ``cumulative`` (the running
integral divided by delta) rises from 0 to 1.  Both are exact closed
forms: ``cumulative`` shows up inside O(N) inner loops and in the exact
cumulative-mass identity, so it is never evaluated by quadrature.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class KernelWidth:
    """Validated smoothing half-width.

    The width must be positive.  Inside a run it should also stay below
    1/(4 D) for the run's bound constant D; that relation is monitored by
    the diagnostics module rather than enforced here, because the coarse
    rungs of desk-scale convergence ladders intentionally violate it.
    """

    delta: float

    def __post_init__(self):
        if not self.delta > 0.0:
            raise ValueError(f"kernel width must be positive, got {self.delta}")

    def hat(self, zeta):
        return hat(zeta, self.delta)

    def cumulative(self, zeta):
        return cumulative(zeta, self.delta)


def _width(delta):
    if isinstance(delta, KernelWidth):
        return delta.delta
    d = np.asarray(delta, dtype=float)
    if d.ndim == 0:
        d = float(d)
        if not d > 0.0:
            raise ValueError(f"kernel width must be positive, got {d}")
        return d
    if not np.all(d > 0.0):
        raise ValueError("kernel widths must be positive")
    return d


def hat(zeta, delta):
    """Tent weight: 1 - |zeta|/delta inside the window, 0 outside.

    Even in zeta, range [0, 1], and integrates to delta over the line.
    """
    d = _width(delta)
    z = np.abs(np.asarray(zeta, dtype=float))
    out = np.where(z <= d, 1.0 - z / d, 0.0)
    return float(out) if out.ndim == 0 else out


def cumulative(zeta, delta):
    """Normalized running integral of the tent weight.

    Piecewise quadratic: 0 below -delta, (zeta+delta)^2 / (2 delta^2) on
    the rising half, 1 - (delta-zeta)^2 / (2 delta^2) on the falling half,
    1 above delta.  Monotone, 1/delta-Lipschitz, and C^1 (its derivative
    is hat/delta everywhere, including the kink abscissae where both
    branches agree).
    """
    d = _width(delta)
    z = np.asarray(zeta, dtype=float)
    out = np.select(
        [z <= -d, z < 0.0, z < d],
        [0.0, (z + d) ** 2 / (2.0 * d * d), 1.0 - (d - z) ** 2 / (2.0 * d * d)],
        default=1.0,
    )
    return float(out) if out.ndim == 0 else out
