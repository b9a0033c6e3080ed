"""Exception types raised by the simulator."""


class GravpicError(Exception):
    """Base class for all errors raised by this package."""


class TrappedSurfaceAtStart(GravpicError):
    """Initial datum fails the no-trapped-surface condition at some radius."""

    def __init__(self, radius, enclosed, which):
        self.radius = radius
        self.enclosed = enclosed
        self.which = which
        super().__init__(
            f"{which} condition violated at r={radius:.6g}: "
            f"enclosed integral {enclosed:.6g} >= r/2 = {radius / 2:.6g}"
        )


class FinenessTooCoarse(GravpicError):
    """Requested cell fineness cannot tile the support box."""


class NegativeDensity(GravpicError):
    """Quadrature sampled a negative phase-space density."""


class ParticleTooCentral(GravpicError):
    """A particle radius is at or below the kernel width.

    The closed-form cumulative-mass identity requires every particle to sit
    strictly above the smoothing width.
    """

    def __init__(self, radius, delta):
        self.radius = radius
        self.delta = delta
        super().__init__(f"particle radius {radius:.6g} <= kernel width {delta:.6g}")


class TrappedSurface(GravpicError):
    """2 m(r) / r reached 1 at some radius; the metric is no longer regular."""

    def __init__(self, radius, mass):
        self.radius = radius
        self.mass = mass
        super().__init__(
            f"trapped surface at r={radius:.6g}: 2m/r = {2.0 * mass / radius:.12g}"
        )


class NonPositiveRadius(GravpicError):
    """A time step drove a particle radius to or below the kernel width."""


class StepTooLarge(GravpicError):
    """A weight update bracket went negative; retry with a smaller step."""

    def __init__(self, tau, bracket_min, suggested_tau):
        self.tau = tau
        self.bracket_min = bracket_min
        self.suggested_tau = suggested_tau
        super().__init__(
            f"step tau={tau:.6g} drives a weight negative "
            f"(update bracket {bracket_min:.6g}); try tau <= {suggested_tau:.6g}"
        )


class MonitorAbort(GravpicError):
    """A run-time bound monitor fired during evolution."""

    def __init__(self, time, violations, records=None):
        self.time = time
        self.violations = violations
        self.records = records or []
        first = violations[0] if violations else None
        super().__init__(f"monitor abort at t={time:.6g}: {first}")


class DecompositionMismatch(GravpicError):
    """Two runs cannot be compared particle-by-particle."""


class DegenerateFit(GravpicError):
    """Order estimation received non-positive values or degenerate abscissae."""


class Unclassified(GravpicError):
    """An amplitude-scan run finished without meeting either outcome criterion."""
