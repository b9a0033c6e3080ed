"""Conserved quantities, run-time bound monitors, and error norms.

The total mass sum_n E_n M_n is the discrete stand-in for the mass seen
at infinity and is conserved by the exact flow; the weighted particle
number sum_n exp(lam(R_n)) M_n mirrors the continuum counting integral.
Neither is conserved by the schemes, so their drift under refinement is
itself a diagnostic.

Cross-run comparisons come in two flavors, matching how convergence is
stated: particle-indexed norms (running maxima of per-particle gaps, the
weight gap scaled by fineness^-3) for runs sharing one decomposition, and
field sup-norms on a radial grid when resolutions differ.
"""

from dataclasses import dataclass, field as dataclass_field
from typing import Optional

import numpy as np

from .errors import DecompositionMismatch, DegenerateFit, TrappedSurface
from .fields import (
    SortedFieldView,
    TRAPPED_GUARD,
    build_view,
    field_profile,
    sample_at_particles,
)
from .phase_space import ParticleEnsemble


def adm_mass(view: SortedFieldView) -> float:
    """Total mass sum_n E_n M_n; equals the mass function beyond the support."""
    return view.total_EM


def particle_number(view: SortedFieldView) -> float:
    """Weighted count sum_n exp(lam(R_n)) M_n.

    A discrete analogue of the continuum counting integral; there is no
    canonical choice, so it is only tracked for refinement-driven drift,
    never against a fixed tolerance.
    """
    if view.n == 0:
        return 0.0
    m = view.em.cum_sum(view.sorted_R)
    one_minus = 1.0 - 2.0 * m / view.sorted_R
    k = int(np.argmin(one_minus))
    if one_minus[k] <= TRAPPED_GUARD:
        raise TrappedSurface(float(view.sorted_R[k]), float(m[k]))
    lam = -0.5 * np.log1p(-2.0 * m / view.sorted_R)
    return float(np.dot(np.exp(lam), view.sorted_M))


# ---------------------------------------------------------------------------
# run-time bound monitor


DEFAULT_CHECKS = (
    "weight_scale",
    "radius",
    "inverse_radius",
    "momentum",
    "metric",
    "density",
)


@dataclass
class BoundMonitor:
    """Thresholds factor * d_bound on the run-time quantities.

    The factor defaults to 2 for the ODE scheme and 4 for the staged
    scheme.  ``d_bound`` is the analytic bound constant; it is not
    computable a priori, so it is either user-supplied or self-calibrated
    from the initial state (see ``calibrate_monitor``).
    """

    d_bound: float
    epsilon: float
    factor: float = 2.0
    checks: tuple = DEFAULT_CHECKS

    def __post_init__(self):
        if not self.d_bound > 0.0:
            raise ValueError("bound constant must be positive")

    @property
    def threshold(self):
        return self.factor * self.d_bound

    def kernel_width_ok(self, delta) -> bool:
        """Whether delta <= 1/(4 d_bound); informational, not enforced."""
        return delta <= 1.0 / (4.0 * self.d_bound)


@dataclass
class Violation:
    quantity: str
    index: Optional[int]
    value: float
    threshold: float

    def __str__(self):
        where = "" if self.index is None else f" at particle {self.index}"
        return (
            f"{self.quantity}{where}: {self.value:.6g} "
            f"exceeds {self.threshold:.6g}"
        )


def _monitor_values(ensemble, view, samples, epsilon):
    """Max of each monitored quantity; fields sampled at particle radii."""
    if len(ensemble) == 0:
        return {name: 0.0 for name in DEFAULT_CHECKS}, {}
    e2l = np.exp(2.0 * samples.lam)
    per_particle = {
        "weight_scale": ensemble.M / epsilon**3,
        "radius": ensemble.R,
        "inverse_radius": 1.0 / ensemble.R,
        "momentum": np.abs(ensemble.W),
        "metric": e2l,
        "density": samples.rho,
    }
    maxima = {k: float(np.max(v)) for k, v in per_particle.items()}
    return maxima, per_particle


def calibrate_monitor(
    ensemble: ParticleEnsemble,
    view: SortedFieldView,
    epsilon: float,
    factor: float = 2.0,
    safety: float = 1.5,
    checks: tuple = DEFAULT_CHECKS,
) -> BoundMonitor:
    """Self-calibrate d_bound from the initial state times a safety margin."""
    samples = sample_at_particles(view)
    maxima, _ = _monitor_values(ensemble, view, samples, epsilon)
    base = max([v for k, v in maxima.items() if k in checks] + [1.0])
    return BoundMonitor(
        d_bound=safety * base, epsilon=epsilon, factor=factor, checks=checks
    )


def check_bounds(ensemble, view, monitor: BoundMonitor, samples=None):
    """Compare every enabled quantity against factor * d_bound.

    Returns a list of violations (empty on pass); the evolution driver
    turns a non-empty list into a MonitorAbort.
    """
    if len(ensemble) == 0:
        return []
    if samples is None:
        samples = sample_at_particles(view)
    _, per_particle = _monitor_values(ensemble, view, samples, monitor.epsilon)
    threshold = monitor.threshold
    out = []
    for name in monitor.checks:
        values = per_particle[name]
        k = int(np.argmax(values))
        if values[k] > threshold:
            out.append(Violation(name, k, float(values[k]), threshold))
    return out


# ---------------------------------------------------------------------------
# cross-run error norms


def _snapshot_pairs(run_a, run_b, t, tol=1e-9):
    """Time-matched ensemble snapshots from two histories, up to time t."""
    snaps_b = [(rec.time, rec.ensemble) for rec in run_b.records if rec.ensemble is not None]
    times_b = np.array([tb for tb, _ in snaps_b])
    pairs = []
    for rec in run_a.records:
        if rec.ensemble is None or rec.time > t + tol:
            continue
        if times_b.size == 0:
            break
        k = int(np.argmin(np.abs(times_b - rec.time)))
        if abs(times_b[k] - rec.time) <= tol:
            pairs.append((rec.time, rec.ensemble, snaps_b[k][1]))
    return pairs


def particle_error_norms(run_a, run_b, t):
    """Running maxima of per-particle gaps up to time t.

    Both runs must share the identical cell decomposition (same particle
    count and indexing) and fineness; the weight gap carries the
    fineness^-3 scaling that puts it on the same footing as the others.
    """
    if run_a.epsilon != run_b.epsilon:
        raise DecompositionMismatch(
            f"fineness differs: {run_a.epsilon} vs {run_b.epsilon}"
        )
    pairs = _snapshot_pairs(run_a, run_b, t)
    if not pairs:
        raise DecompositionMismatch("no time-aligned snapshots to compare")
    scale = run_a.epsilon**-3
    norm_r = norm_w = norm_m = 0.0
    for _, ens_a, ens_b in pairs:
        if len(ens_a) != len(ens_b):
            raise DecompositionMismatch(
                f"particle counts differ: {len(ens_a)} vs {len(ens_b)}"
            )
        norm_r = max(norm_r, float(np.max(np.abs(ens_a.R - ens_b.R), initial=0.0)))
        norm_w = max(norm_w, float(np.max(np.abs(ens_a.W - ens_b.W), initial=0.0)))
        norm_m = max(
            norm_m, scale * float(np.max(np.abs(ens_a.M - ens_b.M), initial=0.0))
        )
    return norm_r, norm_w, norm_m


FIELD_METRIC_GROUP = ("m", "lam", "mu")
FIELD_SOURCE_GROUP = ("rho", "p", "j")


def field_error_norms(run_a, run_b, t, grid):
    """Sup-norm field gaps on a radial grid, maximized over matched times.

    Each run's fields are rebuilt with its own kernel width, so runs of
    different resolution can be compared.  Returns a dict with one entry
    per quantity in the metric and source groups.
    """
    grid = np.asarray(grid, dtype=float)
    pairs = _snapshot_pairs(run_a, run_b, t)
    if not pairs:
        raise DecompositionMismatch("no time-aligned snapshots to compare")
    gaps = {name: 0.0 for name in FIELD_METRIC_GROUP + FIELD_SOURCE_GROUP}
    for _, ens_a, ens_b in pairs:
        prof_a = field_profile(build_view(ens_a, run_a.delta), grid)
        prof_b = field_profile(build_view(ens_b, run_b.delta), grid)
        for name in gaps:
            gap = float(np.max(np.abs(getattr(prof_a, name) - getattr(prof_b, name))))
            gaps[name] = max(gaps[name], gap)
    return gaps


@dataclass
class ErrorReport:
    """Running error norms between two runs, sampled at chosen times."""

    times: list = dataclass_field(default_factory=list)
    norm_R: list = dataclass_field(default_factory=list)
    norm_W: list = dataclass_field(default_factory=list)
    norm_M: list = dataclass_field(default_factory=list)
    field_gaps: dict = dataclass_field(default_factory=dict)


def compare_runs(run_a, run_b, times, grid=None) -> ErrorReport:
    """Particle norms (and field gaps, if a grid is given) at several times."""
    report = ErrorReport()
    for t in times:
        nr, nw, nm = particle_error_norms(run_a, run_b, t)
        report.times.append(t)
        report.norm_R.append(nr)
        report.norm_W.append(nw)
        report.norm_M.append(nm)
        if grid is not None:
            gaps = field_error_norms(run_a, run_b, t, grid)
            for name, val in gaps.items():
                report.field_gaps.setdefault(name, []).append(val)
    return report


def observed_order(values, params) -> float:
    """Least-squares slope of log(value) against log(parameter)."""
    values = np.asarray(values, dtype=float)
    params = np.asarray(params, dtype=float)
    if values.size < 2 or values.size != params.size:
        raise DegenerateFit("need at least two (value, parameter) pairs")
    if np.any(values <= 0.0):
        raise DegenerateFit("values must be positive for a log-log fit")
    if np.any(params <= 0.0) or np.unique(params).size != params.size:
        raise DegenerateFit("parameters must be positive and distinct")
    slope = np.polyfit(np.log(params), np.log(values), 1)[0]
    return float(slope)
