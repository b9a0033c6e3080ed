"""Run configuration, drivers, and convergence studies.

A run is described by a flat key = value config (INI sections, no
nesting) that round-trips byte-for-byte through the metadata file every
run emits.  Three study drivers sit on top of single runs: a time-step
ladder against an RK4 reference, a phase-space resolution ladder against
the finest rung, and an amplitude bisection between dispersal and
collapse.
"""

import configparser
import hashlib
import io
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import report
from .diagnostics import (
    FIELD_METRIC_GROUP,
    FIELD_SOURCE_GROUP,
    calibrate_monitor,
    field_error_norms,
    observed_order,
    particle_error_norms,
    BoundMonitor,
)
from .dynamics import RunHistory, evolve
from .errors import (
    DegenerateFit,
    GravpicError,
    NonPositiveRadius,
    ParticleTooCentral,
    StepTooLarge,
    TrappedSurface,
    TrappedSurfaceAtStart,
    Unclassified,
)
from .fields import build_view
from .phase_space import (
    STANDARD_SUPPORT,
    SupportBox,
    bump_datum,
    decompose,
    init_weights,
    initial_adm_mass,
    table_datum,
    validate_initial,
)

SCHEMES = ("semi_rk4", "full_euler")
# monitor factor per scheme when not set explicitly
SCHEME_FACTOR = {"semi_rk4": 2.0, "full_euler": 4.0}


@dataclass
class RunConfig:
    """Everything needed to reproduce one run."""

    # datum
    datum_kind: str = "bump"  # "bump" or "table"
    r_min: float = STANDARD_SUPPORT.r_min
    r_max: float = STANDARD_SUPPORT.r_max
    w_min: float = STANDARD_SUPPORT.w_min
    w_max: float = STANDARD_SUPPORT.w_max
    l_min: float = STANDARD_SUPPORT.l_min
    l_max: float = STANDARD_SUPPORT.l_max
    amplitude: float = 1.0
    table_path: str = ""

    # discretization
    epsilon: float = 0.04
    delta: float = 0.2
    tau: float = 0.05
    quad_order: int = 4

    # run
    scheme: str = "full_euler"
    t_end: float = 1.0
    variant: str = "corrected"
    snapshot_stride: int = 1
    validate: bool = True

    # monitor
    monitor_enabled: bool = True
    d_bound: float = 0.0  # 0 means self-calibrate from the initial state
    monitor_factor: float = 0.0  # 0 means pick by scheme (2 semi, 4 full)
    monitor_checks: str = ""  # comma list; empty means every check

    # classification thresholds (amplitude scan)
    dispersal_threshold: float = 0.5
    collapse_threshold: float = 0.9

    # output
    outdir: str = "out"
    figures: bool = True
    grid_points: int = 256

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not (0.0 < self.epsilon <= self.delta):
            raise ValueError("need 0 < epsilon <= delta")
        if not self.tau > 0.0:
            raise ValueError("tau must be positive")
        if not self.t_end > 0.0:
            raise ValueError("t_end must be positive")
        if self.datum_kind not in ("bump", "table"):
            raise ValueError(f"unknown datum kind {self.datum_kind!r}")

    @property
    def support(self) -> SupportBox:
        return SupportBox(
            r_min=self.r_min,
            r_max=self.r_max,
            w_min=self.w_min,
            w_max=self.w_max,
            l_min=self.l_min,
            l_max=self.l_max,
        )

    def build_datum(self):
        if self.datum_kind == "table":
            return table_datum(self.table_path)
        return bump_datum(self.support, self.amplitude)

    def factor(self):
        return self.monitor_factor if self.monitor_factor > 0 else SCHEME_FACTOR[self.scheme]


_SCHEMA = {
    "datum": [
        ("kind", "datum_kind", str),
        ("r_min", "r_min", float),
        ("r_max", "r_max", float),
        ("w_min", "w_min", float),
        ("w_max", "w_max", float),
        ("l_min", "l_min", float),
        ("l_max", "l_max", float),
        ("amplitude", "amplitude", float),
        ("table", "table_path", str),
    ],
    "discretization": [
        ("epsilon", "epsilon", float),
        ("delta", "delta", float),
        ("tau", "tau", float),
        ("quad_order", "quad_order", int),
    ],
    "run": [
        ("scheme", "scheme", str),
        ("t_end", "t_end", float),
        ("variant", "variant", str),
        ("snapshot_stride", "snapshot_stride", int),
        ("validate", "validate", bool),
    ],
    "monitor": [
        ("enabled", "monitor_enabled", bool),
        ("d_bound", "d_bound", float),
        ("factor", "monitor_factor", float),
        ("checks", "monitor_checks", str),
    ],
    "classify": [
        ("dispersal_threshold", "dispersal_threshold", float),
        ("collapse_threshold", "collapse_threshold", float),
    ],
    "output": [
        ("directory", "outdir", str),
        ("figures", "figures", bool),
        ("grid_points", "grid_points", int),
    ],
}


def config_to_ini(config: RunConfig) -> str:
    cp = configparser.ConfigParser()
    for section, entries in _SCHEMA.items():
        cp[section] = {}
        for key, attr, kind in entries:
            value = getattr(config, attr)
            cp[section][key] = repr(value) if kind is float else str(value)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def config_from_ini(text: str) -> RunConfig:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    kwargs = {}
    for section, entries in _SCHEMA.items():
        if section not in cp:
            continue
        for key, attr, kind in entries:
            if key not in cp[section]:
                continue
            raw = cp[section][key]
            if kind is bool:
                kwargs[attr] = raw.strip().lower() in ("1", "true", "yes", "on")
            else:
                kwargs[attr] = kind(raw)
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_ini(fh.read())


# ---------------------------------------------------------------------------
# single run


@dataclass
class SingleRunResult:
    config: RunConfig
    history: RunHistory
    aborted: bool = False
    abort_reason: str = ""
    paths: list = field(default_factory=list)


def _build_monitor(config, ensemble, view):
    if not config.monitor_enabled:
        return None
    from .diagnostics import DEFAULT_CHECKS

    checks = (
        tuple(c.strip() for c in config.monitor_checks.split(",") if c.strip())
        or DEFAULT_CHECKS
    )
    unknown = set(checks) - set(DEFAULT_CHECKS)
    if unknown:
        raise ValueError(f"unknown monitor checks: {sorted(unknown)}")
    if config.d_bound > 0:
        return BoundMonitor(
            d_bound=config.d_bound, epsilon=config.epsilon,
            factor=config.factor(), checks=checks,
        )
    return calibrate_monitor(
        ensemble, view, epsilon=config.epsilon, factor=config.factor(), checks=checks
    )


def _write_outputs(config, result, datum, monitor, n_particles):
    outdir = config.outdir
    os.makedirs(outdir, exist_ok=True)
    paths = []
    records = result.history.records

    diag_path = os.path.join(outdir, "diagnostics.csv")
    report.write_diagnostics(diag_path, records)
    paths.append(diag_path)

    for rec in records:
        if rec.ensemble is None:
            continue
        snap_path = os.path.join(outdir, f"snapshot_{rec.index:06d}.csv")
        report.write_snapshot(snap_path, rec.ensemble)
        paths.append(snap_path)

    final = None
    for rec in reversed(records):
        if rec.ensemble is not None:
            final = rec.ensemble
            break
    if final is not None and len(final):
        grid = np.linspace(
            0.0,
            float(np.max(final.R)) + 2.0 * config.delta,
            config.grid_points,
        )
        try:
            field_path = os.path.join(outdir, "fields_final.csv")
            view = build_view(final, config.delta)
            report.write_field_profile(field_path, view, grid)
            paths.append(field_path)
            if config.figures:
                fig_path = os.path.join(outdir, "fields_final.png")
                report.render_profile(fig_path, view, grid)
                paths.append(fig_path)
        except TrappedSurface:
            pass  # aborted runs may have no regular final metric

    if config.figures and records:
        fig_path = os.path.join(outdir, "diagnostics.png")
        report.render_diagnostics(fig_path, records)
        paths.append(fig_path)

    meta = configparser.ConfigParser()
    meta.read_string(config_to_ini(config))
    meta["result"] = {}
    meta["result"]["n_particles"] = str(n_particles)
    meta["result"]["n_records"] = str(len(records))
    meta["result"]["status"] = (
        f"aborted: {result.abort_reason}" if result.aborted else "completed"
    )
    if records:
        meta["result"]["final_time"] = repr(records[-1].time)
        meta["result"]["final_adm_mass"] = repr(records[-1].diagnostics["adm_mass"])
        meta["result"]["min_one_minus"] = repr(
            min(r.diagnostics["min_one_minus"] for r in records)
        )
    if monitor is not None:
        meta["result"]["d_bound"] = repr(monitor.d_bound)
        meta["result"]["kernel_width_ok"] = str(monitor.kernel_width_ok(config.delta))
    if config.datum_kind == "table" and config.table_path:
        with open(config.table_path, "rb") as fh:
            meta["result"]["table_sha256"] = hashlib.sha256(fh.read()).hexdigest()
    meta_path = os.path.join(outdir, "metadata.ini")
    with open(meta_path, "w", encoding="utf-8") as fh:
        meta.write(fh)
    paths.append(meta_path)
    result.paths = paths
    return result


def run_single(config: RunConfig) -> SingleRunResult:
    """Execute one run and write snapshots, diagnostics, and metadata.

    Monitor and trapped-surface aborts still flush all partial outputs,
    with an abort marker in the metadata, before the error is re-raised.
    """
    datum = config.build_datum()
    if config.validate:
        validate_initial(datum)
    decomp = decompose(datum, config.epsilon)
    ensemble = init_weights(datum, decomp, quad_order=config.quad_order)
    view = build_view(ensemble, config.delta)
    monitor = _build_monitor(config, ensemble, view)

    history = RunHistory(
        records=[],
        delta=config.delta,
        epsilon=config.epsilon,
        scheme=config.scheme,
        step=config.tau,
        variant=config.variant,
    )
    result = SingleRunResult(config=config, history=history)
    try:
        history.records = evolve(
            ensemble,
            config.delta,
            config.scheme,
            config.tau,
            config.t_end,
            monitor=monitor,
            snapshot_every=config.snapshot_stride,
            variant=config.variant,
        )
    except GravpicError as err:
        history.records = getattr(err, "records", [])
        result.aborted = True
        result.abort_reason = f"{type(err).__name__}: {err}"
        _write_outputs(config, result, datum, monitor, len(ensemble))
        raise
    _write_outputs(config, result, datum, monitor, len(ensemble))
    return result


def reference_amplitude(support: SupportBox = STANDARD_SUPPORT) -> float:
    """Amplitude at which the datum's total initial mass equals r_min/4."""
    base = initial_adm_mass(bump_datum(support, 1.0))
    return (support.r_min / 4.0) / base


# ---------------------------------------------------------------------------
# studies


@dataclass
class StudySpec:
    """A base config plus a ladder of (epsilon, delta, tau) rungs."""

    base: RunConfig
    ladder: list
    coupling: str = ""

    def __post_init__(self):
        if len(self.ladder) < 2:
            raise ValueError("a study ladder needs at least two rungs")


def tau_ladder_spec(base: RunConfig, taus, coupling="tau=delta/2^k") -> StudySpec:
    return StudySpec(
        base=base,
        ladder=[(base.epsilon, base.delta, float(t)) for t in taus],
        coupling=coupling,
    )


def phase_ladder_spec(base: RunConfig, deltas, eps_rule="delta^2", tau_rule=0.25) -> StudySpec:
    ladder = []
    for d in deltas:
        eps = d**2 if eps_rule == "delta^2" else d**3
        ladder.append((float(eps), float(d), float(tau_rule * d)))
    return StudySpec(base=base, ladder=ladder, coupling=f"eps={eps_rule}, tau={tau_rule}*delta")


def _aligned_stride(coarse, fine, what):
    ratio = coarse / fine
    stride = int(round(ratio))
    if stride < 1 or abs(stride - ratio) > 1e-9 * max(1.0, ratio):
        raise ValueError(f"{what} must divide the coarsest step (got ratio {ratio})")
    return stride


@dataclass
class TauStudyResult:
    taus: list
    errors_R: list
    errors_W: list
    errors_M: list
    totals: list
    order: float = None
    passed: bool = False
    exact: bool = False
    histories: list = field(default_factory=list)
    reference: RunHistory = None
    paths: list = field(default_factory=list)


def run_tau_study(spec: StudySpec) -> TauStudyResult:
    """Time-step ladder of the staged scheme against an RK4 reference.

    All rungs share one decomposition; the reference runs at one tenth of
    the smallest ladder step.  Errors are particle norms at the end time,
    fitted against the step size; first-order stepping passes in
    [0.8, 1.3].
    """
    base = spec.base
    eps_set = {rung[0] for rung in spec.ladder}
    delta_set = {rung[1] for rung in spec.ladder}
    if len(eps_set) != 1 or len(delta_set) != 1:
        raise ValueError("time-step ladder must share (epsilon, delta)")
    epsilon, delta = eps_set.pop(), delta_set.pop()
    taus = [rung[2] for rung in spec.ladder]
    tau_max = max(taus)

    datum = base.build_datum()
    if base.validate:
        validate_initial(datum)
    ensemble = init_weights(datum, decompose(datum, epsilon), quad_order=base.quad_order)

    histories = []
    for tau in taus:
        stride = _aligned_stride(tau_max, tau, "every ladder step")
        records = evolve(
            ensemble,
            delta,
            "full_euler",
            tau,
            base.t_end,
            snapshot_every=stride,
            variant=base.variant,
        )
        histories.append(
            RunHistory(records, delta, epsilon, "full_euler", tau, base.variant)
        )

    dt_ref = min(taus) / 10.0
    ref_stride = _aligned_stride(tau_max, dt_ref, "the reference step")
    ref_records = evolve(
        ensemble, delta, "semi_rk4", dt_ref, base.t_end, snapshot_every=ref_stride
    )
    reference = RunHistory(ref_records, delta, epsilon, "semi_rk4", dt_ref)

    result = TauStudyResult(
        taus=taus, errors_R=[], errors_W=[], errors_M=[], totals=[],
        histories=histories, reference=reference,
    )
    for hist in histories:
        nr, nw, nm = particle_error_norms(hist, reference, base.t_end)
        result.errors_R.append(nr)
        result.errors_W.append(nw)
        result.errors_M.append(nm)
        result.totals.append(nr + nw + nm)
    if all(v == 0.0 for v in result.totals):
        result.exact = True
        result.passed = True
    else:
        result.order = observed_order(result.totals, taus)
        result.passed = 0.8 <= result.order <= 1.3

    outdir = base.outdir
    os.makedirs(outdir, exist_ok=True)
    csv_path = os.path.join(outdir, "tau_study.csv")
    report.write_order_table(
        csv_path,
        "tau",
        taus,
        {"err_R": result.errors_R, "err_W": result.errors_W,
         "err_M": result.errors_M, "total": result.totals},
    )
    result.paths.append(csv_path)
    if base.figures and not result.exact:
        fig_path = os.path.join(outdir, "tau_study.png")
        report.render_order(
            fig_path, "step size", taus, {"total": result.totals}, result.order
        )
        result.paths.append(fig_path)
    return result


@dataclass
class PhaseStudyResult:
    deltas: list
    epsilons: list
    n_particles: list
    metric_gaps: list
    source_gaps: list
    histories: list = field(default_factory=list)
    gaps_by_field: dict = field(default_factory=dict)
    metric_order: float = None
    source_order: float = None
    passed: bool = False
    low_confidence: bool = False
    paths: list = field(default_factory=list)


def run_phase_study(spec: StudySpec, compare_times=None) -> PhaseStudyResult:
    """Resolution ladder compared against its own finest rung.

    Every rung runs the staged scheme with its own (epsilon, delta, tau);
    field sup-norm gaps to the finest rung are measured on a shared
    radial grid at snapshot-aligned times.  The metric-group order is the
    pass gate; source-group gaps are reported without a gate, since under
    the epsilon = delta^2 coupling their bound does not shrink.
    """
    base = spec.base
    ladder = sorted(spec.ladder, key=lambda rung: -rung[1])  # coarse -> fine
    deltas = [rung[1] for rung in ladder]
    if len(set(deltas)) != len(deltas):
        raise ValueError("resolution ladder must strictly refine delta")
    datum = base.build_datum()
    if base.validate:
        validate_initial(datum)

    if compare_times is None:
        nt = 4
        compare_times = [base.t_end * k / nt for k in range(nt + 1)]
    step_of_time = compare_times[1] - compare_times[0]

    histories = []
    counts = []
    for eps, d, tau in ladder:
        ensemble = init_weights(datum, decompose(datum, eps), quad_order=base.quad_order)
        counts.append(len(ensemble))
        stride = _aligned_stride(step_of_time, tau, "every rung's step")
        records = evolve(
            ensemble,
            d,
            "full_euler",
            tau,
            base.t_end,
            snapshot_every=stride,
            variant=base.variant,
        )
        histories.append(RunHistory(records, d, eps, "full_euler", tau, base.variant))

    reference = histories[-1]
    grid_hi = base.r_max + base.t_end + 2.0 * max(deltas)
    grid = np.linspace(0.0, grid_hi, base.grid_points)

    result = PhaseStudyResult(
        deltas=deltas[:-1],
        epsilons=[rung[0] for rung in ladder[:-1]],
        n_particles=counts,
        metric_gaps=[],
        source_gaps=[],
        histories=histories,
    )
    for hist in histories[:-1]:
        gaps = field_error_norms(hist, reference, base.t_end, grid)
        for name, val in gaps.items():
            result.gaps_by_field.setdefault(name, []).append(val)
        result.metric_gaps.append(max(gaps[name] for name in FIELD_METRIC_GROUP))
        result.source_gaps.append(max(gaps[name] for name in FIELD_SOURCE_GROUP))

    result.low_confidence = len(result.metric_gaps) < 3
    if all(v == 0.0 for v in result.metric_gaps):
        result.passed = True
    elif len(result.metric_gaps) < 2:
        result.metric_order = None  # a single gap admits no slope
        result.passed = False
    else:
        result.metric_order = observed_order(result.metric_gaps, result.deltas)
        result.passed = result.metric_order >= 0.7
    try:
        result.source_order = observed_order(result.source_gaps, result.deltas)
    except DegenerateFit:
        result.source_order = None

    outdir = base.outdir
    os.makedirs(outdir, exist_ok=True)
    csv_path = os.path.join(outdir, "phase_study.csv")
    columns = {"metric_gap": result.metric_gaps, "source_gap": result.source_gaps}
    for name, vals in result.gaps_by_field.items():
        columns[f"gap_{name}"] = vals
    report.write_order_table(csv_path, "delta", result.deltas, columns)
    result.paths.append(csv_path)
    if base.figures and result.metric_order is not None:
        fig_path = os.path.join(outdir, "phase_study.png")
        report.render_order(
            fig_path,
            "kernel width",
            result.deltas,
            {"metric group": result.metric_gaps, "source group": result.source_gaps},
            result.metric_order,
        )
        result.paths.append(fig_path)
    return result


# ---------------------------------------------------------------------------
# amplitude scan


DISPERSE = "DISPERSE"
COLLAPSE = "COLLAPSE"


@dataclass
class ScanRun:
    amplitude: float
    label: str
    steps: int
    peak_compactness: float  # running max of 2m/r
    detail: str = ""


@dataclass
class AmpScanResult:
    bracket: tuple
    runs: list
    paths: list = field(default_factory=list)


def classify_amplitude(config: RunConfig, amplitude: float) -> ScanRun:
    """Run one amplitude to t_end and label the outcome.

    COLLAPSE: the compactness 2m/r reaches the collapse threshold, or the
    metric degenerates outright (including at t=0; initial validation is
    deliberately skipped here).  DISPERSE: the run finishes with the
    central-region density below the dispersal fraction of its running
    maximum (vacuum counts as dispersed).  Anything else is Unclassified
    and reported, never guessed.
    """
    cfg = replace(config, amplitude=amplitude, validate=False, monitor_enabled=False)
    datum = cfg.build_datum()
    ensemble = init_weights(datum, decompose(datum, cfg.epsilon), quad_order=cfg.quad_order)
    floor = 1.0 - cfg.collapse_threshold

    def halt(rec):
        if rec.diagnostics["min_one_minus"] <= floor:
            return "collapse threshold reached"
        return None

    try:
        records = evolve(
            ensemble,
            cfg.delta,
            cfg.scheme,
            cfg.tau,
            cfg.t_end,
            snapshot_every=max(1, int(round(cfg.t_end / cfg.tau))),
            halt=halt,
            variant=cfg.variant,
            central_radius=cfg.r_max,
        )
    except (TrappedSurface, TrappedSurfaceAtStart) as err:
        records = getattr(err, "records", [])
        peak = _peak_compactness(records)
        return ScanRun(amplitude, COLLAPSE, len(records), max(peak, 1.0), str(err))
    except (NonPositiveRadius, ParticleTooCentral, StepTooLarge) as err:
        raise Unclassified(
            f"amplitude {amplitude:.6g}: run aborted without a verdict ({err})"
        ) from err

    peak = _peak_compactness(records)
    if records and records[-1].note == "collapse threshold reached":
        return ScanRun(amplitude, COLLAPSE, len(records), peak, records[-1].note)
    central = [rec.diagnostics["max_rho_central"] for rec in records]
    running_max = max(central) if central else 0.0
    final = central[-1] if central else 0.0
    if running_max == 0.0:
        return ScanRun(amplitude, DISPERSE, len(records), peak, "vacuum")
    if final < config.dispersal_threshold * running_max:
        return ScanRun(amplitude, DISPERSE, len(records), peak)
    raise Unclassified(
        f"amplitude {amplitude:.6g}: final central density {final:.4g} is not below "
        f"{config.dispersal_threshold} of its running maximum {running_max:.4g} "
        f"and compactness peaked at {peak:.4g}"
    )


def _peak_compactness(records):
    if not records:
        return 0.0
    return max(1.0 - rec.diagnostics["min_one_minus"] for rec in records)


def _flush_scan(config, runs, bracket) -> AmpScanResult:
    result = AmpScanResult(bracket=bracket, runs=runs)
    outdir = config.outdir
    os.makedirs(outdir, exist_ok=True)
    csv_path = os.path.join(outdir, "amplitude_scan.csv")
    report.write_scan_table(csv_path, runs, bracket)
    result.paths.append(csv_path)
    if config.figures and runs:
        fig_path = os.path.join(outdir, "amplitude_scan.png")
        report.render_scan(fig_path, runs, bracket)
        result.paths.append(fig_path)
    return result


def run_amplitude_scan(
    config: RunConfig, a_lo: float, a_hi: float, bisection_steps: int
) -> AmpScanResult:
    """Bisect the dispersal/collapse boundary in the amplitude.

    The endpoints are verified first (low must disperse, high must
    collapse); each bisection halves the bracket.  An unclassifiable run
    still flushes the partial scan table before the error propagates.
    """
    runs = []
    lo, hi = a_lo, a_hi
    try:
        low = classify_amplitude(config, a_lo)
        runs.append(low)
        if low.label != DISPERSE:
            raise GravpicError(
                f"lower endpoint {a_lo:.6g} did not disperse ({low.label})"
            )
        high = classify_amplitude(config, a_hi)
        runs.append(high)
        if high.label != COLLAPSE:
            raise GravpicError(
                f"upper endpoint {a_hi:.6g} did not collapse ({high.label})"
            )
        for _ in range(bisection_steps):
            mid = 0.5 * (lo + hi)
            run = classify_amplitude(config, mid)
            runs.append(run)
            if run.label == COLLAPSE:
                hi = mid
            else:
                lo = mid
    except Unclassified as err:
        err.partial = _flush_scan(config, runs, (lo, hi))
        raise
    return _flush_scan(config, runs, (lo, hi))
