"""Particle-in-cell simulation of a spherically symmetric, asymptotically
flat self-gravitating collisionless gas in Schwarzschild coordinates."""

from . import errors
from .kernel import KernelWidth, cumulative, hat
from .phase_space import (
    CellDecomposition,
    InitialDatum,
    ParticleEnsemble,
    STANDARD_SUPPORT,
    SupportBox,
    bump_datum,
    continuum_sources_initial,
    decompose,
    energy,
    init_weights,
    initial_adm_mass,
    standard_bump,
    table_datum,
    validate_initial,
)
from .fields import (
    FieldSample,
    SortedFieldView,
    build_view,
    deposit,
    field_profile,
    lambda_at,
    lambda_dot_at,
    lambda_prime_at,
    mass_at,
    mu_at,
    mu_prime_at,
    sample_at,
    sample_at_particles,
)
from .dynamics import (
    ConsistencyTable,
    DerivativeSet,
    RunHistory,
    SchwarzschildField,
    StepRecord,
    consistency_check,
    euler_full_step,
    evolve,
    rk4_orbit,
    rk4_step,
    semi_rhs,
    semi_rhs_frozen,
)
from .diagnostics import (
    BoundMonitor,
    ErrorReport,
    adm_mass,
    calibrate_monitor,
    check_bounds,
    compare_runs,
    field_error_norms,
    observed_order,
    particle_error_norms,
    particle_number,
)
from .harness import (
    AmpScanResult,
    PhaseStudyResult,
    RunConfig,
    StudySpec,
    SingleRunResult,
    TauStudyResult,
    classify_amplitude,
    config_from_ini,
    config_to_ini,
    load_config,
    phase_ladder_spec,
    reference_amplitude,
    run_amplitude_scan,
    run_phase_study,
    run_single,
    run_tau_study,
    tau_ladder_spec,
)

__version__ = "0.1.0"
