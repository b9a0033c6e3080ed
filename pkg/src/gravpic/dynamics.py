"""Time evolution of the particle ensemble.

Two schemes share the same field machinery:

* the characteristic ODE system (one equation triple per particle,
  squared angular momentum frozen), integrated here by classical RK4 as
  the reference path, and
* a staged first-order step that advances all radii first and then feeds
  the radius increments through the cumulative kernel as a difference
  quotient, so the momentum and weight updates never need field data at
  the new time.

The staged step's interaction terms come in two variants.  The default
"corrected" variant is the regrouping that is algebraically consistent
with the ODE right-hand side: a single exp(2 lam)/R prefactor on the
transport sums, a minus sign on the weight transport, and exp(mu - lam)
differences in the skew sums.  The "literal" variant keeps a historical
form of the update (doubled prefactor, positive weight transport) for
comparison; the consistency check quantifies the defect of either
variant against the ODE system.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import MonitorAbort, NonPositiveRadius, StepTooLarge, TrappedSurface
from .fields import (
    FieldSample,
    SortedFieldView,
    TRAPPED_GUARD,
    _KernelMoments,
    build_view,
    compactness_max,
    sample_at_particles,
)
from .kernel import _width
from .phase_space import ParticleEnsemble

VARIANTS = ("corrected", "literal")

# a run is flagged (not stopped) once 1 - 2m/r dips below this margin,
# well before the hard trapped-surface guard
NEAR_COLLAPSE_MARGIN = 0.05


@dataclass(frozen=True)
class DerivativeSet:
    """Time derivatives of (R, W, M); dL is identically zero."""

    dR: np.ndarray
    dW: np.ndarray
    dM: np.ndarray


@dataclass
class StepRecord:
    """Per-step diagnostics, with an ensemble snapshot where retained."""

    index: int
    time: float
    ensemble: Optional[ParticleEnsemble]
    diagnostics: dict
    note: str = ""


@dataclass
class RunHistory:
    """A completed evolution plus the discretization it was run at."""

    records: list
    delta: float
    epsilon: float
    scheme: str
    step: float
    variant: str = "corrected"

    @property
    def final(self) -> ParticleEnsemble:
        for rec in reversed(self.records):
            if rec.ensemble is not None:
                return rec.ensemble
        raise ValueError("history holds no snapshots")

    def snapshots(self):
        return [rec for rec in self.records if rec.ensemble is not None]


# ---------------------------------------------------------------------------
# right-hand sides


def _rhs_from_samples(ensemble: ParticleEnsemble, s: FieldSample) -> DerivativeSet:
    E = ensemble.energies
    G = np.exp(s.mu - s.lam)
    dR = G * ensemble.W / E
    dW = (
        G * ensemble.L / (ensemble.R**3 * E)
        - s.lam_dot * ensemble.W
        - G * s.mu_prime * E
    )
    dM = -(s.lam_dot + dR * s.lam_prime) * ensemble.M
    return DerivativeSet(dR=dR, dW=dW, dM=dM)


def semi_rhs(ensemble: ParticleEnsemble, delta) -> DerivativeSet:
    """Right-hand side of the characteristic ODE system.

    Builds a fresh field view from the current state; radial speeds are
    bounded by 1 since exp(mu - lam) <= 1 and |W|/E < 1.
    """
    view = build_view(ensemble, delta)
    return _rhs_from_samples(ensemble, sample_at_particles(view))


@dataclass(frozen=True)
class SchwarzschildField:
    """Frozen exterior vacuum field of a fixed central mass (test hook).

    Substituting these samples for the self-consistent ones turns the ODE
    system into geodesic motion in a static metric, for which exp(mu) * E
    and L are conserved exactly.
    """

    mass: float

    def at(self, r) -> FieldSample:
        r = np.asarray(r, dtype=float)
        one_minus = 1.0 - 2.0 * self.mass / r
        if np.any(one_minus <= TRAPPED_GUARD):
            raise TrappedSurface(float(np.min(r)), self.mass)
        mu = 0.5 * np.log1p(-2.0 * self.mass / r)
        mu_prime = self.mass / r**2 / one_minus
        zeros = np.zeros_like(r)
        return FieldSample(
            rho=zeros,
            p=zeros,
            j=zeros,
            m=np.full_like(r, self.mass),
            lam=-mu,
            mu=mu,
            mu_prime=mu_prime,
            lam_prime=-mu_prime,
            lam_dot=zeros,
        )


def semi_rhs_frozen(ensemble: ParticleEnsemble, frozen: SchwarzschildField) -> DerivativeSet:
    return _rhs_from_samples(ensemble, frozen.at(ensemble.R))


# ---------------------------------------------------------------------------
# steppers


@dataclass
class _StepAux:
    """State-i data a step computed anyway, reused for diagnostics."""

    view: Optional[SortedFieldView]
    samples: Optional[FieldSample]
    rdot: np.ndarray


def _guard_radii(radii, floor, what):
    if radii.size and float(np.min(radii)) <= floor:
        raise NonPositiveRadius(
            f"{what} drove a particle radius to {float(np.min(radii)):.6g} "
            f"<= {floor:.6g}"
        )


def _rk4_step_aux(ensemble, delta, dt, frozen=None):
    if not dt > 0.0:
        raise ValueError("time step must be positive")
    floor = 0.0 if frozen is not None else _width(delta)

    if frozen is not None:
        def rhs(ens):
            return semi_rhs_frozen(ens, frozen)

        k1 = rhs(ensemble)
        aux = _StepAux(view=None, samples=None, rdot=k1.dR)
    else:
        def rhs(ens):
            return _rhs_from_samples(ens, sample_at_particles(build_view(ens, delta)))

        view1 = build_view(ensemble, delta)
        samples1 = sample_at_particles(view1)
        k1 = _rhs_from_samples(ensemble, samples1)
        aux = _StepAux(view=view1, samples=samples1, rdot=k1.dR)

    def advance(k, h):
        r = ensemble.R + h * k.dR
        _guard_radii(r, floor, "an integrator stage")
        return ensemble.replace(R=r, W=ensemble.W + h * k.dW, M=ensemble.M + h * k.dM)

    k2 = rhs(advance(k1, 0.5 * dt))
    k3 = rhs(advance(k2, 0.5 * dt))
    k4 = rhs(advance(k3, dt))
    sixth = dt / 6.0
    r_new = ensemble.R + sixth * (k1.dR + 2.0 * k2.dR + 2.0 * k3.dR + k4.dR)
    w_new = ensemble.W + sixth * (k1.dW + 2.0 * k2.dW + 2.0 * k3.dW + k4.dW)
    m_new = ensemble.M + sixth * (k1.dM + 2.0 * k2.dM + 2.0 * k3.dM + k4.dM)
    _guard_radii(r_new, floor, "an RK4 step")
    if m_new.size and float(np.min(m_new)) < 0.0:
        raise StepTooLarge(dt, float(np.min(m_new)), dt / 2.0)
    new = ensemble.replace(R=r_new, W=w_new, M=m_new, time=ensemble.time + dt)
    return new, aux


def rk4_step(ensemble: ParticleEnsemble, delta, dt, frozen: SchwarzschildField = None):
    """One classical Runge-Kutta step of the ODE system.

    Fields are rebuilt at every stage; with ``frozen`` given, the analytic
    static field replaces them (geodesic test mode, no kernel floor on
    the radii).
    """
    new, _ = _rk4_step_aux(ensemble, delta, dt, frozen=frozen)
    return new


def rk4_orbit(ensemble: ParticleEnsemble, frozen: SchwarzschildField, dt, n_steps):
    """Many RK4 steps in a frozen field, keeping raw arrays between steps.

    Same stages as ``rk4_step(..., frozen=...)``; skipping the per-stage
    ensemble bookkeeping makes long conservation runs cheap.
    """
    if not dt > 0.0:
        raise ValueError("time step must be positive")
    R, W, M, L = ensemble.R, ensemble.W, ensemble.M, ensemble.L
    mass = frozen.mass

    def rhs(R, W, M):
        one_minus = 1.0 - 2.0 * mass / R
        if np.any(one_minus <= TRAPPED_GUARD):
            raise TrappedSurface(float(np.min(R)), mass)
        E = np.sqrt(1.0 + W * W + L / (R * R))
        mu_prime = mass / (R * R) / one_minus
        dR = one_minus * W / E
        dW = one_minus * L / (R**3 * E) - one_minus * mu_prime * E
        dM = dR * mu_prime * M  # lam' = -mu' in vacuum, lam_dot = 0
        return dR, dW, dM

    sixth = dt / 6.0
    for _ in range(int(n_steps)):
        k1 = rhs(R, W, M)
        k2 = rhs(R + 0.5 * dt * k1[0], W + 0.5 * dt * k1[1], M + 0.5 * dt * k1[2])
        k3 = rhs(R + 0.5 * dt * k2[0], W + 0.5 * dt * k2[1], M + 0.5 * dt * k2[2])
        k4 = rhs(R + dt * k3[0], W + dt * k3[1], M + dt * k3[2])
        R = R + sixth * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        W = W + sixth * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        M = M + sixth * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
    return ensemble.replace(R=R, W=W, M=M, time=ensemble.time + n_steps * dt)


def _euler_step_aux(ensemble, delta, tau, variant="corrected"):
    if not tau > 0.0:
        raise ValueError("time step must be positive")
    if variant not in VARIANTS:
        raise ValueError(f"unknown formula variant {variant!r}")
    d = _width(delta)
    view = build_view(ensemble, d)
    s = sample_at_particles(view)
    R, W, M, L = ensemble.R, ensemble.W, ensemble.M, ensemble.L
    E = ensemble.energies
    G = np.exp(s.mu - s.lam)
    exp_sum = np.exp(s.mu + s.lam)
    pref = np.exp(2.0 * s.lam) / R

    # phase 1: every radius advances before any momentum or weight is touched
    rdot = G * W / E
    r_new = R + tau * rdot
    _guard_radii(r_new, d, "a staged step")

    # local drive terms: centrifugal barrier and enclosed-mass pull
    m_over_r2 = s.m / R**2
    fw_drive = G * L / (R**3 * E) - exp_sum * m_over_r2 * E
    fm_drive = exp_sum * m_over_r2 * (W / E)

    # skew sums: hat-weighted neighbors times the gap between the two
    # particles' exp(mu - lam) factors
    g_sorted = G[view.order]
    a = view.sorted_M * view.sorted_W**2 / view.sorted_E
    b = view.sorted_M * view.sorted_W
    idx_old = view.em.window_indices(R)
    hat_a = view.moments(a).hat_sum(R, idx_old)
    hat_ag = view.moments(a * g_sorted).hat_sum(R, idx_old)
    hat_b = view.moments(b).hat_sum(R, idx_old)
    hat_bg = view.moments(b * g_sorted).hat_sum(R, idx_old)
    fw_skew = pref / d * E * (hat_ag - G * hat_a)
    fm_skew = pref / d * (G * hat_b - hat_bg)

    # transport sums: difference of the cumulative kernel between the old
    # and the phase-1 radii, weights held at the old time
    order_new = np.argsort(r_new, kind="stable")
    rs_new = r_new[order_new]
    cum_w_new = _KernelMoments(rs_new, (W * M)[order_new], d)
    cum_e_new = _KernelMoments(rs_new, (E * M)[order_new], d)
    idx_new = cum_w_new.window_indices(r_new)
    transport_w = cum_w_new.cum_sum(r_new, idx_new) - view.wm.cum_sum(R, idx_old)
    transport_e = cum_e_new.cum_sum(r_new, idx_new) - view.em.cum_sum(R, idx_old)

    if variant == "corrected":
        w_new = W + tau * fw_drive + pref * E * transport_w + tau * fw_skew
        bracket = 1.0 + tau * fm_drive - pref * transport_e + tau * fm_skew
    else:
        w_new = W + tau * (fw_drive + fw_skew) + pref**2 * E * transport_w
        bracket = 1.0 + tau * (fm_drive + fm_skew) + pref**2 * transport_e
    if bracket.size and float(np.min(bracket)) < 0.0:
        bmin = float(np.min(bracket))
        raise StepTooLarge(tau, bmin, 0.5 * tau / (1.0 - bmin))
    new = ensemble.replace(R=r_new, W=w_new, M=M * bracket, time=ensemble.time + tau)
    return new, _StepAux(view=view, samples=s, rdot=rdot)


def euler_full_step(ensemble: ParticleEnsemble, delta, tau, variant="corrected"):
    """One staged first-order step: radii first, then momenta and weights."""
    new, _ = _euler_step_aux(ensemble, delta, tau, variant=variant)
    return new


# ---------------------------------------------------------------------------
# consistency oracle


@dataclass
class ConsistencyRow:
    tau: float
    defect_R: float
    defect_W: float
    defect_M: float

    @property
    def total(self):
        return self.defect_R + self.defect_W + self.defect_M


@dataclass
class ConsistencyTable:
    rows: list
    order: Optional[float]

    @property
    def exact(self):
        return self.order is None and all(r.total == 0.0 for r in self.rows)


def consistency_check(
    ensemble: ParticleEnsemble,
    delta,
    taus,
    variant="corrected",
    weight_scale=None,
) -> ConsistencyTable:
    """Defect of the staged step against the ODE right-hand side.

    For each step size the defect is max_n |(step(state) - state)/tau -
    rhs(state)| per component; weight defects are scaled by
    weight_scale^-3 when a fineness is supplied.  A first-order-consistent
    step shows defects O(tau); the observed order is fitted on the totals
    and is None when every defect vanishes.
    """
    taus = [float(t) for t in taus]
    if any(t <= 0.0 for t in taus):
        raise ValueError("step sizes must be positive")
    if sorted(taus, reverse=True) != taus:
        raise ValueError("step sizes must be decreasing")
    base = semi_rhs(ensemble, delta)
    mscale = 1.0 if weight_scale is None else float(weight_scale) ** -3
    rows = []
    for tau in taus:
        stepped = euler_full_step(ensemble, delta, tau, variant=variant)
        def_r = float(np.max(np.abs((stepped.R - ensemble.R) / tau - base.dR), initial=0.0))
        def_w = float(np.max(np.abs((stepped.W - ensemble.W) / tau - base.dW), initial=0.0))
        def_m = mscale * float(
            np.max(np.abs((stepped.M - ensemble.M) / tau - base.dM), initial=0.0)
        )
        rows.append(ConsistencyRow(tau, def_r, def_w, def_m))
    totals = [r.total for r in rows]
    if len(rows) >= 2 and all(v > 0.0 for v in totals):
        order = float(np.polyfit(np.log([r.tau for r in rows]), np.log(totals), 1)[0])
    else:
        order = None
    return ConsistencyTable(rows=rows, order=order)


# ---------------------------------------------------------------------------
# evolution driver


def _diagnostics_from(ensemble, view, samples, rdot, central_radius=None):
    if len(ensemble) == 0:
        out = {
            "adm_mass": 0.0,
            "particle_number": 0.0,
            "min_one_minus": 1.0,
            "max_rho": 0.0,
            "min_lam": 0.0,
            "max_mu": 0.0,
            "max_lam_plus_mu": 0.0,
            "max_abs_rdot": 0.0,
            "min_weight": 0.0,
            "min_radius": math.inf,
            "max_abs_w": 0.0,
        }
        if central_radius is not None:
            out["max_rho_central"] = 0.0
        return out
    out = {
        "adm_mass": view.total_EM,
        "particle_number": float(np.dot(np.exp(samples.lam), ensemble.M)),
        # field-wide minimum of 1 - 2m/r, not just at particle radii
        "min_one_minus": 1.0 - compactness_max(view),
        "max_rho": float(np.max(samples.rho)),
        "min_lam": float(np.min(samples.lam)),
        "max_mu": float(np.max(samples.mu)),
        "max_lam_plus_mu": float(np.max(samples.lam + samples.mu)),
        "max_abs_rdot": float(np.max(np.abs(rdot))),
        "min_weight": float(np.min(ensemble.M)),
        "min_radius": float(np.min(ensemble.R)),
        "max_abs_w": float(np.max(np.abs(ensemble.W))),
    }
    if central_radius is not None:
        inside = ensemble.R <= central_radius
        out["max_rho_central"] = (
            float(np.max(samples.rho[inside])) if np.any(inside) else 0.0
        )
    return out


def evolve(
    ensemble: ParticleEnsemble,
    delta,
    scheme: str,
    dt: float,
    t_end: float,
    monitor=None,
    snapshot_every: int = 1,
    halt: Callable[[StepRecord], Optional[str]] = None,
    variant: str = "corrected",
    central_radius: float = None,
) -> list:
    """Run a scheme to t_end, recording diagnostics every step.

    ``scheme`` is "semi_rk4" or "full_euler".  Snapshots of the ensemble
    are kept every ``snapshot_every`` steps (plus first and last record).
    A configured monitor aborts by raising MonitorAbort with the records
    so far attached; other errors raised mid-run get the partial records
    attached as ``err.records``.  ``halt`` may end the run early by
    returning a note string for the current record.
    """
    from .diagnostics import check_bounds  # here to keep diagnostics import-light
    from .errors import GravpicError

    if scheme not in ("semi_rk4", "full_euler"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if t_end < 0.0:
        raise ValueError("t_end must be non-negative")
    d = _width(delta)
    n_steps = 0 if t_end == 0.0 else int(math.ceil(t_end / dt - 1e-9))
    records = []
    state = ensemble
    t0 = ensemble.time
    stride = max(1, int(snapshot_every))

    try:
        for i in range(n_steps + 1):
            last = i == n_steps
            if last:
                view = build_view(state, d)
                samples = sample_at_particles(view)
                if len(state):
                    rdot = np.exp(samples.mu - samples.lam) * state.W / state.energies
                else:
                    rdot = np.zeros(0)
                aux = _StepAux(view=view, samples=samples, rdot=rdot)
                nxt = None
            elif scheme == "semi_rk4":
                nxt, aux = _rk4_step_aux(state, d, dt)
            else:
                nxt, aux = _euler_step_aux(state, d, dt, variant=variant)
            rec = StepRecord(
                index=i,
                time=t0 + i * dt,
                ensemble=state if (last or i % stride == 0) else None,
                diagnostics=_diagnostics_from(
                    state, aux.view, aux.samples, aux.rdot, central_radius
                ),
            )
            if rec.diagnostics["min_one_minus"] <= NEAR_COLLAPSE_MARGIN:
                rec.note = "near-collapse"
            records.append(rec)
            if monitor is not None:
                violations = check_bounds(state, aux.view, monitor, samples=aux.samples)
                if violations:
                    rec.note = "monitor abort"
                    rec.ensemble = state
                    raise MonitorAbort(rec.time, violations, records=records)
            if halt is not None:
                note = halt(rec)
                if note:
                    rec.note = note
                    rec.ensemble = state
                    return records
            if not last:
                state = nxt
    except MonitorAbort:
        raise
    except GravpicError as err:
        err.records = records
        raise
    return records
