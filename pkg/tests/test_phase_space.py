import math

import numpy as np
import pytest

from gravpic.errors import (
    FinenessTooCoarse,
    NegativeDensity,
    TrappedSurfaceAtStart,
)
from gravpic.phase_space import (
    InitialDatum,
    MEASURE_VOLUME,
    MIN_CELL_MEASURE_FACTOR,
    ParticleEnsemble,
    SupportBox,
    continuum_sources_initial,
    decompose,
    energy,
    init_weights,
    initial_adm_mass,
    standard_bump,
    table_datum,
    validate_initial,
)

UNIT_BOX = SupportBox(r_min=1.0, r_max=2.0, w_min=0.0, w_max=1.0, l_min=1.0, l_max=2.0)


def constant_datum(box, c):
    return InitialDatum(
        density=lambda r, w, L: np.where(
            (r >= box.r_min) & (r <= box.r_max)
            & (w >= box.w_min) & (w <= box.w_max)
            & (L >= box.l_min) & (L <= box.l_max),
            c, 0.0),
        support=box,
        smoothness_order=1,
    )


def test_support_box_validation():
    with pytest.raises(ValueError):
        SupportBox(-1.0, 2.0, 0.0, 1.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        SupportBox(1.0, 0.5, 0.0, 1.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        SupportBox(1.0, 2.0, 1.0, 0.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        SupportBox(1.0, 2.0, 0.0, 1.0, 0.0, 2.0)


def test_datum_must_vanish_outside_support():
    with pytest.raises(ValueError):
        InitialDatum(density=lambda r, w, L: np.ones(np.broadcast(r, w, L).shape),
                     support=UNIT_BOX)


def test_validate_vacuum_margins_are_half_radius():
    datum = constant_datum(UNIT_BOX, 0.0)
    report = validate_initial(datum)
    np.testing.assert_allclose(report.number_margin, report.radii / 2, rtol=0, atol=0)
    np.testing.assert_allclose(report.energy_margin, report.radii / 2, rtol=0, atol=0)
    assert report.min_number_margin > 0


def test_validate_overdense_shell_fails_near_outer_edge():
    # scale a constant shell so its total particle number is 10 * r_min
    box = UNIT_BOX
    target = 10.0 * box.r_min
    c = target / (MEASURE_VOLUME * box.volume)
    with pytest.raises(TrappedSurfaceAtStart) as err:
        validate_initial(constant_datum(box, c))
    assert box.r_min < err.value.radius <= box.r_max
    assert err.value.enclosed >= err.value.radius / 2


def test_validate_small_bump_passes():
    # amplitude chosen so the total mass stays below r_min / 4
    datum = standard_bump(1.0)
    adm = initial_adm_mass(datum)
    amplitude = 0.9 * (datum.support.r_min / 4.0) / adm
    report = validate_initial(standard_bump(amplitude))
    assert report.min_number_margin > 0
    assert report.min_energy_margin > 0
    # energy condition is the stronger one for forward-peaked E >= 1
    assert report.min_energy_margin <= report.min_number_margin


def test_decompose_single_cell():
    datum = constant_datum(UNIT_BOX, 1.0)
    dec = decompose(datum, math.sqrt(3.0))
    assert dec.n_cells == 1
    assert dec.cell_measure == pytest.approx(1.0)
    R, W, L = dec.points()
    assert R[0] == pytest.approx(1.5) and W[0] == pytest.approx(0.5)


def test_decompose_eight_cells():
    datum = constant_datum(UNIT_BOX, 1.0)
    eps = math.sqrt(3.0) / 2
    dec = decompose(datum, eps)
    assert dec.shape == (2, 2, 2)
    assert dec.cell_measure == pytest.approx(1.0 / 8.0)
    assert dec.cell_measure >= eps**3 / 100


def test_decompose_invariants_random_fineness(rng):
    datum = constant_datum(UNIT_BOX, 1.0)
    for eps in rng.uniform(0.05, 1.5, 12):
        dec = decompose(datum, float(eps))
        assert dec.cell_diameter <= eps * (1 + 1e-12)
        assert dec.cell_measure >= MIN_CELL_MEASURE_FACTOR * eps**3
        assert dec.n_cells * dec.cell_measure == pytest.approx(
            datum.support.volume, rel=1e-12
        )
        # representative points inside their cells
        R, W, L = dec.points()
        assert np.all((R > UNIT_BOX.r_min) & (R < UNIT_BOX.r_max))


def test_decompose_too_coarse():
    datum = constant_datum(UNIT_BOX, 1.0)
    with pytest.raises(FinenessTooCoarse):
        decompose(datum, 2.0 * math.sqrt(3.0))


def test_refinement_multiplies_cells_by_at_most_eight():
    datum = standard_bump(1.0)
    for eps in (0.04, 0.021, 0.013):
        n1 = decompose(datum, eps).n_cells
        n2 = decompose(datum, eps / 2).n_cells
        assert n2 <= 8 * n1


def test_init_weights_vacuum_and_constant():
    datum = constant_datum(UNIT_BOX, 0.0)
    ens = init_weights(datum, decompose(datum, 0.4))
    assert np.all(ens.M == 0.0)

    c = 0.7
    datum = constant_datum(UNIT_BOX, c)
    dec = decompose(datum, math.sqrt(3.0))
    for rule, order in (("gauss", 1), ("gauss", 4), ("midpoint", 1)):
        ens = init_weights(datum, dec, quad_order=order, rule=rule)
        assert ens.M[0] == pytest.approx(MEASURE_VOLUME * c * 1.0, rel=1e-14)


def test_init_weights_monomial_oracle():
    # f = r * w^2 * L separates: per-cell integrals are elementary
    datum = InitialDatum(
        density=lambda r, w, L: np.where(
            (r >= 1) & (r <= 2) & (w >= 0) & (w <= 1) & (L >= 1) & (L <= 2),
            r * np.square(w) * L, 0.0),
        support=UNIT_BOX,
        smoothness_order=1,
    )
    dec = decompose(datum, 0.5)
    ens = init_weights(datum, dec, quad_order=4)
    nr, nw, nl = dec.shape
    idx = 0
    for ir in range(nr):
        for iw in range(nw):
            for il in range(nl):
                (a, b), (c, d), (e, f) = dec.cell_bounds(idx)
                exact = (
                    (b**2 - a**2) / 2 * (d**3 - c**3) / 3 * (f**2 - e**2) / 2
                )
                assert ens.M[idx] == pytest.approx(
                    MEASURE_VOLUME * exact, rel=1e-12
                )
                idx += 1
    total_exact = MEASURE_VOLUME * (3.0 / 2.0) * (1.0 / 3.0) * (3.0 / 2.0)
    assert float(np.sum(ens.M)) == pytest.approx(total_exact, rel=1e-12)


def test_init_weights_negative_density_rejected():
    datum = InitialDatum(
        density=lambda r, w, L: -constant_datum(UNIT_BOX, 1.0).density(r, w, L),
        support=UNIT_BOX,
    )
    with pytest.raises(NegativeDensity):
        init_weights(datum, decompose(datum, 0.5))


def test_total_weight_stable_under_refinement():
    datum = standard_bump(3.0)
    totals = []
    for eps in (0.04, 0.02):
        ens = init_weights(datum, decompose(datum, eps), quad_order=4)
        totals.append(float(np.sum(ens.M)))
    assert totals[0] == pytest.approx(totals[1], rel=1e-9)


def test_energy_floor_and_rest_value(rng):
    r = rng.uniform(0.5, 1.5, 200)
    w = rng.normal(0, 0.3, 200)
    L = rng.uniform(0.01, 0.1, 200)
    assert np.all(energy(r, w, L) >= 1.0)
    assert energy(1.0, 0.0, 0.0) == 1.0


def test_continuum_sources_vacuum_and_symmetry():
    datum = constant_datum(UNIT_BOX, 0.0)
    assert continuum_sources_initial(datum, 1.5) == (0.0, 0.0, 0.0)

    sym_box = SupportBox(1.0, 2.0, -1.0, 1.0, 1.0, 2.0)
    datum = constant_datum(sym_box, 0.5)
    rho, p, j = continuum_sources_initial(datum, 1.5, quad_order=32)
    assert rho > 0 and p > 0
    assert abs(j) < 1e-15 * rho  # odd moment of an even datum


def test_continuum_sources_doubled_order_oracle():
    datum = constant_datum(UNIT_BOX, 0.9)
    got = continuum_sources_initial(datum, 1.3, quad_order=24)
    oracle = continuum_sources_initial(datum, 1.3, quad_order=48)
    for a, b in zip(got, oracle):
        assert a == pytest.approx(b, abs=1e-10 * max(1.0, abs(b)))


def test_ensemble_immutability_and_replace():
    ens = ParticleEnsemble(R=[1.0, 1.2], W=[0.1, -0.2], L=[0.02, 0.03], M=[1e-3, 2e-3])
    with pytest.raises(ValueError):
        ens.R[0] = 2.0
    new = ens.replace(W=np.array([0.0, 0.0]))
    assert new.L is ens.L  # conserved array is shared, not copied
    assert new.R is ens.R


def test_table_datum_roundtrip(tmp_path):
    base = standard_bump(2.0)
    b = base.support
    r = np.linspace(b.r_min, b.r_max, 40)
    w = np.linspace(b.w_min, b.w_max, 30)
    ll = np.linspace(b.l_min, b.l_max, 20)
    f = base(r[:, None, None], w[None, :, None], ll[None, None, :])
    f = np.broadcast_to(f, (40, 30, 20))
    path = tmp_path / "datum.npz"
    np.savez(path, r=r, w=w, L=ll, f=f)
    datum = table_datum(path)
    rc, wc, lc = 0.5 * (b.r_min + b.r_max), 0.5 * (b.w_min + b.w_max), 0.5 * (b.l_min + b.l_max)
    assert float(datum(rc, wc, lc)) == pytest.approx(float(base(rc, wc, lc)), rel=3e-2)
    assert float(datum(b.r_max * 1.5, wc, lc)) == 0.0
    ens = init_weights(datum, decompose(datum, 0.03))
    ens_base = init_weights(base, decompose(base, 0.03))
    assert float(np.sum(ens.M)) == pytest.approx(
        float(np.sum(ens_base.M)), rel=2e-2
    )
