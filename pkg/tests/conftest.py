import numpy as np
import pytest

from gravpic.phase_space import ParticleEnsemble


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_ensemble(rng, n, r_lo=0.5, r_hi=1.5, w_scale=0.25, m_scale=1e-3):
    """Random but physically admissible ensemble for field tests."""
    return ParticleEnsemble(
        R=rng.uniform(r_lo, r_hi, n),
        W=rng.normal(0.0, w_scale, n),
        L=rng.uniform(0.01, 0.08, n),
        M=rng.uniform(0.0, m_scale, n),
    )


@pytest.fixture
def small_ensemble(rng):
    return random_ensemble(rng, 60)
