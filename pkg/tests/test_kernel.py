import numpy as np
import pytest

from gravpic.kernel import KernelWidth, cumulative, hat


def test_hat_closed_form_values():
    d = 0.1
    assert hat(0.0, d) == 1.0
    assert hat(d, d) == 0.0
    assert hat(-d, d) == 0.0
    assert hat(d / 2, d) == pytest.approx(0.5, abs=0.0)
    assert hat(2 * d, d) == 0.0


def test_hat_even_and_in_range(rng):
    d = 0.37
    z = rng.uniform(-3 * d, 3 * d, 1000)
    v = hat(z, d)
    assert np.all(v >= 0.0) and np.all(v <= 1.0)
    np.testing.assert_array_equal(v, hat(-z, d))


def test_hat_integral_equals_width():
    # high-order Gauss-Legendre on each smooth half of the tent
    d = 0.23
    x, w = np.polynomial.legendre.leggauss(48)
    total = 0.0
    for a, b in ((-d, 0.0), (0.0, d)):
        nodes = 0.5 * (a + b) + 0.5 * (b - a) * x
        total += 0.5 * (b - a) * np.dot(w, hat(nodes, d))
    assert abs(total - d) < 1e-14


def test_cumulative_closed_form_values():
    d = 0.4
    assert cumulative(-d, d) == 0.0
    assert cumulative(d, d) == 1.0
    assert cumulative(-5 * d, d) == 0.0
    assert cumulative(5 * d, d) == 1.0
    # analytic integral of the rising half: (1/d) int_{-d}^{0} (1 - |z|/d) dz = 1/2
    x, w = np.polynomial.legendre.leggauss(32)
    nodes = -0.5 * d + 0.5 * d * x
    left_half = 0.5 * d * np.dot(w, hat(nodes, d)) / d
    assert abs(left_half - 0.5) < 1e-15
    assert cumulative(0.0, d) == pytest.approx(left_half, abs=1e-15)


def test_cumulative_branches_agree_at_kinks():
    d = 0.7
    for z, expect in ((-d, 0.0), (0.0, 0.5), (d, 1.0)):
        below = cumulative(z - 1e-300, d)
        assert cumulative(z, d) == expect
        assert abs(below - expect) < 1e-15


def test_cumulative_lipschitz_range_monotone(rng):
    d = 0.15
    z = rng.uniform(-3 * d, 3 * d, 2000)
    x = rng.uniform(-3 * d, 3 * d, 2000)
    cz, cx = cumulative(z, d), cumulative(x, d)
    assert np.all(cz >= 0.0) and np.all(cz <= 1.0)
    assert np.all(np.abs(cz - cx) <= np.abs(z - x) / d * (1 + 1e-12))
    zs = np.sort(z)
    assert np.all(np.diff(cumulative(zs, d)) >= 0.0)


def test_cumulative_locality_identity(rng):
    # |a - z| >= |a - b| + d  implies both shifts see the same saturated value
    d = 0.2
    a = rng.uniform(-1, 1, 500)
    b = a + rng.uniform(-0.3, 0.3, 500)
    side = rng.choice([-1.0, 1.0], 500)
    z = a + side * (np.abs(a - b) + d + rng.uniform(0, 0.5, 500))
    np.testing.assert_array_equal(cumulative(z - a, d), cumulative(z - b, d))


def test_cumulative_is_antiderivative_of_hat():
    d = 0.3
    h = 1e-7
    for z in (-0.25, -0.1, 0.07, 0.22):
        fd = (cumulative(z + h, d) - cumulative(z - h, d)) / (2 * h)
        assert abs(fd - hat(z, d) / d) < 1e-6


def test_kernel_width_validation():
    with pytest.raises(ValueError):
        KernelWidth(0.0)
    with pytest.raises(ValueError):
        KernelWidth(-0.1)
    kw = KernelWidth(0.25)
    assert kw.hat(0.0) == 1.0
    assert kw.cumulative(0.25) == 1.0
    with pytest.raises(ValueError):
        hat(0.1, -1.0)


def test_blocked_prefix_sums_match_plain_cumsum(rng):
    from gravpic.summation import blocked_cumsum, prefix_sums

    for n in (0, 1, 511, 512, 513, 1500):
        x = rng.uniform(0.0, 1e-3, n)
        got = blocked_cumsum(x)
        want = np.cumsum(x)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-15 * max(1, n))
        p = prefix_sums(x)
        assert p[0] == 0.0 and p.size == n + 1
        if n:
            assert p[-1] == pytest.approx(float(np.sum(x)), rel=1e-13)
