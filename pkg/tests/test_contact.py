import math

import numpy as np
import pytest

from forcefit import contact


def p(d, z, p0=0.5):
    return float(contact.contact_probability(d, contact.ContactParams(z, p0)))


def test_zero_distance_gives_p0_exactly():
    for p0 in (0.1, 0.3, 0.5, 0.9):
        assert p(0.0, 0.01, p0) == pytest.approx(p0, abs=1e-15)


def test_minus_z_value():
    # d = -z with p0 = 0.5 gives sigmoid(6)
    expect = 1.0 / (1.0 + math.exp(-6.0))
    assert p(-0.01, 0.01, 0.5) == pytest.approx(expect, abs=1e-6)
    assert expect == pytest.approx(0.997527, abs=1e-6)


def test_limits():
    assert p(10.0, 0.002) < 1e-12
    assert p(-10.0, 0.002) > 1 - 1e-12


def test_monotone_decreasing():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        z = rng.uniform(1e-4, 0.1)
        p0 = rng.uniform(0.05, 0.95)
        # stay within a few widths of the transition so float64 can resolve
        # the strict ordering (the sigmoid saturates to exactly 1.0 beyond)
        d1, d2 = np.sort(rng.uniform(-4 * z, 4 * z, size=2))
        if d1 == d2:
            continue
        assert p(d1, z, p0) > p(d2, z, p0)


def test_scale_identity():
    # p(d; z, p0) == p(alpha d; alpha z, p0) exactly
    rng = np.random.default_rng(1)
    for _ in range(1000):
        d = rng.normal(scale=0.03)
        z = rng.uniform(1e-4, 0.1)
        alpha = rng.uniform(0.1, 10.0)
        p0 = rng.uniform(0.05, 0.95)
        assert abs(p(d, z, p0) - p(alpha * d, alpha * z, p0)) < 1e-12


def test_gradient_formula_matches_finite_differences():
    params = contact.ContactParams(0.013, 0.4)
    rng = np.random.default_rng(2)
    h = 1e-6  # balances truncation against cancellation near saturated p
    for _ in range(50):
        d = rng.uniform(-2 * 0.013, 2 * 0.013)
        g = float(contact.contact_probability_grad(d, params))
        fd = (p(d + h, 0.013, 0.4) - p(d - h, 0.013, 0.4)) / (2 * h)
        assert g == pytest.approx(fd, rel=1e-6)


def test_params_validation():
    with pytest.raises(contact.ContactError):
        contact.ContactParams(0.0, 0.5)
    with pytest.raises(contact.ContactError):
        contact.ContactParams(0.01, 1.0)


# ---------------------------------------------------------------------------
# annealing


def test_anneal_endpoints():
    sched = contact.AnnealSchedule(0.030, 0.002, 300)
    assert contact.annealed_z(0, sched) == pytest.approx(0.030, abs=1e-15)
    assert contact.annealed_z(299, sched) == pytest.approx(0.002, abs=1e-15)


def test_anneal_midpoint():
    sched = contact.AnnealSchedule(0.030, 0.002, 300)
    z150 = contact.annealed_z(150, sched)
    # geometric interpolation evaluated directly
    expect = 0.030 * (0.002 / 0.030) ** (150 / 299)
    assert z150 == pytest.approx(expect, abs=1e-18)
    assert z150 == pytest.approx(0.00770, rel=0.01)


def test_anneal_monotone_decreasing():
    sched = contact.AnnealSchedule(0.030, 0.002, 100)
    zs = [contact.annealed_z(e, sched) for e in range(100)]
    assert all(a > b for a, b in zip(zs, zs[1:]))


def test_anneal_single_epoch():
    sched = contact.AnnealSchedule(0.030, 0.002, 1)
    assert contact.annealed_z(0, sched) == 0.002


def test_anneal_range_errors():
    sched = contact.AnnealSchedule(0.030, 0.002, 10)
    with pytest.raises(contact.ContactError):
        contact.annealed_z(10, sched)
    with pytest.raises(contact.ContactError):
        contact.annealed_z(-1, sched)
    with pytest.raises(contact.ContactError):
        contact.AnnealSchedule(0.002, 0.030, 10)
