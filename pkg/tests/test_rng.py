import numpy as np
import pytest
from pemc.rng import (
    Exponential,
    Gamma,
    Multinomial,
    RateSchedule,
    RngStream,
    Uniform,
    gaussian_pair,
    sample_categories,
    sample_nhpp,
    sample_standard,
)

TRIAGE = (0.1098, 0.2761, 0.4596, 0.1297, 0.0248)


def test_same_ids_same_sequence():
    a = RngStream(11, 3).normal(1000)
    b = RngStream(11, 3).normal(1000)
    assert np.array_equal(a, b)


def test_spawn_is_deterministic_and_label_sensitive():
    s = RngStream(5, 0)
    assert np.array_equal(s.spawn("x", 1).uniform(10), RngStream(5, 0).spawn("x", 1).uniform(10))
    assert not np.array_equal(s.spawn("x", 1).uniform(10), s.spawn("x", 2).uniform(10))
    # spawning does not advance the parent
    s2 = RngStream(5, 0)
    s2.spawn("y")
    assert np.array_equal(s2.normal(5), RngStream(5, 0).normal(5))


def test_stream_independence():
    a = RngStream(1, 10).normal(100_000)
    b = RngStream(1, 11).normal(100_000)
    corr = np.corrcoef(a, b)[0, 1]
    assert abs(corr) < 3 / np.sqrt(100_000)


def test_gaussian_pair_zero_rho_unit_dt(stream):
    z1, z2 = gaussian_pair(0.0, 1.0, stream, 200_000)
    assert abs(np.corrcoef(z1, z2)[0, 1]) < 3 / np.sqrt(200_000)
    assert abs(z1.var() - 1) < 0.02 and abs(z2.var() - 1) < 0.02


def test_gaussian_pair_rho_one(stream):
    z1, z2 = gaussian_pair(1.0, 1.0, stream, 1000)
    assert np.array_equal(z1, z2)


def test_gaussian_pair_negative_rho(stream):
    n = 1_000_000
    dt = 1 / 252
    z1, z2 = gaussian_pair(-0.5, dt, stream, n)
    assert abs(np.corrcoef(z1, z2)[0, 1] + 0.5) < 0.005
    for z in (z1, z2):
        assert abs(z.mean()) < 3 * np.sqrt(dt / n)
        assert abs(z.var() / dt - 1) < 0.01


@pytest.mark.parametrize("rho,dt", [(1.1, 1.0), (-1.01, 1.0), (0.3, 0.0), (0.3, -1.0)])
def test_gaussian_pair_domain(rho, dt, stream):
    with pytest.raises(ValueError):
        gaussian_pair(rho, dt, stream, 10)


def test_nhpp_zero_schedule(stream):
    assert sample_nhpp(RateSchedule(np.zeros(24)), stream).size == 0


def test_nhpp_constant_rate(stream):
    t = sample_nhpp(RateSchedule(np.full(1000, 2.0)), stream)
    assert abs(t.size - 2000) <= 3 * np.sqrt(2000)
    assert np.all(np.diff(t) >= 0) and t.min() >= 0 and t.max() < 1000


def test_nhpp_piecewise_rates(stream):
    hours = 20_000
    rates = np.where(np.arange(hours) % 2 == 0, 1.0, 3.0)
    t = sample_nhpp(RateSchedule(rates), stream)
    counts = np.bincount(t.astype(int), minlength=hours)
    for lam, sel in ((1.0, counts[0::2]), (3.0, counts[1::2])):
        se = np.sqrt(lam / sel.size)
        assert abs(sel.mean() - lam) < 3 * se


def test_rate_schedule_rejects_negative():
    with pytest.raises(ValueError):
        RateSchedule(np.array([1.0, -0.1]))


def test_exponential_mean(stream):
    x = sample_standard(Exponential(1.0), stream, 1_000_000)
    assert abs(x.mean() - 1.0) < 0.003


def test_gamma_moments(stream):
    x = sample_standard(Gamma(3.0, 2.0), stream, 400_000)
    assert abs(x.mean() - 1.5) < 3 * np.sqrt(0.75 / x.size)


def test_uniform_degenerate(stream):
    assert np.all(sample_standard(Uniform(5, 5), stream, 100) == 5)
    assert sample_standard(Uniform(5, 5), stream) == 5


def test_multinomial_triage_frequencies(stream):
    n = 100_000
    cats = sample_categories(TRIAGE, n, stream)
    freq = np.bincount(cats, minlength=5) / n
    se = np.sqrt(np.array(TRIAGE) * (1 - np.array(TRIAGE)) / n)
    assert np.all(np.abs(freq - TRIAGE) < 3 * se)
    one_hot = sample_standard(Multinomial(TRIAGE), stream, 1000)
    assert one_hot.shape == (1000, 5) and np.all(one_hot.sum(axis=1) == 1)


def test_multinomial_tolerance():
    Multinomial((0.5, 0.5 + 5e-10))  # renormalised silently
    with pytest.raises(ValueError):
        Multinomial((0.5, 0.6))


@pytest.mark.parametrize("bad", [lambda: Exponential(0.0), lambda: Gamma(-1, 1), lambda: Uniform(2, 1)])
def test_invalid_parameters(bad):
    with pytest.raises(ValueError):
        bad()


def test_nhpp_counts_are_poisson(stream):
    counts = [sample_nhpp(RateSchedule(np.full(5, 0.8)), stream.spawn("rep", k)).size for k in range(4000)]
    # dispersion index of a Poisson count is 1
    counts = np.asarray(counts)
    assert abs(counts.mean() - 4.0) < 3 * np.sqrt(4.0 / counts.size)
    assert abs(counts.var() / counts.mean() - 1) < 0.1
