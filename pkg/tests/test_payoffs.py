import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pemc.models import ModelKind, ParameterPoint, make_hjm_grids, simulate_gbm
from pemc.payoffs import (
    AlignmentError,
    PayoffKind,
    PayoffSpec,
    UnsupportedModelError,
    asian_arithmetic,
    asian_geometric,
    bond_prices,
    default_fixed_rate,
    geometric_asian_closed_form,
    lookback_floating,
    par_rate,
    swap_value,
    swaption_payoff,
    variance_swap,
)

GBM = {"r": 0.02, "sigma": 0.2, "S0": 100.0, "K": 100.0, "T": 1.0, "dt": 1 / 252, "n_D": 252}


def dates(n, **kw):
    # path[0] is t=0, dates at 1..n
    return PayoffSpec(kw.pop("kind", PayoffKind.ASIAN_ARITHMETIC), obs_index=np.arange(1, n + 1), **kw)


def test_asian_arithmetic_examples():
    spec = dates(4, strike=100.0)
    assert asian_arithmetic(np.full(5, 100.0), spec) == 0.0
    assert asian_arithmetic(np.full(5, 105.0), spec) == 5.0
    assert asian_arithmetic([100, 90, 100, 110, 120], spec) == pytest.approx(5.0)
    with pytest.raises(AlignmentError):
        asian_arithmetic(np.ones(3), spec)


def test_asian_geometric_examples():
    spec = dates(2, strike=150.0)
    assert asian_geometric([1.0, 100.0, 400.0], spec) == pytest.approx(50.0)
    assert asian_geometric(np.full(3, 160.0), spec) == pytest.approx(10.0)
    assert asian_geometric(np.full(3, 120.0), spec) == 0.0
    with pytest.raises(ValueError):
        asian_geometric([1.0, 100.0, 0.0], spec)


def test_lookback_examples():
    assert lookback_floating([100, 110, 120]) == 20
    assert lookback_floating(np.full(4, 7.0)) == 0
    assert lookback_floating([100, 120, 90]) == 0
    with pytest.raises(ValueError):
        lookback_floating(np.array([]))


def test_variance_swap_examples():
    spec = dates(252, kind=PayoffKind.VARIANCE_SWAP, strike=0.04)
    assert variance_swap(np.full(253, 50.0), spec) == pytest.approx(-0.04)
    lr = 0.01 * np.where(np.arange(252) % 2 == 0, 1.0, -1.0)
    path = 100 * np.exp(np.concatenate([[0.0], np.cumsum(lr)]))
    assert variance_swap(path, spec) == pytest.approx(0.0252 - 0.04, abs=1e-12)
    with pytest.raises(ValueError):
        variance_swap(np.concatenate([[1.0], -np.ones(252)]), spec)


def test_variance_swap_gbm_fair_strike(stream):
    th = ParameterPoint(ModelKind.GBM, GBM)
    spec = PayoffSpec.for_theta(PayoffKind.VARIANCE_SWAP, th, strike=0.04)
    pay = np.concatenate([variance_swap(simulate_gbm(th, stream.spawn(k), n_paths=100_000).paths, spec)
                          for k in range(10)])
    assert abs(pay.mean()) < 3 * pay.std() / math.sqrt(pay.size)


def test_swaption_examples():
    spec = PayoffSpec(PayoffKind.SWAPTION, notional=100.0, fixed_rate=0.02, dt_swap=1.0, n_p=2, dt=1.0)
    B = bond_prices(np.full(2, 0.02), 1.0, spec)
    assert np.allclose(B, [math.exp(-0.02), math.exp(-0.04)])
    v = 100 * (0.02 * (math.exp(-0.02) + math.exp(-0.04)) + math.exp(-0.04) - 1)
    assert swap_value(np.full(2, 0.02), spec) == pytest.approx(v, abs=1e-12)
    assert v == pytest.approx(-0.03908, abs=1e-5)
    assert swaption_payoff(np.full(2, 0.02), spec) == 0.0
    # zero rates
    assert swaption_payoff(np.zeros(2), spec) == pytest.approx(100 * 0.02 * 2)
    # at the money
    curve = np.linspace(0.01, 0.05, 2)
    atm = PayoffSpec(PayoffKind.SWAPTION, notional=100.0, fixed_rate=par_rate(curve, spec, 1.0), n_p=2, dt=1.0)
    assert swap_value(curve, atm) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(AlignmentError):
        swaption_payoff(np.zeros(1), spec)


def test_swaption_fine_grid():
    spec = PayoffSpec(PayoffKind.SWAPTION, notional=1.0, fixed_rate=0.0, dt_swap=1.0, n_p=3, dt=0.25)
    B = bond_prices(np.full(12, 0.04), 0.25, spec)
    assert np.allclose(B, np.exp(-0.04 * np.arange(1, 4)))
    with pytest.raises(AlignmentError):
        bond_prices(np.zeros(12), 0.3, spec)


def test_default_fixed_rate_table_rule():
    p = {"sigma0": 0.02, "alpha_sigma": 0.5, "f0": 0.02, "c_f": 0.03, "alpha_f": 0.5, "grid_noise": 0.0,
         "dt": 1 / 52, "T_final": 25.0, "C": 100.0, "t0_swap": 5.0, "dt_swap": 1.0, "n_p": 20}
    th = ParameterPoint(ModelKind.HJM, p, hjm=make_hjm_grids(p))
    f = lambda T: 0.02 + 0.03 * (1 - math.exp(-0.5 * T))
    expected = math.exp(-sum(f(5.0 + i) for i in range(20)) / 20.0)
    assert default_fixed_rate(th) == pytest.approx(expected, rel=1e-12)


def test_closed_form_deterministic_limit():
    th = ParameterPoint(ModelKind.GBM, {**GBM, "sigma": 0.0, "K": 90.0})
    spec = PayoffSpec.for_theta(PayoffKind.ASIAN_GEOMETRIC, th)
    t = spec.obs_times
    expected = math.exp(-0.02) * max(100 * math.exp(0.02 * t.mean()) - 90.0, 0.0)
    assert geometric_asian_closed_form(th, spec) == pytest.approx(expected, rel=1e-12)


def test_closed_form_zero_strike():
    th = ParameterPoint(ModelKind.GBM, {**GBM, "K": 0.0})
    spec = PayoffSpec.for_theta(PayoffKind.ASIAN_GEOMETRIC, th)
    t = spec.obs_times
    n = t.size
    # E[G] with Var(log G) = (1/n^2) sum_{i,j} sigma^2 min(t_i,t_j)
    var = 0.04 * np.minimum.outer(t, t).sum() / n**2
    mean_log = math.log(100) + (0.02 - 0.02) * t.mean()
    assert geometric_asian_closed_form(th, spec) == pytest.approx(math.exp(-0.02) * math.exp(mean_log + var / 2), rel=1e-12)


def test_closed_form_matches_mc(stream):
    th = ParameterPoint(ModelKind.GBM, GBM)
    spec = PayoffSpec.for_theta(PayoffKind.ASIAN_GEOMETRIC, th)
    pay = np.concatenate([asian_geometric(simulate_gbm(th, stream.spawn(k), n_paths=50_000).paths, spec)
                          for k in range(8)]) * math.exp(-0.02)
    se = pay.std() / math.sqrt(pay.size)
    assert abs(pay.mean() - geometric_asian_closed_form(th, spec)) < 3 * se


def test_closed_form_rejects_non_gbm():
    th = ParameterPoint(ModelKind.HESTON, {"r": 0.02, "eta": 0.04, "delta": 0.3, "rho": -0.5, "kappa": 3.0,
                                           "S0": 100.0, "v0": 0.04, "K": 100.0, "T": 1.0, "dt": 1 / 252, "n_D": 252})
    spec = PayoffSpec.for_theta(PayoffKind.ASIAN_GEOMETRIC, th)
    with pytest.raises(UnsupportedModelError):
        geometric_asian_closed_form(th, spec)


def test_spec_validation():
    with pytest.raises(ValueError):
        PayoffSpec(PayoffKind.ASIAN_ARITHMETIC, obs_index=[3, 2])
    with pytest.raises(ValueError):
        PayoffSpec(PayoffKind.SWAPTION, n_p=0)
    th = ParameterPoint(ModelKind.GBM, {**GBM, "n_D": 5})
    with pytest.raises(AlignmentError):
        PayoffSpec.for_theta(PayoffKind.ASIAN_ARITHMETIC, th)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.5, 500.0), min_size=5, max_size=5), st.floats(0.0, 300.0), st.floats(0.0, 50.0))
def test_payoff_properties(prices, K, dK):
    path = np.array([100.0] + prices)
    spec = dates(5, strike=K)
    higher = dates(5, strike=K + dK)
    a, g = asian_arithmetic(path, spec), asian_geometric(path, spec)
    assert a >= g - 1e-9 >= -1e-9
    assert asian_arithmetic(path, higher) <= a + 1e-12
    assert asian_geometric(path, higher) <= g + 1e-12
    assert lookback_floating(path) >= 0
