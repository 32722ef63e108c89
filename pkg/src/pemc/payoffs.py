"""Contract payoffs on simulated paths and the closed-form geometric Asian price.

Path payoffs are undiscounted. Every function accepts a single path (1-D) or a
batch of paths (2-D, one path per row) and returns a float or an array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy.stats import norm

from .models.params import ModelKind, ParameterPoint


class AlignmentError(ValueError):
    """The path does not cover the dates or maturities the contract needs."""


class UnsupportedModelError(ValueError):
    pass


class PayoffKind(str, Enum):
    ASIAN_ARITHMETIC = "AsianArithmetic"
    ASIAN_GEOMETRIC = "AsianGeometric"
    LOOKBACK_FLOATING = "LookbackFloating"
    VARIANCE_SWAP = "VarianceSwap"
    SWAPTION = "Swaption"


@dataclass(frozen=True)
class PayoffSpec:
    kind: PayoffKind
    strike: float = 0.0
    obs_index: Optional[np.ndarray] = None  # step indices of the observation dates
    dt: float = 1.0  # simulation step, to turn indices into times
    annualization: float = 252.0
    # swaption
    notional: float = 1.0
    fixed_rate: float = 0.0
    dt_swap: float = 1.0
    n_p: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", PayoffKind(self.kind))
        if self.obs_index is not None:
            idx = np.asarray(self.obs_index, dtype=np.intp)
            if idx.ndim != 1 or idx.size == 0 or np.any(np.diff(idx) <= 0) or idx[0] < 0:
                raise ValueError("observation dates must be sorted, distinct and nonnegative")
            object.__setattr__(self, "obs_index", idx)
        if self.kind is PayoffKind.SWAPTION:
            if self.n_p < 1 or self.notional <= 0:
                raise ValueError("swaption needs n_p >= 1 and a positive notional")

    @property
    def obs_times(self) -> np.ndarray:
        return self.obs_index * self.dt

    @classmethod
    def for_theta(cls, kind, theta: ParameterPoint, **overrides) -> "PayoffSpec":
        """Build the payoff a parameter point describes (equally spaced dates ending at T)."""
        kind = PayoffKind(kind)
        if kind is PayoffKind.SWAPTION:
            p = theta.params
            fixed = overrides.pop("fixed_rate", None)
            if fixed is None:
                fixed = default_fixed_rate(theta)
            return cls(kind, notional=p["C"], fixed_rate=fixed, dt_swap=p["dt_swap"],
                       n_p=int(round(p["n_p"])), dt=p["dt"], **overrides)
        steps = theta.steps
        n_d = int(round(theta["n_D"]))
        if n_d < 1 or steps % n_d:
            raise AlignmentError(f"{n_d} observation dates do not align with {steps} steps")
        idx = (steps // n_d) * np.arange(1, n_d + 1)
        overrides.setdefault("strike", theta.get("K", 0.0))
        return cls(kind, obs_index=idx, dt=theta["dt"], **overrides)


def _observed(paths: np.ndarray, spec: PayoffSpec) -> np.ndarray:
    if spec.obs_index is None:
        raise AlignmentError("payoff has no observation dates")
    if spec.obs_index[-1] >= paths.shape[-1]:
        raise AlignmentError(f"observation index {spec.obs_index[-1]} beyond path of length {paths.shape[-1]}")
    return paths[..., spec.obs_index]


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def asian_arithmetic(paths, spec: PayoffSpec):
    """``max(mean_i S_{t_i} - K, 0)``."""
    s = _observed(np.asarray(paths, dtype=float), spec)
    return _out(np.maximum(s.mean(axis=-1) - spec.strike, 0.0))


def geometric_average(paths, spec: PayoffSpec):
    s = _observed(np.asarray(paths, dtype=float), spec)
    if np.any(s <= 0):
        raise ValueError("geometric average needs positive prices")
    return np.exp(np.log(s).mean(axis=-1))


def asian_geometric(paths, spec: PayoffSpec):
    """``max((prod_i S_{t_i})^(1/n_D) - K, 0)``."""
    return _out(np.maximum(geometric_average(paths, spec) - spec.strike, 0.0))


def lookback_floating(paths):
    """``S_T - min_t S_t``; always nonnegative."""
    p = np.asarray(paths, dtype=float)
    if p.shape[-1] == 0:
        raise ValueError("empty path")
    return _out(p[..., -1] - p.min(axis=-1))


def realized_variance(paths, spec: PayoffSpec):
    p = np.asarray(paths, dtype=float)
    s = _observed(p, spec)
    base = p[..., :1]
    full = np.concatenate([base, s], axis=-1)
    if np.any(full <= 0):
        raise ValueError("variance swap needs positive observed prices")
    lr = np.diff(np.log(full), axis=-1)
    return spec.annualization / spec.obs_index.size * (lr * lr).sum(axis=-1)


def variance_swap(paths, spec: PayoffSpec):
    """Realized variance of log returns over the dates (from ``t=0``) minus the strike."""
    return _out(realized_variance(paths, spec) - spec.strike)


def bond_prices(curve, spacing: float, spec: PayoffSpec):
    """``B(t'_0, t'_l)`` for ``l = 1..n_p`` from left-Riemann sums of the curve."""
    c = np.asarray(curve, dtype=float)
    per = int(round(spec.dt_swap / spacing))
    if per < 1 or abs(per * spacing - spec.dt_swap) > 1e-9:
        raise AlignmentError("payment interval is not a multiple of the curve spacing")
    need = per * spec.n_p
    if c.shape[-1] < need:
        raise AlignmentError(f"curve has {c.shape[-1]} nodes, swaption needs {need}")
    cum = spacing * np.cumsum(c[..., :need], axis=-1)
    return np.exp(-cum[..., per - 1 :: per])


def swap_value(curve, spec: PayoffSpec, spacing: Optional[float] = None):
    h = spec.dt if spacing is None else spacing
    B = bond_prices(curve, h, spec)
    return spec.notional * (spec.fixed_rate * spec.dt_swap * B.sum(axis=-1) + B[..., -1] - 1.0)


def swaption_payoff(curve, spec: PayoffSpec, spacing: Optional[float] = None):
    """``max(0, C (R sum_l B_l dt' + B_{n_p} - 1))`` on the curve seen at ``t'_0``."""
    return _out(np.maximum(swap_value(curve, spec, spacing), 0.0))


def default_fixed_rate(theta: ParameterPoint) -> float:
    """``exp(-sum_{i<n_p} f(0, t'_i) / (T_final - t'_0))`` from the initial curve."""
    p = theta.params
    g = theta.hjm
    t_pay = p["t0_swap"] + p["dt_swap"] * np.arange(int(round(p["n_p"])))
    idx = np.rint(t_pay / g.spacing).astype(int)
    return float(math.exp(-g.forward[idx].sum() / (p["T_final"] - p["t0_swap"])))


def par_rate(curve, spec: PayoffSpec, spacing: float) -> float:
    """Fixed rate that makes the swap worth zero on ``curve``."""
    B = bond_prices(curve, spacing, spec)
    return float((1.0 - B[-1]) / (spec.dt_swap * B.sum()))


# --- closed form ----------------------------------------------------------------


def geometric_lognormal_params(S0, r, sigma, times):
    """Mean and standard deviation of ``log G`` for the discrete geometric average."""
    t = np.sort(np.asarray(times, dtype=float))
    n = t.size
    k = np.arange(n)
    var_w = float((t * (2 * (n - 1 - k) + 1)).sum()) / (n * n)
    m = np.log(S0) + (np.asarray(r) - 0.5 * np.square(sigma)) * t.mean()
    return m, np.asarray(sigma, dtype=float) * math.sqrt(var_w)


def geometric_asian_expectation(S0, r, sigma, K, times):
    """Undiscounted ``E[(G - K)^+]`` under GBM; vectorised over the parameters."""
    m, s = geometric_lognormal_params(S0, r, sigma, times)
    m, s, K = np.broadcast_arrays(np.asarray(m, float), np.asarray(s, float), np.asarray(K, float))
    forward = np.exp(m + 0.5 * s * s)
    out = np.where(K <= 0, forward - K, np.maximum(np.exp(m) - K, 0.0))
    live = (K > 0) & (s > 0)
    if np.any(live):
        sl, ml, Kl = s[live], m[live], K[live]
        d1 = (ml - np.log(Kl) + sl * sl) / sl
        out = out.copy()
        out[live] = forward[live] * norm.cdf(d1) - Kl * norm.cdf(d1 - sl)
    return float(out) if out.ndim == 0 else out


def geometric_asian_closed_form(theta: ParameterPoint, spec: PayoffSpec, discounted: bool = True) -> float:
    """Exact GBM price of the discretely sampled geometric Asian call.

    The log of the geometric average is Gaussian; discounting uses the last
    observation date. With ``discounted=False`` returns ``E[P_G]`` itself,
    which is what the undiscounted path payoffs estimate.
    """
    if theta.model_kind is not ModelKind.GBM:
        raise UnsupportedModelError("closed-form geometric Asian price needs a GBM parameter point")
    times = spec.obs_times
    if times.size > 1 and not np.allclose(np.diff(times), times[1] - times[0]):
        raise ValueError("closed form assumes equally spaced observation dates")
    r = theta["r"]
    value = geometric_asian_expectation(theta["S0"], r, theta["sigma"], spec.strike, times)
    if discounted:
        value *= math.exp(-r * times[-1])
    return float(value)
