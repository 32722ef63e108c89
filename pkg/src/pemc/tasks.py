"""Pricing tasks: one object per (model, payoff, feature map) bundling everything PEMC needs.

A task knows how to draw theta from its space, build any grid-valued inputs,
encode theta for the predictor, simulate coupled ``(f(Y), X)`` pairs, and draw
``X`` from its marginal law.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .ed import EdConfig, sample_ed_feature_marginal, simulate_weeks
from .models import (
    ConfigError,
    HjmGrids,
    ModelKind,
    ParameterPoint,
    VolSurfaceGrid,
    block_sums,
    hjm_linear_map,
    make_hjm_grids,
    sample_feature_marginal,
)
from .models.equity import SPOT_RANGE, base_surface, correlated_increments, gbm_log_paths, heston_paths, slv_paths
from .payoffs import (
    PayoffKind,
    PayoffSpec,
    UnsupportedModelError,
    asian_arithmetic,
    asian_geometric,
    bond_prices,
    default_fixed_rate,
    geometric_asian_expectation,
    lookback_floating,
    swaption_payoff,
    variance_swap,
)
from .rng import RngStream
from .space import ParameterSpaceSpec

# Grid-generation noise levels: they shape how theta is drawn but are not inputs of the predictor.
NOISE_KEYS = frozenset({"xi", "grid_noise"})

DEFAULT_SPACES = {
    "gbm_asian": {
        "r": [0.01, 0.03], "sigma": [0.05, 0.25], "S0": [80.0, 120.0], "K": [90.0, 110.0],
        "T": 1.0, "dt": 1.0 / 252, "n_D": 252,
    },
    "heston_asian": {
        "r": [0.01, 0.03], "eta": [0.02, 0.06], "delta": [0.1, 0.5], "rho": [-0.9, -0.3], "kappa": [1.0, 3.0],
        "S0": [80.0, 120.0], "v0": [0.02, 0.06], "K": [90.0, 110.0], "T": 1.0, "dt": 1.0 / 252, "n_D": 252,
    },
    "slv_varswap": {
        "r": 0.02, "delta": [0.1, 1.0], "kappa": [1.5, 4.5], "rho": [-0.9, -0.2], "xi": 0.02,
        "S0": [50.0, 150.0], "K": [0.1, 0.2], "T": 1.0, "dt": 1.0 / 252, "n_D": 252,
    },
    "hjm_swaption": {
        "sigma0": [0.01, 0.03], "alpha_sigma": [0.001, 0.9], "f0": [0.01, 0.03], "c_f": [0.01, 0.05],
        "alpha_f": [0.001, 0.9], "grid_noise": 1.0, "dt": 1.0 / 52, "T_final": 25.0,
        "C": 100.0, "t0_swap": 5.0, "dt_swap": 1.0, "n_p": 20,
    },
    "ed_mortality": {
        "tau": {"int": [0, 50]}, "shift_1": {"int": [1, 3]}, "shift_2": {"int": [1, 3]},
        "shift_3": {"int": [2, 6]}, "shift_4": {"int": [1, 4]}, "shift_5": {"int": [2, 5]},
        "shift_6": {"int": [1, 3]}, "crisis": [1.0, 2.0],
    },
}

EVAL_PARAMS = {
    "gbm_asian": {"r": 0.02, "sigma": 0.2, "S0": 100.0, "K": 100.0, "T": 1.0, "dt": 1.0 / 252, "n_D": 252},
    "heston_asian": {
        "r": 0.02, "eta": 0.04, "delta": 0.3, "rho": -0.7, "kappa": 2.0, "S0": 100.0, "v0": 0.04,
        "K": 100.0, "T": 1.0, "dt": 1.0 / 252, "n_D": 252,
    },
    "slv_varswap": {
        "r": 0.02, "delta": 0.5, "kappa": 3.0, "rho": -0.5, "xi": 0.0, "S0": 100.0, "K": 0.14,
        "T": 1.0, "dt": 1.0 / 252, "n_D": 252,
    },
    "hjm_swaption": {
        "sigma0": 0.02, "alpha_sigma": 0.5, "f0": 0.02, "c_f": 0.03, "alpha_f": 0.5, "grid_noise": 0.0,
        "dt": 1.0 / 52, "T_final": 25.0, "C": 100.0, "t0_swap": 5.0, "dt_swap": 1.0, "n_p": 20,
    },
    "ed_mortality": {
        "tau": 20, "shift_1": 2, "shift_2": 2, "shift_3": 4, "shift_4": 2, "shift_5": 4, "shift_6": 1,
        "crisis": 1.25,
    },
}


def _pool(values: np.ndarray, out_shape: tuple[int, ...]) -> np.ndarray:
    """Average-pool a 1-D or 2-D grid (NaNs ignored) onto ``out_shape`` nearly equal blocks."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        edges = np.linspace(0, v.size, out_shape[0] + 1).round().astype(int)
        return np.array([np.nanmean(v[a:b]) for a, b in zip(edges[:-1], edges[1:])])
    re = np.linspace(0, v.shape[0], out_shape[0] + 1).round().astype(int)
    ce = np.linspace(0, v.shape[1], out_shape[1] + 1).round().astype(int)
    out = np.empty(out_shape)
    for i in range(out_shape[0]):
        for j in range(out_shape[1]):
            block = v[re[i] : re[i + 1], ce[j] : ce[j + 1]]
            fin = block[np.isfinite(block)]
            out[i, j] = fin.mean() if fin.size else 0.0
    return out.ravel()


class Task:
    name = ""
    kind: ModelKind
    label_modes = ("raw",)

    def __init__(self, space=None, label_mode: str = "raw", **options):
        if isinstance(space, ParameterSpaceSpec):
            self.space = space
        else:
            self.space = ParameterSpaceSpec(self.kind, space if space is not None else DEFAULT_SPACES[self.name])
        if self.space.model_kind is not self.kind:
            raise ConfigError(f"{self.name} needs a {self.kind.value} space")
        if label_mode not in self.label_modes:
            raise UnsupportedModelError(f"label mode {label_mode!r} is not available for {self.name}")
        self.label_mode = label_mode
        self.options = options

    # -- description ------------------------------------------------------------
    def descriptor(self) -> dict:
        return {"name": self.name, "label_mode": self.label_mode, "options": dict(self.options),
                "space": self.space.to_json()}

    def truth_descriptor(self) -> dict:
        """What determines ``f`` at a fixed theta; feature-map options are left out."""
        return {"name": self.name, "options": {k: v for k, v in self.options.items() if k not in self.feature_options}}

    feature_options: tuple = ()

    @property
    def x_dim(self) -> int:
        raise NotImplementedError

    @property
    def theta_dim(self) -> int:
        return self.encode(self.eval_theta()).size

    # -- theta ------------------------------------------------------------------
    def build_theta(self, params: dict, stream: Optional[RngStream] = None) -> ParameterPoint:
        return ParameterPoint(self.kind, params)

    def sample_theta(self, stream: RngStream) -> ParameterPoint:
        return self.build_theta(self.space.sample_params(stream), stream)

    def eval_theta(self, **overrides) -> ParameterPoint:
        params = dict(EVAL_PARAMS[self.name])
        params.update(overrides)
        return self.build_theta(params)

    def contains(self, theta: ParameterPoint) -> bool:
        p = {k: v for k, v in theta.params.items() if k not in NOISE_KEYS}
        return self.space.contains(p)

    def encode(self, theta: ParameterPoint) -> np.ndarray:
        keys = [k for k in ParameterPoint.keys(self.kind) if k not in NOISE_KEYS]
        return np.array([theta[k] for k in keys], dtype=float)

    # -- sampling ---------------------------------------------------------------
    def coupled(self, theta: ParameterPoint, n: int, stream: RngStream):
        """``(f, X)`` for ``n`` coupled draws at ``theta``."""
        raise NotImplementedError

    def marginal(self, theta: ParameterPoint, N: int, stream: RngStream) -> np.ndarray:
        return sample_feature_marginal(theta, N, stream, self.x_dim)

    def offset(self, theta: ParameterPoint) -> float:
        """Known part of the label the predictor does not need to learn."""
        return 0.0

    def training_batch(self, count: int, stream: RngStream, pairs: int = 1):
        """``count`` sampled thetas with ``pairs`` coupled draws each: ``(TH, X, y, offsets)``."""
        th, xs, ys, offs = [], [], [], []
        for _ in range(count):
            theta = self.sample_theta(stream)
            f, X = self.coupled(theta, pairs, stream)
            enc = self.encode(theta)
            th.append(np.repeat(enc[None, :], pairs, axis=0))
            xs.append(X)
            ys.append(f)
            offs.append(np.full(pairs, self.offset(theta)))
        if not count:
            return np.empty((0, self.theta_dim)), np.empty((0, self.x_dim)), np.empty(0), np.empty(0)
        return np.concatenate(th), np.concatenate(xs), np.concatenate(ys), np.concatenate(offs)


class _EquityTask(Task):
    """Shared pieces of the path-dependent equity tasks."""

    payoff_kind = PayoffKind.ASIAN_ARITHMETIC

    def __init__(self, space=None, label_mode="raw", payoff: Optional[str] = None, **options):
        if payoff is not None:
            options["payoff"] = payoff
            self.payoff_kind = PayoffKind(payoff)
        super().__init__(space, label_mode, **options)
        for k in ("dt", "T", "n_D"):
            if self.space.coords[k].kind != "fixed":
                raise ConfigError(f"{self.name}: {k} must be fixed across the space")

    def spec(self, theta: ParameterPoint) -> PayoffSpec:
        return PayoffSpec.for_theta(self.payoff_kind, theta)

    def payoff(self, paths: np.ndarray, spec: PayoffSpec) -> np.ndarray:
        kind = spec.kind
        if kind is PayoffKind.ASIAN_ARITHMETIC:
            return asian_arithmetic(paths, spec)
        if kind is PayoffKind.ASIAN_GEOMETRIC:
            return asian_geometric(paths, spec)
        if kind is PayoffKind.LOOKBACK_FLOATING:
            return lookback_floating(paths)
        if kind is PayoffKind.VARIANCE_SWAP:
            return variance_swap(paths, spec)
        raise UnsupportedModelError(f"{kind.value} is not an equity payoff")

    def _batch_params(self, count, pairs, stream):
        P = self.space.sample_many(count, stream)
        rep = {k: np.repeat(v, pairs) for k, v in P.items()}
        return P, rep

    def _spec_rows(self, rep: dict) -> PayoffSpec:
        """One payoff spec carrying a strike per row (dates are fixed across the space)."""
        first = {k: float(v[0]) for k, v in rep.items()}
        proto = self.spec(self.build_theta_light(first))
        return PayoffSpec(proto.kind, strike=rep.get("K", 0.0), obs_index=proto.obs_index, dt=proto.dt)

    def build_theta_light(self, params):
        return ParameterPoint(self.kind, params)

    def _encode_rows(self, rep: dict, count: int) -> np.ndarray:
        keys = [k for k in ParameterPoint.keys(self.kind) if k not in NOISE_KEYS]
        return np.stack([np.asarray(rep[k], dtype=float) for k in keys], axis=1)


class GbmAsianTask(_EquityTask):
    name = "gbm_asian"
    kind = ModelKind.GBM
    label_modes = ("raw", "cv_residual")
    feature_options = ("feature_dim",)  # block sums of the same increments; f is unaffected

    def __init__(self, space=None, label_mode="raw", feature_dim: int = 1, payoff=None, **options):
        super().__init__(space, label_mode, payoff=payoff, feature_dim=int(feature_dim), **options)
        self.feature_dim = int(feature_dim)
        steps = self.eval_theta().steps
        if steps % self.feature_dim:
            raise ConfigError(f"feature_dim={feature_dim} does not divide {steps} steps")
        if label_mode == "cv_residual" and self.payoff_kind is not PayoffKind.ASIAN_ARITHMETIC:
            raise UnsupportedModelError("cv_residual labels need the arithmetic Asian payoff")

    @property
    def x_dim(self) -> int:
        return self.feature_dim

    def offset(self, theta):
        if self.label_mode != "cv_residual":
            return 0.0
        spec = self.spec(theta)
        return float(geometric_asian_expectation(theta["S0"], theta["r"], theta["sigma"], spec.strike, spec.obs_times))

    def _labels(self, paths, spec, offset):
        f = asian_arithmetic(paths, spec)
        if self.label_mode == "cv_residual":
            f = f - asian_geometric(paths, spec) + offset
        return f

    def coupled(self, theta, n, stream):
        steps, dt = theta.steps, theta["dt"]
        dW = math.sqrt(dt) * stream.normal((n, steps))
        paths = gbm_log_paths(theta["S0"], theta["r"], theta["sigma"], dt, dW)
        spec = self.spec(theta)
        if self.payoff_kind is PayoffKind.ASIAN_ARITHMETIC:
            f = self._labels(paths, spec, self.offset(theta))
        else:
            f = self.payoff(paths, spec)
        return np.atleast_1d(f), block_sums(dW, self.feature_dim)

    def training_batch(self, count, stream, pairs=1):
        if count == 0:
            return super().training_batch(0, stream, pairs)
        P, rep = self._batch_params(count, pairs, stream)
        dt = float(P["dt"][0])
        steps = int(round(P["T"][0] / dt))
        dW = math.sqrt(dt) * stream.normal((count * pairs, steps))
        paths = gbm_log_paths(rep["S0"], rep["r"], rep["sigma"], dt, dW)
        spec = self._spec_rows(rep)
        if self.label_mode == "cv_residual":
            offs = geometric_asian_expectation(rep["S0"], rep["r"], rep["sigma"], rep["K"], spec.obs_times)
        else:
            offs = np.zeros(count * pairs)
        if self.payoff_kind is PayoffKind.ASIAN_ARITHMETIC:
            f = self._labels(paths, spec, offs)
        else:
            f = self.payoff(paths, spec)
        return self._encode_rows(rep, count), block_sums(dW, self.feature_dim), f, offs


class HestonAsianTask(_EquityTask):
    name = "heston_asian"
    kind = ModelKind.HESTON

    @property
    def x_dim(self) -> int:
        return 2

    def _simulate(self, rep, n, stream):
        dt = float(np.atleast_1d(rep["dt"])[0])
        steps = int(round(float(np.atleast_1d(rep["T"])[0]) / dt))
        dWs, dWv = correlated_increments(rep["rho"], dt, (n, steps), stream)
        S, _ = heston_paths(rep["S0"], rep["v0"], rep["r"], rep["eta"], rep["delta"], rep["rho"], rep["kappa"],
                            dt, dWs, dWv)
        return S, np.stack([dWs.sum(axis=1), dWv.sum(axis=1)], axis=1)

    def coupled(self, theta, n, stream):
        S, X = self._simulate(theta.params, n, stream)
        return np.atleast_1d(self.payoff(S, self.spec(theta))), X

    def training_batch(self, count, stream, pairs=1):
        if count == 0:
            return super().training_batch(0, stream, pairs)
        P, rep = self._batch_params(count, pairs, stream)
        S, X = self._simulate(rep, count * pairs, stream)
        f = self.payoff(S, self._spec_rows(rep))
        return self._encode_rows(rep, count), X, f, np.zeros(count * pairs)


class SlvVarianceSwapTask(_EquityTask):
    name = "slv_varswap"
    kind = ModelKind.SLV
    payoff_kind = PayoffKind.VARIANCE_SWAP
    n_spot = 30
    n_time = 30
    pool = (6, 6)

    @property
    def x_dim(self) -> int:
        return 2

    def _base(self, T):
        _, times, vol = base_surface(1.0, T, self.n_spot, self.n_time)
        return times, vol

    def build_theta(self, params, stream=None):
        T, S0 = params["T"], params["S0"]
        times, vol = self._base(T)
        xi = params.get("xi", 0.0)
        if xi > 0:
            if stream is None:
                raise ValueError("a stream is required to draw a noisy surface")
            vol = np.maximum(vol + xi * stream.normal(vol.shape), 1e-4)
        spot = S0 * np.linspace(SPOT_RANGE[0], SPOT_RANGE[1], self.n_spot)
        return ParameterPoint(self.kind, params, surface=VolSurfaceGrid(spot, times, vol, noise=xi))

    def build_theta_light(self, params):
        return self.build_theta({**params, "xi": 0.0})

    def encode(self, theta):
        return np.concatenate([super().encode(theta), _pool(theta.surface.values, self.pool)])

    def coupled(self, theta, n, stream):
        dt = theta["dt"]
        dWs, dWv = correlated_increments(theta["rho"], dt, (n, theta.steps), stream)
        s = theta.surface
        S, _ = slv_paths(theta["S0"], theta["r"], theta["delta"], theta["kappa"], dt, dWs, dWv,
                         s.spot_axis, s.time_axis, s.values)
        X = np.stack([dWs.sum(axis=1), dWv.sum(axis=1)], axis=1)
        return np.atleast_1d(variance_swap(S, self.spec(theta))), X

    def training_batch(self, count, stream, pairs=1):
        if count == 0:
            return super().training_batch(0, stream, pairs)
        P, rep = self._batch_params(count, pairs, stream)
        T, dt = float(P["T"][0]), float(P["dt"][0])
        times, base = self._base(T)
        vols = np.broadcast_to(base, (count,) + base.shape).copy()
        xi = P["xi"][:, None, None]
        vols = np.where(xi > 0, np.maximum(vols + xi * stream.normal(vols.shape), 1e-4), vols)
        spot = P["S0"][:, None] * np.linspace(SPOT_RANGE[0], SPOT_RANGE[1], self.n_spot)[None, :]
        steps = int(round(T / dt))
        n = count * pairs
        dWs, dWv = correlated_increments(rep["rho"], dt, (n, steps), stream)
        S, _ = slv_paths(rep["S0"], rep["r"], rep["delta"], rep["kappa"], dt, dWs, dWv,
                         np.repeat(spot, pairs, axis=0), times, np.repeat(vols, pairs, axis=0))
        f = variance_swap(S, self._spec_rows(rep))
        pooled = np.stack([_pool(v, self.pool) for v in vols])
        TH = np.concatenate([self._encode_rows(rep, count), np.repeat(pooled, pairs, axis=0)], axis=1)
        X = np.stack([dWs.sum(axis=1), dWv.sum(axis=1)], axis=1)
        return TH, X, f, np.zeros(n)


class HjmSwaptionTask(Task):
    name = "hjm_swaption"
    kind = ModelKind.HJM
    pool_forward = 20
    pool_vol = (4, 10)

    def __init__(self, space=None, label_mode="raw", fixed_rate="table", **options):
        super().__init__(space, label_mode, fixed_rate=fixed_rate, **options)
        if not (fixed_rate in ("table", "par") or isinstance(fixed_rate, (int, float))):
            raise ConfigError("fixed_rate must be 'table', 'par' or a number")
        self.fixed_rate = fixed_rate
        self._maps: dict = {}

    @property
    def x_dim(self) -> int:
        return 1

    def build_theta(self, params, stream=None):
        grids = make_hjm_grids(params, stream)
        return ParameterPoint(self.kind, params, hjm=grids)

    def rate(self, theta) -> float:
        if self.fixed_rate == "table":
            return default_fixed_rate(theta)
        if self.fixed_rate == "par":
            p, g = theta.params, theta.hjm
            start = int(round(p["t0_swap"] / g.spacing))
            proto = PayoffSpec(PayoffKind.SWAPTION, dt_swap=p["dt_swap"], n_p=int(round(p["n_p"])), dt=g.spacing)
            # forward-starting par rate: bonds from the initial curve, rebased to t0_swap
            B = bond_prices(g.forward[start:], g.spacing, proto)
            return float((1.0 - B[-1]) / (p["dt_swap"] * B.sum()))
        return float(self.fixed_rate)

    def spec(self, theta) -> PayoffSpec:
        return PayoffSpec.for_theta(PayoffKind.SWAPTION, theta, fixed_rate=self.rate(theta))

    def encode(self, theta):
        g = theta.hjm
        head = np.array([theta[k] for k in ("sigma0", "alpha_sigma", "f0", "c_f", "alpha_f")] + [self.rate(theta)])
        vol = np.where(np.triu(np.ones(g.vol.shape, dtype=bool)), g.vol, np.nan)
        return np.concatenate([head, _pool(g.forward, (self.pool_forward,)), _pool(vol, self.pool_vol)])

    def _map(self, theta):
        key = id(theta.hjm)
        hit = self._maps.get(key)
        if hit is not None and hit[0] is theta.hjm:
            return hit[1], hit[2], hit[3]
        steps = int(round(theta["t0_swap"] / theta["dt"]))
        base, load = hjm_linear_map(theta.hjm, steps)
        if len(self._maps) > 8:
            self._maps.clear()
        self._maps[key] = (theta.hjm, base, load, steps)
        return base, load, steps

    def coupled(self, theta, n, stream):
        base, load, steps = self._map(theta)
        Z = stream.normal((n, steps))
        curve = base + Z @ load
        f = swaption_payoff(curve, self.spec(theta), theta.hjm.spacing)
        X = math.sqrt(theta["dt"]) * Z.sum(axis=1, keepdims=True)
        return np.atleast_1d(f), X


class EdMortalityTask(Task):
    name = "ed_mortality"
    kind = ModelKind.ED

    def __init__(self, space=None, label_mode="raw", **options):
        super().__init__(space, label_mode, **options)
        self._base = {k: (tuple(v) if isinstance(v, list) else v) for k, v in options.items()}

    @property
    def x_dim(self) -> int:
        return 12

    def config(self, theta) -> EdConfig:
        return EdConfig.from_theta(theta, **self._base)

    def coupled(self, theta, n, stream):
        return simulate_weeks(self.config(theta), n, stream)

    def marginal(self, theta, N, stream):
        return sample_ed_feature_marginal(self.config(theta), N, stream)


TASKS = {cls.name: cls for cls in (GbmAsianTask, HestonAsianTask, SlvVarianceSwapTask, HjmSwaptionTask, EdMortalityTask)}


def make_task(name_or_descriptor, **kwargs) -> Task:
    """Build a task from its registry name or from a stored descriptor."""
    if isinstance(name_or_descriptor, dict):
        d = name_or_descriptor
        opts = dict(d.get("options", {}))
        opts.update(kwargs)
        space = d.get("space")
        if space is not None:
            space = ParameterSpaceSpec.from_json(space)
        return TASKS[d["name"]](space=space, label_mode=d.get("label_mode", "raw"), **opts)
    if name_or_descriptor not in TASKS:
        raise ConfigError(f"unknown task {name_or_descriptor!r}; choose from {sorted(TASKS)}")
    return TASKS[name_or_descriptor](**kwargs)
