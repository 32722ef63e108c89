"""Direct draws of the feature vector X from its marginal law, without simulating Y."""

from __future__ import annotations

import math

import numpy as np

from ..rng import RngStream
from .params import ConfigError, ModelKind, ParameterPoint


def sample_feature_marginal(theta: ParameterPoint, count: int, stream: RngStream,
                            feature_dim: int = 1) -> np.ndarray:
    """``count`` i.i.d. feature vectors with exactly the law of the coupled X.

    GBM: ``feature_dim`` independent ``N(0, T / feature_dim)`` block sums.
    Heston/SLV: ``sqrt(T) * N(0, [[1, rho], [rho, 1]])``.
    HJM: ``N(0, t0_swap)``, the scaled sum of the driving normals.
    ED features have their own sampler in :mod:`pemc.ed`.
    """
    kind = theta.model_kind
    if kind is ModelKind.GBM:
        steps = theta.steps
        if steps % feature_dim:
            raise ConfigError(f"feature_dim={feature_dim} does not divide {steps} steps")
        block_var = theta["dt"] * (steps // feature_dim)
        return math.sqrt(block_var) * stream.normal((count, feature_dim))
    if kind in (ModelKind.HESTON, ModelKind.SLV):
        rho = theta["rho"]
        z = stream.normal((count, 2))
        sq = math.sqrt(theta["T"])
        out = np.empty((count, 2))
        out[:, 0] = sq * z[:, 0]
        out[:, 1] = sq * (rho * z[:, 0] + math.sqrt(1.0 - rho * rho) * z[:, 1])
        return out
    if kind is ModelKind.HJM:
        steps = int(round(theta["t0_swap"] / theta["dt"]))
        return math.sqrt(steps * theta["dt"]) * stream.normal((count, 1))
    raise ConfigError(f"no closed-form feature marginal for {kind.value}; use pemc.ed")
