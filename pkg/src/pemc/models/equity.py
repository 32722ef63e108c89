"""Equity path simulators: GBM, Heston and stochastic local volatility.

Each public simulator returns a :class:`CoupledSample` whose features are the
block sums of the very Brownian increments that drove the path. The array
kernels underneath take per-path parameter arrays so training batches with a
different theta on every row run in one vectorised pass.
"""

from __future__ import annotations

import math
import time

import numpy as np

from ..rng import RngStream
from .params import ConfigError, CoupledSample, ModelKind, ParameterPoint, VolSurfaceGrid

# Baseline local-vol mixture weights and scales.
LV_WEIGHTS = (0.3, 0.5, 0.2)
LV_SCALES = (0.4, 0.3, 0.6)


def block_sums(increments: np.ndarray, feature_dim: int) -> np.ndarray:
    """Sum ``(n, steps)`` increments over ``feature_dim`` equal consecutive blocks."""
    n, steps = increments.shape
    if feature_dim < 1 or steps % feature_dim:
        raise ConfigError(f"feature_dim={feature_dim} does not divide {steps} steps")
    return increments.reshape(n, feature_dim, steps // feature_dim).sum(axis=2)


def _col(x, n):
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, 1) if x.ndim else x


def gbm_log_paths(S0, r, sigma, dt: float, dW: np.ndarray) -> np.ndarray:
    """Exact log-Euler GBM paths, shape ``(n, steps + 1)`` including ``S0``."""
    n = dW.shape[0]
    S0, r, sigma = _col(S0, n), _col(r, n), _col(sigma, n)
    logret = (r - 0.5 * sigma * sigma) * dt + sigma * dW
    out = np.empty((n, dW.shape[1] + 1))
    out[:, :1] = np.log(S0) * np.ones((n, 1))
    np.cumsum(logret, axis=1, out=out[:, 1:])
    out[:, 1:] += out[:, :1]
    return np.exp(out)


def simulate_gbm(
    theta: ParameterPoint,
    stream: RngStream,
    n_paths: int = 1,
    feature_dim: int = 1,
    keep_increments: bool = True,
) -> CoupledSample:
    if theta.model_kind is not ModelKind.GBM:
        raise ConfigError(f"expected a GBM parameter point, got {theta.model_kind.value}")
    steps, dt = theta.steps, theta["dt"]
    if steps % feature_dim:
        raise ConfigError(f"feature_dim={feature_dim} does not divide {steps} steps")
    t0 = time.perf_counter_ns()
    dW = math.sqrt(dt) * stream.normal((n_paths, steps))
    paths = gbm_log_paths(theta["S0"], theta["r"], theta["sigma"], dt, dW)
    feats = block_sums(dW, feature_dim)
    cost = time.perf_counter_ns() - t0
    return CoupledSample(
        paths=paths,
        features=feats,
        times=dt * np.arange(steps + 1),
        increments=dW if keep_increments else None,
        cost_ns=cost,
        steps=steps * n_paths,
    )


def heston_paths(S0, v0, r, eta, delta, rho, kappa, dt: float, dWs: np.ndarray, dWv: np.ndarray):
    """Log-Euler price with full-truncation Euler variance (``v+`` in drift and diffusion)."""
    n, steps = dWs.shape
    S0, v0, r, eta, delta, kappa = (_col(a, n).ravel() * np.ones(n) for a in (S0, v0, r, eta, delta, kappa))
    logS = np.empty((n, steps + 1))
    var = np.empty((n, steps + 1))
    logS[:, 0] = np.log(S0)
    var[:, 0] = v0
    for k in range(steps):
        vp = np.maximum(var[:, k], 0.0)
        sq = np.sqrt(vp)
        logS[:, k + 1] = logS[:, k] + (r - 0.5 * vp) * dt + sq * dWs[:, k]
        var[:, k + 1] = var[:, k] + kappa * (eta - vp) * dt + delta * sq * dWv[:, k]
    return np.exp(logS), var


def correlated_increments(rho, dt: float, shape, stream: RngStream):
    """Two ``shape`` arrays of Brownian increments with per-path correlation ``rho``."""
    z = stream.normal((2,) + tuple(shape))
    rho = _col(rho, shape[0])
    if np.any(np.abs(rho) > 1):
        raise ConfigError("correlation must lie in [-1, 1]")
    sq = math.sqrt(dt)
    return sq * z[0], sq * (rho * z[0] + np.sqrt(1.0 - rho * rho) * z[1])


def simulate_heston(theta: ParameterPoint, stream: RngStream, n_paths: int = 1) -> CoupledSample:
    if theta.model_kind is not ModelKind.HESTON:
        raise ConfigError(f"expected a Heston parameter point, got {theta.model_kind.value}")
    steps, dt = theta.steps, theta["dt"]
    t0 = time.perf_counter_ns()
    dWs, dWv = correlated_increments(theta["rho"], dt, (n_paths, steps), stream)
    S, v = heston_paths(
        theta["S0"], theta["v0"], theta["r"], theta["eta"], theta["delta"], theta["rho"], theta["kappa"], dt, dWs, dWv
    )
    feats = np.stack([dWs.sum(axis=1), dWv.sum(axis=1)], axis=1)
    return CoupledSample(
        paths=S,
        variance=v,
        features=feats,
        times=dt * np.arange(steps + 1),
        increments=np.stack([dWs, dWv], axis=-1),
        cost_ns=time.perf_counter_ns() - t0,
        steps=steps * n_paths,
    )


# --- stochastic local volatility ----------------------------------------------


def local_vol_base(x, t):
    """Baseline local variance ``sigma^2_base(x, t)`` at log-moneyness ``x``.

    Evaluated in log space so large ``x^2 / t`` does not underflow to 0/0.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("local_vol_base needs t > 0")
    x = np.asarray(x, dtype=float)
    p = np.array(LV_WEIGHTS)
    tau = np.array(LV_SCALES)
    xb = x[..., None]
    tb = t[..., None]
    expo = -(xb * xb) / (2.0 * tb * tau * tau) - tb * tau * tau / 8.0
    m = expo.max(axis=-1, keepdims=True)
    w = np.exp(expo - m)
    num = (p * tau * w).sum(axis=-1)
    den = (p / tau * w).sum(axis=-1)
    out = num / den
    return float(out) if out.ndim == 0 else out


def slv_eta(t, delta, kappa):
    """Mean-reversion target ``-delta^2 / (2 kappa) (1 + exp(-2 kappa t))``."""
    return -(delta * delta) / (2.0 * kappa) * (1.0 + np.exp(-2.0 * kappa * t))


SPOT_RANGE = (0.25, 2.5)  # surface spot axis as multiples of S0


def base_surface(S0: float, T: float, n_spot: int = 30, n_time: int = 30) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Spot axis, time axis and baseline vols ``sqrt(sigma^2_base)`` for one theta."""
    spot = np.linspace(SPOT_RANGE[0] * S0, SPOT_RANGE[1] * S0, n_spot)
    times = np.linspace(T / n_time, T, n_time)
    x = np.log(spot / S0)
    var = local_vol_base(x[:, None], times[None, :])
    return spot, times, np.sqrt(var)


def make_vol_surface(S0: float, T: float, xi: float, stream: RngStream | None = None,
                     n_spot: int = 30, n_time: int = 30, floor: float = 1e-4) -> VolSurfaceGrid:
    """Baseline surface plus i.i.d. ``N(0, xi^2)`` node noise, clipped below at ``floor``."""
    spot, times, vol = base_surface(S0, T, n_spot, n_time)
    if xi > 0:
        if stream is None:
            raise ValueError("a stream is required for a noisy surface")
        vol = np.maximum(vol + xi * stream.normal(vol.shape), floor)
    return VolSurfaceGrid(spot, times, vol, noise=xi)


def _frac_index(x: np.ndarray, lo, step, size: int) -> tuple[np.ndarray, np.ndarray]:
    f = np.clip((x - lo) / step, 0.0, size - 1.0)
    i0 = np.minimum(f.astype(np.intp), size - 2)
    return i0, f - i0


def slv_paths(S0, r, delta, kappa, dt: float, dWs: np.ndarray, dWv: np.ndarray,
              spot_axis: np.ndarray, time_axis: np.ndarray, vols: np.ndarray):
    """Two-line SLV Euler update with bilinear, boundary-clamped surface lookup.

    ``spot_axis`` is ``(n_spot,)`` or per-path ``(n, n_spot)``; ``vols`` is
    ``(n_spot, n_time)`` or per-path ``(n, n_spot, n_time)``. Axes must be
    uniformly spaced; ``time_axis`` is shared by every path.
    """
    n, steps = dWs.shape
    S0, r, delta, kappa = (np.asarray(a, dtype=float) * np.ones(n) for a in (S0, r, delta, kappa))
    spot_axis = np.asarray(spot_axis, dtype=float)
    per_path = vols.ndim == 3
    n_spot, n_time = vols.shape[-2:]
    s_lo = spot_axis[..., 0]
    s_step = spot_axis[..., 1] - spot_axis[..., 0]
    t_lo, t_step = time_axis[0], time_axis[1] - time_axis[0]
    rows = np.arange(n)

    S = np.empty((n, steps + 1))
    nu = np.empty((n, steps + 1))
    S[:, 0] = S0
    nu[:, 0] = 0.0
    for k in range(steps):
        t = k * dt
        nu[:, k + 1] = nu[:, k] + kappa * (slv_eta(t, delta, kappa) - nu[:, k]) * dt + delta * dWv[:, k]
        j0, wt = _frac_index(np.array(t), t_lo, t_step, n_time)
        j0 = int(j0)
        col = (1.0 - wt) * vols[..., j0] + wt * vols[..., j0 + 1]
        i0, ws = _frac_index(S[:, k], s_lo, s_step, n_spot)
        if per_path:
            lo_v, hi_v = col[rows, i0], col[rows, i0 + 1]
        else:
            lo_v, hi_v = col[i0], col[i0 + 1]
        sig = (1.0 - ws) * lo_v + ws * hi_v
        vt = sig * np.exp(nu[:, k + 1])
        S[:, k + 1] = S[:, k] * np.exp((r - 0.5 * vt * vt) * dt + vt * dWs[:, k])
    return S, nu


def simulate_slv(theta: ParameterPoint, stream: RngStream, n_paths: int = 1,
                 surface: VolSurfaceGrid | None = None) -> CoupledSample:
    if theta.model_kind is not ModelKind.SLV:
        raise ConfigError(f"expected an SLV parameter point, got {theta.model_kind.value}")
    surface = surface or theta.surface
    steps, dt = theta.steps, theta["dt"]
    t0 = time.perf_counter_ns()
    dWs, dWv = correlated_increments(theta["rho"], dt, (n_paths, steps), stream)
    S, nu = slv_paths(theta["S0"], theta["r"], theta["delta"], theta["kappa"], dt, dWs, dWv,
                      surface.spot_axis, surface.time_axis, surface.values)
    feats = np.stack([dWs.sum(axis=1), dWv.sum(axis=1)], axis=1)
    return CoupledSample(
        paths=S,
        variance=nu,
        features=feats,
        times=dt * np.arange(steps + 1),
        increments=np.stack([dWs, dWv], axis=-1),
        cost_ns=time.perf_counter_ns() - t0,
        steps=steps * n_paths,
    )
