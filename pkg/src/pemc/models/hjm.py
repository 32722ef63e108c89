"""One-factor HJM forward-curve simulation on a shared uniform time/maturity grid."""

from __future__ import annotations

import math
import time

import numpy as np

from ..rng import RngStream
from .params import ConfigError, CoupledSample, HjmGrids, ModelKind, ParameterPoint


def hjm_vol_base(t, T_mat, sigma0: float, alpha_sigma: float):
    """``sigma0 * exp(-alpha_sigma * (T_mat - t))``."""
    t = np.asarray(t, dtype=float)
    T_mat = np.asarray(T_mat, dtype=float)
    if np.any(T_mat < t):
        raise ValueError("maturity precedes the current time")
    out = sigma0 * np.exp(-alpha_sigma * (T_mat - t))
    return float(out) if out.ndim == 0 else out


def hjm_forward_base(T_mat, f0: float, c_f: float, alpha_f: float):
    """``f0 + c_f * (1 - exp(-alpha_f * T_mat))``."""
    T_mat = np.asarray(T_mat, dtype=float)
    out = f0 + c_f * (1.0 - np.exp(-alpha_f * T_mat))
    return float(out) if out.ndim == 0 else out


def hjm_discrete_drift(vol_row, spacing: float) -> np.ndarray:
    """Arbitrage-free drift for one Euler step of the discretised curve.

    ``vol_row[k]`` is ``sigma(t_{i-1}, t_{i+k})`` for the maturities still alive
    after the step. The quadrature weights are 1 on every earlier node and 1/2
    on the node itself, which makes discounted left-Riemann bond prices exact
    martingales of the discrete scheme.
    """
    row = np.asarray(vol_row, dtype=float)
    if row.size == 0:
        raise ValueError("empty vol row")
    integral = spacing * (np.cumsum(row, axis=-1) - 0.5 * row)
    return row * integral


def make_hjm_grids(params, stream: RngStream | None = None) -> HjmGrids:
    """Baseline vol and forward grids, optionally with the node-wise noise used in training."""
    dt = params["dt"]
    n_nodes = int(round(params["T_final"] / dt)) + 1
    rows = int(round(params["t0_swap"] / dt))
    grid = dt * np.arange(n_nodes)
    ti = grid[:rows, None]
    tj = grid[None, :]
    s0, a_s = params["sigma0"], params["alpha_sigma"]
    # exp(-a (t_j - t_i)) as an outer product; avoids an exp over the whole grid
    vol = np.where(tj >= ti, s0 * np.exp(a_s * ti) * np.exp(-a_s * tj), 0.0)
    fwd = hjm_forward_base(grid, params["f0"], params["c_f"], params["alpha_f"])
    if params.get("grid_noise", 0.0) > 0:
        if stream is None:
            raise ValueError("a stream is required for noisy grids")
        scale = params["grid_noise"]
        vol = vol + scale * (s0 / (2.0 * (tj + 5.0))) * stream.normal(vol.shape)
        vol = np.where(tj >= ti, np.maximum(vol, 0.0), 0.0)
        fwd = fwd + scale * (1.0 / (100.0 * (grid + 5.0))) * stream.normal(grid.shape)
    return HjmGrids(grid, vol, fwd)


def hjm_linear_map(grids: HjmGrids, steps: int):
    """Curve at ``t_steps`` as ``base + Z @ loadings`` for maturities ``j >= steps``.

    Unrolls the Euler recursion: the drift is deterministic once the vol grid
    is fixed, so the terminal curve is affine in the driving normals.
    """
    if steps > grids.rows:
        raise ConfigError(f"simulation horizon of {steps} steps exceeds the {grids.rows} vol rows")
    h = grids.spacing
    J = grids.grid.size
    # row i-1 drives step i and acts on maturities j >= i
    alive = np.arange(J)[None, :] >= np.arange(1, steps + 1)[:, None]
    M = np.where(alive, grids.vol[:steps], 0.0)
    mu = M * (h * (np.cumsum(M, axis=1) - 0.5 * M))
    drift_total = h * mu[:, steps:].sum(axis=0)
    loadings = math.sqrt(h) * M[:, steps:]
    base = grids.forward[steps:] + drift_total
    return base, loadings


def hjm_paths_stepwise(grids: HjmGrids, steps: int, Z: np.ndarray) -> np.ndarray:
    """Explicit Euler recursion; returns ``f[n, i, j]`` for every visited time ``i``.

    Entries with ``j < i`` are NaN. Memory is ``n * (steps+1) * J``; meant for
    checks on small batches.
    """
    if steps > grids.rows:
        raise ConfigError(f"simulation horizon of {steps} steps exceeds the {grids.rows} vol rows")
    n = Z.shape[0]
    h = grids.spacing
    J = grids.grid.size
    f = np.full((n, steps + 1, J), np.nan)
    f[:, 0, :] = grids.forward
    for i in range(1, steps + 1):
        row = grids.vol[i - 1, i:]
        mu = hjm_discrete_drift(row, h)
        f[:, i, i:] = f[:, i - 1, i:] + mu * h + math.sqrt(h) * row * Z[:, i - 1 : i]
    return f


def simulate_hjm(theta: ParameterPoint, stream: RngStream, n_paths: int = 1,
                 grids: HjmGrids | None = None, record_path: bool = False) -> CoupledSample:
    """Forward curves at the swaption exercise date plus ``X = sum sqrt(dt) Z``."""
    if theta.model_kind is not ModelKind.HJM:
        raise ConfigError(f"expected an HJM parameter point, got {theta.model_kind.value}")
    grids = grids or theta.hjm
    dt = theta["dt"]
    if abs(grids.spacing - dt) > 1e-12:
        raise ConfigError("grid spacing does not match the simulation step")
    steps = int(round(theta["t0_swap"] / dt))
    t0 = time.perf_counter_ns()
    Z = stream.normal((n_paths, steps))
    if record_path:
        full = hjm_paths_stepwise(grids, steps, Z)
        curve = full[:, steps, steps:]
        paths = full
    else:
        base, load = hjm_linear_map(grids, steps)
        curve = base + Z @ load
        paths = curve
    feats = (math.sqrt(dt) * Z).sum(axis=1, keepdims=True)
    return CoupledSample(
        paths=paths,
        features=feats,
        times=grids.grid[: steps + 1],
        increments=Z,
        curve=curve,
        cost_ns=time.perf_counter_ns() - t0,
        steps=steps * n_paths,
    )
