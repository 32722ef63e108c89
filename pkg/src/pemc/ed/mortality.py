"""Triage-dependent mortality curve and its inverse, used to draw each patient's death time."""

from __future__ import annotations

import numpy as np

# Asymptotic (K) and baseline (A) mortality by triage level 1..5.
K_MAX = {1: 1.0, 2: 0.9, 3: 0.05, 4: 0.02, 5: 0.01}
A_BASE = {1: 0.6, 2: 0.1, 3: 0.0, 4: 0.0, 5: 0.0}
_K = np.array([np.nan] + [K_MAX[t] for t in range(1, 6)])
_A = np.array([np.nan] + [A_BASE[t] for t in range(1, 6)])


def _triage(t) -> np.ndarray:
    t_arr = np.asarray(t)
    if t_arr.dtype.kind == "f":
        if np.any(t_arr != np.round(t_arr)):
            raise ValueError("triage level must be an integer in 1..5")
        t_arr = t_arr.astype(int)
    if t_arr.dtype.kind not in "iu" or np.any((t_arr < 1) | (t_arr > 5)):
        raise ValueError("triage level must be an integer in 1..5")
    return t_arr


def mortality_prob(x, t, B, nu):
    """``A + (K - A) / (1 + 3t exp(-(B + 5 - t) x + t/2))^(1 / (nu + t/4))``."""
    t = _triage(t)
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("wait time must be nonnegative")
    K, A = _K[t], _A[t]
    c = B + 5.0 - t
    p = nu + 0.25 * t
    # log1p form keeps the denominator accurate once the exponential is tiny
    z = np.log(3.0 * t) - c * x + 0.5 * t
    out = A + (K - A) * np.exp(-np.logaddexp(0.0, z) / p)
    return float(out) if out.ndim == 0 else out


def inverse_mortality(u, t, B, nu):
    """Death time: 0 below the curve's value at zero wait, inf at or above K, else the exact inverse."""
    t = _triage(t)
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("u must lie in (0, 1)")
    u, t, B, nu = np.broadcast_arrays(u, t, np.asarray(B, dtype=float), np.asarray(nu, dtype=float))
    K, A = _K[t], _A[t]
    c = B + 5.0 - t
    p = nu + 0.25 * t
    out = np.zeros(u.shape)
    low = u <= mortality_prob(0.0, t, B, nu)
    high = u >= K
    mid = ~(low | high)
    if np.any(mid):
        q = p[mid] * (np.log(K[mid] - A[mid]) - np.log(u[mid] - A[mid]))
        # ((K-A)/(u-A))^p - 1 = 3t exp(-c x + t/2)
        lhs = np.log(np.expm1(q))
        tm = t[mid]
        out[mid] = (0.5 * tm + np.log(3.0 * tm) - lhs) / c[mid]
    out[high] = np.inf
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out
