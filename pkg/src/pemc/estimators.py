"""Standard MC, classical CV, PEMC and Boost PEMC estimators with CIs and sample allocation.

All variances are plug-in moments (``ddof=0``) so that the covariance identity
holds exactly on sample moments.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm

from .models import ModelKind
from .payoffs import UnsupportedModelError
from .rng import RngStream


class DomainError(ValueError):
    pass


class EstimatorConfigError(ValueError):
    pass


class InfeasibleError(ValueError):
    pass


class OutsideSpaceWarning(UserWarning):
    pass


def z_value(alpha: float) -> float:
    """Two-sided normal quantile ``z_{1-alpha/2}``; ``alpha=1`` gives 0."""
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"alpha must lie in (0, 1], got {alpha}")
    return float(norm.ppf(1.0 - alpha / 2.0))


@dataclass
class PemcEstimate:
    estimate: float
    n: int
    N: int
    sigma2_fg: float  # variance of f - a*g on coupled draws (plain f for MC)
    sigma2_g: float  # variance of g on marginal draws
    alpha: float = 0.05
    a: float = 1.0
    method: str = "PEMC"
    coupled_ns: int = 0
    marginal_ns: int = 0
    warnings: list = field(default_factory=list)

    @property
    def variance(self) -> float:
        v = self.sigma2_fg / self.n
        if self.N:
            v += self.a * self.a * self.sigma2_g / self.N
        return v

    @property
    def std_error(self) -> float:
        return math.sqrt(self.variance)

    @property
    def ci(self) -> tuple[float, float]:
        return confidence_interval(self, self.alpha)

    @property
    def ci_lo(self) -> float:
        return self.ci[0]

    @property
    def ci_hi(self) -> float:
        return self.ci[1]

    def to_json(self) -> dict:
        lo, hi = self.ci
        return {
            "method": self.method,
            "estimate": self.estimate,
            "n": self.n,
            "N": self.N,
            "a": self.a,
            "sigma2_fg": self.sigma2_fg,
            "sigma2_g": self.sigma2_g,
            "ci": [lo, hi],
            "alpha": self.alpha,
            "costs": {"coupled_ns": self.coupled_ns, "marginal_ns": self.marginal_ns},
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_json(cls, d: dict) -> "PemcEstimate":
        return cls(d["estimate"], d["n"], d["N"], d["sigma2_fg"], d["sigma2_g"], d["alpha"], d.get("a", 1.0),
                   d.get("method", "PEMC"), d["costs"]["coupled_ns"], d["costs"]["marginal_ns"], d.get("warnings", []))


def confidence_interval(estimate: PemcEstimate, alpha: float = 0.05) -> tuple[float, float]:
    """``estimate ± z_{1-alpha/2} * sqrt(sigma2_fg/n + a^2 sigma2_g/N)``."""
    half = z_value(alpha) * estimate.std_error
    return estimate.estimate - half, estimate.estimate + half


# -- array-level estimators -----------------------------------------------------------
def mc_from_array(f, alpha: float = 0.05, method: str = "MC") -> PemcEstimate:
    f = np.asarray(f, dtype=float)
    if f.size < 2:
        raise EstimatorConfigError("standard MC needs n >= 2")
    return PemcEstimate(float(f.mean()), int(f.size), 0, float(f.var()), 0.0, alpha, 0.0, method)


def pemc_from_arrays(f, g_coupled, g_marginal, a: float = 1.0, alpha: float = 0.05, method: str = "PEMC") -> PemcEstimate:
    """``mean(f - a g(X)) + a mean(g(X~))`` from precomputed values."""
    f = np.asarray(f, dtype=float)
    gc = np.asarray(g_coupled, dtype=float)
    gm = np.asarray(g_marginal, dtype=float)
    if f.shape != gc.shape:
        raise EstimatorConfigError("f and g(X) must be aligned")
    if f.size < 2 or gm.size < 2:
        raise EstimatorConfigError("PEMC needs n >= 2 and N >= 2")
    resid = f - a * gc
    point = float(resid.mean() + a * gm.mean())
    return PemcEstimate(point, int(f.size), int(gm.size), float(resid.var()), float(gm.var()), alpha, float(a), method)


# -- task-level estimators ----------------------------------------------------------
def standard_mc(task, theta, n: int, stream: RngStream, alpha: float = 0.05) -> PemcEstimate:
    if n < 2:
        raise EstimatorConfigError("standard MC needs n >= 2")
    t0 = time.perf_counter_ns()
    f, _ = task.coupled(theta, n, stream.spawn("coupled"))
    est = mc_from_array(f, alpha)
    est.coupled_ns = time.perf_counter_ns() - t0
    return est


def pemc_estimate(task, theta, n: int, N: int, model, stream: RngStream, a: float = 1.0,
                  alpha: float = 0.05, method: str = "PEMC") -> PemcEstimate:
    """PEMC with ``n`` coupled pairs and ``N`` independent marginal feature draws.

    The coupled and marginal draws come from disjoint child streams, so the
    estimator is unbiased for any frozen ``model``.
    """
    if n < 2 or N < 2:
        raise EstimatorConfigError("PEMC needs n >= 2 and N >= 2")
    notes = []
    if hasattr(model, "covers") and not model.covers(theta):
        msg = "theta lies outside the predictor's training space; estimate stays unbiased"
        warnings.warn(msg, OutsideSpaceWarning, stacklevel=2)
        notes.append(msg)
    t0 = time.perf_counter_ns()
    f, X = task.coupled(theta, n, stream.spawn("coupled"))
    gc = model.predict(theta, X)
    t1 = time.perf_counter_ns()
    Xm = task.marginal(theta, N, stream.spawn("marginal"))
    gm = model.predict(theta, Xm)
    t2 = time.perf_counter_ns()
    est = pemc_from_arrays(f, gc, gm, a, alpha, method)
    est.coupled_ns, est.marginal_ns = t1 - t0, t2 - t1
    est.warnings = notes
    return est


def _cv_task(task):
    if task.kind is not ModelKind.GBM:
        raise UnsupportedModelError("the geometric control variate needs GBM dynamics")
    if task.label_mode == "cv_residual":
        return task
    from .tasks import make_task

    desc = task.descriptor()
    desc["label_mode"] = "cv_residual"
    return make_task(desc)


def classical_cv_estimate(task, theta, n: int, stream: RngStream, alpha: float = 0.05) -> PemcEstimate:
    """``mean(P_A - P_G) + E[P_G]`` with the closed-form geometric mean; GBM only."""
    est = standard_mc(_cv_task(task), theta, n, stream, alpha)
    est.method = "CV"
    return est


def boost_pemc_estimate(task, theta, n: int, N: int, model, stream: RngStream, a: float = 1.0,
                        alpha: float = 0.05) -> PemcEstimate:
    """PEMC on the CV-residual label with a model trained on that label."""
    return pemc_estimate(_cv_task(task), theta, n, N, model, stream, a, alpha, method="BoostPEMC")


# -- analytics ----------------------------------------------------------------------
def variance_ratio_r(rho: float, c: float) -> float:
    """Ideal-predictor PEMC/MC variance ratio at optimal allocation; ``r(0,c)=1``, ``r(1,c)=c``."""
    if not 0.0 <= rho <= 1.0 or math.isnan(rho):
        raise DomainError(f"rho must lie in [0, 1], got {rho}")
    if not c > 0:
        raise DomainError(f"cost ratio must be positive, got {c}")
    if rho == 0.0:
        return 1.0
    if rho == 1.0:
        return float(c)
    s = math.sqrt(1.0 - rho * rho)
    return (1 - rho * rho) * (1 + rho / s * math.sqrt(c)) + rho * rho * (s / rho * math.sqrt(c) + c)


def cv_coefficient(cov_fg: float, var_g: float, n: int, N: int) -> float:
    """Variance-minimising weight ``a* = Cov(f, g) / ((n/N + 1) Var(g))``."""
    if not var_g > 0:
        raise DomainError("var_g must be positive")
    return cov_fg / ((n / N + 1.0) * var_g)


@dataclass
class AllocationPlan:
    n: int
    N: int
    sigma_fg: float
    sigma_g: float
    c_fg: float
    c_g: float
    budget: float
    variance: float
    n_continuous: float
    N_continuous: float

    @property
    def cost(self) -> float:
        return self.n * self.c_fg + self.N * self.c_g

    def to_json(self) -> dict:
        return asdict(self)


_SCAN_LIMIT = 1_000_000


def _boundary(k: np.ndarray, c_k: float, c_other: float, budget: float) -> np.ndarray:
    other = np.floor((budget - k * c_k) / c_other)
    other -= (k * c_k + other * c_other > budget)
    return other


def optimal_allocation(sigma_fg: float, sigma_g: float, c_fg: float, c_g: float, budget: float) -> AllocationPlan:
    """Integer ``(n, N)`` minimising ``sigma_fg^2/n + sigma_g^2/N`` subject to ``n c_fg + N c_g <= budget``.

    For fixed ``n`` the objective falls with ``N``, so the optimum sits on the
    budget boundary; we scan that boundary along the shorter axis (exactly up
    to a million points, otherwise a window around the continuous optimum).
    Ties go to the smaller ``n``.
    """
    for name, v in (("sigma_fg", sigma_fg), ("sigma_g", sigma_g), ("c_fg", c_fg), ("c_g", c_g), ("budget", budget)):
        if not (v > 0 and math.isfinite(v)):
            raise DomainError(f"{name} must be positive and finite, got {v}")
    if c_fg + c_g > budget:
        raise InfeasibleError("budget does not cover one coupled and one marginal sample")
    a2, b2 = sigma_fg * sigma_fg, sigma_g * sigma_g
    denom = sigma_fg * math.sqrt(c_fg) + sigma_g * math.sqrt(c_g)
    n_star = budget * sigma_fg / math.sqrt(c_fg) / denom
    N_star = budget * sigma_g / math.sqrt(c_g) / denom
    n_max = int((budget - c_g) // c_fg)
    N_max = int((budget - c_fg) // c_g)
    if n_max <= N_max:
        center, hi = n_star, n_max
    else:
        center, hi = N_star, N_max
    if hi <= _SCAN_LIMIT:
        k = np.arange(1, hi + 1, dtype=float)
    else:
        lo_k = max(1, int(center) - _SCAN_LIMIT // 2)
        k = np.arange(lo_k, min(hi, lo_k + _SCAN_LIMIT) + 1, dtype=float)
    if n_max <= N_max:
        n, N = k, _boundary(k, c_fg, c_g, budget)
    else:
        N, n = k, _boundary(k, c_g, c_fg, budget)
    ok = (n >= 1) & (N >= 1)
    n, N = n[ok], N[ok]
    obj = a2 / n + b2 / N
    best = obj.min()
    cand = np.flatnonzero(obj == best)
    i = cand[np.argmin(n[cand])]
    return AllocationPlan(int(n[i]), int(N[i]), sigma_fg, sigma_g, c_fg, c_g, budget, float(best), n_star, N_star)


def brute_force_allocation(sigma_fg, sigma_g, c_fg, c_g, budget):
    """Exhaustive search over every feasible integer pair; an oracle for small budgets."""
    best = None
    n = 1
    while n * c_fg + c_g <= budget:
        N = 1
        while n * c_fg + N * c_g <= budget:
            v = sigma_fg**2 / n + sigma_g**2 / N
            if best is None or v < best[2]:
                best = (n, N, v)
            N += 1
        n += 1
    if best is None:
        raise InfeasibleError("no feasible pair")
    return best


def count_feasible_pairs(c_fg, c_g, budget) -> int:
    n = np.arange(1, int((budget - c_g) // c_fg) + 1, dtype=float)
    if n.size == 0:
        return 0
    N = _boundary(n, c_fg, c_g, budget)
    return int(np.maximum(N, 0).sum())


@dataclass
class CovarianceProbe:
    sigma_f: float
    sigma_fg: float
    sigma_g: float
    cov: float
    rho_hat: float
    c_fg: float  # seconds per coupled sample, simulation plus prediction
    c_g: float  # seconds per marginal sample, sampling plus prediction
    degenerate: bool = False

    @property
    def c_hat(self) -> float:
        return self.c_g / self.c_fg

    def allocate(self, budget: float) -> AllocationPlan:
        return optimal_allocation(self.sigma_fg, self.sigma_g, self.c_fg, self.c_g, budget)

    def to_json(self) -> dict:
        d = asdict(self)
        d["c_hat"] = self.c_hat
        return d


def covariance_identity(f, g) -> tuple[float, float, float, float]:
    """``(var_f, var_g, var_{f-g}, cov)`` with ``cov = (var_f + var_g - var_{f-g}) / 2``."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    vf, vg, vfg = float(f.var()), float(g.var()), float((f - g).var())
    return vf, vg, vfg, 0.5 * (vf + vg - vfg)


def probe_from_arrays(f, g, c_fg: float = 1.0, c_g: float = 1.0) -> CovarianceProbe:
    vf, vg, vfg, cov = covariance_identity(f, g)
    degenerate = not (vf > 0 and vg > 0)
    rho = cov / math.sqrt(vf * vg) if not degenerate else float("nan")
    return CovarianceProbe(math.sqrt(vf), math.sqrt(max(vfg, 0.0)), math.sqrt(vg), cov, rho, c_fg, c_g, degenerate)


def empirical_covariance_probe(task, theta, model, probe_n: int, stream: RngStream, rounds: int = 5) -> CovarianceProbe:
    """Pilot estimates of the standard deviations, correlation and per-sample costs.

    Costs are the median over ``rounds`` timed chunks of wall-clock nanoseconds
    per sample, converted to seconds.
    """
    if probe_n < 30:
        raise EstimatorConfigError("probe_n must be >= 30")
    rounds = max(1, min(rounds, probe_n // 10))
    sizes = np.full(rounds, probe_n // rounds)
    sizes[: probe_n % rounds] += 1
    fs, gs, tc, tm = [], [], [], []
    for k, m in enumerate(sizes):
        sub = stream.spawn("round", k)
        t0 = time.perf_counter_ns()
        f, X = task.coupled(theta, int(m), sub.spawn("coupled"))
        g = model.predict(theta, X)
        t1 = time.perf_counter_ns()
        Xm = task.marginal(theta, int(m), sub.spawn("marginal"))
        model.predict(theta, Xm)
        t2 = time.perf_counter_ns()
        fs.append(f)
        gs.append(np.broadcast_to(g, np.shape(f)))
        tc.append((t1 - t0) / m)
        tm.append((t2 - t1) / m)
    f = np.concatenate(fs)
    g = np.concatenate(gs)
    return probe_from_arrays(f, g, float(np.median(tc)) * 1e-9, float(np.median(tm)) * 1e-9)
