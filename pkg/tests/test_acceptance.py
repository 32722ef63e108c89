"""End-to-end acceptance suite: trained predictors, repeated experiments and oracle checks.

Slow (tens of minutes on one core). Trained models and ground truths are cached
under ``$PEMC_ACCEPTANCE_CACHE`` (default ``.acceptance-cache`` in the repo), so
reruns only pay for the experiments. Each criterion prints one PASS/FAIL line.
"""

import hashlib
import json
import math
import os
from pathlib import Path

import numpy as np
import pytest

from pemc.config import load_config
from pemc.ed import EdConfig, draw_patients, inverse_mortality, mortality_prob
from pemc.estimators import (
    brute_force_allocation,
    count_feasible_pairs,
    empirical_covariance_probe,
    optimal_allocation,
    pemc_from_arrays,
    variance_ratio_r,
)
from pemc.harness import build_task, ground_truth, load_or_train, run_experiment
from pemc.payoffs import geometric_asian_closed_form
from pemc.predictor import ConstantPredictor, mare_diagnostic
from pemc.rng import RngStream

pytestmark = pytest.mark.acceptance

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
CACHE = Path(os.environ.get("PEMC_ACCEPTANCE_CACHE", ROOT / ".acceptance-cache"))

_models = {}
_reports = {}


def config(name, **updates):
    cfg = load_config(CONFIGS / f"{name}.json")
    if updates:
        cfg = cfg.model_copy(update=updates)
    # key the cached model on everything that shapes training
    key = hashlib.sha256(json.dumps(
        {k: cfg.model_dump(mode="json")[k] for k in ("task", "task_options", "space", "training", "seed")},
        sort_keys=True).encode()).hexdigest()[:16]
    return cfg.model_copy(update={
        "model_path": str(CACHE / "models" / f"{name}-{key}.pemc"),
        "boost_model_path": str(CACHE / "models" / f"{name}-{key}-boost.pemc"),
        "cache_dir": str(CACHE / "truth"),
    })


def model(name, label_mode="raw"):
    if (name, label_mode) not in _models:
        _models[name, label_mode] = load_or_train(config(name), label_mode)
    return _models[name, label_mode]


def experiment(name, **updates):
    key = (name, json.dumps(updates, sort_keys=True))
    if key not in _reports:
        _reports[key] = run_experiment(config(name, **updates))
    return _reports[key]


def truth_for(cfg, theta):
    task = build_task(cfg)
    return ground_truth(task, theta, cfg.ground_truth.M, cfg.ground_truth.seed, cfg.cache_dir, cfg.ground_truth.chunk)


def rmse_ratio(report, n):
    return report.row("PEMC", n).rmse / report.row("MC", n).rmse


def test_01_variance_ratio_values(acceptance):
    a = variance_ratio_r(0.5, 0.001)
    b = variance_ratio_r(0.7, 0.001)
    ok = abs(a - 0.778) <= 1e-3 and abs(b - 0.542) <= 1e-3
    acceptance(1, "r(rho, c) values", ok, f"r(0.5,0.001)={a:.4f} r(0.7,0.001)={b:.4f}")
    assert ok


# -- unbiasedness on every task, shared by the coverage criterion ----------------------
UNBIASED_R = 500
UNBIASED_N = 500


def _repeat_estimates(cfg, predictors):
    task = build_task(cfg)
    theta = task.eval_theta(**cfg.eval_theta)
    root = RngStream(cfg.seed, 5)
    out = {k: [] for k in predictors}
    for r in range(UNBIASED_R):
        s = root.spawn("unbiased", r)
        f, X = task.coupled(theta, UNBIASED_N, s.spawn("coupled"))
        Xm = task.marginal(theta, 10 * UNBIASED_N, s.spawn("marginal"))
        for k, g in predictors.items():
            out[k].append(pemc_from_arrays(f, g.predict(theta, X), g.predict(theta, Xm)))
    return out, truth_for(cfg, theta)


_unbiased = {}


def unbiased_run(name):
    if name not in _unbiased:
        _unbiased[name] = _repeat_estimates(config(name), {"trained": model(name), "constant": ConstantPredictor(1000.0)})
    return _unbiased[name]


@pytest.mark.parametrize("name", ["gbm_dim1", "slv", "hjm", "ed"])
def test_02_unbiased(acceptance, name):
    ests, (truth, truth_se) = unbiased_run(name)
    ok = True
    parts = []
    for k, es in ests.items():
        vals = np.array([e.estimate for e in es])
        se = math.sqrt(vals.var(ddof=1) / vals.size + truth_se**2)
        z = (vals.mean() - truth) / se
        ok &= abs(z) <= 3.0
        parts.append(f"{k} z={z:+.2f}")
    acceptance(2, f"PEMC unbiased ({name})", bool(ok), f"truth={truth:.6g}; " + ", ".join(parts))
    assert ok


def test_03_ci_coverage(acceptance):
    ests, (truth, _) = unbiased_run("gbm_dim1")
    cover = np.mean([e.ci_lo <= truth <= e.ci_hi for e in ests["trained"]])
    ok = 0.92 <= cover <= 0.98
    acceptance(3, "95% CI coverage (GBM, R=500)", ok, f"coverage={cover:.3f}")
    assert ok


def test_gbm_predictor_quality():
    m = model("gbm_dim1")
    task = m.task
    mare = mare_diagnostic(m, 100_000, RngStream(7, 9), task.eval_theta())
    assert mare < 0.05
    md = m.metadata
    assert md["holdout_mse"] < md["holdout_mse_init"]


@pytest.mark.parametrize("name", ["gbm_dim14", "gbm_cv", "slv", "hjm", "ed"])
def test_training_improves_holdout(name):
    label_mode = "cv_residual" if name == "gbm_cv" else "raw"
    md = model(name, label_mode).metadata
    assert md["holdout_mse"] < md["holdout_mse_init"]


def test_04_gbm_rmse_ratios(acceptance):
    bands = {"gbm_dim1": (0.5, 0.8), "gbm_dim14": (0.25, 0.55)}
    ok = True
    parts = []
    for name, (lo, hi) in bands.items():
        report = experiment(name)
        for n in (1000, 4000):
            ratio = rmse_ratio(report, n)
            ok &= lo <= ratio <= hi
            parts.append(f"{name} n={n} {ratio:.3f} in [{lo},{hi}]")
    acceptance(4, "GBM PEMC/MC RMSE ratios", bool(ok), "; ".join(parts))
    assert ok


def test_05_cv_and_boost(acceptance):
    report = experiment("gbm_cv")
    mc, cv, boost = (report.row(m, 1000).rmse for m in ("MC", "CV", "BoostPEMC"))
    ok = cv / mc < 0.1 and boost < cv
    acceptance(5, "classical CV and Boost PEMC (n=1000)", ok,
               f"RMSE MC={mc:.4g} CV={cv:.4g} Boost={boost:.4g}, CV/MC={cv / mc:.4f}")
    assert ok


def _geometric_oracle(theta, M, seed, chunk=50_000):
    """Discounted geometric Asian call from log-Euler paths with an independent generator."""
    r, sigma, s0, k = theta["r"], theta["sigma"], theta["S0"], theta["K"]
    steps = theta.steps
    dt = theta["dt"]
    gen = np.random.Generator(np.random.PCG64(seed))
    drift = (r - 0.5 * sigma * sigma) * dt
    total = total_sq = 0.0
    done = 0
    while done < M:
        m = min(chunk, M - done)
        logs = np.cumsum(drift + sigma * math.sqrt(dt) * gen.standard_normal((m, steps), dtype=np.float64), axis=1)
        pay = np.maximum(s0 * np.exp(logs.mean(axis=1)) - k, 0.0)
        total += pay.sum()
        total_sq += (pay * pay).sum()
        done += m
    mean = total / M
    se = math.sqrt(max(total_sq / M - mean * mean, 0.0) / M)
    disc = math.exp(-r * steps * dt)
    return disc * mean, disc * se


def test_06_geometric_closed_form(acceptance):
    task = build_task(load_config(CONFIGS / "gbm_dim1.json"))
    stream = RngStream(606, 0)
    ok = True
    parts = []
    for i in range(5):
        theta = task.sample_theta(stream.spawn("theta", i))
        spec = task.spec(theta)
        assert np.allclose(spec.obs_times, theta["dt"] * np.arange(1, theta.steps + 1))
        exact = geometric_asian_closed_form(theta, spec)
        mc, se = _geometric_oracle(theta, 10_000_000, 1000 + i)
        z = (exact - mc) / se
        ok &= abs(z) <= 3.0
        parts.append(f"{exact:.4f} vs {mc:.4f} (z={z:+.2f})")
    acceptance(6, "geometric Asian closed form vs 1e7-path MC", bool(ok), "; ".join(parts))
    assert ok


def test_07_allocation_vs_exhaustive(acceptance):
    gen = np.random.default_rng(707)
    checked = mismatches = 0
    while checked < 100:
        c_fg, c_g = gen.uniform(0.5, 5.0), gen.uniform(0.01, 1.0)
        budget = gen.uniform(c_fg + c_g, 300.0)
        if count_feasible_pairs(c_fg, c_g, budget) > 10_000:
            continue
        s_fg, s_g = gen.uniform(0.1, 10.0, 2)
        plan = optimal_allocation(s_fg, s_g, c_fg, c_g, budget)
        n, N, best = brute_force_allocation(s_fg, s_g, c_fg, c_g, budget)
        if (plan.n, plan.N) != (n, N) and not math.isclose(plan.variance, best, rel_tol=1e-12):
            mismatches += 1
        checked += 1
    ok = mismatches == 0
    acceptance(7, "optimal allocation vs exhaustive search", ok, f"{checked} instances, {mismatches} mismatches")
    assert ok


@pytest.mark.parametrize("name", ["slv", "hjm"])
def test_08_exotic_tasks(acceptance, name):
    cfg = config(name)
    task = build_task(cfg)
    theta = task.eval_theta(**cfg.eval_theta)
    probe = empirical_covariance_probe(task, theta, model(name), 20_000, RngStream(cfg.seed, 8))
    report = experiment(name)
    variance_run = experiment(name, methods=["PEMC"], repeats=500)
    ok = probe.rho_hat > 0.3
    parts = [f"rho_hat={probe.rho_hat:.3f}"]
    for n in (1000, 4000):
        pe, mc = report.row("PEMC", n).rmse, report.row("MC", n).rmse
        ok &= pe < mc
        ests = variance_run.raw[f"PEMC:{n}"]
        empirical = np.var([e["estimate"] for e in ests], ddof=1)
        predicted = np.mean([e["sigma2_fg"] / e["n"] + e["sigma2_g"] / e["N"] for e in ests])
        rel = empirical / predicted - 1.0
        ok &= abs(rel) <= 0.2
        parts.append(f"n={n} RMSE PEMC={pe:.4g} MC={mc:.4g}, Var emp/pred-1={rel:+.3f}")
    acceptance(8, f"{name} probe, RMSE and variance formula", bool(ok), "; ".join(parts))
    assert ok


def test_09_ed(acceptance):
    gen = np.random.default_rng(909)
    m = 100_000
    t = gen.integers(1, 6, m)
    B, nu = gen.uniform(0.0, 1.0, m), gen.uniform(0.0, 1.0, m)
    x = gen.uniform(0.0, 10.0, m)
    u = mortality_prob(x, t, B, nu)
    # keep points where the curve is not flat to rounding, so the inverse is well posed
    K = np.array([0, 1.0, 0.9, 0.05, 0.02, 0.01])[t]
    ok_pts = (u < K * (1 - 1e-6)) & (u > mortality_prob(0.0, t, B, nu) + 1e-9)
    back = inverse_mortality(u[ok_pts], t[ok_pts], B[ok_pts], nu[ok_pts])
    roundtrip = float(np.max(np.abs(mortality_prob(back, t[ok_pts], B[ok_pts], nu[ok_pts]) - u[ok_pts])))
    ok = roundtrip <= 1e-8

    cfg = EdConfig()
    stream = RngStream(9, 0)
    triage = []
    while sum(a.size for a in triage) < m:
        triage.append(draw_patients(cfg, stream).triage)
    triage = np.concatenate(triage)[:m]
    p = np.asarray(cfg.triage_probs)
    freq = np.bincount(triage, minlength=6)[1:] / m
    zs = (freq - p) / np.sqrt(p * (1 - p) / m)
    ok &= bool(np.all(np.abs(zs) <= 3.0))
    parts = [f"round trip {roundtrip:.1e}", "triage |z|max=" + f"{np.abs(zs).max():.2f}"]
    for tau in (0, 20, 40):
        report = experiment("ed", eval_theta={"tau": tau})
        pe, mc = report.row("PEMC", 50).rmse, report.row("MC", 50).rmse
        ok &= pe < mc
        parts.append(f"tau={tau} MSE PEMC={pe**2:.3f} MC={mc**2:.3f}")
    acceptance(9, "ED inverse, triage law and PEMC vs MC", bool(ok), "; ".join(parts))
    assert ok


def test_10_determinism(acceptance):
    ok = True
    parts = []
    for name, updates in (("gbm_dim1", {}), ("ed", {"eval_theta": {"tau": 20}})):
        first = experiment(name, **updates)
        again = run_experiment(config(name, **updates))
        same = first.deterministic_payload() == again.deterministic_payload()
        ok &= same
        parts.append(f"{name} {again.determinism_hash()[:12]} {'identical' if same else 'DIFFERENT'}")
    acceptance(10, "same seed gives byte-identical reports", bool(ok), "; ".join(parts))
    assert ok
