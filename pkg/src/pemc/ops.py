"""Request handlers shared by the CLI (local mode) and the HTTP service."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .ed import EdConfig, simulate_week
from .estimators import (
    boost_pemc_estimate,
    classical_cv_estimate,
    empirical_covariance_probe,
    optimal_allocation,
    pemc_estimate,
    standard_mc,
)
from .predictor import PredictorModel
from .rng import RngStream
from .tasks import make_task


class PriceRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    task: str = "gbm_asian"
    task_options: dict[str, Any] = Field(default_factory=dict)
    method: Literal["MC", "PEMC", "CV", "BoostPEMC"] = "PEMC"
    model: Optional[str] = None  # path, or a name inside the service's model directory
    theta: dict[str, Any] = Field(default_factory=dict)
    n: int = Field(1000, ge=2)
    N: Optional[int] = Field(None, ge=2)
    a: float = 1.0
    alpha: float = Field(0.05, gt=0, le=1)
    seed: int = Field(0, ge=0)


class AllocateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    budget: float = Field(gt=0)
    sigma_fg: Optional[float] = None
    sigma_g: Optional[float] = None
    c_fg: Optional[float] = None
    c_g: Optional[float] = None
    # probe mode: measure the four inputs with a pilot run instead
    task: Optional[str] = None
    task_options: dict[str, Any] = Field(default_factory=dict)
    model: Optional[str] = None
    theta: dict[str, Any] = Field(default_factory=dict)
    probe_n: int = Field(2000, ge=30)
    seed: int = Field(0, ge=0)


class EdSimRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    weeks: int = Field(1, ge=1)
    tau: Union[float, Literal["inf"]] = 20  # "inf" keeps the request JSON-safe
    hosp2_shifts: Optional[list[int]] = None
    crisis: Optional[float] = None
    options: dict[str, Any] = Field(default_factory=dict)
    seed: int = Field(0, ge=0)
    include_traces: bool = False


def resolve_model(ref: Optional[str], model_dir=None) -> PredictorModel:
    if ref is None:
        raise FileNotFoundError("this method needs a trained model; run `pemc train` first")
    p = Path(ref)
    if not p.exists() and model_dir is not None:
        p = Path(model_dir) / ref
        if not p.suffix:
            p = p.with_suffix(".pemc")
    if not p.exists():
        raise FileNotFoundError(f"model {ref!r} not found; run `pemc train --model {ref}` first")
    return PredictorModel.load(p)


def price(req: PriceRequest, model_dir=None, cache: Optional[dict] = None) -> dict:
    model = None
    if req.method in ("PEMC", "BoostPEMC"):
        key = str(req.model)
        if cache is not None and key in cache:
            model = cache[key]
        else:
            model = resolve_model(req.model, model_dir)
            if cache is not None:
                cache[key] = model
        task = model.task if req.method == "PEMC" else make_task(req.task, **req.task_options)
    else:
        task = make_task(req.task, **req.task_options)
    theta = task.eval_theta(**req.theta)
    stream = RngStream(req.seed, 0)
    N = req.N if req.N is not None else 10 * req.n
    if req.method == "MC":
        est = standard_mc(task, theta, req.n, stream, req.alpha)
    elif req.method == "CV":
        est = classical_cv_estimate(task, theta, req.n, stream, req.alpha)
    elif req.method == "PEMC":
        est = pemc_estimate(task, theta, req.n, N, model, stream, req.a, req.alpha)
    else:
        est = boost_pemc_estimate(task, theta, req.n, N, model, stream, req.a, req.alpha)
    out = est.to_json()
    out["task"] = task.name
    out["theta"] = theta.params
    return out


def allocate(req: AllocateRequest, model_dir=None) -> dict:
    probe = None
    if req.model is not None:
        model = resolve_model(req.model, model_dir)
        task = model.task
        theta = task.eval_theta(**req.theta)
        probe = empirical_covariance_probe(task, theta, model, req.probe_n, RngStream(req.seed, 0))
        sig = (probe.sigma_fg, probe.sigma_g, probe.c_fg, probe.c_g)
    else:
        sig = (req.sigma_fg, req.sigma_g, req.c_fg, req.c_g)
        if any(v is None for v in sig):
            raise ValueError("give sigma_fg, sigma_g, c_fg and c_g, or a model to probe")
    plan = optimal_allocation(*sig, req.budget)
    out = {"plan": plan.to_json()}
    if probe is not None:
        out["probe"] = probe.to_json()
    return out


def ed_sim(req: EdSimRequest) -> dict:
    kw = dict(req.options)
    tau = math.inf if req.tau == "inf" else float(req.tau)
    kw["tau"] = tau
    if req.hosp2_shifts is not None:
        kw["hosp2_shifts"] = tuple(req.hosp2_shifts)
    if req.crisis is not None:
        kw["crisis"] = req.crisis
    cfg = EdConfig.from_json(kw) if "schedule_csv" in kw else EdConfig(**{
        k: (tuple(v) if isinstance(v, list) else v) for k, v in kw.items()})
    root = RngStream(req.seed, 0)
    summaries, deaths = [], []
    for w in range(req.weeks):
        res = simulate_week(cfg, root.spawn("week", w))
        s = dict(res.summary)
        s["week"] = w
        s["features"] = res.features.tolist()
        summaries.append(s)
        deaths.append(res.deaths)
    d = np.asarray(deaths, dtype=float)
    out = {
        "weeks": req.weeks,
        "tau": tau if math.isfinite(tau) else "inf",
        "mean_deaths": float(d.mean()),
        "std_deaths": float(d.std()),
        "deaths": d.astype(int).tolist(),
    }
    if req.include_traces:
        out["traces"] = summaries
    return out
