"""Repeated-experiment studies: ground truth, estimator repeats, RMSE/coverage reports."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ExperimentConfig
from .estimators import (
    PemcEstimate,
    boost_pemc_estimate,
    classical_cv_estimate,
    empirical_covariance_probe,
    pemc_estimate,
    standard_mc,
    z_value,
)
from .models import ParameterPoint
from .predictor import ArchConfig, OptimConfig, PredictorModel, train
from .rng import RngStream
from .space import ParameterSpaceSpec
from .tasks import Task, make_task

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("method", "n", "N", "rmse", "mae", "bias", "ci_width", "coverage", "runtime_ns")
RUNTIME_FIELDS = frozenset({"runtime_ns", "coupled_ns", "marginal_ns", "elapsed_s", "c_fg", "c_g", "c_hat"})
METHODS = ("MC", "PEMC", "CV", "BoostPEMC")


class IntegrityError(RuntimeError):
    pass


class ModelMissingError(FileNotFoundError):
    pass


def sample_parameter_point(space: ParameterSpaceSpec, stream: RngStream, task: Optional[Task] = None) -> ParameterPoint:
    """Uniform draw per coordinate, with grid-valued inputs built (and perturbed) by the task."""
    if task is None:
        from .tasks import TASKS

        matches = [cls for cls in TASKS.values() if cls.kind is space.model_kind]
        task = matches[0](space=space)
    params = space.sample_params(stream.spawn("coords"))
    return task.build_theta(params, stream.spawn("grids"))


# -- ground truth -----------------------------------------------------------------
def theta_digest(theta: ParameterPoint) -> str:
    h = hashlib.sha256()
    h.update(json.dumps({"kind": theta.model_kind.value, "params": dict(sorted(theta.params.items()))},
                        sort_keys=True).encode())
    for grid in (theta.surface, theta.hjm):
        if grid is None:
            continue
        for name in sorted(vars(grid)):
            v = getattr(grid, name)
            if isinstance(v, np.ndarray):
                h.update(name.encode())
                h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return h.hexdigest()


def ground_truth_key(task: Task, theta: ParameterPoint, M: int, seed: int) -> str:
    payload = json.dumps({"task": task.truth_descriptor(), "theta": theta_digest(theta), "M": int(M), "seed": int(seed)},
                         sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()


def _gt_compute(task, theta, M, seed, chunk):
    root = RngStream(seed, 0).spawn("ground-truth")
    total = 0.0
    total_sq = 0.0
    shift = 0.0
    k = 0
    done = 0
    while done < M:
        m = min(chunk, M - done)
        f, _ = task.coupled(theta, m, root.spawn("chunk", k))
        f = np.asarray(f, dtype=float)
        if k == 0:
            # shift by the first chunk mean so the pooled second moment stays well conditioned
            shift = float(f.mean())
        total += (f - shift).sum()
        total_sq += ((f - shift) ** 2).sum()
        done += m
        k += 1
    mean_c = total / M
    var = max(total_sq / M - mean_c * mean_c, 0.0)
    return float(shift + mean_c), float(math.sqrt(var / M))


def ground_truth(task: Task, theta: ParameterPoint, M: int, seed: int = 0, cache_dir=None,
                 chunk: int = 100_000, verify: bool = False) -> tuple[float, float]:
    """Plain MC mean and standard error from ``M`` samples, cached on disk by content hash.

    ``verify=True`` recomputes even on a cache hit and raises
    :class:`IntegrityError` if the stored value differs.
    """
    if M < 2:
        raise ValueError("ground truth needs M >= 2")
    path = None
    if cache_dir is not None:
        key = ground_truth_key(task, theta, M, seed)
        path = Path(cache_dir) / f"gt-{key}.json"
        if path.exists():
            cached = json.loads(path.read_text())
            if not verify:
                return cached["value"], cached["se"]
            value, se = _gt_compute(task, theta, M, seed, chunk)
            if value != cached["value"] or se != cached["se"]:
                raise IntegrityError(f"ground-truth cache entry {path.name} disagrees with a recomputation")
            return value, se
    value, se = _gt_compute(task, theta, M, seed, chunk)
    if path is not None:
        store_ground_truth(path, value, se, M, seed)
    return value, se


def store_ground_truth(path, value: float, se: float, M: int, seed: int) -> None:
    path = Path(path)
    if path.exists():
        old = json.loads(path.read_text())
        if old["value"] != value or old["se"] != se:
            raise IntegrityError(f"refusing to overwrite {path.name} with a different value")
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(f".tmp{os.getpid()}")
    tmp.write_text(json.dumps({"value": value, "se": se, "M": M, "seed": seed}, sort_keys=True))
    os.replace(tmp, path)


# -- reports ----------------------------------------------------------------------
@dataclass
class ReportRow:
    method: str
    n: int
    N: int
    rmse: float
    mae: float
    bias: float
    ci_width: float
    coverage: float
    runtime_ns: float

    def csv_cells(self) -> list[str]:
        return [self.method, str(self.n), str(self.N)] + [repr(float(getattr(self, k))) for k in REPORT_COLUMNS[3:]]


def summarize(method: str, n: int, N: int, estimates: list[PemcEstimate], truth: float) -> ReportRow:
    est = np.array([e.estimate for e in estimates])
    lo = np.array([e.ci[0] for e in estimates])
    hi = np.array([e.ci[1] for e in estimates])
    dev = est - truth
    return ReportRow(
        method=method,
        n=int(n),
        N=int(N),
        rmse=float(np.sqrt(np.mean(dev**2))),
        mae=float(np.mean(np.abs(dev))),
        bias=float(np.mean(dev)),
        ci_width=float(np.mean(hi - lo)),
        coverage=float(np.mean((lo <= truth) & (truth <= hi))),
        runtime_ns=float(np.mean([e.coupled_ns + e.marginal_ns for e in estimates])),
    )


@dataclass
class ExperimentReport:
    config: dict
    ground_truth: dict  # value, se, M
    rows: list = field(default_factory=list)
    raw: dict = field(default_factory=dict)  # "method:n" -> list of estimate JSON records
    metadata: dict = field(default_factory=dict)

    def row(self, method: str, n: int) -> ReportRow:
        for r in self.rows:
            if r.method == method and r.n == n:
                return r
        raise KeyError((method, n))

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "ground_truth": self.ground_truth,
            "rows": [asdict(r) for r in self.rows],
            "raw": self.raw,
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ExperimentReport":
        return cls(d["config"], d["ground_truth"], [ReportRow(**r) for r in d["rows"]], d.get("raw", {}),
                   d.get("metadata", {}))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1)

    def deterministic_payload(self) -> str:
        """Canonical JSON with every wall-clock field removed."""
        return json.dumps(_strip_runtime(self.to_json()), sort_keys=True)

    def determinism_hash(self) -> str:
        return hashlib.sha256(self.deterministic_payload().encode()).hexdigest()

    def csv_text(self) -> str:
        lines = [",".join(REPORT_COLUMNS)]
        lines += [",".join(r.csv_cells()) for r in self.rows]
        return "\n".join(lines) + "\n"


def _strip_runtime(obj):
    if isinstance(obj, dict):
        return {k: _strip_runtime(v) for k, v in obj.items() if k not in RUNTIME_FIELDS and k != "costs"}
    if isinstance(obj, list):
        return [_strip_runtime(v) for v in obj]
    return obj


def emit_report(report: ExperimentReport, out_dir, formats=("csv", "json"), stem: str = "report") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        p = out / f"{stem}.csv"
        p.write_text(report.csv_text())
        written.append(p)
    if "json" in formats:
        p = out / f"{stem}.json"
        p.write_text(report.dumps())
        written.append(p)
    if "raw" in formats:
        p = out / f"{stem}_raw.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "n", "N", "repeat", "estimate", "ci_lo", "ci_hi"])
            for key, recs in report.raw.items():
                method, n = key.split(":")
                for i, rec in enumerate(recs):
                    w.writerow([method, n, rec["N"], i, repr(rec["estimate"]), repr(rec["ci"][0]), repr(rec["ci"][1])])
        written.append(p)
    return written


def load_report(path) -> ExperimentReport:
    return ExperimentReport.from_json(json.loads(Path(path).read_text()))


# -- experiments ------------------------------------------------------------------
def build_task(cfg: ExperimentConfig, label_mode: str = "raw") -> Task:
    space = None
    if cfg.space is not None:
        from .tasks import TASKS

        space = ParameterSpaceSpec(TASKS[cfg.task].kind, cfg.space)
    return make_task(cfg.task, space=space, label_mode=label_mode, **cfg.task_options)


def training_settings(cfg: ExperimentConfig) -> tuple[ArchConfig, OptimConfig]:
    t = cfg.training
    arch = ArchConfig(theta_hidden=t.theta_hidden, theta_embed=t.theta_embed, x_hidden=t.x_hidden,
                      head_hidden=t.head_hidden, dropout=t.dropout)
    optim = OptimConfig(lr=t.lr, batch_size=t.batch_size, epochs=t.epochs, cosine=t.cosine, pairs=t.pairs,
                        chunk=t.chunk, holdout=t.holdout, early_stop=t.early_stop)
    return arch, optim


def train_for_config(cfg: ExperimentConfig, label_mode: str = "raw") -> PredictorModel:
    task = build_task(cfg, label_mode)
    arch, optim = training_settings(cfg)
    return train(task, cfg.training.n_train, RngStream(cfg.seed, 1).spawn("train", label_mode), arch, optim)


def load_or_train(cfg: ExperimentConfig, label_mode: str = "raw") -> PredictorModel:
    path = cfg.model_path if label_mode == "raw" else cfg.boost_model_path
    if path and Path(path).exists():
        return PredictorModel.load(path)
    if not cfg.train_if_missing:
        raise ModelMissingError(
            f"no trained model at {path!r}; run `pemc train --config <file>` first or set train_if_missing"
        )
    model = train_for_config(cfg, label_mode)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        model.save(path)
    return model


def _n_big(cfg, n, probe):
    rule = cfg.N_rule
    if rule.kind == "ratio":
        return max(2, int(round(rule.ratio * n)))
    if probe is None:
        raise ValueError("allocation rule needs a covariance probe")
    # ratio from the continuous optimum; independent of the budget
    ratio = (probe.sigma_g / max(probe.sigma_fg, 1e-300)) * math.sqrt(probe.c_fg / probe.c_g)
    return max(2, int(round(ratio * n)))


def run_experiment(cfg: ExperimentConfig, model=None, boost_model=None, cache_dir=None) -> ExperimentReport:
    """R independent estimates per (method, n); RMSE and CI coverage against a cached ground truth."""
    t_start = time.perf_counter()
    task = build_task(cfg)
    theta = task.eval_theta(**cfg.eval_theta)
    methods = list(cfg.methods)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m}; choose from {METHODS}")
    if "PEMC" in methods and model is None:
        model = load_or_train(cfg)
    if "BoostPEMC" in methods and boost_model is None:
        boost_model = load_or_train(cfg, "cv_residual")
    truth, se = ground_truth(task, theta, cfg.ground_truth.M, cfg.ground_truth.seed,
                             cache_dir if cache_dir is not None else cfg.cache_dir, cfg.ground_truth.chunk)
    probe = None
    if cfg.N_rule.kind == "allocation" and model is not None:
        probe = empirical_covariance_probe(task, theta, model, cfg.N_rule.probe_n, RngStream(cfg.seed, 2))
    root = RngStream(cfg.seed, 3)
    report = ExperimentReport(cfg.model_dump(mode="json"), {"value": truth, "se": se, "M": cfg.ground_truth.M})
    for method in methods:
        for n in cfg.n_grid:
            N = 0 if method in ("MC", "CV") else _n_big(cfg, n, probe)

            def one(r, method=method, n=n, N=N):
                # common random numbers: every method at (n, r) sees the same coupled draws
                s = root.spawn("repeat", n, r)
                if method == "MC":
                    return standard_mc(task, theta, n, s, cfg.alpha)
                if method == "CV":
                    return classical_cv_estimate(task, theta, n, s, cfg.alpha)
                if method == "PEMC":
                    return pemc_estimate(task, theta, n, N, model, s, 1.0, cfg.alpha)
                return boost_pemc_estimate(task, theta, n, N, boost_model, s, 1.0, cfg.alpha)

            if cfg.threads > 1:
                with ThreadPoolExecutor(cfg.threads) as pool:
                    ests = list(pool.map(one, range(cfg.repeats)))
            else:
                ests = [one(r) for r in range(cfg.repeats)]
            report.rows.append(summarize(method, n, N, ests, truth))
            report.raw[f"{method}:{n}"] = [e.to_json() for e in ests]
    report.metadata = {
        "theta": theta.params,
        "z": z_value(cfg.alpha),
        "probe": probe.to_json() if probe is not None else None,
        "model": _model_meta(model),
        "boost_model": _model_meta(boost_model),
        "elapsed_s": time.perf_counter() - t_start,
    }
    return report


def _model_meta(model):
    if model is None:
        return None
    md = dict(getattr(model, "metadata", {}))
    md.pop("loss_curve", None)
    return md
