import json
import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import stats

from pemc.config import ExperimentConfig, dump_config, load_config
from pemc.harness import (
    REPORT_COLUMNS,
    ExperimentReport,
    IntegrityError,
    ModelMissingError,
    emit_report,
    ground_truth,
    ground_truth_key,
    load_or_train,
    load_report,
    run_experiment,
    sample_parameter_point,
    store_ground_truth,
)
from pemc.models import ModelKind
from pemc.predictor import ConstantPredictor
from pemc.rng import RngStream
from pemc.space import ParameterSpaceSpec
from pemc.tasks import DEFAULT_SPACES, EVAL_PARAMS, GbmAsianTask, make_task


def small_cfg(**kw):
    base = dict(task="gbm_asian", methods=["MC", "PEMC", "CV", "BoostPEMC"], n_grid=[20, 40], repeats=5,
                ground_truth={"M": 20_000, "chunk": 5000}, seed=3)
    base.update(kw)
    return ExperimentConfig(**base)


class LinearPredictor:
    def __init__(self, b0, b1):
        self.b0, self.b1 = b0, b1

    def predict(self, theta, X):
        return self.b0 + self.b1 * np.asarray(X).sum(axis=1)

    def covers(self, theta):
        return True


# -- parameter sampling -------------------------------------------------------------------
def test_degenerate_space_gives_eval_theta(stream):
    space = ParameterSpaceSpec(ModelKind.GBM, EVAL_PARAMS["gbm_asian"])
    theta = sample_parameter_point(space, stream)
    assert theta.params == GbmAsianTask().eval_theta().params


def test_slv_space_builds_surface(stream):
    space = ParameterSpaceSpec(ModelKind.SLV, DEFAULT_SPACES["slv_varswap"])
    theta = sample_parameter_point(space, stream)
    assert 50 <= theta["S0"] <= 150 and 1.5 <= theta["kappa"] <= 4.5
    assert theta.surface is not None and np.all(theta.surface.values >= 1e-4)


def test_hjm_space_builds_noisy_grids(stream):
    task = make_task("hjm_swaption")
    theta = sample_parameter_point(task.space, stream, task)
    assert theta.hjm is not None
    clean = make_task("hjm_swaption").eval_theta(**{k: theta[k] for k in ("sigma0", "alpha_sigma", "f0", "c_f", "alpha_f")})
    assert not np.array_equal(theta.hjm.forward, clean.hjm.forward)


def test_coordinates_uniform():
    space = ParameterSpaceSpec(ModelKind.GBM, DEFAULT_SPACES["gbm_asian"])
    draws = space.sample_many(100_000, RngStream(8))
    for name in ("r", "sigma", "S0", "K"):
        lo, hi = DEFAULT_SPACES["gbm_asian"][name]
        counts, _ = np.histogram(draws[name], bins=10, range=(lo, hi))
        assert counts.sum() == 100_000
        assert stats.chisquare(counts).pvalue > 0.001, name


# -- ground truth -------------------------------------------------------------------------
def test_ground_truth_deterministic_payoff():
    task = GbmAsianTask()
    theta = task.eval_theta(sigma=0.0)
    value, se = ground_truth(task, theta, 10_000, chunk=3000)
    t = task.spec(theta).obs_times
    assert value == pytest.approx(max(100 * np.exp(0.02 * t).mean() - 100.0, 0.0), rel=1e-12)
    assert se == pytest.approx(0.0, abs=1e-10)


def test_ground_truth_cache_and_integrity(tmp_path):
    task = GbmAsianTask()
    theta = task.eval_theta()
    a = ground_truth(task, theta, 20_000, seed=1, cache_dir=tmp_path, chunk=5000)
    files = list(tmp_path.glob("gt-*.json"))
    assert len(files) == 1
    assert ground_truth(task, theta, 20_000, seed=1, cache_dir=tmp_path, chunk=5000) == a
    assert ground_truth(task, theta, 20_000, seed=1, cache_dir=tmp_path, chunk=5000, verify=True) == a
    # tampered entry
    rec = json.loads(files[0].read_text())
    rec["value"] += 1.0
    files[0].write_text(json.dumps(rec))
    with pytest.raises(IntegrityError):
        ground_truth(task, theta, 20_000, seed=1, cache_dir=tmp_path, chunk=5000, verify=True)
    with pytest.raises(IntegrityError):
        store_ground_truth(files[0], a[0], a[1], 20_000, 1)


def test_ground_truth_key_separates_inputs():
    task = GbmAsianTask()
    theta = task.eval_theta()
    k = ground_truth_key(task, theta, 100, 0)
    assert k != ground_truth_key(task, theta, 100, 1)
    assert k != ground_truth_key(task, theta, 101, 0)
    assert k != ground_truth_key(task, task.eval_theta(K=101.0), 100, 0)
    assert k != ground_truth_key(GbmAsianTask(payoff="AsianGeometric"), theta, 100, 0)
    # the feature map does not change f, so the cached truth is shared
    assert k == ground_truth_key(GbmAsianTask(feature_dim=14), theta, 100, 0)


def test_truth_independent_of_feature_map():
    theta = GbmAsianTask().eval_theta()
    a = ground_truth(GbmAsianTask(), theta, 5000, seed=2)
    b = ground_truth(GbmAsianTask(feature_dim=14), theta, 5000, seed=2)
    assert a == b


def test_independent_ground_truths_agree():
    task = GbmAsianTask()
    theta = task.eval_theta()
    v1, s1 = ground_truth(task, theta, 100_000, seed=1)
    v2, s2 = ground_truth(task, theta, 100_000, seed=2)
    assert abs(v1 - v2) < 3 * math.hypot(s1, s2)


# -- config ---------------------------------------------------------------------------------
def test_config_validation_and_round_trip(tmp_path):
    with pytest.raises(ValidationError):
        ExperimentConfig(version=2)
    with pytest.raises(ValidationError):
        ExperimentConfig(task="nope")
    with pytest.raises(ValidationError):
        ExperimentConfig(n_grid=[1000], ground_truth={"M": 500})
    with pytest.raises(ValidationError):
        ExperimentConfig(repeats=0)
    with pytest.raises(ValidationError):
        ExperimentConfig(bogus=1)
    cfg = small_cfg(training={"n_train": 4096, "epochs": 2})
    dump_config(cfg, tmp_path / "c.json")
    assert load_config(tmp_path / "c.json") == cfg


def test_missing_model_names_training_command(tmp_path):
    cfg = small_cfg(model_path=str(tmp_path / "none.pemc"), train_if_missing=False)
    with pytest.raises(ModelMissingError, match="pemc train"):
        load_or_train(cfg)


# -- experiments and reports ----------------------------------------------------------------
@pytest.fixture(scope="module")
def report():
    cfg = small_cfg()
    return run_experiment(cfg, model=LinearPredictor(8.0, 12.0), boost_model=ConstantPredictor(0.0))


def test_smoke_minimal_run():
    cfg = small_cfg(n_grid=[2], repeats=1, methods=["MC", "PEMC"])
    rep = run_experiment(cfg, model=ConstantPredictor(1.0))
    assert len(rep.rows) == 2
    for r in rep.rows:
        assert all(math.isfinite(getattr(r, k)) for k in REPORT_COLUMNS[3:])


def test_report_rows_and_consistency(report):
    assert [(r.method, r.n) for r in report.rows] == [(m, n) for m in ("MC", "PEMC", "CV", "BoostPEMC") for n in (20, 40)]
    truth = report.ground_truth["value"]
    for r in report.rows:
        est = np.array([e["estimate"] for e in report.raw[f"{r.method}:{r.n}"]])
        assert r.rmse == pytest.approx(math.sqrt(np.mean((est - truth) ** 2)), rel=1e-12)
        assert r.rmse**2 >= r.bias**2 - 1e-12
        assert 0.0 <= r.coverage <= 1.0
    assert report.row("PEMC", 20).N == 200 and report.row("MC", 20).N == 0


def test_common_random_numbers(report):
    # a zero predictor makes Boost PEMC equal to the classical CV on the same draws
    for n in (20, 40):
        cv = [e["estimate"] for e in report.raw[f"CV:{n}"]]
        boost = [e["estimate"] for e in report.raw[f"BoostPEMC:{n}"]]
        assert np.allclose(cv, boost, rtol=0, atol=1e-12)


def test_report_round_trip_and_csv(report, tmp_path):
    paths = emit_report(report, tmp_path, ("csv", "json", "raw"))
    assert [p.name for p in paths] == ["report.csv", "report.json", "report_raw.csv"]
    back = load_report(tmp_path / "report.json")
    assert back.to_json() == json.loads(report.dumps())
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines[0] == "method,n,N,rmse,mae,bias,ci_width,coverage,runtime_ns"
    assert len(lines) == 1 + len(report.rows)
    raw = (tmp_path / "report_raw.csv").read_text().splitlines()
    assert len(raw) == 1 + sum(len(v) for v in report.raw.values())


def test_empty_methods_header_only(tmp_path):
    rep = ExperimentReport({}, {"value": 0.0, "se": 0.0, "M": 1})
    emit_report(rep, tmp_path, ("csv",))
    assert (tmp_path / "report.csv").read_text() == ",".join(REPORT_COLUMNS) + "\n"


def test_determinism_across_runs_and_threads(report):
    cfg = small_cfg()
    again = run_experiment(cfg, model=LinearPredictor(8.0, 12.0), boost_model=ConstantPredictor(0.0))
    threaded = run_experiment(small_cfg(threads=4), model=LinearPredictor(8.0, 12.0),
                              boost_model=ConstantPredictor(0.0))
    assert again.deterministic_payload() == report.deterministic_payload()
    # the thread count is part of the config, so compare everything else
    strip = lambda rep: {k: v for k, v in json.loads(rep.deterministic_payload()).items() if k != "config"}
    assert strip(threaded) == strip(report)
    assert "runtime_ns" not in again.deterministic_payload()
    other = run_experiment(small_cfg(seed=4), model=LinearPredictor(8.0, 12.0), boost_model=ConstantPredictor(0.0))
    assert other.determinism_hash() != report.determinism_hash()


def test_threaded_run_with_trained_model():
    cfg = small_cfg(methods=["PEMC"], training={"n_train": 2048, "batch_size": 256, "holdout": 256})
    model = load_or_train(cfg)
    a = run_experiment(cfg, model=model)
    b = run_experiment(small_cfg(methods=["PEMC"], threads=4), model=model)
    assert [r.rmse for r in a.rows] == [r.rmse for r in b.rows]
