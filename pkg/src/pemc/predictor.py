"""Training, persistence and diagnostics of the learned predictor g(theta, X).

Training data are simulated on demand from the task. With ``epochs=1`` every
record is used for exactly one gradient step and then dropped; with more
epochs the whole training set is materialised once and reshuffled per epoch.
"""

from __future__ import annotations

import json
import logging
import math
import struct
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .nn import Adam, TwoBranchNet
from .rng import RngStream
from .tasks import Task, make_task

log = logging.getLogger(__name__)

MAGIC = b"PEMCMDL1"
FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class DiagnosticError(ValueError):
    pass


@dataclass
class ArchConfig:
    theta_hidden: int = 64
    theta_embed: int = 10
    x_hidden: Optional[int] = None  # default max(32, 2 * x_dim)
    head_hidden: int = 64
    dropout: float = 0.5


@dataclass
class OptimConfig:
    lr: float = 1e-3
    batch_size: int = 1024
    epochs: int = 1
    cosine: bool = False  # cosine decay of the learning rate to lr / 20
    weight_decay: float = 0.0
    pairs: int = 1  # coupled draws per sampled theta
    chunk: int = 16384  # records simulated per generation round
    holdout: int = 4096
    early_stop: Optional[int] = None  # patience in epochs, on held-out MARE


@dataclass
class TrainingRecord:
    feature: np.ndarray  # theta encoding followed by X
    label: float


@dataclass
class TrainingBatch:
    theta: np.ndarray
    x: np.ndarray
    label: np.ndarray
    offset: np.ndarray

    def __len__(self) -> int:
        return self.label.size

    def __iter__(self) -> Iterator[TrainingRecord]:
        for i in range(len(self)):
            yield TrainingRecord(np.concatenate([self.theta[i], self.x[i]]), float(self.label[i]))

    def take(self, idx) -> "TrainingBatch":
        return TrainingBatch(self.theta[idx], self.x[idx], self.label[idx], self.offset[idx])

    @staticmethod
    def concat(parts: list["TrainingBatch"]) -> "TrainingBatch":
        return TrainingBatch(*(np.concatenate([getattr(p, k) for p in parts]) for k in ("theta", "x", "label", "offset")))


def generate_training_batch(task: Task, batch_size: int, stream: RngStream, pairs: int = 1) -> TrainingBatch:
    """``batch_size`` records: theta drawn uniformly from the task's space, ``pairs`` coupled draws each.

    ``batch_size`` counts records, so it is rounded up to a multiple of ``pairs``.
    """
    n_theta = -(-batch_size // pairs) if batch_size else 0
    TH, X, y, off = task.training_batch(n_theta, stream, pairs)
    batch = TrainingBatch(np.asarray(TH, float), np.asarray(X, float), np.asarray(y, float), np.asarray(off, float))
    if not (np.all(np.isfinite(batch.theta)) and np.all(np.isfinite(batch.x)) and np.all(np.isfinite(batch.label))):
        raise TrainingError("simulated training records contain non-finite values")
    return batch.take(slice(0, batch_size))


@dataclass
class Normalizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, data: np.ndarray) -> "Normalizer":
        data = np.atleast_2d(np.asarray(data, dtype=float))
        mean = data.mean(axis=0)
        sd = data.std(axis=0)
        scale = np.where(sd > 1e-12 * np.maximum(1.0, np.abs(mean)), sd, 1.0)
        return cls(mean, scale)

    def transform(self, x):
        return (x - self.mean) / self.scale

    def inverse(self, z):
        return z * self.scale + self.mean


class PredictorModel:
    """A trained predictor; immutable after training, predictions in inference mode only."""

    def __init__(self, task: Task, net: TwoBranchNet, arch: ArchConfig, norm_theta: Normalizer,
                 norm_x: Normalizer, norm_y: Normalizer, metadata: Optional[dict] = None):
        self.task = task
        self.net = net.eval()
        self.arch = arch
        self.norm_theta = norm_theta
        self.norm_x = norm_x
        self.norm_y = norm_y
        self.metadata = metadata or {}

    @property
    def space(self):
        return self.task.space

    def predict_rows(self, theta_rows: np.ndarray, x_rows: np.ndarray, offsets=None, chunk: int = 65536) -> np.ndarray:
        """Predictions for aligned rows of theta encodings and features."""
        theta_rows = np.atleast_2d(np.asarray(theta_rows, dtype=float))
        x_rows = np.asarray(x_rows, dtype=float)
        if x_rows.ndim == 1:
            x_rows = x_rows.reshape(-1, self.net.x_dim)
        if theta_rows.shape[1] != self.net.theta_dim or x_rows.shape[1] != self.net.x_dim:
            raise ValueError(
                f"feature layout ({theta_rows.shape[1]}, {x_rows.shape[1]}) does not match the model "
                f"({self.net.theta_dim}, {self.net.x_dim})"
            )
        if theta_rows.shape[0] == 1 and x_rows.shape[0] > 1:
            theta_rows = np.broadcast_to(theta_rows, (x_rows.shape[0], theta_rows.shape[1]))
        out = np.empty(x_rows.shape[0])
        self.net.eval()
        for a in range(0, x_rows.shape[0], chunk):
            b = min(a + chunk, x_rows.shape[0])
            z = self.net.forward(self.norm_theta.transform(theta_rows[a:b]), self.norm_x.transform(x_rows[a:b]))
            out[a:b] = self.norm_y.inverse(z)
        if offsets is not None:
            out += offsets
        return out

    def predict(self, theta, X) -> np.ndarray:
        """``g(theta, X)`` for one parameter point and an array of feature vectors."""
        enc = self.task.encode(theta)
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1 and X.size == self.net.x_dim
        g = self.predict_rows(enc[None, :], X.reshape(-1, self.net.x_dim), self.task.offset(theta))
        return float(g[0]) if single else g

    def covers(self, theta) -> bool:
        return self.task.contains(theta)

    # -- persistence ------------------------------------------------------------
    def _tensors(self) -> dict[str, np.ndarray]:
        t = {f"net.{k}": v for k, v in self.net.state().items()}
        for name, nz in (("theta", self.norm_theta), ("x", self.norm_x), ("y", self.norm_y)):
            t[f"norm.{name}.mean"] = np.atleast_1d(nz.mean)
            t[f"norm.{name}.scale"] = np.atleast_1d(nz.scale)
        return t

    def save(self, path) -> None:
        tensors = self._tensors()
        manifest, offset = [], 0
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size
        header = {
            "format_version": FORMAT_VERSION,
            "arch": asdict(self.arch),
            "dims": {"theta": self.net.theta_dim, "x": self.net.x_dim},
            "task": self.task.descriptor(),
            "metadata": self.metadata,
            "tensors": manifest,
        }
        blob = json.dumps(header, sort_keys=True).encode()
        with open(Path(path), "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            for name in sorted(tensors):
                fh.write(np.ascontiguousarray(tensors[name], dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "PredictorModel":
        raw = Path(path).read_bytes()
        if raw[:8] != MAGIC:
            raise ValueError(f"{path} is not a predictor model file")
        (hlen,) = struct.unpack("<Q", raw[8:16])
        header = json.loads(raw[16 : 16 + hlen])
        if header.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {header.get('format_version')}")
        payload = np.frombuffer(raw[16 + hlen :], dtype="<f8")
        tensors = {}
        for item in header["tensors"]:
            size = int(np.prod(item["shape"])) if item["shape"] else 1
            tensors[item["name"]] = payload[item["offset"] : item["offset"] + size].reshape(item["shape"]).astype(float)
        arch = ArchConfig(**header["arch"])
        net = TwoBranchNet(header["dims"]["theta"], header["dims"]["x"], asdict(arch), np.random.default_rng(0))
        net.load_state({k[4:]: v for k, v in tensors.items() if k.startswith("net.")})
        norms = [Normalizer(tensors[f"norm.{n}.mean"], tensors[f"norm.{n}.scale"]) for n in ("theta", "x", "y")]
        norms[2] = Normalizer(float(norms[2].mean[0]), float(norms[2].scale[0]))
        return cls(make_task(header["task"]), net, arch, *norms, metadata=header["metadata"])


def _label_normalizer(y: np.ndarray) -> Normalizer:
    """Like ``Normalizer.fit`` but a constant label gets scale 0, so predictions return it exactly."""
    y = np.asarray(y, dtype=float)
    mean, sd = float(y.mean()), float(y.std())
    return Normalizer(mean, sd if sd > 1e-12 * max(1.0, abs(mean)) else 0.0)


def _zscore(norm: Normalizer, y: np.ndarray) -> np.ndarray:
    return norm.transform(y) if norm.scale else np.zeros_like(y)


def _mse(model: PredictorModel, batch: TrainingBatch) -> float:
    g = model.predict_rows(batch.theta, batch.x, batch.offset)
    return float(np.mean((g - batch.label) ** 2))


def _mare(model: PredictorModel, batch: TrainingBatch) -> float:
    g = model.predict_rows(batch.theta, batch.x, batch.offset)
    mf = batch.label.mean()
    return abs(g.mean() - mf) / abs(mf) if abs(mf) > 1e-12 else float("nan")


def _recalibrate_bn(net: TwoBranchNet, norm_theta, norm_x, batch: TrainingBatch, chunk: int = 8192) -> None:
    """Replace running BN statistics with exact inference-mode statistics on ``batch``.

    Running averages collected with dropout active are biased for inference;
    layers are recalibrated one at a time so each sees already-fixed inputs.
    """
    th = norm_theta.transform(batch.theta)
    xs = norm_x.transform(batch.x)
    for bn in net.batchnorms():
        bn.collect = [0, 0.0, 0.0]
        net.eval()
        for a in range(0, len(batch), chunk):
            net.forward(th[a : a + chunk], xs[a : a + chunk])
        n, s, ss = bn.collect
        bn.collect = None
        mean = s / n
        bn.mean[...] = mean
        bn.var[...] = np.maximum(ss / n - mean * mean, 0.0)


def train(task: Task, n_train_total: int, stream: RngStream, arch: Optional[ArchConfig] = None,
          optim: Optional[OptimConfig] = None, progress=None) -> PredictorModel:
    """Fit ``g`` by mini-batch squared loss on ``n_train_total`` simulated records."""
    arch = arch or ArchConfig()
    optim = optim or OptimConfig()
    if n_train_total < optim.batch_size:
        raise ValueError("n_train_total must be at least one batch")
    data_stream = stream.spawn("data")
    hold = generate_training_batch(task, optim.holdout, stream.spawn("holdout"), optim.pairs)
    first = generate_training_batch(task, min(optim.chunk, n_train_total), data_stream, optim.pairs)
    norm_theta = Normalizer.fit(first.theta)
    norm_x = Normalizer.fit(first.x)
    norm_y = _label_normalizer(first.label - first.offset)

    init_rng = np.random.default_rng([stream.master_seed, stream.stream_id, 1])
    net = TwoBranchNet(first.theta.shape[1], first.x.shape[1], asdict(arch), init_rng)
    model = PredictorModel(task, net, arch, norm_theta, norm_x, norm_y)
    mse_init = _mse(model, hold)
    opt = Adam(net, lr=optim.lr, weight_decay=optim.weight_decay)
    shuffle = np.random.default_rng([stream.master_seed, stream.stream_id, 2])

    if optim.epochs > 1:
        parts, have = [first], len(first)
        while have < n_train_total:
            parts.append(generate_training_batch(task, min(optim.chunk, n_train_total - have), data_stream, optim.pairs))
            have += len(parts[-1])
        pool = TrainingBatch.concat(parts)

        def rounds():
            for ep in range(optim.epochs):
                yield ep, pool
    else:
        def rounds():
            yield 0, first
            have = len(first)
            while have < n_train_total:
                b = generate_training_batch(task, min(optim.chunk, n_train_total - have), data_stream, optim.pairs)
                have += len(b)
                yield 0, b

    steps_total = optim.epochs * math.ceil(n_train_total / optim.batch_size)
    step = 0
    losses, epoch_losses = [], []
    best = (math.inf, None)
    stale = 0
    last_epoch = 0
    for ep, data in rounds():
        if ep != last_epoch:
            best, stale, stop = _epoch_end(model, hold, best, stale, optim, epoch_losses)
            last_epoch = ep
            if stop:
                break
        net.train()
        th = norm_theta.transform(data.theta)
        xs = norm_x.transform(data.x)
        yz = _zscore(norm_y, data.label - data.offset)
        order = shuffle.permutation(len(data))
        bs = optim.batch_size
        for a in range(0, len(order), bs):
            idx = order[a : a + bs]
            if idx.size < 2:
                continue
            pred = net.forward(th[idx], xs[idx])
            resid = pred - yz[idx]
            loss = float(np.mean(resid * resid))
            if not math.isfinite(loss):
                raise TrainingError(f"loss became {loss} at step {step} (lr={optim.lr}, batch={bs})")
            net.backward(2.0 * resid / idx.size)
            lr = optim.lr
            if optim.cosine:
                frac = min(step / max(steps_total - 1, 1), 1.0)
                lr = optim.lr * (0.05 + 0.95 * 0.5 * (1 + math.cos(math.pi * frac)))
            opt.step(lr)
            losses.append(loss)
            epoch_losses.append(loss)
            step += 1
        if progress is not None:
            progress(ep, step, float(np.mean(losses[-50:])))
    if optim.epochs > 1 and optim.early_stop:
        best, stale, _ = _epoch_end(model, hold, best, stale, optim, epoch_losses)
        if best[1] is not None:
            net.load_state(best[1])

    calib = pool if optim.epochs > 1 else first
    _recalibrate_bn(net, norm_theta, norm_x, calib.take(slice(0, min(len(calib), 50000))))
    net.eval()
    mse_final = _mse(model, hold)
    curve = [float(np.mean(losses[i : i + 100])) for i in range(0, len(losses), 100)]
    model.metadata = {
        "samples_seen": int(step * optim.batch_size if optim.epochs > 1 else n_train_total),
        "n_train": int(n_train_total),
        "steps": step,
        "seed": [int(stream.master_seed), int(stream.stream_id)],
        "optim": asdict(optim),
        "holdout_mse_init": mse_init,
        "holdout_mse": mse_final,
        "holdout_label_var": float(hold.label.var()),
        "holdout_mare": _mare(model, hold),
        "loss_curve": curve,
    }
    log.info("trained %s: %d steps, holdout mse %.4g -> %.4g", task.name, step, mse_init, mse_final)
    return model


def _epoch_end(model, hold, best, stale, optim, epoch_losses):
    epoch_losses.clear()
    if not optim.early_stop:
        return best, stale, False
    _recalibrate_bn(model.net, model.norm_theta, model.norm_x, hold)
    score = _mare(model, hold)
    if score < best[0]:
        return (score, {k: v.copy() for k, v in model.net.state().items()}), 0, False
    stale += 1
    return best, stale, stale >= optim.early_stop


def fit_arrays(theta: np.ndarray, x: np.ndarray, y: np.ndarray, task: Task, stream: RngStream,
               arch: Optional[ArchConfig] = None, optim: Optional[OptimConfig] = None,
               offsets: Optional[np.ndarray] = None) -> PredictorModel:
    """Train on fixed arrays instead of simulated records (each epoch reshuffles them)."""
    arch = arch or ArchConfig()
    optim = optim or OptimConfig(epochs=20)
    data = TrainingBatch(np.atleast_2d(theta).astype(float), np.asarray(x, float).reshape(len(y), -1),
                         np.asarray(y, float), np.zeros(len(y)) if offsets is None else np.asarray(offsets, float))

    class _Fixed(Task):
        pass

    norm_theta, norm_x = Normalizer.fit(data.theta), Normalizer.fit(data.x)
    norm_y = _label_normalizer(data.label - data.offset)
    init_rng = np.random.default_rng([stream.master_seed, stream.stream_id, 1])
    net = TwoBranchNet(data.theta.shape[1], data.x.shape[1], asdict(arch), init_rng)
    model = PredictorModel(task, net, arch, norm_theta, norm_x, norm_y)
    opt = Adam(net, lr=optim.lr, weight_decay=optim.weight_decay)
    shuffle = np.random.default_rng([stream.master_seed, stream.stream_id, 2])
    th, xs, yz = norm_theta.transform(data.theta), norm_x.transform(data.x), _zscore(norm_y, data.label - data.offset)
    for _ in range(optim.epochs):
        net.train()
        order = shuffle.permutation(len(data))
        for a in range(0, len(order), optim.batch_size):
            idx = order[a : a + optim.batch_size]
            if idx.size < 2:
                continue
            resid = net.forward(th[idx], xs[idx]) - yz[idx]
            if not np.all(np.isfinite(resid)):
                raise TrainingError("loss became non-finite")
            net.backward(2.0 * resid / idx.size)
            opt.step()
    _recalibrate_bn(net, norm_theta, norm_x, data)
    net.eval()
    return model


def mare_diagnostic(model: PredictorModel, eval_count: int, stream: RngStream, theta=None) -> float:
    """``|mean g(X) - mean f(Y)| / |mean f(Y)|`` over fresh coupled draws (at ``theta`` or across the space)."""
    if eval_count < 1:
        raise ValueError("eval_count must be >= 1")
    task = model.task
    if theta is not None:
        f, X = task.coupled(theta, eval_count, stream)
        g = model.predict(theta, X)
    else:
        batch = generate_training_batch(task, eval_count, stream)
        f = batch.label
        g = model.predict_rows(batch.theta, batch.x, batch.offset)
    mf = float(np.mean(f))
    if abs(mf) < 1e-12:
        raise DiagnosticError("mean payoff is ~0; relative error undefined")
    return abs(float(np.mean(g)) - mf) / abs(mf)


class ConstantPredictor:
    """``g = c`` everywhere; an adversarial but valid frozen predictor."""

    def __init__(self, value: float, task: Optional[Task] = None):
        self.value = float(value)
        self.task = task
        self.metadata = {"constant": self.value}

    def predict(self, theta, X):
        X = np.asarray(X)
        return np.full(X.shape[0] if X.ndim > 1 else 1, self.value)

    def covers(self, theta) -> bool:
        return True
