"""Small numpy neural-network toolkit: layers with explicit backward passes and Adam.

Only what the predictor needs. Arrays are float64 throughout so a saved model
reproduces predictions bit-for-bit after reload.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np


class Module:
    training = True

    def params(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(())

    def grads(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(())

    def buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(())

    def children(self) -> Iterator["Module"]:
        return iter(())

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for c in self.children():
            c.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str):
        bound = 1.0 / math.sqrt(max(n_in, 1))
        self.name = name
        self.W = rng.uniform(-bound, bound, (n_in, n_out))
        self.b = rng.uniform(-bound, bound, n_out)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._x = None

    def forward(self, x):
        self._x = x if self.training else None
        return x @ self.W + self.b

    def backward(self, dy):
        self.dW[...] = self._x.T @ dy
        self.db[...] = dy.sum(axis=0)
        return dy @ self.W.T

    def params(self):
        yield f"{self.name}.W", self.W
        yield f"{self.name}.b", self.b

    def grads(self):
        yield f"{self.name}.W", self.dW
        yield f"{self.name}.b", self.db


class BatchNorm(Module):
    """Batch normalisation over the batch axis with running statistics for inference."""

    def __init__(self, width: int, name: str, momentum: float = 0.1, eps: float = 1e-5):
        self.name = name
        self.gamma = np.ones(width)
        self.beta = np.zeros(width)
        self.dgamma = np.zeros(width)
        self.dbeta = np.zeros(width)
        self.mean = np.zeros(width)
        self.var = np.ones(width)
        self.momentum = momentum
        self.eps = eps
        self.collect = None  # (count, sum, sumsq) while recalibrating
        self._cache = None

    def forward(self, x):
        if self.collect is not None:
            c = self.collect
            c[0] += x.shape[0]
            c[1] += x.sum(axis=0)
            c[2] += (x * x).sum(axis=0)
        if not self.training or x.shape[0] < 2:
            return (x - self.mean) / np.sqrt(self.var + self.eps) * self.gamma + self.beta
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        m = self.momentum
        self.mean = (1 - m) * self.mean + m * mu
        self.var = (1 - m) * self.var + m * var * x.shape[0] / (x.shape[0] - 1)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        self._cache = (xhat, inv)
        return xhat * self.gamma + self.beta

    def backward(self, dy):
        xhat, inv = self._cache
        n = dy.shape[0]
        self.dgamma[...] = (dy * xhat).sum(axis=0)
        self.dbeta[...] = dy.sum(axis=0)
        dxhat = dy * self.gamma
        return inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))

    def params(self):
        yield f"{self.name}.gamma", self.gamma
        yield f"{self.name}.beta", self.beta

    def grads(self):
        yield f"{self.name}.gamma", self.dgamma
        yield f"{self.name}.beta", self.dbeta

    def buffers(self):
        yield f"{self.name}.mean", self.mean
        yield f"{self.name}.var", self.var


class ReLU(Module):
    def forward(self, x):
        mask = x > 0
        # keep nothing on the module in inference, so shared models are safe across threads
        self._mask = mask if self.training else None
        return np.where(mask, x, 0.0)

    def backward(self, dy):
        return dy * self._mask


class Dropout(Module):
    def __init__(self, p: float, rng: np.random.Generator):
        if not 0 <= p < 1:
            raise ValueError(f"dropout rate must be in [0, 1), got {p}")
        self.p = p
        self.rng = rng
        self._mask = None

    def forward(self, x):
        if not self.training or self.p == 0:
            self._mask = None
            return x
        self._mask = (self.rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * self._mask

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def children(self):
        return iter(self.layers)

    def params(self):
        for c in self.layers:
            yield from c.params()

    def grads(self):
        for c in self.layers:
            yield from c.grads()

    def buffers(self):
        for c in self.layers:
            yield from c.buffers()


class Residual(Module):
    """``relu(x + inner(x))``."""

    def __init__(self, inner: Module):
        self.inner = inner
        self.act = ReLU()

    def forward(self, x):
        return self.act.forward(x + self.inner.forward(x))

    def backward(self, dy):
        d = self.act.backward(dy)
        return d + self.inner.backward(d)

    def children(self):
        yield self.inner
        yield self.act

    def params(self):
        return self.inner.params()

    def grads(self):
        return self.inner.grads()

    def buffers(self):
        return self.inner.buffers()


def mlp_block(n_in: int, hidden: int, n_out: int, dropout: float, rng: np.random.Generator, name: str) -> Sequential:
    """Linear-BN-ReLU-Dropout-Linear-BN-ReLU."""
    return Sequential(
        Linear(n_in, hidden, rng, f"{name}.0"),
        BatchNorm(hidden, f"{name}.bn0"),
        ReLU(),
        Dropout(dropout, rng),
        Linear(hidden, n_out, rng, f"{name}.1"),
        BatchNorm(n_out, f"{name}.bn1"),
        ReLU(),
    )


class TwoBranchNet(Module):
    """theta-branch and X-branch embeddings, concatenated, one residual block, linear output."""

    def __init__(self, theta_dim: int, x_dim: int, arch: dict, rng: np.random.Generator):
        th_h, th_e = arch["theta_hidden"], arch["theta_embed"]
        x_h = arch.get("x_hidden") or max(32, 2 * x_dim)
        head = arch["head_hidden"]
        p = arch["dropout"]
        self.theta_dim, self.x_dim = theta_dim, x_dim
        self.theta_branch = mlp_block(theta_dim, th_h, th_e, p, rng, "theta")
        self.x_branch = mlp_block(x_dim, x_h, x_h, p, rng, "x")
        width = th_e + x_h
        self.split = th_e
        self.head = Residual(
            Sequential(
                Linear(width, head, rng, "head.0"),
                BatchNorm(head, "head.bn0"),
                ReLU(),
                Dropout(p, rng),
                Linear(head, width, rng, "head.1"),
            )
        )
        self.out = Linear(width, 1, rng, "out")

    def children(self):
        yield self.theta_branch
        yield self.x_branch
        yield self.head
        yield self.out

    def forward(self, th, x):
        z = np.concatenate([self.theta_branch.forward(th), self.x_branch.forward(x)], axis=1)
        return self.out.forward(self.head.forward(z))[:, 0]

    def backward(self, dy):
        dz = self.head.backward(self.out.backward(dy[:, None]))
        self.theta_branch.backward(dz[:, : self.split])
        self.x_branch.backward(dz[:, self.split :])

    def params(self):
        for c in self.children():
            yield from c.params()

    def grads(self):
        for c in self.children():
            yield from c.grads()

    def buffers(self):
        for c in self.children():
            yield from c.buffers()

    def batchnorms(self):
        def walk(m):
            if isinstance(m, BatchNorm):
                yield m
            for c in m.children():
                yield from walk(c)

        return list(walk(self))

    def state(self) -> dict[str, np.ndarray]:
        out = dict(self.params())
        out.update(self.buffers())
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        mine = self.state()
        missing = set(mine) - set(state)
        if missing:
            raise ValueError(f"model file lacks tensors {sorted(missing)}")
        for k, arr in mine.items():
            src = np.asarray(state[k], dtype=float)
            if src.shape != arr.shape:
                raise ValueError(f"tensor {k} has shape {src.shape}, expected {arr.shape}")
            arr[...] = src


class Adam:
    def __init__(self, net: Module, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = dict(net.params())
        self.gradients = dict(net.grads())
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.t = 0

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, p in self.params.items():
            g = self.gradients[k]
            if self.weight_decay:
                g = g + self.weight_decay * p
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
