"""Parameter points, grids and coupled samples shared by all simulators."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional

import numpy as np


class ModelKind(str, Enum):
    GBM = "GBM"
    HESTON = "Heston"
    SLV = "SLV"
    HJM = "HJM"
    ED = "ED"


# Parameter names per model, split into (model, simulation, payoff) groups.
SCHEMA: dict[ModelKind, tuple[tuple[str, ...], tuple[str, ...], tuple[str, ...]]] = {
    ModelKind.GBM: (("r", "sigma"), ("S0", "dt", "T"), ("K", "n_D")),
    ModelKind.HESTON: (("r", "eta", "delta", "rho", "kappa"), ("S0", "v0", "dt", "T"), ("K", "n_D")),
    ModelKind.SLV: (("r", "delta", "kappa", "rho", "xi"), ("S0", "dt", "T"), ("K", "n_D")),
    ModelKind.HJM: (
        ("sigma0", "alpha_sigma", "f0", "c_f", "alpha_f", "grid_noise"),
        ("dt", "T_final"),
        ("C", "t0_swap", "dt_swap", "n_p"),
    ),
    ModelKind.ED: (
        ("tau", "shift_1", "shift_2", "shift_3", "shift_4", "shift_5", "shift_6", "crisis"),
        (),
        (),
    ),
}

_NONNEGATIVE = {"sigma", "eta", "delta", "kappa", "v0", "xi", "sigma0", "grid_noise"}


class ConfigError(ValueError):
    """Raised when a parameter point or simulation request is inconsistent."""


def _steps(T: float, dt: float) -> int:
    steps = T / dt
    k = int(round(steps))
    if k < 1 or abs(steps - k) > 1e-9 * max(1.0, steps):
        raise ConfigError(f"T/dt must be a positive integer, got {steps}")
    return k


@dataclass(frozen=True)
class VolSurfaceGrid:
    """Local volatility ``sigma(s, t)`` on a spot-by-time grid (values are vols, not variances)."""

    spot_axis: np.ndarray
    time_axis: np.ndarray
    values: np.ndarray  # shape (len(spot_axis), len(time_axis))
    noise: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.spot_axis, dtype=float)
        t = np.asarray(self.time_axis, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if s.ndim != 1 or t.ndim != 1 or s.size < 2 or t.size < 2:
            raise ConfigError("surface axes need at least two nodes each")
        if np.any(np.diff(s) <= 0) or np.any(np.diff(t) <= 0):
            raise ConfigError("surface axes must be strictly increasing")
        if v.shape != (s.size, t.size):
            raise ConfigError(f"surface values shape {v.shape} does not match axes")
        if np.any(~np.isfinite(v)) or np.any(v <= 0):
            raise ConfigError("surface values must be finite and positive")
        object.__setattr__(self, "spot_axis", s)
        object.__setattr__(self, "time_axis", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_csv(cls, path) -> "VolSurfaceGrid":
        time_axis, spot_axis, values = read_grid_csv(path)
        return cls(spot_axis, time_axis, values)

    def to_csv(self, path) -> None:
        write_grid_csv(path, self.time_axis, self.spot_axis, self.values)


@dataclass(frozen=True)
class HjmGrids:
    """Vol structure and initial forward curve on one shared uniform grid.

    ``vol[i, j]`` is ``sigma(t_i, t_j)`` for simulation row ``i`` and maturity
    ``j >= i``; entries below the diagonal are ignored. Only the rows the
    simulation actually visits are stored, so ``vol`` may have fewer rows than
    the grid has nodes.
    """

    grid: np.ndarray
    vol: np.ndarray
    forward: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        vol = np.asarray(self.vol, dtype=float)
        fwd = np.asarray(self.forward, dtype=float)
        if g.ndim != 1 or g.size < 2 or np.any(np.diff(g) <= 0):
            raise ConfigError("HJM grid must be strictly increasing with >= 2 nodes")
        if fwd.shape != g.shape:
            raise ConfigError("forward curve must live on the grid")
        if vol.ndim != 2 or vol.shape[1] != g.size or vol.shape[0] > g.size:
            raise ConfigError(f"vol matrix shape {vol.shape} incompatible with grid of {g.size}")
        upper = np.triu(np.ones(vol.shape, dtype=bool))
        if np.any(vol[upper] < 0) or not np.all(np.isfinite(vol[upper])):
            raise ConfigError("HJM vols must be finite and nonnegative")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "vol", vol)
        object.__setattr__(self, "forward", fwd)

    @property
    def spacing(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @property
    def rows(self) -> int:
        return self.vol.shape[0]

    @classmethod
    def from_csv(cls, vol_path, forward_path) -> "HjmGrids":
        maturities, _times, vol = read_grid_csv(vol_path)
        with open(forward_path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
        fwd = np.array([float(r[1]) for r in rows[1:]])
        return cls(maturities, vol, fwd)

    def to_csv(self, vol_path, forward_path) -> None:
        # header = maturities, first column = simulation times
        write_grid_csv(vol_path, self.grid, self.grid[: self.rows], self.vol)
        with open(forward_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["maturity", "forward"])
            for t, f in zip(self.grid, self.forward):
                w.writerow([repr(float(t)), repr(float(f))])


def read_grid_csv(path):
    """Read ``header = column axis``, ``first column = row axis``, body = values."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    header = np.array([float(x) for x in rows[0][1:]])
    row_axis = np.array([float(r[0]) for r in rows[1:]])
    body = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    return header, row_axis, body


def write_grid_csv(path, col_axis, row_axis, values) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([""] + [repr(float(x)) for x in col_axis])
        for a, row in zip(row_axis, values):
            w.writerow([repr(float(a))] + [repr(float(x)) for x in row])


@dataclass(frozen=True)
class ParameterPoint:
    """One evaluation point theta: model, simulation and payoff parameters plus grids."""

    model_kind: ModelKind
    params: Mapping[str, float]
    surface: Optional[VolSurfaceGrid] = None
    hjm: Optional[HjmGrids] = None

    def __post_init__(self):
        kind = ModelKind(self.model_kind)
        object.__setattr__(self, "model_kind", kind)
        params = {k: float(v) for k, v in dict(self.params).items()}
        object.__setattr__(self, "params", params)
        missing = [k for k in self.keys(kind) if k not in params]
        if missing:
            raise ConfigError(f"{kind.value} parameter point is missing {missing}")
        for k in _NONNEGATIVE & params.keys():
            if params[k] < 0:
                raise ConfigError(f"{k} must be nonnegative, got {params[k]}")
        if "dt" in params and "T" in params:
            _steps(params["T"], params["dt"])
        if kind is ModelKind.HESTON and not -1 <= params["rho"] <= 1:
            raise ConfigError("rho must lie in [-1, 1]")
        if kind is ModelKind.SLV and self.surface is None:
            raise ConfigError("SLV parameter point needs a volatility surface")
        if kind is ModelKind.HJM and self.hjm is None:
            raise ConfigError("HJM parameter point needs grids")

    @staticmethod
    def keys(kind: ModelKind) -> tuple[str, ...]:
        m, s, p = SCHEMA[ModelKind(kind)]
        return m + s + p

    def __getitem__(self, key: str) -> float:
        return self.params[key]

    def get(self, key: str, default=None):
        return self.params.get(key, default)

    @property
    def steps(self) -> int:
        return _steps(self.params["T"], self.params["dt"])

    def replace(self, **updates) -> "ParameterPoint":
        params = dict(self.params)
        params.update(updates)
        return ParameterPoint(self.model_kind, params, self.surface, self.hjm)

    def grouped(self) -> dict[str, dict[str, float]]:
        m, s, p = SCHEMA[self.model_kind]
        return {
            "model": {k: self.params[k] for k in m},
            "simulation": {k: self.params[k] for k in s},
            "payoff": {k: self.params[k] for k in p},
        }

    def canonical(self) -> dict:
        """JSON-able description used for hashing and reports."""
        out: dict = {"model_kind": self.model_kind.value, "params": dict(sorted(self.params.items()))}
        if self.surface is not None:
            out["surface"] = {
                "spot_axis": self.surface.spot_axis.tolist(),
                "time_axis": self.surface.time_axis.tolist(),
                "values": self.surface.values.tolist(),
            }
        if self.hjm is not None:
            out["hjm"] = {
                "grid": self.hjm.grid.tolist(),
                "vol": self.hjm.vol.tolist(),
                "forward": self.hjm.forward.tolist(),
            }
        return out


@dataclass
class CoupledSample:
    """A batch of coupled paths ``Y`` and the features ``X = phi(Y)`` recorded alongside."""

    paths: np.ndarray
    features: np.ndarray
    times: np.ndarray
    variance: Optional[np.ndarray] = None
    increments: Optional[np.ndarray] = None  # driving increments (n, steps[, 2])
    curve: Optional[np.ndarray] = None  # HJM forward curve at the exercise date
    cost_ns: int = 0
    steps: int = 0
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.features.shape[0]
