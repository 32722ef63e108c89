"""Parameter spaces Theta: per-coordinate uniform ranges, integer ranges, discrete sets or fixed values."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from .models.params import ConfigError, ModelKind, ParameterPoint
from .rng import RngStream


@dataclass(frozen=True)
class Coordinate:
    kind: str  # "fixed" | "uniform" | "int" | "choices"
    values: tuple

    @classmethod
    def parse(cls, name: str, spec: Any) -> "Coordinate":
        if isinstance(spec, (int, float)) and not isinstance(spec, bool):
            return cls("fixed", (float(spec),))
        if isinstance(spec, (list, tuple)):
            if len(spec) != 2:
                raise ConfigError(f"{name}: interval needs [lo, hi], got {spec!r}")
            lo, hi = sorted(float(v) for v in spec)
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ConfigError(f"{name}: interval bounds must be finite")
            return cls("fixed", (lo,)) if lo == hi else cls("uniform", (lo, hi))
        if isinstance(spec, Mapping) and "int" in spec:
            lo, hi = (int(v) for v in spec["int"])
            if lo > hi:
                raise ConfigError(f"{name}: empty integer range {lo}..{hi}")
            return cls("int", (lo, hi))
        if isinstance(spec, Mapping) and "choices" in spec:
            vals = tuple(float(v) for v in spec["choices"])
            if not vals:
                raise ConfigError(f"{name}: empty choice set")
            return cls("choices", vals)
        raise ConfigError(f"{name}: cannot parse range {spec!r}")

    def sample(self, stream: RngStream, size: int) -> np.ndarray:
        g = stream.generator
        if self.kind == "fixed":
            return np.full(size, self.values[0])
        if self.kind == "uniform":
            lo, hi = self.values
            return lo + (hi - lo) * g.random(size)
        if self.kind == "int":
            lo, hi = self.values
            return g.integers(lo, hi + 1, size).astype(float)
        return np.asarray(self.values)[g.integers(0, len(self.values), size)]

    def contains(self, x: float, tol: float = 1e-12) -> bool:
        if self.kind == "fixed":
            return abs(x - self.values[0]) <= tol * max(1.0, abs(x))
        if self.kind in ("uniform", "int"):
            lo, hi = self.values
            return lo - tol <= x <= hi + tol
        return any(abs(x - v) <= tol * max(1.0, abs(x)) for v in self.values)

    def to_json(self):
        if self.kind == "fixed":
            return self.values[0]
        if self.kind == "uniform":
            return list(self.values)
        if self.kind == "int":
            return {"int": list(self.values)}
        return {"choices": list(self.values)}


class ParameterSpaceSpec:
    """Product of independent coordinates; every model parameter must be covered."""

    def __init__(self, model_kind, ranges: Mapping[str, Any]):
        self.model_kind = ModelKind(model_kind)
        self.coords = {k: Coordinate.parse(k, v) for k, v in ranges.items()}
        missing = [k for k in ParameterPoint.keys(self.model_kind) if k not in self.coords]
        if missing:
            raise ConfigError(f"{self.model_kind.value} space lacks ranges for {missing}")

    @property
    def names(self) -> list[str]:
        return list(self.coords)

    def varying(self) -> list[str]:
        return [k for k, c in self.coords.items() if c.kind != "fixed"]

    def sample_params(self, stream: RngStream) -> dict[str, float]:
        return {k: float(v[0]) for k, v in self.sample_many(1, stream).items()}

    def sample_many(self, count: int, stream: RngStream) -> dict[str, np.ndarray]:
        return {k: c.sample(stream, count) for k, c in self.coords.items()}

    def contains(self, params: Mapping[str, float]) -> bool:
        return all(c.contains(float(params[k])) for k, c in self.coords.items() if k in params)

    def to_json(self) -> dict:
        return {"model_kind": self.model_kind.value, "ranges": {k: c.to_json() for k, c in self.coords.items()}}

    @classmethod
    def from_json(cls, data: Mapping) -> "ParameterSpaceSpec":
        return cls(data["model_kind"], data["ranges"])

    def __eq__(self, other):
        return isinstance(other, ParameterSpaceSpec) and self.to_json() == other.to_json()

    def __repr__(self):
        return f"ParameterSpaceSpec({self.to_json()!r})"
