"""Emergency-department scenario configuration and the default weekly arrival schedule."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from ..models.params import ConfigError, ModelKind, ParameterPoint

TRIAGE_PROBS = (0.1098, 0.2761, 0.4596, 0.1297, 0.0248)
# Per-hour service rates by triage level. Not calibrated to any data set.
SERVICE_RATES = (1.0, 0.8, 0.6, 0.8, 1.0)
HOSP1_SHIFTS = (2, 2, 3, 3, 3, 2)
EVAL_SHIFTS = (2, 2, 4, 2, 4, 1)
EVAL_CRISIS = 1.25
HORIZON = 168.0
SHIFT_HOURS = 4.0


def load_schedule(path=None) -> np.ndarray:
    """Hourly arrival rates, shape ``(2, 168)``: one row per hospital."""
    if path is None:
        text = resources.files("pemc.ed").joinpath("data/arrival_schedule.csv").read_text()
        rows = list(csv.reader(text.splitlines()))
    else:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    body = [r for r in rows[1:] if r]
    rates = np.array([[float(r[1]), float(r[2])] for r in body]).T
    if rates.shape[1] != int(HORIZON) or np.any(rates < 0) or not np.all(np.isfinite(rates)):
        raise ConfigError("arrival schedule needs 168 finite nonnegative hourly rates per hospital")
    return rates


def write_schedule(path, rates: np.ndarray) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["hour", "hospital_1", "hospital_2"])
        for h in range(rates.shape[1]):
            w.writerow([h, repr(float(rates[0, h])), repr(float(rates[1, h]))])


@dataclass(frozen=True)
class EdConfig:
    tau: float = 20  # diversion threshold on queue length; inf disables diversion
    hosp2_shifts: tuple = EVAL_SHIFTS
    crisis: float = EVAL_CRISIS
    hosp1_shifts: tuple = HOSP1_SHIFTS
    triage_probs: tuple = TRIAGE_PROBS
    service_rates: tuple = SERVICE_RATES
    B_range: tuple = (2.5, 3.5)
    nu_range: tuple = (1.5, 2.5)
    travel: float = 0.5
    ambulance_fraction: float = 0.25
    horizon: float = HORIZON
    shift_hours: float = SHIFT_HOURS
    schedule: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        tau = float(self.tau)
        if tau < 0 or (math.isfinite(tau) and tau != round(tau)):
            raise ConfigError(f"tau must be a nonnegative integer or inf, got {self.tau}")
        object.__setattr__(self, "tau", tau)
        for name in ("hosp1_shifts", "hosp2_shifts"):
            v = tuple(int(round(x)) for x in getattr(self, name))
            if any(x < 0 for x in v):
                raise ConfigError(f"{name} must be nonnegative")
            object.__setattr__(self, name, v)
        per_day = 24.0 / self.shift_hours
        if abs(per_day - round(per_day)) > 1e-9 or len(self.hosp2_shifts) != round(per_day):
            raise ConfigError("need one doctor count per shift of the day")
        if len(self.hosp1_shifts) != len(self.hosp2_shifts):
            raise ConfigError("both hospitals need the same shift layout")
        if min(self.hosp2_shifts) < 1:
            raise ConfigError("hospital 2 needs at least one doctor per shift")
        if not self.crisis >= 1:
            raise ConfigError("crisis factor must be >= 1")
        p = np.asarray(self.triage_probs, dtype=float)
        if p.size != 5 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ConfigError("triage probabilities must be 5 nonnegative values summing to 1")
        if len(self.service_rates) != 5 or min(self.service_rates) <= 0:
            raise ConfigError("need 5 positive service rates")
        if not 0 <= self.ambulance_fraction <= 1:
            raise ConfigError("ambulance fraction must lie in [0, 1]")
        if self.travel < 0:
            raise ConfigError("travel penalty must be nonnegative")
        if self.B_range[0] > self.B_range[1] or self.nu_range[0] > self.nu_range[1]:
            raise ConfigError("B and nu ranges must be ordered")
        sched = load_schedule() if self.schedule is None else np.asarray(self.schedule, dtype=float)
        if sched.shape != (2, int(round(self.horizon))):
            raise ConfigError(f"schedule shape {sched.shape} does not cover the horizon")
        if np.any(sched < 0):
            raise ConfigError("arrival rates must be nonnegative")
        object.__setattr__(self, "schedule", sched)

    @property
    def rates(self) -> np.ndarray:
        """Crisis-scaled hourly rates, ``(2, hours)``."""
        return self.schedule * self.crisis

    def capacity(self) -> np.ndarray:
        """Doctors on duty per hospital and shift over the horizon, ``(2, n_shifts)``."""
        n = int(round(self.horizon / self.shift_hours))
        per_day = len(self.hosp2_shifts)
        idx = np.arange(n) % per_day
        return np.stack([np.asarray(self.hosp1_shifts)[idx], np.asarray(self.hosp2_shifts)[idx]]).astype(np.int64)

    def replace(self, **kw) -> "EdConfig":
        return replace(self, **kw)

    @classmethod
    def from_theta(cls, theta: ParameterPoint, **base) -> "EdConfig":
        if theta.model_kind is not ModelKind.ED:
            raise ConfigError("expected an ED parameter point")
        shifts = tuple(theta[f"shift_{k}"] for k in range(1, 7))
        return cls(tau=theta["tau"], hosp2_shifts=shifts, crisis=theta["crisis"], **base)

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("schedule")
        d["tau"] = self.tau if math.isfinite(self.tau) else "inf"
        d["schedule"] = self.schedule.tolist()
        return d

    @classmethod
    def from_json(cls, data: dict) -> "EdConfig":
        d = dict(data)
        if "schedule_csv" in d:
            d["schedule"] = load_schedule(d.pop("schedule_csv"))
        elif d.get("schedule") is not None:
            d["schedule"] = np.asarray(d["schedule"], dtype=float)
        for k in ("hosp1_shifts", "hosp2_shifts", "triage_probs", "service_rates", "B_range", "nu_range"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)
