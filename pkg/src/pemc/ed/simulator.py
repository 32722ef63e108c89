"""Weekly ED simulation, its 12 coupled features, and a direct sampler for their marginal law."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from ..rng import RateSchedule, RngStream, sample_categories, sample_nhpp
from .config import EdConfig
from .kernel import DEAD, DONE, IN_SERVICE, PREEMPTED, TRANSIT, WAITING, run_week
from .mortality import inverse_mortality

FEATURE_NAMES = (
    "hospital1_max_patience",
    "hospital2_max_patience",
    "total_patients",
    "total_service_time",
    "max_patience_time",
    "total_death_time",
    "non_life_threatening_count",
    "triage1_count",
    "triage2_count",
    "triage3_count",
    "triage4_count",
    "triage5_count",
)
_U_EPS = 1e-15
_MARGINAL_CHUNK = 8192  # draws per pass; bounds memory at ~4e6 patient marks


@dataclass
class Patients:
    """Exogenous per-patient primitives, sorted by arrival time."""

    arrive: np.ndarray
    home: np.ndarray  # 0 or 1
    ambulance: np.ndarray
    triage: np.ndarray  # 1..5
    death_time: np.ndarray  # may be inf
    service: np.ndarray

    def __len__(self):
        return self.arrive.size


def _marks(cfg: EdConfig, count: int, stream: RngStream):
    triage = sample_categories(cfg.triage_probs, count, stream) + 1
    amb = stream.uniform(count) < cfg.ambulance_fraction
    g = stream.generator
    B = g.uniform(cfg.B_range[0], cfg.B_range[1], count) if cfg.B_range[1] > cfg.B_range[0] else np.full(count, cfg.B_range[0])
    nu = g.uniform(cfg.nu_range[0], cfg.nu_range[1], count) if cfg.nu_range[1] > cfg.nu_range[0] else np.full(count, cfg.nu_range[0])
    u = np.clip(stream.uniform(count), _U_EPS, 1.0 - _U_EPS)
    death = inverse_mortality(u, triage, B, nu) if count else np.empty(0)
    rates = np.asarray(cfg.service_rates)[triage - 1]
    service = g.exponential(1.0, count) / rates
    return triage, amb, np.atleast_1d(death), service


def draw_patients(cfg: EdConfig, stream: RngStream) -> Patients:
    times, homes = [], []
    for h in range(2):
        t = sample_nhpp(RateSchedule(cfg.rates[h], 1.0), stream)
        times.append(t)
        homes.append(np.full(t.size, h, dtype=np.int64))
    arrive = np.concatenate(times)
    home = np.concatenate(homes)
    order = np.argsort(arrive, kind="stable")
    arrive, home = arrive[order], home[order]
    triage, amb, death, service = _marks(cfg, arrive.size, stream)
    return Patients(arrive, home, amb, triage.astype(np.int64), death, service)


def features_from_patients(p: Patients) -> np.ndarray:
    finite = np.isfinite(p.death_time)
    out = np.zeros(12)
    for h in range(2):
        sel = finite & (p.home == h)
        out[h] = p.death_time[sel].max() if sel.any() else 0.0
    out[2] = len(p)
    out[3] = p.service.sum()
    out[4] = max(out[0], out[1])
    out[5] = p.death_time[finite].sum()
    out[6] = (~finite).sum()
    out[7:12] = np.bincount(p.triage, minlength=6)[1:6]
    return out


@dataclass
class WeekResult:
    deaths: int
    features: np.ndarray
    summary: dict
    patients: Patients
    state: np.ndarray
    location: np.ndarray
    first_start: np.ndarray
    diverted: np.ndarray


def _summary(p: Patients, deaths, state, diverted, first_start, cost_ns) -> dict:
    started = int(np.isin(state, (IN_SERVICE, PREEMPTED, DONE)).sum())
    waits = first_start - p.arrive
    return {
        "arrivals": int(len(p)),
        "deaths": int(deaths),
        "started_service": started,
        "discharged": int((state == DONE).sum()),
        "died_waiting": int((state == DEAD).sum()),
        "waiting_at_horizon": int((state == WAITING).sum()),
        "in_transit_at_horizon": int((state == TRANSIT).sum()),
        "diverted": int(diverted.sum()),
        "mean_wait_served": float(np.nanmean(waits)) if started else 0.0,
        "cost_ns": int(cost_ns),
    }


def run_patients(cfg: EdConfig, p: Patients) -> tuple:
    tau = float(cfg.tau) if np.isfinite(cfg.tau) else np.inf
    return run_week(p.arrive, p.home, p.ambulance, p.triage, p.death_time, p.service, tau, float(cfg.travel),
                    cfg.capacity(), float(cfg.shift_hours), float(cfg.horizon))


def simulate_week(cfg: EdConfig, stream: RngStream) -> WeekResult:
    """One week: total deaths, the coupled feature vector and a trace summary."""
    t0 = time.perf_counter_ns()
    p = draw_patients(cfg, stream)
    deaths, state, loc, first_start, diverted = run_patients(cfg, p)
    feats = features_from_patients(p)
    summary = _summary(p, deaths, state, diverted, first_start, time.perf_counter_ns() - t0)
    return WeekResult(int(deaths), feats, summary, p, state, loc, first_start, diverted)


def simulate_weeks(cfg: EdConfig, count: int, stream: RngStream):
    """``count`` independent weeks; returns ``(deaths, features)`` arrays."""
    deaths = np.empty(count)
    feats = np.empty((count, 12))
    for k in range(count):
        p = draw_patients(cfg, stream)
        deaths[k] = run_patients(cfg, p)[0]
        feats[k] = features_from_patients(p)
    return deaths, feats


def sample_ed_feature_marginal(cfg: EdConfig, count: int, stream: RngStream) -> np.ndarray:
    """Draw the 12 features directly: Poisson counts per hospital, then i.i.d. patient marks.

    Identical in law to the features of :func:`simulate_week` (the features
    never depend on arrival times or on the queue) but skips the event loop.
    """
    if count > _MARGINAL_CHUNK:
        parts = [sample_ed_feature_marginal(cfg, min(_MARGINAL_CHUNK, count - a), stream)
                 for a in range(0, count, _MARGINAL_CHUNK)]
        return np.concatenate(parts)
    lam = cfg.rates.sum(axis=1)
    counts = stream.generator.poisson(lam, size=(count, 2))
    total = int(counts.sum())
    triage, _amb, death, service = _marks(cfg, total, stream)
    owner = np.repeat(np.arange(count * 2), counts.ravel())  # draw*2 + hospital
    draw = owner // 2
    finite = np.isfinite(death)
    out = np.zeros((count, 12))
    dfin = np.where(finite, death, 0.0)
    hmax = np.zeros(count * 2)
    np.maximum.at(hmax, owner[finite], dfin[finite])
    out[:, 0:2] = hmax.reshape(count, 2)
    out[:, 2] = counts.sum(axis=1)
    out[:, 3] = np.bincount(draw, weights=service, minlength=count)
    out[:, 4] = out[:, 0:2].max(axis=1)
    out[:, 5] = np.bincount(draw, weights=dfin, minlength=count)
    out[:, 6] = np.bincount(draw, weights=(~finite).astype(float), minlength=count)
    tri = np.zeros((count, 6))
    np.add.at(tri, (draw, triage), 1.0)
    out[:, 7:12] = tri[:, 1:6]
    return out


def write_traces(path, summaries) -> None:
    """Per-run trace summaries as JSON lines."""
    with open(path, "w") as fh:
        for s in summaries:
            fh.write(json.dumps(s, sort_keys=True) + "\n")


def read_traces(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
