"""Compiled event loop for one simulated week of the two-hospital system.

Patient states: 0 not yet arrived, 1 in transit after diversion, 2 waiting
(never served), 3 in service, 4 waiting after preemption, 5 discharged, 6 dead.
Next events are found by linear scans over the active patients, which is
cheaper than a heap at a few hundred patients per week.
"""

from __future__ import annotations

import numpy as np
from numba import njit

NOT_ARRIVED, TRANSIT, WAITING, IN_SERVICE, PREEMPTED, DONE, DEAD = range(7)


@njit(cache=True)
def _start(j, t, state, seg_start, first_start):
    if state[j] == WAITING:
        first_start[j] = t
    state[j] = IN_SERVICE
    seg_start[j] = t


@njit(cache=True)
def _dispatch(h, t, lo, hi, loc, state, triage, arrive, seg_start, first_start, busy, qlen, cap_now):
    while busy[h] < cap_now[h] and qlen[h] > 0:
        best = -1
        for j in range(lo, hi):
            s = state[j]
            if loc[j] == h and (s == WAITING or s == PREEMPTED):
                if best < 0 or triage[j] < triage[best] or (triage[j] == triage[best] and arrive[j] < arrive[best]):
                    best = j
        if best < 0:
            break
        _start(best, t, state, seg_start, first_start)
        busy[h] += 1
        qlen[h] -= 1


@njit(cache=True)
def _worst_in_service(h, lo, hi, loc, state, triage, arrive):
    worst = -1
    for j in range(lo, hi):
        if loc[j] == h and state[j] == IN_SERVICE:
            if worst < 0 or triage[j] > triage[worst] or (triage[j] == triage[worst] and arrive[j] > arrive[worst]):
                worst = j
    return worst


@njit(cache=True)
def _preempt(j, t, state, remaining, seg_start, busy, qlen, h):
    remaining[j] -= t - seg_start[j]
    if remaining[j] < 0.0:
        remaining[j] = 0.0
    state[j] = PREEMPTED
    busy[h] -= 1
    qlen[h] += 1


@njit(cache=True)
def run_week(arrive, home, amb, triage, death, service, tau, travel, cap, shift_len, horizon):
    """Simulate one horizon; returns ``(deaths, state, loc, first_start, diverted)``.

    ``arrive`` must be sorted. A patient dies once the time since arrival
    exceeds its death time before service first starts; travel after a
    diversion counts toward that wait.
    """
    n = arrive.size
    inf = np.inf
    state = np.zeros(n, np.int64)
    loc = home.copy()
    enter = arrive.copy()
    remaining = service.copy()
    seg_start = np.full(n, np.nan)
    first_start = np.full(n, np.nan)
    diverted = np.zeros(n, np.bool_)
    busy = np.zeros(2, np.int64)
    qlen = np.zeros(2, np.int64)
    cap_now = cap[:, 0].copy()
    n_shifts = cap.shape[1]
    transit = np.empty(n, np.int64)
    t_head = 0
    t_tail = 0
    ptr = 0
    lo = 0
    shift_k = 0
    deaths = 0

    while True:
        while lo < ptr and (state[lo] == DONE or state[lo] == DEAD):
            lo += 1
        t_arr = arrive[ptr] if ptr < n else inf
        while t_head < t_tail and state[transit[t_head]] != TRANSIT:
            t_head += 1
        t_tr = enter[transit[t_head]] if t_head < t_tail else inf
        t_shift = (shift_k + 1) * shift_len if shift_k + 1 < n_shifts else inf
        t_done = inf
        i_done = -1
        t_die = inf
        i_die = -1
        for i in range(lo, ptr):
            s = state[i]
            if s == IN_SERVICE:
                tc = seg_start[i] + remaining[i]
                if tc < t_done:
                    t_done = tc
                    i_done = i
            elif s == TRANSIT or s == WAITING:
                td = arrive[i] + death[i]
                if td < t_die:
                    t_die = td
                    i_die = i
        t = min(min(t_arr, t_tr), min(t_shift, min(t_done, t_die)))
        if t >= horizon:
            break

        if t_done == t:
            h = loc[i_done]
            state[i_done] = DONE
            remaining[i_done] = 0.0
            busy[h] -= 1
            _dispatch(h, t, lo, ptr, loc, state, triage, arrive, seg_start, first_start, busy, qlen, cap_now)
        elif t_shift == t:
            shift_k += 1
            for h in range(2):
                cap_now[h] = cap[h, shift_k]
                while busy[h] > cap_now[h]:
                    j = _worst_in_service(h, lo, ptr, loc, state, triage, arrive)
                    _preempt(j, t, state, remaining, seg_start, busy, qlen, h)
                _dispatch(h, t, lo, ptr, loc, state, triage, arrive, seg_start, first_start, busy, qlen, cap_now)
        elif t_tr == t or t_arr == t:
            if t_tr == t:
                i = transit[t_head]
                t_head += 1
                h = loc[i]
            else:
                i = ptr
                ptr += 1
                h = home[i]
                # no diversion when the other hospital is over the threshold too
                if amb[i] and qlen[h] > tau and qlen[1 - h] <= tau:
                    diverted[i] = True
                    loc[i] = 1 - h
                    enter[i] = t + travel
                    state[i] = TRANSIT
                    transit[t_tail] = i
                    t_tail += 1
                    continue
            state[i] = WAITING
            qlen[h] += 1
            if busy[h] >= cap_now[h]:
                j = _worst_in_service(h, lo, ptr, loc, state, triage, arrive)
                if j >= 0 and triage[j] > triage[i]:
                    _preempt(j, t, state, remaining, seg_start, busy, qlen, h)
            _dispatch(h, t, lo, ptr, loc, state, triage, arrive, seg_start, first_start, busy, qlen, cap_now)
        else:
            if state[i_die] == WAITING:
                qlen[loc[i_die]] -= 1
            state[i_die] = DEAD
            deaths += 1

    return deaths, state, loc, first_start, diverted
