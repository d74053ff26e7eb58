"""Streaming δ-record counter.

An observation ``x`` is a δ-record when ``x > M + δ``, where ``M`` is the
maximum of the earlier observations (``-1`` before the first one). The
counter tracks the count ``N``, the maximum, the compensator ``θ(M)`` and
the accumulated conditional variance ``V = Σ_k z_{M_{k-1}}``.

Two simulation routes are provided. ``direct`` draws every observation.
``jump`` only draws the observations that can change the state: with
threshold ``T = M + min(δ, 0)`` the number of steps until the next
observation above ``T`` is geometric with success probability ``y_T``, and
that observation has the law of ``X`` given ``X > T``. Everything else
leaves ``M`` and ``N`` unchanged and adds ``z_M`` to ``V``, so both routes
produce the same joint law of the state at any fixed time.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from deltarec.distributions import DiscreteModel
from deltarec.hazard import HazardTable
from deltarec.rng import RngState

DIRECT_CHUNK = 1 << 16


class CounterDepthError(ValueError):
    """An observation or maximum fell beyond the hazard-table depth."""


@dataclass(frozen=True)
class CounterState:
    n: int
    M: int
    N: int
    theta_M: float
    V: float
    delta: int


@dataclass(frozen=True)
class StepOutcome:
    I: int  # noqa: E741
    xi: float


def new_counter(table: HazardTable | None = None, *, delta: int | None = None) -> CounterState:
    """Empty counter. Without a table, ``θ(M)`` and ``V`` are not tracked (NaN)."""
    if table is None:
        if delta is None:
            raise ValueError("delta is required when no hazard table is given")
        return CounterState(n=0, M=-1, N=0, theta_M=math.nan, V=math.nan, delta=int(delta))
    if delta is not None and delta != table.delta:
        raise ValueError("delta does not match the hazard table")
    return CounterState(n=0, M=-1, N=0, theta_M=0.0, V=0.0, delta=table.delta)


def _theta(table: HazardTable, k: int) -> float:
    if k > table.depth:
        raise CounterDepthError(f"maximum {k} beyond hazard-table depth {table.depth}")
    return table.theta_at(k)


def _z(table: HazardTable, m: int) -> float:
    if m > table.depth:
        raise CounterDepthError(f"maximum {m} beyond hazard-table depth {table.depth}")
    return float(table.z[m + 1])


def step(
    state: CounterState, x: int, table: HazardTable | None = None
) -> tuple[CounterState, StepOutcome]:
    """Feed one observation ``x >= 0``.

    ``V`` grows by ``z`` at the maximum *before* ``x`` is seen, and
    ``xi = I - (θ(M_new) - θ(M_old))``.
    """
    if x < 0:
        raise ValueError("observations must be non-negative")
    is_record = int(x > state.M + state.delta)
    new_m = max(state.M, int(x))
    if table is None:
        theta_new, v_new, xi = math.nan, math.nan, math.nan
    else:
        theta_new = _theta(table, new_m)
        v_new = state.V + _z(table, state.M)
        xi = is_record - (theta_new - state.theta_M)
    new_state = replace(
        state, n=state.n + 1, M=new_m, N=state.N + is_record, theta_M=theta_new, V=v_new
    )
    return new_state, StepOutcome(I=is_record, xi=xi)


def martingale_residual(state: CounterState) -> float:
    """``N - θ(M)``."""
    return state.N - state.theta_M


def _check_checkpoints(n: int, checkpoints: Sequence[int]) -> list[int]:
    cps = [int(c) for c in checkpoints]
    if any(b <= a for a, b in zip(cps, cps[1:])):
        raise ValueError("checkpoints must be strictly increasing")
    if cps and (cps[0] < 1 or cps[-1] > n):
        raise ValueError("checkpoints must lie in [1, n]")
    return cps


def _geometric_wait(y: float, u: float) -> float:
    """Steps until the first success, success probability ``y`` (as float, may be huge)."""
    if y >= 1.0:
        return 1.0
    return math.floor(math.log(u) / math.log1p(-y)) + 1.0


def jump_path(
    model: DiscreteModel,
    delta: int,
    checkpoints: Sequence[int],
    rng: RngState,
    table: HazardTable | None = None,
) -> list[CounterState]:
    """States at each checkpoint, simulated event by event."""
    if table is not None and table.delta != delta:
        raise ValueError("delta does not match the hazard table")
    sampler = model.sampler
    cps = list(checkpoints)
    out: list[CounterState] = []
    if not cps:
        return out
    n_max = cps[-1]
    shift = min(delta, 0)
    n, M, N = 0, -1, 0
    theta_m = 0.0 if table is not None else math.nan
    V = 0.0 if table is not None else math.nan
    z_m = _z(table, M) if table is not None else math.nan
    ci = 0
    while True:
        threshold = M + shift
        wait = _geometric_wait(sampler.survival(threshold), rng.uniform())
        t_event = n + wait
        while ci < len(cps) and cps[ci] < t_event:
            c = cps[ci]
            out.append(CounterState(c, M, N, theta_m, V + (c - n) * z_m, delta))
            ci += 1
        if ci == len(cps) or t_event > n_max:
            break
        x = sampler.draw_above(threshold, rng.uniform())
        V += wait * z_m
        n = int(t_event)
        if x > M + delta:
            N += 1
        if x > M:
            M = x
            if table is not None:
                theta_m = _theta(table, M)
                z_m = _z(table, M)
    return out


def direct_path(
    model: DiscreteModel,
    delta: int,
    checkpoints: Sequence[int],
    rng: RngState,
    table: HazardTable | None = None,
) -> list[CounterState]:
    """States at each checkpoint, drawing every observation (vectorised in chunks)."""
    sampler = model.sampler
    cps = list(checkpoints)
    out: list[CounterState] = []
    if not cps:
        return out
    n_max = cps[-1]
    n, M, N = 0, -1, 0
    V = 0.0 if table is not None else math.nan
    ci = 0
    while n < n_max:
        size = min(DIRECT_CHUNK, n_max - n)
        x = sampler.draw_many(rng.uniforms(size))
        run_max = np.maximum.accumulate(np.maximum(x, M))
        prev_max = np.concatenate(([M], run_max[:-1]))
        records = np.cumsum(x > prev_max + delta)
        if table is not None:
            if run_max[-1] > table.depth:
                raise CounterDepthError(
                    f"maximum {int(run_max[-1])} beyond hazard-table depth {table.depth}"
                )
            v_run = V + np.cumsum(table.z[prev_max + 1])
        while ci < len(cps) and cps[ci] <= n + size:
            j = cps[ci] - n - 1
            m_j = int(run_max[j])
            th = table.theta_at(m_j) if table is not None else math.nan
            v_j = float(v_run[j]) if table is not None else math.nan
            out.append(CounterState(cps[ci], m_j, N + int(records[j]), th, v_j, delta))
            ci += 1
        M = int(run_max[-1])
        N += int(records[-1])
        if table is not None:
            V = float(v_run[-1])
        n += size
    return out


def run_stream(
    table: HazardTable | None,
    model: DiscreteModel,
    n: int,
    rng: RngState,
    checkpoints: Sequence[int],
    *,
    delta: int | None = None,
    method: str = "jump",
) -> list[CounterState]:
    """Simulate ``n`` i.i.d. draws and return the state at each checkpoint.

    Args:
        table: hazard table, or ``None`` to skip ``θ``/``V`` tracking
            (then ``delta`` must be given).
        model: observation law.
        n: stream length.
        rng: the stream's own generator.
        checkpoints: strictly increasing times in ``[1, n]``.
        method: ``"jump"`` (event-driven) or ``"direct"`` (every draw).
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if table is None and delta is None:
        raise ValueError("delta is required when no hazard table is given")
    d = table.delta if table is not None else int(delta)
    cps = _check_checkpoints(n, checkpoints)
    if method == "jump":
        return jump_path(model, d, cps, rng, table)
    if method == "direct":
        return direct_path(model, d, cps, rng, table)
    raise ValueError(f"unknown method {method!r}")


def write_trajectory(path: str | Path, states: Sequence[CounterState]) -> None:
    """CSV with columns n, M, N, residual, V."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "M", "N", "residual", "V"])
        for s in states:
            writer.writerow([s.n, s.M, s.N, repr(martingale_residual(s)), repr(s.V)])
