"""Replication engine and normality diagnostics for the normalized count.

Each replication ``i`` owns the stream ``RngState.for_replication(master_seed, i)``
and is reduced at every ``n`` in the grid. Results are written into an
indexed buffer and aggregated in replication order, so the report does not
depend on how replications were scheduled.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import special

from deltarec.counter import run_stream
from deltarec.distributions import DiscreteModel, model_from_dict
from deltarec.hazard import HazardTable, build_hazard
from deltarec.normalizers import NormalizerPlan, make_plan
from deltarec.rng import MASK64, RngState

HIST_EDGES = np.linspace(-5.0, 5.0, 41)
QQ_LEVELS = np.arange(1, 100) / 100.0


class ExperimentError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    model: DiscreteModel
    delta: int
    variant: str
    n_grid: tuple[int, ...]
    reps: int
    master_seed: int
    keep_raw: bool = False
    method: str = "jump"
    workers: int = 1
    dist: str | None = None  # textual model description, kept for round trips

    def __post_init__(self):
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        if self.reps < 30:
            raise ExperimentError("reps must be at least 30")
        if not self.n_grid or self.n_grid[0] < 1:
            raise ExperimentError("n_grid must be non-empty with positive entries")
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ExperimentError("n_grid must be strictly increasing")
        if not 0 <= self.master_seed <= MASK64:
            raise ExperimentError("master_seed must be an unsigned 64-bit integer")
        if self.delta == 0:
            raise ExperimentError("delta must be non-zero")
        if self.method not in ("jump", "direct"):
            raise ExperimentError(f"unknown method {self.method!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "model": self.model.to_dict(),
            "dist": self.dist if self.dist is not None else self.model.spec(),
            "delta": self.delta,
            "variant": self.variant,
            "n_grid": list(self.n_grid),
            "reps": self.reps,
            "master_seed": self.master_seed,
            "keep_raw": self.keep_raw,
            "method": self.method,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        return cls(
            model=model_from_dict(data["model"]),
            delta=int(data["delta"]),
            variant=data["variant"],
            n_grid=tuple(data["n_grid"]),
            reps=int(data["reps"]),
            master_seed=int(data["master_seed"]),
            keep_raw=bool(data.get("keep_raw", False)),
            method=data.get("method", "jump"),
            dist=data.get("dist"),
        )


@dataclass
class ExperimentReport:
    config: dict[str, Any]
    plan: dict[str, Any]
    per_n: list[dict[str, Any]]
    raw: dict[str, list[int]] | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        out = {"config": self.config, "plan": self.plan, "per_n": self.per_n, "notes": self.notes}
        if self.raw is not None:
            out["raw"] = self.raw
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def raw_csv(self) -> str:
        """Raw counts, one column per ``n``."""
        if self.raw is None:
            raise ExperimentError("report was produced without raw samples")
        keys = list(self.raw)
        lines = [",".join(f"N_{k}" for k in keys)]
        for row in zip(*(self.raw[k] for k in keys)):
            lines.append(",".join(str(v) for v in row))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# statistics


def _as_sorted(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float).ravel()
    if len(x) < 2:
        raise ExperimentError("need at least 2 samples")
    return np.sort(x)


def ks_statistic(samples) -> float:
    """One-sample Kolmogorov-Smirnov distance to the standard normal."""
    x = _as_sorted(samples)
    m = len(x)
    cdf = special.ndtr(x)
    i = np.arange(1, m + 1)
    return float(max(np.max(i / m - cdf), np.max(cdf - (i - 1) / m)))


def moments(samples) -> tuple[float, float, float | None, float | None]:
    """Mean, unbiased variance, skewness ``g1`` and excess kurtosis ``g2``.

    Skewness and kurtosis are ``None`` when the variance is zero or fewer
    than four samples are given.
    """
    x = np.asarray(samples, dtype=float).ravel()
    m = len(x)
    if m < 2:
        raise ExperimentError("need at least 2 samples")
    mean = math.fsum(x.tolist()) / m
    d = x - mean
    s2 = math.fsum((d * d).tolist())
    var = s2 / (m - 1)
    if s2 == 0.0 or m < 4:
        return mean, var, None, None
    m2 = s2 / m
    m3 = math.fsum((d**3).tolist()) / m
    m4 = math.fsum((d**4).tolist()) / m
    return mean, var, m3 / m2**1.5, m4 / (m2 * m2) - 3.0


def histogram(samples) -> dict[str, list[float]]:
    """Masses on fixed bins over [-5, 5]; values outside are clipped into the end bins."""
    x = np.clip(np.asarray(samples, dtype=float), -5.0, 5.0)
    counts, _ = np.histogram(x, bins=HIST_EDGES)
    return {"edges": HIST_EDGES.tolist(), "mass": (counts / len(x)).tolist()}


def qq_pairs(samples) -> list[list[float]]:
    """``[normal quantile, empirical quantile]`` at the 1st..99th percentiles."""
    x = np.asarray(samples, dtype=float)
    emp = np.quantile(x, QQ_LEVELS)
    theo = special.ndtri(QQ_LEVELS)
    return [[float(a), float(b)] for a, b in zip(theo, emp)]


def summarize(t_values: np.ndarray) -> dict[str, Any]:
    mean, var, skew, kurt = moments(t_values)
    return {
        "mean": mean,
        "var": var,
        "skew": skew,
        "kurt": kurt,
        "ks": ks_statistic(t_values),
        "hist": histogram(t_values),
        "qq": qq_pairs(t_values),
    }


def trend_check(reports, tol_var: float = 0.05, tol_ks: float = 0.01) -> tuple[bool, list[dict]]:
    """Convergence trend across an increasing ``n`` grid.

    Passes when the KS distance at the largest ``n`` is at most the one at
    the smallest ``n`` plus ``tol_ks``, and ``|var - 1|`` never grows by more
    than ``tol_var`` from one grid point to the next.

    Args:
        reports: an ``ExperimentReport``, or per-``n`` rows with keys
            ``n``, ``var`` and ``ks``.
    """
    rows = reports.per_n if isinstance(reports, ExperimentReport) else list(reports)
    if len(rows) < 3:
        raise ExperimentError("trend check needs at least 3 grid points")
    ns = [r["n"] for r in rows]
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ExperimentError("grid points must be in increasing order of n")
    if ns[-1] < 1000 * ns[0]:
        raise ExperimentError("grid must span at least 3 decades")
    table = []
    ok = True
    prev_dev = None
    for r in rows:
        dev = abs(r["var"] - 1.0)
        step_ok = prev_dev is None or dev <= prev_dev + tol_var
        ok &= step_ok
        table.append({"n": r["n"], "ks": r["ks"], "var_dev": dev, "var_step_ok": step_ok})
        prev_dev = dev
    ks_ok = rows[-1]["ks"] <= rows[0]["ks"] + tol_ks
    return bool(ok and ks_ok), table


# ---------------------------------------------------------------------------
# engine


def _run_block(args) -> tuple[np.ndarray, np.ndarray]:
    model, delta, table, n_grid, master_seed, lo, hi, method = args
    counts = np.empty((hi - lo, len(n_grid)), dtype=np.int64)
    comp = np.empty((hi - lo, len(n_grid)))
    for i in range(lo, hi):
        rng = RngState.for_replication(master_seed, i)
        states = run_stream(table, model, n_grid[-1], rng, n_grid, delta=delta, method=method)
        counts[i - lo] = [s.N for s in states]
        comp[i - lo] = [s.V for s in states]
    return counts, comp


def _tracking_table(model: DiscreteModel, delta: int) -> HazardTable | None:
    # power-law tails exceed any finite table within a few thousand draws
    return None if model.heavy_tailed else build_hazard(model, delta)


def simulate_counts(
    config: ExperimentConfig, table: HazardTable | None
) -> tuple[np.ndarray, np.ndarray]:
    """Counts ``N`` and compensators ``V`` with shape ``(reps, len(n_grid))``."""
    workers = config.workers
    if workers <= 0:
        workers = os.cpu_count() or 1
    n_blocks = min(workers, config.reps)
    bounds = np.linspace(0, config.reps, n_blocks + 1).astype(int)
    jobs = [
        (config.model, config.delta, table, config.n_grid, config.master_seed, int(a), int(b), config.method)
        for a, b in zip(bounds, bounds[1:])
    ]
    if n_blocks == 1:
        results = [_run_block(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=n_blocks) as pool:
            results = list(pool.map(_run_block, jobs))
    counts = np.concatenate([r[0] for r in results])
    comp = np.concatenate([r[1] for r in results])
    return counts, comp


def run_experiment(config: ExperimentConfig, plan: NormalizerPlan | None = None) -> ExperimentReport:
    """Simulate, normalize and summarize; see ``ExperimentReport``."""
    table = _tracking_table(config.model, config.delta)
    if plan is None:
        plan = make_plan(config.variant, config.model, config.delta, table)
    counts, comp = simulate_counts(config, table)
    per_n = []
    for j, n in enumerate(config.n_grid):
        center, scale = plan.center(n), plan.scale(n)
        t = (counts[:, j] - center) / scale
        row = {"n": n, "center": center, "scale": scale}
        row.update(summarize(t))
        row["count_mean"] = math.fsum(counts[:, j].tolist()) / config.reps
        if table is not None:
            row["compensator_ratio"] = math.fsum((comp[:, j] / (scale * scale)).tolist()) / config.reps
        else:
            row["compensator_ratio"] = None
        per_n.append(row)
    raw = None
    if config.keep_raw:
        raw = {str(n): counts[:, j].tolist() for j, n in enumerate(config.n_grid)}
    notes = ["finite-n tolerance bands are artifact decisions; the limit theorems give no rates"]
    return ExperimentReport(config.to_dict(), plan.to_dict(config.n_grid), per_n, raw, notes)
