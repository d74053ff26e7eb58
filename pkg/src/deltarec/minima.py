"""Sums of partial minima ``S_n = Σ_{i<=n} min(Z_1, ..., Z_i)`` with ``Z_i = z_{X_i}``.

``z`` is positive and non-increasing, so ``Z`` has distribution function
``G(z) = y_{j-1}`` on ``[z_j, z_{j-1})`` and generalized inverse
``G^-(1/t) = z_{m(t)}``. The normalizing function
``H(log t) = ∫_1^t G^-(1/u) du`` is a staircase integral and is evaluated
exactly as ``Σ_{j<=m(t)} z_j r_j / y_j - z_{m(t)} (1/y_{m(t)} - t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from deltarec._numeric import light_tail_sum
from deltarec.distributions import DiscreteModel
from deltarec.hazard import HazardTable, cond_var_increments
from deltarec.rng import RngState

SIM_CHUNK = 1 << 16


class MinimaError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MinimaSpec:
    """Values ``z_0..z_K`` attached to the observations, plus an optional tail rule.

    Args:
        model: observation law.
        z: tabulated values, positive and non-increasing.
        tail: vectorised ``k -> z_k`` used for ``k > K``; without it, indices
            beyond the table raise ``MinimaError``.
    """

    model: DiscreteModel
    z: np.ndarray
    tail: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        z = np.ascontiguousarray(self.z, dtype=float)
        if z.ndim != 1 or len(z) == 0:
            raise MinimaError("z must be a non-empty sequence")
        if not np.all(z > 0):
            raise MinimaError("z must be positive")
        if np.any(np.diff(z) > 0):
            raise MinimaError("z must be non-increasing")
        z.flags.writeable = False
        object.__setattr__(self, "z", z)

    @property
    def K(self) -> int:
        return len(self.z) - 1

    def z_at(self, k):
        arr = np.atleast_1d(np.asarray(k, dtype=np.int64))
        out = np.empty(arr.shape)
        inside = arr <= self.K
        out[inside] = self.z[arr[inside]]
        if (~inside).any():
            if self.tail is None:
                raise MinimaError(f"index {int(arr.max())} beyond z table of length {len(self.z)}")
            out[~inside] = self.tail(arr[~inside])
        return out if np.ndim(k) else float(out[0])

    @classmethod
    def survival(cls, model: DiscreteModel, depth: int | None = None) -> "MinimaSpec":
        """``z_k = y_k``."""
        if depth is None:
            depth = model.default_depth()
        return cls(model, model.survival(np.arange(depth + 1)), lambda k: model.survival(k))

    @classmethod
    def conditional_variance(cls, table: HazardTable) -> "MinimaSpec":
        """``z_k`` = conditional-variance increments of a δ < 0 table."""
        if table.delta > 0:
            raise MinimaError("conditional variances form a minima sequence only for delta < 0")
        return cls(
            table.model,
            np.asarray(table.z[1:]),
            lambda k: cond_var_increments(table, k),
        )


def _inv_survival(model: DiscreteModel, k: int) -> float:
    y = model.survival(k)
    return 1.0 / y if y > 1e-300 else math.exp(-model.log_survival(k))


def g_inverse(spec: MinimaSpec, t: float) -> float:
    """``G^-(1/t) = z_{m(t)}``."""
    if not t > 1.0:
        raise MinimaError("t must exceed 1")
    return spec.z_at(spec.model.quantile_m(t))


def h_log(spec: MinimaSpec, t: float) -> float:
    """``H(log t)`` by the exact staircase formula."""
    if not t > 1.0:
        raise MinimaError("t must exceed 1")
    model = spec.model
    m = model.quantile_m(t)
    j = np.arange(m + 1)
    # r_j / y_j = 1/y_j - 1/y_{j-1}
    weights = np.exp(model.log_pmf(j) - model.log_survival(j - 1) - model.log_survival(j))
    head = math.fsum((spec.z_at(j) * weights).tolist())
    z_m = spec.z_at(m)
    rho = z_m * (_inv_survival(model, m) - t)
    return head - rho


def h_limit(spec: MinimaSpec, max_terms: int = 1 << 16) -> tuple[bool, float]:
    """``H(∞) = Σ_j z_j r_j / y_j``: ``(finite, value)``.

    The sum is reported finite when its terms decay geometrically enough
    for the remainder bound to vanish within ``max_terms`` terms;
    otherwise ``(False, inf)``.
    """
    model = spec.model

    def term(j):
        with np.errstate(over="ignore", invalid="ignore"):
            w = np.exp(model.log_pmf(j) - model.log_survival(j - 1) - model.log_survival(j))
            return spec.z_at(j) * w

    try:
        total, _ = light_tail_sum(term, 0, rel_tol=1e-13, max_terms=max_terms)
    except (ArithmeticError, MinimaError):
        return False, math.inf
    if not math.isfinite(total):
        return False, math.inf
    return True, total


def simulate_partial_minima(
    spec: MinimaSpec, n: int, rng: RngState, checkpoints: Iterable[int] | None = None
):
    """``S_n`` from ``n`` actual draws, accumulated with a running minimum.

    Returns a float, or a list of ``S_c`` when ``checkpoints`` are given
    (strictly increasing, ending at most at ``n``).
    """
    if n < 1:
        raise MinimaError("n must be >= 1")
    cps = sorted(set(int(c) for c in checkpoints)) if checkpoints is not None else [n]
    if cps[0] < 1 or cps[-1] > n:
        raise MinimaError("checkpoints must lie in [1, n]")
    sampler = spec.model.sampler
    running = math.inf
    parts: list[float] = []
    out: list[float] = []
    done = 0
    ci = 0
    while done < cps[-1]:
        size = min(SIM_CHUNK, cps[-1] - done)
        x = sampler.draw_many(rng.uniforms(size))
        zx = spec.z_at(x)
        mins = np.minimum.accumulate(np.minimum(zx, running))
        while ci < len(cps) and cps[ci] <= done + size:
            j = cps[ci] - done
            out.append(math.fsum(parts + mins[:j].tolist()))
            ci += 1
        parts.append(math.fsum(mins.tolist()))
        running = float(mins[-1])
        done += size
    return out if checkpoints is not None else out[0]


def _a2_ratio(spec: MinimaSpec, n: int) -> float:
    """``Σ_{k<=n} k G^-(1/k)² / (Σ_{k<=n} G^-(1/k))²`` summed block by block.

    ``G^-(1/k)`` is constant on runs of ``k`` sharing the same ``m(k)``,
    so each block contributes through arithmetic sums.
    """
    model = spec.model
    m_n = model.quantile_m(n)
    num = []
    den = []
    lo = 1
    # m(k) = j for k in [1/y_{j-1}, 1/y_j)
    for j in range(0, m_n + 1):
        upper = _inv_survival(model, j)
        hi = min(n, math.ceil(upper) - 1)
        if hi >= lo:
            z = spec.z_at(j)
            count = hi - lo + 1
            num.append(z * z * (lo + hi) * count / 2.0)
            den.append(z * count)
            lo = hi + 1
        if lo > n:
            break
    s = math.fsum(den)
    return math.fsum(num) / (s * s)


def deheuvels_diagnostics(spec: MinimaSpec, n_grid: Iterable[float]) -> dict:
    """Ratios behind the two conditions for ``S_n / H(log n) -> 1``.

    For each ``n``: ``a1 = H(x_n + log n) / H(log n)`` with
    ``x_n = log(log n + 3)``, which should approach 1, and
    ``a2 = Σ k G^-(1/k)² / (Σ G^-(1/k))²``, which should approach 0.
    """
    rows = []
    for n in n_grid:
        n = int(n)
        if n < 10:
            raise MinimaError("diagnostics need n >= 10")
        x_n = math.log(math.log(n) + 3.0)
        h = h_log(spec, n)
        h_shift = h_log(spec, n * math.exp(x_n))
        rows.append({"n": n, "x_n": x_n, "H": h, "a1": h_shift / h, "a2": _a2_ratio(spec, n)})
    a1 = [r["a1"] for r in rows]
    a2 = [r["a2"] for r in rows]
    finite, limit = h_limit(spec)
    return {
        "rows": rows,
        "a1_toward_1": all(b <= a + 1e-12 for a, b in zip(a1, a1[1:])),
        "a2_toward_0": all(b <= a + 1e-12 for a, b in zip(a2, a2[1:])),
        "h_finite": finite,
        "h_limit": limit if finite else None,
    }
