"""δ-failure rates, their cumulative sums and conditional-variance increments.

For an integer ``delta != 0`` the δ-failure rate is ``s_k = p_{k+δ} / y_{k-1}``
(zero when ``k + δ < 0``), its cumulative sum is ``θ(k) = Σ_{i<=k} s_i`` with
``θ(-1) = 0``, and ``N_n - θ(M_n)`` is a martingale whose one-step conditional
variance given the current maximum ``m`` is ``z_m``.

Infinite sums are split into an exact head up to the table depth ``K`` and a
tail. Light tails are summed until a geometric-domination bound on the
remainder is negligible; power-law tails (zeta) use Euler-Maclaurin
summation from index ``EM_START`` on. The largest remainder bound is kept
in ``HazardTable.tail_bound``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from deltarec._numeric import (
    cumsum_compensated,
    euler_maclaurin_tail,
    light_tail_sum,
    reverse_cumsum_compensated,
)
from deltarec.distributions import DiscreteModel, model_from_dict

EM_START = 1000
HEAVY_DEFAULT_DEPTH = 4096
DEPTH_SURVIVAL = 1e-15
MAX_TAIL_BOUND = 1e-12
IDENTITY_RTOL = 1e-12


class HazardError(ValueError):
    """Invalid hazard-table request (delta = 0, depth too small, index out of range)."""


# ---------------------------------------------------------------------------
# elementwise quantities valid for any index array (int, or float for smooth tails)


def _y(model: DiscreteModel, i) -> np.ndarray:
    return np.exp(model.log_survival(np.asarray(i)))


def _p(model: DiscreteModel, i) -> np.ndarray:
    return np.exp(model.log_pmf(np.asarray(i)))


def delta_rate(model: DiscreteModel, delta: int, k) -> np.ndarray:
    """``s_k = p_{k+δ} / y_{k-1}`` from the pmf and survival directly."""
    k = np.atleast_1d(np.asarray(k))
    out = np.zeros(k.shape)
    ok = k + delta >= 0
    if ok.any():
        kk = k[ok]
        out[ok] = np.exp(model.log_pmf(kk + delta) - model.log_survival(kk - 1))
    return out


def delta_rate_product(model: DiscreteModel, delta: int, k) -> np.ndarray:
    """``s_k`` rebuilt from failure rates only.

    For ``δ > 0``: ``r_{k+δ} · Π_{i=k}^{k+δ-1} (1 - r_i)``.
    For ``δ < 0``: ``r_{k+δ} / Π_{i=k+δ}^{k-1} (1 - r_i)``.
    """
    k = np.atleast_1d(np.asarray(k, dtype=np.int64))
    out = np.zeros(k.shape)
    ok = k + delta >= 0
    if not ok.any():
        return out
    kk = k[ok]
    val = model.failure_rate(kk + delta)
    if delta > 0:
        for j in range(delta):
            val = val * model.one_minus_rate(kk + j)
    else:
        for j in range(delta, 0):
            val = val / model.one_minus_rate(kk + j)
    out[ok] = val
    return out


def _s(model: DiscreteModel, delta: int, i) -> np.ndarray:
    i = np.asarray(i)
    if np.issubdtype(i.dtype, np.integer):
        return delta_rate(model, delta, i)
    # real-valued indices only arise in far tails where k + δ >= 0
    return np.exp(model.log_pmf(i + delta) - model.log_survival(i - 1))


def _z_term(model: DiscreteModel, delta: int, i) -> np.ndarray:
    """Summand of ``z_m = Σ_{i>m} term_i`` (plus, for δ > 0, a finite correction)."""
    i = np.asarray(i)
    s = _s(model, delta, i)
    if delta < 0:
        # y_{i+δ-1} - y_{i-1} = Σ_{j=i+δ}^{i-1} p_j, summed without cancellation
        band = np.zeros(i.shape)
        for d in range(1, -delta + 1):
            band = band + _p(model, i - d)
        return s * (_y(model, i + delta) + band)
    return s * (_y(model, i + delta) + _y(model, i + delta - 1) + _y(model, i - 1)) - 2.0 * _p(
        model, i + 2 * delta
    )


def _display_term(model: DiscreteModel, delta: int, i) -> np.ndarray:
    """Summand ``s_i (y_{i+δ} + p_{i+δ}/2)`` of the alternative δ > 0 variance form."""
    i = np.asarray(i)
    return _s(model, delta, i) * (_y(model, i + delta) + 0.5 * _p(model, i + delta))


def _tail(model: DiscreteModel, term: Callable, start: int) -> tuple[float, float]:
    """``Σ_{i >= start} term(i)`` and a bound on what was neglected."""
    if not model.heavy_tailed:
        return light_tail_sum(term, start)
    head = 0.0
    em_start = max(start, EM_START)
    if em_start > start:
        head = math.fsum(np.asarray(term(np.arange(start, em_start))).tolist())
    tail, err = euler_maclaurin_tail(lambda x: term(x), float(em_start))
    return head + tail, err


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HazardTable:
    """Precomputed hazard quantities for one ``(model, delta)`` pair.

    ``s``, ``theta`` and ``e`` are indexed by ``k = 0..K``. ``z`` and
    ``z_display`` are indexed by ``m + 1`` for ``m = -1..K`` so the sentinel
    maximum ``-1`` sits at position 0. ``e`` and ``z_display`` are ``None``
    when ``delta < 0``.
    """

    delta: int
    model: DiscreteModel
    depth: int
    s: np.ndarray
    theta: np.ndarray
    z: np.ndarray
    z_display: np.ndarray | None
    e: np.ndarray | None
    tail_bound: float
    identity_error: float

    @property
    def K(self) -> int:
        return self.depth

    def theta_at(self, k: int) -> float:
        if k < 0:
            return 0.0
        if k > self.depth:
            raise HazardError(f"index {k} beyond table depth {self.depth}")
        return float(self.theta[k])

    def z_at(self, m: int) -> float:
        if m > self.depth:
            raise HazardError(f"maximum {m} beyond table depth {self.depth}")
        return float(self.z[max(m, -1) + 1])

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else [float(v) for v in a]

        return {
            "delta": self.delta,
            "model": self.model.to_dict(),
            "depth": self.depth,
            "s": arr(self.s),
            "theta": arr(self.theta),
            "z": arr(self.z),
            "z_display": arr(self.z_display),
            "e": arr(self.e),
            "tail_bound": self.tail_bound,
            "identity_error": self.identity_error,
        }

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def from_dict(cls, data: dict) -> "HazardTable":
        def arr(a):
            if a is None:
                return None
            out = np.asarray(a, dtype=float)
            out.flags.writeable = False
            return out

        return cls(
            delta=int(data["delta"]),
            model=model_from_dict(data["model"]),
            depth=int(data["depth"]),
            s=arr(data["s"]),
            theta=arr(data["theta"]),
            z=arr(data["z"]),
            z_display=arr(data["z_display"]),
            e=arr(data["e"]),
            tail_bound=float(data["tail_bound"]),
            identity_error=float(data["identity_error"]),
        )

    @classmethod
    def load(cls, path: str | Path) -> "HazardTable":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


def build_hazard(model: DiscreteModel, delta: int, depth: int | None = None) -> HazardTable:
    """Tabulate ``s``, ``θ``, ``z`` (and ``e`` for δ > 0) up to ``depth``.

    Args:
        model: the observation law.
        delta: non-zero integer shift.
        depth: table depth ``K``. Defaults to the smallest ``K`` with
            ``y_K < 1e-15`` for light tails and to 4096 for zeta models.

    Raises:
        HazardError: for ``delta == 0``, a depth leaving ``y_K >= 1e-12``
            on a light-tailed model, or a tail bound above 1e-12.
    """
    if delta == 0 or int(delta) != delta:
        raise HazardError("delta must be a non-zero integer")
    delta = int(delta)
    if depth is None:
        depth = HEAVY_DEFAULT_DEPTH if model.heavy_tailed else model.default_depth(DEPTH_SURVIVAL)
    if depth < 0:
        raise HazardError("depth must be non-negative")
    if not model.heavy_tailed and model.survival(depth) >= MAX_TAIL_BOUND:
        raise HazardError(
            f"depth {depth} too small: P[X > {depth}] = {model.survival(depth):.3g} >= {MAX_TAIL_BOUND}"
        )

    k = np.arange(depth + 1)
    s = delta_rate(model, delta, k)
    s_alt = delta_rate_product(model, delta, k)
    identity_error = float(np.max(np.abs(s - s_alt) / np.maximum(1.0, np.abs(s))))
    if identity_error > IDENTITY_RTOL:
        raise HazardError(f"δ-failure-rate identity violated by {identity_error:.3g}")
    theta = cumsum_compensated(s)

    bounds: list[float] = []

    # z_m = Σ_{i>m} term_i (+ correction); positions m+1 for m = -1..K
    terms = _z_term(model, delta, np.arange(0, depth + 1))
    tail, b = _tail(model, lambda i: _z_term(model, delta, i), depth + 1)
    bounds.append(b)
    head = reverse_cumsum_compensated(terms)  # head[j] = Σ_{i=j}^{K} term_i
    z = np.append(head, 0.0) + tail  # z[m+1] = Σ_{i>=m+1}

    z_display = e = None
    if delta > 0:
        m = np.arange(-1, depth + 1)
        s_ext = delta_rate(model, delta, np.arange(0, depth + delta + 2))
        window = np.array([math.fsum(s_ext[j + 1 : j + 1 + delta].tolist()) for j in m])
        z = z - 2.0 * _y(model, m + delta) * window

        dterms = _display_term(model, delta, np.arange(0, depth + 1))
        dtail, b = _tail(model, lambda i: _display_term(model, delta, i), depth + 1)
        bounds.append(b)
        dsum = np.append(reverse_cumsum_compensated(dterms), 0.0) + dtail
        z_display = (
            _y(model, m + delta) * (1.0 - 2.0 * window) + 2.0 * dsum - 2.0 * _y(model, m + 2 * delta)
        )
        e = e_products(model, delta, k)

    tail_bound = max(bounds) if bounds else 0.0
    if tail_bound > MAX_TAIL_BOUND:
        raise HazardError(f"tail bound {tail_bound:.3g} exceeds {MAX_TAIL_BOUND}")

    return HazardTable(
        delta=delta,
        model=model,
        depth=depth,
        s=_frozen(s),
        theta=_frozen(theta),
        z=_frozen(z),
        z_display=None if z_display is None else _frozen(z_display),
        e=None if e is None else _frozen(e),
        tail_bound=float(tail_bound),
        identity_error=identity_error,
    )


def e_products(model: DiscreteModel, delta: int, k) -> np.ndarray:
    """``e_k = Π_{i=k}^{k+δ-1} (1 - r_i)`` for δ > 0."""
    if delta <= 0:
        raise HazardError("e_k is defined for delta > 0 only")
    k = np.atleast_1d(np.asarray(k, dtype=np.int64))
    out = np.ones(k.shape)
    for j in range(delta):
        out = out * model.one_minus_rate(k + j)
    return out


def e_product(table: HazardTable, k: int) -> float:
    if table.delta < 0:
        raise HazardError("e_k is defined for delta > 0 only")
    if k < 0:
        raise HazardError("k must be non-negative")
    if k <= table.depth:
        return float(table.e[k])
    return float(e_products(table.model, table.delta, k)[0])


def theta_inverse(table: HazardTable, t: float) -> int:
    """``Θ(t) = max{k : θ(k) <= t}`` for ``t`` in ``[θ(0), θ(K))``."""
    if not (table.theta[0] <= t < table.theta[-1]):
        raise HazardError(f"t={t} outside tabulated range [{table.theta[0]}, {table.theta[-1]})")
    return int(np.searchsorted(table.theta, t, side="right")) - 1


def cond_var_increment(table: HazardTable, m: int) -> float:
    """``z_m = E[ξ² | previous maximum m]`` for ``m >= -1``."""
    if m < -1:
        raise HazardError("m must be >= -1")
    if m <= table.depth:
        return float(table.z[m + 1])
    model, delta = table.model, table.delta
    total, _ = _tail(model, lambda i: _z_term(model, delta, i), m + 1)
    if delta > 0:
        window = float(np.sum(delta_rate(model, delta, np.arange(m + 1, m + delta + 1))))
        total -= 2.0 * float(_y(model, m + delta)) * window
    return total


def cond_var_increments(table: HazardTable, ms) -> np.ndarray:
    """Vectorised ``cond_var_increment``; one tail series serves all ``m`` past the depth."""
    ms = np.atleast_1d(np.asarray(ms, dtype=np.int64))
    if ms.size and ms.min() < -1:
        raise HazardError("m must be >= -1")
    out = np.empty(ms.shape)
    inside = ms <= table.depth
    out[inside] = table.z[ms[inside] + 1]
    if inside.all():
        return out
    model, delta = table.model, table.delta
    lo, hi = int(ms[~inside].min()), int(ms[~inside].max())
    idx = np.arange(lo + 1, hi + 1)
    tail, _ = _tail(model, lambda i: _z_term(model, delta, i), hi + 1)
    # head[j] = Σ_{i = lo+1+j}^{hi} term_i, with an empty sum at j = hi - lo
    head = np.append(reverse_cumsum_compensated(_z_term(model, delta, idx)), 0.0)
    outside = ms[~inside]
    vals = head[outside - lo] + tail
    if delta > 0:
        windows = np.array(
            [float(np.sum(delta_rate(model, delta, np.arange(m + 1, m + delta + 1)))) for m in outside]
        )
        vals = vals - 2.0 * _y(model, outside + delta) * windows
    out[~inside] = vals
    return out


def telescoping_sum(table: HazardTable, m: int) -> float:
    """``Σ_{j>m} s_j y_{j-1}``, which equals ``y_{m+δ}``."""
    model, delta = table.model, table.delta
    start = max(m + 1, 0)
    if start <= table.depth:
        idx = np.arange(start, table.depth + 1)
        head = math.fsum((table.s[start:] * _y(model, idx - 1)).tolist())
        tail, _ = _tail(model, lambda i: _s(model, delta, i) * _y(model, i - 1), table.depth + 1)
        return head + tail
    return _tail(model, lambda i: _s(model, delta, i) * _y(model, i - 1), start)[0]


def cond_moment_oracle(model: DiscreteModel, table: HazardTable, m: int, power: int) -> float:
    """Conditional moment of one step by summing over the next observation.

    ``power=1`` gives ``E[θ(M') - θ(m) | M = m]`` and ``power=2`` gives
    ``E[(I - (θ(M') - θ(m)))² | M = m]`` where ``M' = max(m, X)`` and
    ``I = 1{X > m + δ}``. Values ``j`` up to the table depth are enumerated
    one by one; the remainder beyond the depth is folded into two tail
    series over ``s`` (exchange of summation order).
    """
    if power not in (1, 2):
        raise ValueError("power must be 1 or 2")
    if m < -1:
        raise HazardError("m must be >= -1")
    delta = table.delta
    J = max(table.depth, m + abs(delta) + 1)
    j = np.arange(0, J + 1)
    p = _p(model, j)
    theta = cumsum_compensated(delta_rate(model, delta, j))
    th_m = float(theta[m]) if m >= 0 else 0.0
    # θ(max(j, m)) - θ(m) vanishes for j <= m
    D = np.where(j > m, theta - th_m, 0.0)
    yJ = float(_y(model, J))
    DJ = float(theta[J] - th_m)
    T1, _ = _tail(model, lambda i: _s(model, delta, i) * _y(model, i - 1), J + 1)
    if power == 1:
        head = math.fsum((D * p).tolist())
        return head + yJ * DJ + T1
    indicator = (j > m + delta).astype(float)
    head = math.fsum((p * (indicator - D) ** 2).tolist())
    T2, _ = _tail(
        model,
        lambda i: _s(model, delta, i) * (_p(model, i + delta) + 2.0 * _y(model, i + delta)),
        J + 1,
    )
    c = 1.0 - DJ
    return head + c * c * yJ - 2.0 * c * T1 + T2
