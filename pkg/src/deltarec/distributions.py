"""Discrete models on the non-negative integers.

All models keep ``p_k > 0`` for every ``k >= 0``. Internally everything is
evaluated in log space so that survival probabilities far out in light
tails (Poisson at k = 200 is about 1e-377) stay representable; the
public ``pmf``/``survival`` accessors exponentiate.

Conventions for negative indices: ``p_k = 0`` and ``y_k = 1``.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, ClassVar

import numpy as np
from scipy import special

from deltarec._numeric import cumsum_compensated, reverse_cumsum_compensated
from deltarec.rng import RngState

SAMPLER_MAX_DEPTH = 1 << 18


class ModelSpecError(ValueError):
    """Malformed or unknown model description."""


class ModelDomainError(ValueError):
    """Model parameters outside their admissible range."""


def _as_index_array(k) -> tuple[np.ndarray, bool]:
    arr = np.asarray(k)
    return np.atleast_1d(arr), arr.ndim == 0


def _out(arr: np.ndarray, scalar: bool):
    return float(arr[0]) if scalar else arr


class DiscreteModel(ABC):
    """Base class: subclasses supply ``_log_pmf`` and ``_log_survival`` for k >= 0."""

    kind: ClassVar[str]
    heavy_tailed: ClassVar[bool] = False

    @property
    @abstractmethod
    def limit_rate(self) -> float:
        """``lim_k r_k`` (1 for light tails such as Poisson, 0 for zeta)."""

    @abstractmethod
    def _log_pmf(self, k: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _log_survival(self, k: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def to_dict(self) -> dict[str, Any]: ...

    @abstractmethod
    def spec(self) -> str:
        """Short textual form, e.g. ``geometric:p=0.5``."""

    # -- vectorised log-space accessors ---------------------------------

    def log_pmf(self, k):
        arr, scalar = _as_index_array(k)
        out = np.full(arr.shape, -np.inf)
        mask = arr >= 0
        if mask.any():
            out[mask] = self._log_pmf(arr[mask])
        return _out(out, scalar)

    def log_survival(self, k):
        arr, scalar = _as_index_array(k)
        out = np.zeros(arr.shape)
        mask = arr >= 0
        if mask.any():
            out[mask] = self._log_survival(arr[mask])
        return _out(out, scalar)

    # -- linear accessors -------------------------------------------------

    def pmf(self, k):
        return np.exp(self.log_pmf(k)) if np.ndim(k) else math.exp(self.log_pmf(k))

    def survival(self, k):
        return np.exp(self.log_survival(k)) if np.ndim(k) else math.exp(self.log_survival(k))

    def failure_rate(self, k):
        """``r_k = p_k / y_{k-1}`` as a ratio of log-space quantities."""
        arr, scalar = _as_index_array(k)
        out = np.exp(self.log_pmf(arr) - self.log_survival(arr - 1))
        return _out(out, scalar)

    def one_minus_rate(self, k):
        """``1 - r_k = y_k / y_{k-1}``, without subtracting from one."""
        arr, scalar = _as_index_array(k)
        out = np.exp(self.log_survival(arr) - self.log_survival(arr - 1))
        return _out(out, scalar)

    # -- quantiles and sampling ------------------------------------------

    def first_survival_below(self, log_level: float, start: int = 0) -> int:
        """Smallest ``k >= start`` with ``log y_k < log_level`` (``y`` is decreasing)."""
        return self._first_below(lambda k: self.log_survival(k) < log_level, start)

    @staticmethod
    def _first_below(below: Callable[[int], bool], start: int = 0) -> int:
        # doubling then bisection on a monotone predicate
        if below(start):
            return start
        lo, step = start, 1
        hi = start + step
        while not below(hi):
            lo = hi
            step *= 2
            hi = start + step
            if hi > 1 << 62:
                raise OverflowError("survival level below representable range")
        # invariant: not below(lo), below(hi)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if below(mid):
                hi = mid
            else:
                lo = mid
        return hi

    def quantile_m(self, t: float) -> int:
        """``m(t) = min{j >= 0 : y_j < 1/t}``."""
        if not t >= 1.0:
            raise ValueError("quantile_m requires t >= 1")
        level = 1.0 / t
        if level > 1e-300:
            # linear comparison keeps exact boundaries exact (e.g. geometric y_3 = 1/16)
            return self._first_below(lambda k: self.survival(k) < level)
        return self.first_survival_below(-math.log(t))

    def default_depth(self, tail: float = 1e-15) -> int:
        """Smallest ``K`` with ``y_K < tail``."""
        return self.first_survival_below(math.log(tail))

    @cached_property
    def sampler(self) -> "InverseSurvivalSampler":
        if self.heavy_tailed:
            depth = SAMPLER_MAX_DEPTH
        else:
            depth = min(self.default_depth(1e-18), SAMPLER_MAX_DEPTH)
        return InverseSurvivalSampler(self, depth)

    def sample(self, rng: RngState) -> int:
        """One draw by inversion of the survival function."""
        return self.sampler.draw(rng.uniform())

    def sample_many(self, rng: RngState, size: int) -> np.ndarray:
        return self.sampler.draw_many(rng.uniforms(size))


class InverseSurvivalSampler:
    """Inversion ``X = min{k : y_k < u}`` against a precomputed survival table.

    Levels below the last tabulated survival value continue with an exact
    search on the model's own survival function, so the table depth never
    truncates the distribution.
    """

    def __init__(self, model: DiscreteModel, depth: int):
        self.model = model
        self.depth = depth
        self.y = model.survival(np.arange(depth + 1))
        self._neg_y = -self.y
        self._y_last = float(self.y[-1])

    def survival(self, k: int) -> float:
        if k < 0:
            return 1.0
        if k <= self.depth:
            return float(self.y[k])
        return self.model.survival(k)

    def log_survival(self, k: int) -> float:
        if k < 0:
            return 0.0
        if k <= self.depth and self.y[k] > 1e-290:
            return math.log(self.y[k])
        return self.model.log_survival(k)

    def first_below(self, level: float, log_level: float | None = None) -> int:
        """``min{k : y_k < level}``; pass ``log_level`` when ``level`` may underflow."""
        if level > self._y_last:
            return int(np.searchsorted(self._neg_y, -level, side="right"))
        if log_level is None:
            log_level = math.log(level)
        return self.model.first_survival_below(log_level, start=self.depth + 1)

    def draw(self, u: float) -> int:
        return self.first_below(u)

    def draw_above(self, threshold: int, u: float) -> int:
        """Draw from the law of ``X`` given ``X > threshold``."""
        if threshold < 0:
            return self.first_below(u)
        y_t = self.survival(threshold)
        if y_t > 1e-280:
            return self.first_below(u * y_t)
        log_level = math.log(u) + self.log_survival(threshold)
        return self.model.first_survival_below(log_level, start=threshold + 1)

    def draw_many(self, u: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self._neg_y, -u, side="right")
        deep = np.flatnonzero(idx > self.depth)
        for i in deep.tolist():
            idx[i] = self.first_below(float(u[i]))
        return idx.astype(np.int64)


# ---------------------------------------------------------------------------
# parametric families


@dataclass(frozen=True, eq=True)
class Geometric(DiscreteModel):
    p: float
    kind: ClassVar[str] = "geometric"

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ModelDomainError("geometric p must lie in (0, 1)")

    @property
    def q(self) -> float:
        return 1.0 - self.p

    @property
    def limit_rate(self) -> float:
        return self.p

    def _log_pmf(self, k):
        return math.log(self.p) + k * math.log1p(-self.p)

    def _log_survival(self, k):
        return (k + 1) * math.log1p(-self.p)

    # exact powers so that boundary values such as y_3 = 1/16 are exact
    def pmf(self, k):
        arr, scalar = _as_index_array(k)
        out = np.where(arr >= 0, self.p * self.q ** np.maximum(arr, 0).astype(float), 0.0)
        return _out(out, scalar)

    def survival(self, k):
        arr, scalar = _as_index_array(k)
        out = np.where(arr >= 0, self.q ** (np.maximum(arr, -1) + 1).astype(float), 1.0)
        return _out(out, scalar)

    def failure_rate(self, k):
        arr, scalar = _as_index_array(k)
        return _out(np.where(arr >= 0, self.p, 0.0), scalar)

    def one_minus_rate(self, k):
        arr, scalar = _as_index_array(k)
        return _out(np.where(arr >= 0, self.q, 1.0), scalar)

    def to_dict(self):
        return {"kind": self.kind, "p": self.p}

    def spec(self):
        return f"geometric:p={self.p!r}"


@dataclass(frozen=True, eq=True)
class NegativeBinomial(DiscreteModel):
    """``p_k = C(k+a-1, k) p^a q^k`` with real ``a > 1``."""

    a: float
    p: float
    kind: ClassVar[str] = "negbinomial"

    def __post_init__(self):
        if not self.a > 1.0:
            raise ModelDomainError("negative binomial a must exceed 1")
        if not 0.0 < self.p < 1.0:
            raise ModelDomainError("negative binomial p must lie in (0, 1)")

    @property
    def limit_rate(self) -> float:
        return self.p

    def _log_pmf(self, k):
        k = np.asarray(k, dtype=float)
        return (
            special.gammaln(k + self.a)
            - special.gammaln(self.a)
            - special.gammaln(k + 1.0)
            + self.a * math.log(self.p)
            + k * math.log1p(-self.p)
        )

    def _log_survival(self, k):
        k = np.asarray(k, dtype=float)
        q = 1.0 - self.p
        y = special.betainc(k + 1.0, self.a, q)
        out = np.empty_like(k)
        ok = y > 1e-280
        with np.errstate(divide="ignore"):
            out[ok] = np.log(y[ok])
        if (~ok).any():
            kk = k[~ok]
            # y_k = p_{k+1} * sum_j prod_{i<j} q (k+1+i+a) / (k+2+i)
            term = np.ones_like(kk)
            total = np.ones_like(kk)
            i = 0
            while np.max(term / total) > 1e-18:
                term = term * q * (kk + 1 + i + self.a) / (kk + 2 + i)
                total = total + term
                i += 1
            out[~ok] = self._log_pmf(kk + 1) + np.log(total)
        return out

    def to_dict(self):
        return {"kind": self.kind, "a": self.a, "p": self.p}

    def spec(self):
        return f"negbinomial:a={self.a!r},p={self.p!r}"


@dataclass(frozen=True, eq=True)
class Zeta(DiscreteModel):
    """``p_k = (k+1)^{-a} / zeta(a)``; survival through the Hurwitz zeta function.

    Accepts real arguments in ``log_pmf``/``log_survival`` so that smooth
    tail sums can be evaluated by Euler-Maclaurin summation.
    """

    a: float
    kind: ClassVar[str] = "zeta"
    heavy_tailed: ClassVar[bool] = True

    def __post_init__(self):
        if not self.a > 1.0:
            raise ModelDomainError("zeta a must exceed 1")

    @cached_property
    def log_zeta(self) -> float:
        return math.log(special.zeta(self.a, 1.0))

    @property
    def limit_rate(self) -> float:
        return 0.0

    def _log_pmf(self, k):
        return -self.a * np.log1p(np.asarray(k, dtype=float)) - self.log_zeta

    def _log_survival(self, k):
        return np.log(special.zeta(self.a, np.asarray(k, dtype=float) + 2.0)) - self.log_zeta

    def to_dict(self):
        return {"kind": self.kind, "a": self.a}

    def spec(self):
        return f"zeta:a={self.a!r}"


@dataclass(frozen=True, eq=True)
class Poisson(DiscreteModel):
    lam: float
    kind: ClassVar[str] = "poisson"

    def __post_init__(self):
        if not self.lam > 0.0:
            raise ModelDomainError("poisson lambda must be positive")

    @property
    def limit_rate(self) -> float:
        return 1.0

    def _log_pmf(self, k):
        k = np.asarray(k, dtype=float)
        return -self.lam + k * math.log(self.lam) - special.gammaln(k + 1.0)

    def _log_survival(self, k):
        k = np.asarray(k, dtype=float)
        out = np.empty_like(k)
        y = special.pdtrc(k, self.lam)
        direct = (k + 2.0 <= 2.0 * self.lam) & (y > 1e-280)
        with np.errstate(divide="ignore"):
            out[direct] = np.log(y[direct])
        rest = ~direct
        if rest.any():
            kk = k[rest]
            # y_k / p_{k+1} = 1 + lam/(k+2) + lam^2/((k+2)(k+3)) + ...
            term = np.ones_like(kk)
            total = np.ones_like(kk)
            j = 2
            while np.max(term / total) > 1e-18:
                term = term * self.lam / (kk + j)
                total = total + term
                j += 1
            out[rest] = self._log_pmf(kk + 1) + np.log(total)
        return out

    def to_dict(self):
        return {"kind": self.kind, "lambda": self.lam}

    def spec(self):
        return f"poisson:lambda={self.lam!r}"


# ---------------------------------------------------------------------------
# tabulated models with a constant failure-rate tail


def _check_tail_rate(tail_rate: float) -> None:
    if not 0.0 < tail_rate < 1.0:
        raise ModelDomainError("tail_rate must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class TabulatedPmf(DiscreteModel):
    """Probabilities ``p_0..p_{L-1}``; beyond the table the failure rate is ``tail_rate``."""

    probs: tuple[float, ...]
    tail_rate: float
    kind: ClassVar[str] = "table"
    _logp: np.ndarray = field(init=False, repr=False)
    _logy: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or len(probs) == 0:
            raise ModelDomainError("probability table must be a non-empty list")
        if not np.all(probs > 0):
            raise ModelDomainError("tabulated probabilities must be positive")
        _check_tail_rate(self.tail_rate)
        remaining = 1.0 - math.fsum(probs.tolist())
        if not remaining > 0.0:
            raise ModelDomainError("tabulated probabilities must sum to less than 1")
        object.__setattr__(self, "probs", tuple(probs.tolist()))
        tail_sums = reverse_cumsum_compensated(np.append(probs[1:], remaining))
        object.__setattr__(self, "_logp", np.log(probs))
        object.__setattr__(self, "_logy", np.log(tail_sums))

    @property
    def limit_rate(self) -> float:
        return self.tail_rate

    def _log_pmf(self, k):
        k = np.asarray(k)
        n = len(self._logp)
        inside = k < n
        out = np.empty(k.shape)
        out[inside] = self._logp[k[inside].astype(np.int64)]
        out[~inside] = self._log_survival(k[~inside] - 1) + math.log(self.tail_rate)
        return out

    def _log_survival(self, k):
        k = np.asarray(k)
        n = len(self._logy)
        inside = k < n
        out = np.empty(k.shape)
        out[inside] = self._logy[k[inside].astype(np.int64)]
        out[~inside] = self._logy[-1] + (k[~inside] - n + 1) * math.log1p(-self.tail_rate)
        return out

    def to_dict(self):
        return {"kind": "tabulated_pmf", "probs": list(self.probs), "tail_rate": self.tail_rate}

    def spec(self):
        return f"table:<{len(self.probs)} probabilities, tail_rate={self.tail_rate!r}>"

    def __eq__(self, other):
        return (
            isinstance(other, TabulatedPmf)
            and self.probs == other.probs
            and self.tail_rate == other.tail_rate
        )

    def __hash__(self):
        return hash((self.probs, self.tail_rate))


@dataclass(frozen=True, eq=False)
class TabulatedRates(DiscreteModel):
    """Failure rates ``r_0..r_{L-1}``; beyond the table the rate is ``tail_rate``."""

    rates: tuple[float, ...]
    tail_rate: float
    kind: ClassVar[str] = "rates"
    _logy: np.ndarray = field(init=False, repr=False)
    _logr: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        if rates.ndim != 1 or len(rates) == 0:
            raise ModelDomainError("rate table must be a non-empty list")
        if not np.all((rates > 0) & (rates < 1)):
            raise ModelDomainError("tabulated failure rates must lie in (0, 1)")
        _check_tail_rate(self.tail_rate)
        object.__setattr__(self, "rates", tuple(rates.tolist()))
        object.__setattr__(self, "_logr", np.log(rates))
        object.__setattr__(self, "_logy", cumsum_compensated(np.log1p(-rates)))

    @property
    def limit_rate(self) -> float:
        return self.tail_rate

    def _log_survival(self, k):
        k = np.asarray(k)
        n = len(self._logy)
        inside = k < n
        out = np.empty(k.shape)
        out[inside] = self._logy[k[inside].astype(np.int64)]
        out[~inside] = self._logy[-1] + (k[~inside] - n + 1) * math.log1p(-self.tail_rate)
        return out

    def _log_pmf(self, k):
        k = np.asarray(k)
        n = len(self._logr)
        logr = np.full(k.shape, math.log(self.tail_rate))
        inside = k < n
        logr[inside] = self._logr[k[inside].astype(np.int64)]
        prev = np.zeros(k.shape)
        pos = k >= 1
        prev[pos] = self._log_survival(k[pos] - 1)
        return prev + logr

    def to_dict(self):
        return {"kind": "tabulated_rates", "rates": list(self.rates), "tail_rate": self.tail_rate}

    def spec(self):
        return f"rates:<{len(self.rates)} rates, tail_rate={self.tail_rate!r}>"

    def __eq__(self, other):
        return (
            isinstance(other, TabulatedRates)
            and self.rates == other.rates
            and self.tail_rate == other.tail_rate
        )

    def __hash__(self):
        return hash((self.rates, self.tail_rate))


# ---------------------------------------------------------------------------
# construction helpers


def load_tabulated(path: str | Path) -> DiscreteModel:
    """Read a tabulated model.

    The first line is a header ``# kind=pmf|rates tail_rate=<x>``; each
    following non-blank line holds one probability or failure rate.
    """
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ModelSpecError(f"{path}: missing '# kind=... tail_rate=...' header")
    header: dict[str, str] = {}
    for token in lines[0][1:].split():
        if "=" not in token:
            raise ModelSpecError(f"{path}: malformed header token {token!r}")
        key, value = token.split("=", 1)
        header[key.strip()] = value.strip()
    kind = header.get("kind")
    if kind not in ("pmf", "rates") or "tail_rate" not in header:
        raise ModelSpecError(f"{path}: header needs kind=pmf|rates and tail_rate")
    try:
        tail_rate = float(header["tail_rate"])
        values = [float(line.split(",")[0]) for line in lines[1:] if line.strip()]
    except ValueError as exc:
        raise ModelSpecError(f"{path}: {exc}") from None
    if kind == "pmf":
        return TabulatedPmf(tuple(values), tail_rate)
    return TabulatedRates(tuple(values), tail_rate)


def _parse_params(text: str, allowed: set[str]) -> dict[str, float]:
    params: dict[str, float] = {}
    for item in filter(None, text.split(",")):
        if "=" not in item:
            raise ModelSpecError(f"malformed parameter {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        if key not in allowed:
            raise ModelSpecError(f"unknown parameter {key!r}")
        try:
            params[key] = float(value)
        except ValueError:
            raise ModelSpecError(f"malformed number {value!r}") from None
    missing = allowed - params.keys()
    if missing:
        raise ModelSpecError(f"missing parameter(s): {', '.join(sorted(missing))}")
    return params


def parse_model(spec: str) -> DiscreteModel:
    """Build a model from ``geometric:p=0.5``, ``negbinomial:a=2,p=0.5``,
    ``zeta:a=2``, ``poisson:lambda=1``, ``table:FILE`` or ``rates:FILE``."""
    name, _, rest = spec.partition(":")
    name = name.strip().lower()
    if name == "geometric":
        return Geometric(**_parse_params(rest, {"p"}))
    if name == "negbinomial":
        return NegativeBinomial(**_parse_params(rest, {"a", "p"}))
    if name == "zeta":
        return Zeta(**_parse_params(rest, {"a"}))
    if name == "poisson":
        return Poisson(lam=_parse_params(rest, {"lambda"})["lambda"])
    if name in ("table", "rates"):
        if not rest:
            raise ModelSpecError(f"{name}: needs a file path")
        model = load_tabulated(rest)
        expected = TabulatedPmf if name == "table" else TabulatedRates
        if not isinstance(model, expected):
            raise ModelSpecError(f"{rest}: header kind does not match '{name}:'")
        return model
    raise ModelSpecError(f"unknown distribution {name!r}")


def model_from_dict(data: dict[str, Any]) -> DiscreteModel:
    kind = data.get("kind")
    if kind == "geometric":
        return Geometric(data["p"])
    if kind == "negbinomial":
        return NegativeBinomial(data["a"], data["p"])
    if kind == "zeta":
        return Zeta(data["a"])
    if kind == "poisson":
        return Poisson(data["lambda"])
    if kind == "tabulated_pmf":
        return TabulatedPmf(tuple(data["probs"]), data["tail_rate"])
    if kind == "tabulated_rates":
        return TabulatedRates(tuple(data["rates"]), data["tail_rate"])
    raise ModelSpecError(f"unknown model kind {kind!r}")
