"""Centering and scaling sequences for the normalized δ-record count.

Every variant centers ``N_n`` either at ``θ(m(n))`` or at a simplified
closed form, and divides by ``scale(n)``. Which variant applies depends on
the limit ``r`` of the failure rates and on the sign of ``delta``; the
caller selects it and this module only rejects clearly inapplicable
choices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

import numpy as np

from deltarec._numeric import cumsum_compensated
from deltarec.distributions import (
    DiscreteModel,
    Geometric,
    NegativeBinomial,
    Poisson,
    Zeta,
    model_from_dict,
)
from deltarec.hazard import HazardTable, build_hazard, cond_var_increment, delta_rate, e_products

VARIANT_KEYS = ("thm31a", "thm31b", "thm41", "cor-simplified", "poisson-special")
THETA_DIRECT_LIMIT = 10_000_000
RATE_CHECK_DEPTH = 10_000
RATE_NEAR_ONE = 0.99


class NormalizerError(ValueError):
    """A normalizer variant was requested outside its domain."""


# ---------------------------------------------------------------------------
# constants


def limit_variance_ratio(r: float, delta: int) -> float:
    """Limit ``L`` of ``z_m / y_m`` when ``r_k -> r``."""
    q = 1.0 - r
    if delta < 0:
        return q**delta * (q ** (delta + 1) + q**delta - 1.0)
    if delta > 0:
        return q**delta * (q ** (delta + 1) - (1.0 + 2.0 * delta * r) * q**delta + 1.0)
    raise NormalizerError("delta must be non-zero")


def sigma_r(r: float, delta: int) -> float:
    """Asymptotic variance constant ``σ_r²`` of ``N_n / sqrt(log n)``.

    Equal to ``-r L / log(1 - r)`` with ``L = limit_variance_ratio(r, delta)``,
    and to 1 at ``r = 0``.
    """
    if delta == 0:
        raise NormalizerError("delta must be non-zero")
    if not 0.0 <= r < 1.0:
        raise NormalizerError("sigma_r needs r in [0, 1)")
    if r == 0.0:
        return 1.0
    return -r * limit_variance_ratio(r, delta) / math.log1p(-r)


def simplified_slope(r: float, delta: int) -> float:
    """Coefficient ``c`` of the simplified centering ``c log n``."""
    if not 0.0 <= r < 1.0:
        raise NormalizerError("simplified centering needs a limiting rate r < 1")
    if r == 0.0:
        return 1.0
    return -r * (1.0 - r) ** delta / math.log1p(-r)


# ---------------------------------------------------------------------------
# exact sequences


def theta_value(table: HazardTable, k: int) -> float:
    """``θ(k)``, from the table when possible, else by direct summation."""
    if k < 0:
        return 0.0
    if k <= table.depth:
        return float(table.theta[k])
    if k > THETA_DIRECT_LIMIT:
        raise NormalizerError(f"θ({k}) is beyond the direct-summation limit; use a simplified centering")
    return float(cumsum_compensated(delta_rate(table.model, table.delta, np.arange(k + 1)))[-1])


def scaling_thm31a(table: HazardTable, n: float) -> float:
    """``b_n² = Σ_{k=0}^{m(n)} z_k r_k / y_k`` (δ < 0)."""
    if table.delta > 0:
        raise NormalizerError("this scaling applies to delta < 0")
    model = table.model
    m = model.quantile_m(n)
    k = np.arange(m + 1)
    if m <= table.depth:
        z = table.z[k + 1]
    else:
        z = np.array([cond_var_increment(table, int(j)) for j in k])
    ratio = np.exp(model.log_pmf(k) - model.log_survival(k - 1) - model.log_survival(k))
    return math.fsum((z * ratio).tolist())


def scaling_thm31b(table: HazardTable, n: float) -> float:
    """``Σ_{k=0}^{m(n)} (1 - r_k)^{2δ}`` (δ < 0)."""
    if table.delta > 0:
        raise NormalizerError("this scaling applies to delta < 0")
    return _sum_one_minus_rate_power(table.model, table.delta, n)


def _sum_one_minus_rate_power(model: DiscreteModel, delta: int, n: float) -> float:
    m = model.quantile_m(n)
    k = np.arange(m + 1)
    log_q = model.log_survival(k) - model.log_survival(k - 1)
    return math.fsum(np.exp(2 * delta * log_q).tolist())


def series_e_diverges(model: DiscreteModel, delta: int) -> bool:
    """Whether ``Σ_k e_k`` diverges. Analytic for built-in families."""
    if delta <= 0:
        raise NormalizerError("e_k is defined for delta > 0")
    if isinstance(model, Poisson):
        return delta == 1
    if isinstance(model, (Geometric, NegativeBinomial, Zeta)):
        # e_k -> (1 - r)^δ > 0
        return True
    return numeric_divergence_test(model, delta)[0]


def numeric_divergence_test(
    model: DiscreteModel, delta: int, k_max: int = 1_000_000
) -> tuple[bool, float, float]:
    """Finite-horizon divergence decision for ``Σ e_k``.

    The series is declared divergent when the partial sum still grows by
    more than 1e-6 over the last decade ``(k_max/10, k_max]`` and the terms
    stay above ``c / k`` there, with ``c`` fitted as half of ``k e_k`` at the
    start of the decade. Otherwise it is declared convergent. Returns
    ``(diverges, partial_sum, last_decade_increment)``.
    """
    k = np.arange(k_max + 1)
    e = np.exp(model.log_survival(k + delta - 1) - model.log_survival(k - 1))
    partial = cumsum_compensated(e)
    lo = k_max // 10
    increment = float(partial[-1] - partial[lo])
    decade = k[lo + 1 :]
    weighted = decade * e[lo + 1 :]
    c = 0.5 * float(weighted[0])
    harmonic_like = c > 0 and float(np.min(weighted)) >= c
    return bool(increment > 1e-6 and harmonic_like), float(partial[-1]), increment


def scaling_thm41(table: HazardTable, n: float) -> tuple[float, bool]:
    """Scaling for δ > 0: ``σ_r² log n`` when ``r < 1``, else ``Σ_{k<=m(n)} e_k``."""
    if table.delta < 0:
        raise NormalizerError("this scaling applies to delta > 0")
    model = table.model
    r = model.limit_rate
    if r < 1.0:
        return sigma_r(r, table.delta) * math.log(n), True
    m = model.quantile_m(n)
    if m <= table.depth:
        e = table.e[: m + 1]
    else:
        e = e_products(model, table.delta, np.arange(m + 1))
    return math.fsum(e.tolist()), series_e_diverges(model, table.delta)


def centering(table: HazardTable, n: float, simplified: bool) -> float:
    """``θ(m(n))``, or the simplified ``c log n`` form when ``simplified``."""
    if simplified:
        r = table.model.limit_rate
        if r >= 1.0:
            raise NormalizerError("no simplified centering when r_k -> 1")
        return simplified_slope(r, table.delta) * math.log(n)
    return theta_value(table, table.model.quantile_m(n))


# ---------------------------------------------------------------------------
# plans


@dataclass(frozen=True, eq=False)
class NormalizerPlan:
    """``T = (N_n - center(n)) / scale(n)`` for one normalizer variant."""

    variant: str
    request: str
    model: DiscreteModel
    delta: int
    sigma2: float | None
    diverges: bool | None
    _center: Callable[[float], float] = field(repr=False)
    _scale2: Callable[[float], float] = field(repr=False)

    def center(self, n: float) -> float:
        return self._center(n)

    def scale2(self, n: float) -> float:
        v = self._scale2(n)
        if not v > 0:
            raise NormalizerError(f"scale is not positive at n={n}")
        return v

    def scale(self, n: float) -> float:
        return math.sqrt(self.scale2(n))

    def normalize(self, count, n: float):
        return (np.asarray(count, dtype=float) - self.center(n)) / self.scale(n)

    def to_dict(self, n_grid: Iterable[float] = ()) -> dict[str, Any]:
        return {
            "variant": self.variant,
            "request": self.request,
            "model": self.model.to_dict(),
            "delta": self.delta,
            "sigma2": self.sigma2,
            "diverges": self.diverges,
            "grid": [
                {"n": n, "center": self.center(n), "scale": self.scale(n)} for n in n_grid
            ],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "NormalizerPlan":
        model = model_from_dict(data["model"])
        return make_plan(data["request"], model, int(data["delta"]))


def _check_rates_near_one(model: DiscreteModel) -> None:
    r = model.failure_rate(np.arange(RATE_CHECK_DEPTH + 1))
    if float(np.max(r)) < RATE_NEAR_ONE:
        raise NormalizerError(
            f"failure rates stay below {RATE_NEAR_ONE} for k <= {RATE_CHECK_DEPTH}; "
            "this variant assumes r_k -> 1"
        )


def poisson_special(lam: float, delta: int, n: float | None = None) -> NormalizerPlan:
    """Closed-form Poisson normalizers for ``δ < 0`` and ``δ = 1``.

    ``δ < 0``: center ``λ^δ m^{1-δ}/(1-δ)``, scale² ``λ^{2δ} m^{1-2δ}/(1-2δ)``.
    ``δ = 1``: center ``λ log m(n)``, scale² ``λ log log n``.
    """
    if delta == 0 or delta > 1:
        raise NormalizerError("closed-form Poisson normalizers exist for delta < 0 or delta = 1")
    model = Poisson(lam)
    if n is not None and delta == 1 and not math.log(n) > 1.0:
        raise NormalizerError("log log n must be positive")
    if delta < 0:
        sigma2 = lam ** (2 * delta) / (1 - 2 * delta)

        def center(t):
            m = model.quantile_m(t)
            return lam**delta * m ** (1 - delta) / (1 - delta)

        def scale2(t):
            return sigma2 * model.quantile_m(t) ** (1 - 2 * delta)

    else:
        sigma2 = lam

        def center(t):
            return lam * math.log(model.quantile_m(t))

        def scale2(t):
            return lam * math.log(math.log(t))

    return NormalizerPlan("PoissonSpecial", "poisson-special", model, delta, sigma2, True, center, scale2)


def make_plan(
    request: str, model: DiscreteModel, delta: int, table: HazardTable | None = None
) -> NormalizerPlan:
    """Build the plan for a variant key.

    Args:
        request: one of ``thm31a``, ``thm31b``, ``thm41``, ``cor-simplified``,
            ``poisson-special`` or ``auto``.
        model: observation law.
        delta: non-zero shift.
        table: optional prebuilt hazard table (built on demand otherwise).

    Raises:
        NormalizerError: when the variant does not apply to ``(model, delta)``.
    """
    if delta == 0:
        raise NormalizerError("normalizers need delta != 0")
    if request == "auto":
        request = default_variant(model, delta)
    if request not in VARIANT_KEYS:
        raise NormalizerError(f"unknown normalizer variant {request!r}")
    r = model.limit_rate

    if request == "poisson-special":
        if not isinstance(model, Poisson):
            raise NormalizerError("poisson-special needs a Poisson model")
        return poisson_special(model.lam, delta)

    if request == "cor-simplified":
        if r >= 1.0:
            raise NormalizerError("simplified normalizers need a limiting rate r < 1")
        sigma2 = sigma_r(r, delta)
        slope = simplified_slope(r, delta)
        variant = "Cor31" if delta < 0 else "Cor41"
        return NormalizerPlan(
            variant, request, model, delta, sigma2, True,
            lambda t: slope * math.log(t), lambda t: sigma2 * math.log(t),
        )

    if table is None:
        table = build_hazard(model, delta)
    elif table.delta != delta:
        raise NormalizerError("hazard table delta does not match")

    def exact_center(t):
        return theta_value(table, model.quantile_m(t))

    if request == "thm31a":
        if delta > 0:
            raise NormalizerError("thm31a applies to delta < 0")
        if r >= 1.0:
            raise NormalizerError("thm31a needs limsup r_k < 1")
        sigma2 = sigma_r(r, delta)
        return NormalizerPlan(
            "Thm31a", request, model, delta, sigma2, True,
            exact_center, lambda t: scaling_thm31a(table, t),
        )
    if request == "thm31b":
        if delta > 0:
            raise NormalizerError("thm31b applies to delta < 0")
        _check_rates_near_one(model)
        return NormalizerPlan(
            "Thm31b", request, model, delta, None, True,
            exact_center, lambda t: scaling_thm31b(table, t),
        )
    # thm41
    if delta < 0:
        raise NormalizerError("thm41 applies to delta > 0")
    if r < 1.0:
        sigma2 = sigma_r(r, delta)
        return NormalizerPlan(
            "Thm41a", request, model, delta, sigma2, True,
            exact_center, lambda t: sigma2 * math.log(t),
        )
    diverges = series_e_diverges(model, delta)
    return NormalizerPlan(
        "Thm41b", request, model, delta, None, diverges,
        exact_center, lambda t: scaling_thm41(table, t)[0],
    )


def default_variant(model: DiscreteModel, delta: int) -> str:
    """Variant used when none is requested."""
    if isinstance(model, Poisson):
        return "poisson-special" if delta < 0 or delta == 1 else "thm41"
    if isinstance(model, Zeta):
        return "cor-simplified"
    return "thm31a" if delta < 0 else "thm41"
