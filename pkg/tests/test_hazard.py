import math
from functools import lru_cache

import numpy as np
import pytest

from deltarec.distributions import Geometric, NegativeBinomial, Poisson, TabulatedRates, Zeta
from deltarec.hazard import (
    HazardError,
    HazardTable,
    build_hazard,
    cond_moment_oracle,
    cond_var_increment,
    cond_var_increments as cond_var_increments_fn,
    delta_rate,
    delta_rate_product,
    e_product,
    theta_inverse,
    telescoping_sum,
)

MODELS = [
    Geometric(0.5),
    Geometric(0.2),
    NegativeBinomial(2.0, 0.5),
    NegativeBinomial(3.5, 0.3),
    Zeta(2.0),
    Poisson(1.0),
    Poisson(7.5),
    TabulatedRates((0.1, 0.5, 0.9), 0.25),
]
DELTAS = [-3, -2, -1, 1, 2, 3]


@lru_cache(maxsize=None)
def table(model, delta):
    return build_hazard(model, delta)


def _brute_z(model, delta, m, upto=400):
    """z_m from the defining double sum, truncated far in the geometric tail."""
    total = 0.0
    for i in range(m + 1, upto):
        s = model.pmf(i + delta) / model.survival(i - 1) if i + delta >= 0 else 0.0
        if delta < 0:
            inner = model.survival(i + delta) + sum(model.pmf(j) for j in range(max(i + delta, 0), i))
            total += s * inner
    return total


# -- spot values -----------------------------------------------------------------


def test_geometric_rates_negative_delta():
    t = table(Geometric(0.5), -1)
    assert t.s[0] == 0.0
    assert np.allclose(t.s[1:50], 1.0, rtol=0, atol=1e-13)
    assert t.theta_at(3) == pytest.approx(3.0, abs=1e-14)
    assert t.theta_at(-1) == 0.0


def test_geometric_rates_positive_delta():
    t = table(Geometric(0.5), 2)
    assert np.allclose(t.s[:60], 0.125, rtol=0, atol=1e-14)


def test_theta_inverse_examples():
    neg = table(Geometric(0.5), -1)
    assert theta_inverse(neg, 2.5) == 2
    for k in range(0, 20):
        assert theta_inverse(neg, neg.theta_at(k)) == k
    pos = table(Geometric(0.5), 2)
    assert theta_inverse(pos, 0.5) == 3
    with pytest.raises(HazardError):
        theta_inverse(pos, -1.0)
    with pytest.raises(HazardError):
        theta_inverse(pos, float(pos.theta[-1]) + 1.0)


def test_theta_inverse_brackets():
    t = table(Poisson(1.0), -2)
    for x in np.linspace(float(t.theta[0]), float(t.theta[-2]), 37):
        k = theta_inverse(t, x)
        assert t.theta[k] <= x < t.theta[k + 1]


def test_cond_var_spot_values():
    neg = table(Geometric(0.5), -1)
    assert cond_var_increment(neg, 2) == pytest.approx(0.5, abs=1e-14)
    assert cond_var_increment(neg, 0) == pytest.approx(2.0, abs=1e-14)
    pos = table(Geometric(0.5), 1)
    assert cond_var_increment(pos, 0) == pytest.approx(0.0625, abs=1e-14)


def test_cond_var_geometric_closed_form_and_brute_force():
    model = Geometric(0.5)
    neg = table(model, -1)
    for k in range(1, 25):
        assert cond_var_increment(neg, k) == pytest.approx(0.5 ** (k - 1), rel=1e-12)
        assert cond_var_increment(neg, k) == pytest.approx(_brute_z(model, -1, k), rel=1e-10)


def test_cond_var_beyond_depth_matches_table_extension():
    model = Poisson(1.0)
    short = build_hazard(model, -2, depth=16)
    deep = build_hazard(model, -2, depth=40)
    for m in (17, 26, 30):
        assert cond_var_increment(short, m) == pytest.approx(deep.z_at(m), rel=1e-10)


def test_e_product_examples():
    t = table(Geometric(0.5), 2)
    for k in (0, 5, 40, 10_000):
        assert e_product(t, k) == pytest.approx(0.25, abs=1e-15)
    model = Poisson(1.0)
    one = table(model, 1)
    for k in (0, 3, 17):
        assert e_product(one, k) == pytest.approx(1 - model.failure_rate(k), rel=1e-14)


def test_e_product_poisson_bracket():
    lam, k = 1.0, 100
    e = e_product(table(Poisson(lam), 2), k)
    # 1 - r_i lies in [lam/(i+1) - (lam/(i+1))^2, lam/(i+1)]
    hi = (lam / (k + 1)) * (lam / (k + 2))
    lo = (lam / (k + 1) - (lam / (k + 1)) ** 2) * (lam / (k + 2) - (lam / (k + 2)) ** 2)
    assert lo <= e <= hi
    assert e == pytest.approx(lam**2 / (101 * 102), rel=0.03)


def test_e_product_rejects_negative_delta():
    with pytest.raises(HazardError):
        e_product(table(Geometric(0.5), -1), 3)


def test_oracle_spot_values():
    model = Geometric(0.5)
    assert cond_moment_oracle(model, table(model, -1), 3, 1) == pytest.approx(0.125, abs=1e-14)
    assert cond_moment_oracle(model, table(model, 1), 0, 2) == pytest.approx(0.0625, abs=1e-14)


# -- invariants ------------------------------------------------------------------


@pytest.mark.parametrize("delta", DELTAS)
@pytest.mark.parametrize("model", MODELS + [Zeta(1.5)], ids=lambda m: m.spec())
def test_two_rate_forms_agree(model, delta):
    k = np.arange(0, 201)
    a = delta_rate(model, delta, k)
    b = delta_rate_product(model, delta, k)
    assert np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a))) <= 1e-12
    if delta < 0:
        assert np.all(a[: -delta] == 0.0)


@pytest.mark.parametrize("delta", DELTAS)
@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.spec())
def test_table_invariants(model, delta):
    t = table(model, delta)
    assert t.tail_bound <= 1e-12
    assert np.all(np.diff(t.theta) >= 0)
    # differencing a running sum loses accuracy relative to its final size
    atol = 8 * np.finfo(float).eps * float(t.theta[-1])
    assert np.allclose(np.diff(t.theta), t.s[1:], rtol=1e-12, atol=atol)
    z = t.z[: min(len(t.z), 60)]
    assert np.all(z > 0)
    if delta < 0:
        assert np.all(np.diff(z) <= 1e-15 * z[:-1])
        k = np.arange(0, len(z) - 1)
        assert np.all(t.z[k + 1] >= model.survival(k - 1) * (1 - 1e-12))
    else:
        zd = t.z_display[: len(z)]
        assert np.max(np.abs(z - zd)) <= 1e-12


@pytest.mark.parametrize("delta", DELTAS)
@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.spec())
def test_oracle_identities(model, delta):
    t = table(model, delta)
    for m in range(-1, 31):
        target = model.survival(m + delta)
        assert cond_moment_oracle(model, t, m, 1) == pytest.approx(target, abs=1e-10)
        assert telescoping_sum(t, m) == pytest.approx(target, abs=1e-10)
        assert cond_moment_oracle(model, t, m, 2) == pytest.approx(cond_var_increment(t, m), abs=1e-10)


# -- construction and persistence ------------------------------------------------


def test_rejects_zero_delta_and_shallow_depth():
    with pytest.raises(HazardError):
        build_hazard(Geometric(0.5), 0)
    with pytest.raises(HazardError):
        build_hazard(Geometric(0.5), -1, depth=10)
    with pytest.raises(HazardError):
        build_hazard(Geometric(0.5), -1, depth=-1)


def test_depth_bounds_table_lookups():
    t = table(Geometric(0.5), -1)
    with pytest.raises(HazardError):
        t.theta_at(t.K + 1)
    with pytest.raises(HazardError):
        t.z_at(t.K + 1)
    assert Geometric(0.5).survival(t.K) < 1e-15


@pytest.mark.parametrize("delta", [-2, 1])
def test_json_round_trip(tmp_path, delta):
    t = table(Poisson(1.0), delta)
    path = tmp_path / "table.json"
    t.dump(path)
    back = HazardTable.load(path)
    assert back.delta == t.delta and back.depth == t.depth and back.model == t.model
    for name in ("s", "theta", "z", "z_display", "e"):
        a, b = getattr(t, name), getattr(back, name)
        assert (a is None and b is None) or np.array_equal(a, b)
    assert back.tail_bound == t.tail_bound


def test_table_is_immutable():
    t = table(Geometric(0.5), 1)
    with pytest.raises(ValueError):
        t.s[0] = 1.0
    with pytest.raises(AttributeError):
        t.delta = 2


def test_zeta_tail_handled_by_euler_maclaurin():
    t = table(Zeta(2.0), -1)
    # y_j = zeta(2, j+2)/zeta(2) ~ 1/((j+1.5) zeta(2)); z_m ~ y_{m-1} for large m
    m = 3000
    assert t.z_at(m) == pytest.approx(Zeta(2.0).survival(m - 1), rel=2e-3)
    assert math.isfinite(t.tail_bound) and t.tail_bound <= 1e-12


@pytest.mark.parametrize("delta", [-2, 1, 3])
def test_vectorised_increments_match_scalar(delta):
    t = build_hazard(Poisson(1.0), delta, depth=16)
    ms = np.array([-1, 0, 5, 16, 17, 20, 31, 18])
    got = cond_var_increments_fn(t, ms)
    want = [cond_var_increment(t, int(m)) for m in ms]
    assert np.allclose(got, want, rtol=1e-12, atol=1e-300)
