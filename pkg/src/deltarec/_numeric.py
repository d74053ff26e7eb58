"""Compensated summation and tail-sum helpers shared by the hazard and minima code."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy import integrate

# Bernoulli numbers B_2, B_4, B_6 for the Euler-Maclaurin correction terms.
_B2, _B4, _B6 = 1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0


def cumsum_compensated(values: np.ndarray) -> np.ndarray:
    """Running sums with Neumaier error compensation."""
    out = np.empty(len(values), dtype=float)
    total = 0.0
    comp = 0.0
    for i, v in enumerate(values.tolist()):
        t = total + v
        if abs(total) >= abs(v):
            comp += (total - t) + v
        else:
            comp += (v - t) + total
        total = t
        out[i] = total + comp
    return out


def reverse_cumsum_compensated(values: np.ndarray) -> np.ndarray:
    """``out[i] = sum(values[i:])`` with Neumaier compensation."""
    return cumsum_compensated(values[::-1])[::-1].copy()


def light_tail_sum(
    term: Callable[[np.ndarray], np.ndarray],
    start: int,
    *,
    rel_tol: float = 1e-17,
    abs_tol: float = 1e-300,
    chunk: int = 256,
    max_terms: int = 10_000_000,
) -> tuple[float, float]:
    """Sum ``term(i)`` for integers ``i >= start`` with a ratio-domination stop.

    Terms are evaluated in chunks. Summation stops once the trailing terms
    decay with a ratio bounded by ``rho < 1`` and the geometric bound
    ``t_last * rho / (1 - rho)`` on the remainder drops below ``rel_tol``
    times the running total (or below ``abs_tol``).

    Returns ``(total, remainder_bound)``.
    """
    parts: list[float] = []
    lo = start
    total = 0.0
    while lo - start < max_terms:
        idx = np.arange(lo, lo + chunk)
        t = np.asarray(term(idx), dtype=float)
        parts.extend(t.tolist())
        total = math.fsum(parts)
        last = t[-16:]
        if last[-1] == 0.0:
            if np.all(last == 0.0):
                return total, 0.0
        prev = last[:-1]
        nxt = last[1:]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(prev > 0, nxt / prev, 0.0)
        rho = float(np.max(ratios))
        if rho < 1.0:
            bound = float(last[-1]) * rho / (1.0 - rho)
            if bound <= max(rel_tol * abs(total), abs_tol):
                return total, bound
        lo += chunk
        chunk = min(chunk * 2, 1 << 16)
    raise ArithmeticError(f"tail sum from {start} did not converge within {max_terms} terms")


def euler_maclaurin_tail(
    f: Callable[[np.ndarray], np.ndarray], start: float
) -> tuple[float, float]:
    """Approximate ``sum_{i >= start} f(i)`` for a smooth, power-law decaying ``f``.

    Uses the integral from ``start`` to infinity plus the ``f/2``, ``f'``
    and ``f'''`` correction terms; derivatives come from central
    differences. The returned error estimate is the magnitude of the
    first omitted correction plus the quadrature error.
    """
    if start < 100:
        raise ValueError("Euler-Maclaurin tail needs start >= 100")

    def scalar(x: float) -> float:
        return float(f(np.asarray([x], dtype=float))[0])

    integral, quad_err = integrate.quad(
        scalar, start, np.inf, epsabs=0.0, epsrel=1e-13, limit=400
    )
    h = 1e-3 * start
    xs = start + h * np.arange(-3, 4, dtype=float)
    fx = np.asarray(f(xs), dtype=float)
    f0 = fx[3]
    # fourth-order difference for f', second-order for the higher derivatives
    d1 = (8.0 * (fx[4] - fx[2]) - (fx[5] - fx[1])) / (12.0 * h)
    d3 = (fx[5] - 2 * fx[4] + 2 * fx[2] - fx[1]) / (2 * h**3)
    d5 = (fx[6] - 4 * fx[5] + 5 * fx[4] - 5 * fx[2] + 4 * fx[1] - fx[0]) / (2 * h**5)
    corr1 = _B2 / 2.0 * d1
    corr2 = _B4 / 24.0 * d3
    corr3 = _B6 / 720.0 * d5
    total = integral + f0 / 2.0 - corr1 - corr2
    # truncation error of the fourth-order d1 is ~ h^4 f^(5) / 30
    err = abs(corr3) + quad_err + abs(_B2 / 2.0 * h**4 * d5 / 30.0) + 1e-15 * abs(total)
    return total, err
