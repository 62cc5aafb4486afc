"""Expected maximum of the best-of-k candidate value model.

The model: each of the k candidate actions is independently "bad" with
probability p (value q - c); otherwise its value is uniform on [q - b, q + b].
This module evaluates the closed-form expectation of the maximum, the CDF
machinery behind it (in normalized coordinates where q = 1/2, b = 1/2,
c' = c / 2b), a Monte Carlo estimator kept deliberately independent of the
closed form, and diminishing-returns curves over k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LemmaScenario:
    """Parameters (p, b, c, k, q) of the candidate-value model."""

    p: float
    b: float
    c: float
    k: int
    q: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.p < 1.0:
            raise ValueError(f"p must be in [0, 1), got {self.p}")
        if not 0.0 < self.b <= self.c:
            raise ValueError(f"need 0 < b <= c, got b={self.b}, c={self.c}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")

    @property
    def c_norm(self) -> float:
        """Bad-value offset in normalized coordinates: c' = c / 2b."""
        return self.c / (2.0 * self.b)


def value_cdf(scenario: LemmaScenario, x) -> np.ndarray | float:
    """CDF of one candidate's value in normalized coordinates.

    Piecewise: 0 below -c', p on [-c', 0), p + (1-p)x on [0, 1], 1 above.
    Accepts a scalar or an array of evaluation points.
    """
    x = np.asarray(x, dtype=np.float64)
    p, cn = scenario.p, scenario.c_norm
    out = np.where(
        x < -cn,
        0.0,
        np.where(x < 0.0, p, np.where(x <= 1.0, p + (1.0 - p) * x, 1.0)),
    )
    return float(out) if out.ndim == 0 else out


def max_cdf(scenario: LemmaScenario, x) -> np.ndarray | float:
    """CDF of the maximum of k i.i.d. candidate values: value_cdf ** k."""
    base = np.asarray(value_cdf(scenario, x), dtype=np.float64)
    out = base**scenario.k
    return float(out) if out.ndim == 0 else out


def _geometric_sum(p: float, k: int) -> float:
    """sum_{j=0}^{k} p^j, stable across the whole p range below 1."""
    if 1.0 - p < 1e-9:
        return float(np.sum(p ** np.arange(k + 1, dtype=np.float64)))
    return (1.0 - p ** (k + 1)) / (1.0 - p)


def expected_max(scenario: LemmaScenario) -> float:
    """Closed-form E[max of k candidate values].

        q + b - p^k c - b * (2/(k+1) * sum_{j<=k} p^j - p^k)
    """
    p, b, c, k, q = scenario.p, scenario.b, scenario.c, scenario.k, scenario.q
    s = _geometric_sum(p, k)
    pk = p**k
    return q + b - pk * c - b * (2.0 / (k + 1) * s - pk)


def shortfall_from_best(scenario: LemmaScenario) -> float:
    """Expected gap between the best possible value q + b and the max:

        p^k (c - b) + (2b / (k+1)) * sum_{j<=k} p^j
    """
    p, b, c, k = scenario.p, scenario.b, scenario.c, scenario.k
    return p**k * (c - b) + 2.0 * b / (k + 1) * _geometric_sum(p, k)


_MC_CHUNK = 1 << 17


def monte_carlo_max(
    scenario: LemmaScenario, samples: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Sampled (mean, standard error) of the max of k candidate values.

    Independent oracle for expected_max: draws the mixture directly and never
    touches the closed form.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    p, b, c, k, q = scenario.p, scenario.b, scenario.c, scenario.k, scenario.q
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < samples:
        m = min(_MC_CHUNK, samples - done)
        vals = rng.uniform(q - b, q + b, size=(m, k))
        bad = rng.random(size=(m, k)) < p
        vals[bad] = q - c
        best = vals.max(axis=1)
        total += float(best.sum())
        total_sq += float(np.dot(best, best))
        done += m
    mean = total / samples
    if samples == 1:
        return mean, float("inf")
    var = max(0.0, (total_sq - samples * mean * mean) / (samples - 1))
    return mean, math.sqrt(var / samples)


def diminishing_returns_curve(
    base: LemmaScenario, k_values
) -> list[tuple[int, float, float]]:
    """Rows of (k, expected_max, marginal gain over the previous k).

    The first row's marginal gain is NaN. k_values must be ascending.
    """
    ks = [int(k) for k in k_values]
    if any(b >= a for a, b in zip(ks[1:], ks[:-1])):
        raise ValueError("k_values must be strictly ascending")
    rows: list[tuple[int, float, float]] = []
    prev = None
    for k in ks:
        e = expected_max(LemmaScenario(base.p, base.b, base.c, k, base.q))
        rows.append((k, e, math.nan if prev is None else e - prev))
        prev = e
    return rows


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-10, max_depth: int = 40) -> float:
    """Adaptive Simpson quadrature of f on [a, b] to absolute tolerance tol."""

    def simpson(x0: float, x2: float, f0: float, f1: float, f2: float) -> float:
        return (x2 - x0) / 6.0 * (f0 + 4.0 * f1 + f2)

    def recurse(x0, x2, f0, f1, f2, whole, eps, depth):
        xm = 0.5 * (x0 + x2)
        xl = 0.5 * (x0 + xm)
        xr = 0.5 * (xm + x2)
        fl, fr = f(xl), f(xr)
        left = simpson(x0, xm, f0, fl, f1)
        right = simpson(xm, x2, f1, fr, f2)
        if depth <= 0 or abs(left + right - whole) <= 15.0 * eps:
            return left + right + (left + right - whole) / 15.0
        return recurse(x0, xm, f0, fl, f1, left, eps / 2.0, depth - 1) + recurse(
            xm, x2, f1, fr, f2, right, eps / 2.0, depth - 1
        )

    fa, fb = f(a), f(b)
    fm = f(0.5 * (a + b))
    whole = simpson(a, b, fa, fm, fb)
    return recurse(a, b, fa, fm, fb, whole, tol, max_depth)


# The default cross-check grid: every (p, k, (b, c)) combination below is
# evaluated closed-form vs Monte Carlo in reports and in the test suite.
GRID_P = (0.0, 0.1, 0.3, 0.5, 0.9)
GRID_K = (1, 2, 5, 10, 50)
GRID_BC = ((0.5, 0.5), (0.5, 1.0), (1.0, 2.0))


def default_grid(q: float = 0.0) -> list[LemmaScenario]:
    return [
        LemmaScenario(p=p, b=b, c=c, k=k, q=q)
        for p in GRID_P
        for (b, c) in GRID_BC
        for k in GRID_K
    ]
