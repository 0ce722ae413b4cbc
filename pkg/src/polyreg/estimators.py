"""Bias, Gowers norms and output distributions of polynomial phases.

Two modes. ``exact`` enumerates; ``montecarlo`` averages over seeded draws
with sample counts from Hoeffding's inequality.

Exact mode first drops the variables a polynomial does not use. Every
statistic here is invariant under adding dummy variables, so this is exact
and often shrinks the enumeration a lot. Exact Gowers norms for k >= 2 are
computed as an average over k-2 shift directions of the fourth moment of
the Fourier transform, which costs p^(n(k-1)) table entries instead of
p^(n(k+1)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .algebra import Polynomial, cube
from .errors import BudgetExceeded
from . import rng

DEFAULT_BUDGET = 10 ** 7


def hoeffding_samples(eps: float, rho: float) -> int:
    """Samples so that a [-1,1]-valued mean (each of Re and Im) is within eps w.p. >= 1 - rho."""
    if not (eps > 0 and 0 < rho <= 1):
        raise ValueError("need eps > 0 and 0 < rho <= 1")
    return max(1, math.ceil((2.0 / eps ** 2) * math.log(4.0 / rho)))


def hoeffding_eps(samples: int, rho: float) -> float:
    return math.sqrt(2.0 * math.log(4.0 / rho) / samples)


@dataclass(frozen=True)
class EstimatorPlan:
    mode: str = "exact"
    samples: int = 1000
    failure_prob: float = 0.05
    seed: int = 0
    exact_budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        if self.mode not in ("exact", "montecarlo"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if not 0 < self.failure_prob <= 1:
            raise ValueError("failure_prob must lie in (0, 1]")
        if not 0 <= self.seed < (1 << 64):
            raise ValueError("seed must be an unsigned 64-bit integer")

    @classmethod
    def exact(cls, seed: int = 0, exact_budget: int = DEFAULT_BUDGET):
        return cls(mode="exact", seed=seed, exact_budget=exact_budget)

    @classmethod
    def montecarlo(cls, eps: float, rho: float, seed: int = 0, exact_budget: int = DEFAULT_BUDGET):
        return cls(mode="montecarlo", samples=hoeffding_samples(eps, rho), failure_prob=rho,
                   seed=seed, exact_budget=exact_budget)

    @property
    def epsilon(self) -> float:
        """Additive accuracy the sample count buys at the plan's failure probability."""
        return hoeffding_eps(self.samples, self.failure_prob)

    def with_seed(self, seed: int) -> "EstimatorPlan":
        return replace(self, seed=seed)

    def as_dict(self):
        return {"mode": self.mode, "samples": self.samples, "failure_prob": self.failure_prob,
                "seed": self.seed, "exact_budget": self.exact_budget}


@dataclass(frozen=True)
class BiasValue:
    magnitude: float
    complex_mean: complex
    exact: bool = True
    samples: int = 0


@dataclass(frozen=True)
class GowersValue:
    k: int
    power_mean: float
    norm: float
    exact: bool = True
    samples: int = 0
    raw_power: float = field(default=0.0, compare=False)


def roots_of_unity(p: int) -> np.ndarray:
    return np.exp(2j * np.pi * np.arange(p) / p)


def restrict_to_used(P: Polynomial) -> Polynomial:
    """Drop the variables P does not depend on."""
    used = P.variables_used()
    if len(used) == P.n:
        return P
    t = {tuple(e[v] for v in used): c for e, c in P.terms.items()}
    return Polynomial(P.field, len(used), t)


def check_budget(size: int, plan: EstimatorPlan, what: str) -> None:
    if size > plan.exact_budget:
        raise BudgetExceeded(f"exact {what} needs {size} evaluations, budget is {plan.exact_budget}")


def value_table(P: Polynomial, budget: Optional[int] = None) -> np.ndarray:
    """P on all of F_p^n, flattened with the first coordinate slowest."""
    size = P.p ** P.n
    if budget is not None and size > budget:
        raise BudgetExceeded(f"table of size {size} over budget {budget}")
    return P.eval_many(cube(P.p, P.n))


def _mc_points(P: Polynomial, plan: EstimatorPlan, labels, count: int, dim: int):
    return rng.points(plan.seed, labels, count, dim, P.p)


def estimate_bias(P: Polynomial, plan: EstimatorPlan, stream: Sequence = ()) -> BiasValue:
    Q = restrict_to_used(P)
    p = Q.p
    roots = roots_of_unity(p)
    if plan.mode == "exact":
        if Q.degree == 1:
            # a nonconstant affine form is balanced
            return BiasValue(0.0, 0j, True, 0)
        check_budget(p ** Q.n, plan, "bias")
        mean = complex(roots[value_table(Q)].mean())
        return BiasValue(abs(mean), mean, True, 0)
    X = _mc_points(Q, plan, ("bias",) + tuple(stream), plan.samples, Q.n)
    mean = complex(roots[Q.eval_many(X)].mean())
    return BiasValue(abs(mean), mean, False, plan.samples)


def _u2_power(f: np.ndarray) -> float:
    fh = np.fft.fftn(f) / f.size
    return float(np.sum(np.abs(fh) ** 4))


def _uk_power(f: np.ndarray, k: int) -> float:
    if k == 1:
        return float(abs(f.mean()) ** 2)
    if k == 2:
        return _u2_power(f)
    n = f.ndim
    p = f.shape[0]
    total = 0.0
    for h in np.ndindex(*(p,) * n):
        g = np.roll(f, shift=tuple(-x for x in h), axis=tuple(range(n))) * np.conj(f)
        total += _uk_power(g, k - 1)
    return total / (p ** n)


def gowers_exact_size(P: Polynomial, k: int) -> int:
    Q = restrict_to_used(P)
    if Q.degree < k or Q.n == 0:
        return 1
    return Q.p ** (Q.n * max(1, k - 1))


def _finish(k, power, exact, samples):
    clamped = min(1.0, max(0.0, power))
    return GowersValue(k, clamped, clamped ** (1.0 / 2 ** k), exact, samples, power)


def estimate_gowers(P: Polynomial, k: int, plan: EstimatorPlan, stream: Sequence = ()) -> GowersValue:
    """The 2^k-th power of ||e_F(P)||_{U^k} and its root."""
    if k < 1:
        raise ValueError("k must be >= 1")
    Q = restrict_to_used(P)
    p = Q.p
    if plan.mode == "exact":
        if Q.degree < k:
            # the k-fold derivative vanishes identically
            return _finish(k, 1.0, True, 0)
        if Q.degree == 1:
            return _finish(k, 0.0, True, 0)
        check_budget(gowers_exact_size(Q, k), plan, f"U^{k} norm")
        f = roots_of_unity(p)[value_table(Q)].reshape((p,) * Q.n)
        return _finish(k, _uk_power(f, k), True, 0)
    n = Q.n
    X = _mc_points(Q, plan, ("gowers", k) + tuple(stream), plan.samples, n * (k + 1))
    x = X[:, :n]
    ys = [X[:, n * (j + 1): n * (j + 2)] for j in range(k)]
    acc = np.zeros(plan.samples, dtype=np.int64)
    for mask in range(1 << k):
        pt = x.copy()
        size = 0
        for j in range(k):
            if mask >> j & 1:
                pt = pt + ys[j]
                size += 1
        sign = -1 if (k - size) % 2 else 1
        acc = acc + sign * Q.eval_many(pt % p)
    vals = roots_of_unity(p)[acc % p]
    return _finish(k, float(vals.real.mean()), False, plan.samples)


def derivative_distribution(P: Polynomial, a: int, plan: EstimatorPlan, stream: Sequence = ()) -> np.ndarray:
    """mu_a(t) = Pr_x(P(x) = a + t), as a length-p vector indexed by t."""
    Q = restrict_to_used(P)
    p = Q.p
    if plan.mode == "exact":
        check_budget(p ** Q.n, plan, "distribution")
        vals = value_table(Q)
    else:
        vals = Q.eval_many(_mc_points(Q, plan, ("dist",) + tuple(stream), plan.samples, Q.n))
    counts = np.bincount((vals - a) % p, minlength=p)
    return counts / counts.sum()


def correlation(P: Polynomial, Q: Polynomial, plan: EstimatorPlan, stream: Sequence = ()) -> BiasValue:
    """<e(P), e(Q)> = E e(P - Q)."""
    return estimate_bias(P - Q, plan, stream)


def agreement(P: Polynomial, Q: Polynomial, plan: EstimatorPlan, stream: Sequence = ()) -> float:
    """Pr_x(P(x) = Q(x))."""
    return float(derivative_distribution(P - Q, 0, plan, stream)[0])
