"""Approximating a biased polynomial by a function of its derivatives.

Let P have degree d and bias at least delta. Pick random directions
h_1..h_C. For a point x, the values D_{h_j}P(x) = P(x + h_j) - P(x) are
draws from mu_a, the law of P - a with a = P(x), because x + h_j is
uniform. Biased polynomials have distinct mu_a for distinct a, so
comparing the observed histogram with estimates of every mu_r recovers
P(x) for most x. The guess depends on x only through the C derivatives,
which have degree < d.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .algebra import Polynomial, cube, grlex_key
from .errors import DimensionMismatch
from .estimators import EstimatorPlan, value_table
from . import linalg, rng

DEFAULT_MAX_C = 5000
TABLE_LIMIT = 1 << 20


def sample_bound(p: int, delta: float, sigma: float, beta: float) -> int:
    """ceil(p^5 / (delta^2 sigma beta)); saturates at 10^18 for tiny delta."""
    denom = delta * delta * sigma * beta
    if denom <= 0 or p ** 5 / denom >= 1e18:
        return 10 ** 18
    return math.ceil(p ** 5 / denom)


@dataclass
class BvApprox:
    source: Polynomial
    directions: np.ndarray          # (C, n)
    reference_measures: np.ndarray  # (p, p); row a is mu~_a indexed by t
    C: int
    C_bound: int
    params: Dict[str, float] = field(default_factory=dict)

    @property
    def p(self):
        return self.source.p

    def reference(self, a: int) -> np.ndarray:
        return self.reference_measures[a % self.p]

    def observed(self, X) -> np.ndarray:
        """Histogram over t of D_{h_j}P(x) for every row x of X, normalised by C."""
        P = self.source
        p, n = P.p, P.n
        X = np.asarray(X, dtype=np.int64) % p
        N = X.shape[0]
        counts = np.zeros((N, p), dtype=np.int64)
        rows = np.arange(N)
        if p ** n <= TABLE_LIMIT:
            T = value_table(P)
            weights = p ** np.arange(n - 1, -1, -1, dtype=np.int64)
            base = T[X @ weights]
            for h in self.directions:
                d = (T[((X + h) % p) @ weights] - base) % p
                counts[rows, d] += 1
        else:
            base = P.eval_many(X)
            for h in self.directions:
                d = (P.eval_many((X + h) % p) - base) % p
                counts[rows, d] += 1
        return counts / self.C

    def evaluate_many(self, X) -> np.ndarray:
        obs = self.observed(X)
        p = self.p
        dist = np.empty((obs.shape[0], p))
        for r in range(p):
            dist[:, r] = np.abs(obs - self.reference_measures[r][None, :]).sum(axis=1)
        # argmin returns the first minimiser, i.e. the smallest field element
        return np.argmin(dist, axis=1).astype(np.int64)

    def derivative_polys(self) -> List[Polynomial]:
        """D_{h_j}P for each distinct direction, in order of first appearance."""
        dirs = unique_rows(self.directions)
        return shifted_differences(self.source, dirs)

    def derivative_span(self) -> List[Polynomial]:
        return derivative_span(self.source, unique_rows(self.directions))

    def as_dict(self):
        return {"C": self.C, "C_bound": self.C_bound, "params": dict(self.params),
                "distinct_directions": int(len(unique_rows(self.directions)))}


def unique_rows(A: np.ndarray) -> np.ndarray:
    if len(A) == 0:
        return A
    _, idx = np.unique(A, axis=0, return_index=True)
    return A[np.sort(idx)]


def _shift_coefficients(P: Polynomial, H: np.ndarray):
    """Coefficients of x -> P(x + h) for every row h of H.

    Expands P(x + y) once, groups by the x-monomial, and evaluates each
    y-coefficient polynomial at all directions together.
    Returns (monomials, matrix of shape (len(H), len(monomials))).
    """
    n, f = P.n, P.field
    imgs = [Polynomial.var(f, 2 * n, i) + Polynomial.var(f, 2 * n, n + i) for i in range(n)]
    expanded = P.substitute(imgs)
    groups: Dict[Tuple[int, ...], Dict[Tuple[int, ...], int]] = {}
    for e, c in expanded.terms.items():
        groups.setdefault(e[:n], {})[e[n:]] = c
    mons = sorted(groups, key=grlex_key)
    M = np.zeros((len(H), len(mons)), dtype=np.int64)
    for j, ex in enumerate(mons):
        M[:, j] = Polynomial(f, n, groups[ex]).eval_many(H)
    return mons, M


def shifted_differences(P: Polynomial, H: np.ndarray) -> List[Polynomial]:
    if len(H) == 0:
        return []
    mons, M = _shift_coefficients(P, H)
    base = P.coefficient_vector({e: i for i, e in enumerate(mons)})
    out = []
    for row in (M - base[None, :]) % P.p:
        out.append(Polynomial(P.field, P.n, {e: int(c) for e, c in zip(mons, row) if c}))
    return out


def derivative_span(P: Polynomial, H: np.ndarray) -> List[Polynomial]:
    """A reduced basis for the nonconstant parts of {D_h P : h in H}.

    Every D_h P is a linear combination of the basis plus a constant, so a
    function of the D_h P values is also a function of the basis values.
    """
    if len(H) == 0:
        return []
    mons, M = _shift_coefficients(P, H)
    base = P.coefficient_vector({e: i for i, e in enumerate(mons)})
    D = (M - base[None, :]) % P.p
    keep = [j for j, e in enumerate(mons) if sum(e) > 0]
    mons = [mons[j] for j in keep]
    D = D[:, keep]
    if D.size == 0:
        return []
    R, pivots = linalg.rref(D, P.p)
    return [Polynomial(P.field, P.n, {e: int(c) for e, c in zip(mons, R[i]) if c})
            for i in range(len(pivots))]


def bv_approximate(P: Polynomial, delta: float, sigma: float, beta: float, seed: int = 0,
                   max_C: int = DEFAULT_MAX_C, stream: Sequence = ()) -> BvApprox:
    """Random directions plus one shared estimate of the reference measures.

    C comes from the sample bound, capped at ``max_C`` (with a warning).
    The same C points estimate mu~, whose rows are shifts of one another:
    mu~_a(t) = mu~(a + t) with mu~ the empirical law of P.
    """
    for name, v in (("delta", delta), ("sigma", sigma), ("beta", beta)):
        if not 0 < v <= 1:
            raise ValueError(f"{name} must lie in (0, 1]")
    p, n = P.p, P.n
    bound = sample_bound(p, delta, sigma, beta)
    C = bound
    if C > max_C:
        warnings.warn(f"sample bound {bound} capped at {max_C}", RuntimeWarning, stacklevel=2)
        C = max_C
    labels = ("bv",) + tuple(stream)
    dirs = rng.points(seed, labels + ("directions",), C, n, p)
    ref_pts = rng.points(seed, labels + ("reference",), C, n, p)
    freq = np.bincount(P.eval_many(ref_pts), minlength=p) / C
    mu = np.empty((p, p))
    for a in range(p):
        mu[a] = freq[(a + np.arange(p)) % p]
    params = {"delta": delta, "sigma": sigma, "beta": beta, "seed": seed, "max_C": max_C}
    return BvApprox(P, dirs, mu, C, bound, params)


def eval_bv(approx: BvApprox, x: Sequence[int]) -> int:
    if len(x) != approx.source.n:
        raise DimensionMismatch("point has wrong length")
    return int(approx.evaluate_many(np.array([x], dtype=np.int64))[0])


def bv_disagreement(approx: BvApprox, plan: Optional[EstimatorPlan] = None) -> float:
    """Pr_x(P~(x) != P(x)), by enumeration or sampling per the plan."""
    plan = plan or EstimatorPlan.exact()
    P = approx.source
    if plan.mode == "exact" and P.p ** P.n <= plan.exact_budget:
        X = cube(P.p, P.n)
    else:
        X = rng.points(plan.seed, ("bv-check",), plan.samples, P.n, P.p)
    out = np.empty(len(X), dtype=np.int64)
    step = 8192
    for s in range(0, len(X), step):
        out[s:s + step] = approx.evaluate_many(X[s:s + step])
    return float(np.mean(out != P.eval_many(X)))


def separation(P: Polynomial, plan: Optional[EstimatorPlan] = None) -> float:
    """min over a != b of ||mu_a - mu_b||_1 for the exact law of P."""
    plan = plan or EstimatorPlan.exact()
    from .estimators import derivative_distribution
    mu0 = derivative_distribution(P, 0, plan)
    p = P.p
    best = math.inf
    for s in range(1, p):
        # mu_a and mu_b differ by a cyclic shift of b - a
        best = min(best, float(np.abs(mu0 - np.roll(mu0, -s)).sum()))
    return best
