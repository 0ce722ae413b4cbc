"""Polynomial factors, their atoms, and measurability.

A factor is an ordered tuple of nonconstant polynomials over the same
(F_p, n). Its atoms are the level sets of x -> (P_1(x), ..., P_m(x)); atom
labels are plain tuples in the factor's order.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from math import comb
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .algebra import Polynomial, as_field, coefficient_matrix, cube
from .errors import AtomNotHit, BudgetExceeded, DimensionMismatch, PreconditionError
from .estimators import EstimatorPlan
from . import linalg, rng

Atom = Tuple[int, ...]


class _Undefined:
    """Marker for atoms that contain no points; Gamma is arbitrary there."""

    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "UNDEFINED"

    def __bool__(self):
        return False


UNDEFINED = _Undefined()


class Factor:
    __slots__ = ("field", "n", "polys", "delta")

    def __init__(self, polys: Sequence[Polynomial], delta: Optional[Sequence[int]] = None,
                 field=None, n: Optional[int] = None):
        polys = tuple(polys)
        if polys:
            field = polys[0].field
            n = polys[0].n
        if field is None or n is None:
            raise ValueError("an empty factor needs explicit field and n")
        self.field = as_field(field)
        self.n = int(n)
        for P in polys:
            if P.field != self.field or P.n != self.n:
                raise DimensionMismatch("factor polynomials must share (field, n)")
            if P.is_constant():
                raise ValueError(f"factor polynomials must be nonconstant, got {P}")
        if delta is not None:
            delta = tuple(int(x) for x in delta)
            if len(delta) != len(polys):
                raise ValueError("need one degree bound per polynomial")
            for P, dl in zip(polys, delta):
                if not 1 <= dl <= P.degree:
                    raise ValueError(f"degree bound {dl} outside [1, {P.degree}] for {P}")
        self.polys = polys
        self.delta = delta

    @property
    def p(self) -> int:
        return self.field.p

    @property
    def dim(self) -> int:
        return len(self.polys)

    @property
    def degree(self) -> int:
        return max((P.degree for P in self.polys), default=0)

    @property
    def dim_vector(self) -> Tuple[int, ...]:
        """(M_1, ..., M_d): how many polynomials of each degree."""
        d = self.degree
        return tuple(sum(1 for P in self.polys if P.degree == i) for i in range(1, d + 1))

    @property
    def size(self) -> int:
        """Number of atom labels, p^dim."""
        return self.p ** self.dim

    def __len__(self):
        return len(self.polys)

    def __iter__(self):
        return iter(self.polys)

    def __getitem__(self, i):
        return self.polys[i]

    def __eq__(self, other):
        return (isinstance(other, Factor) and self.field == other.field and self.n == other.n
                and self.polys == other.polys and self.delta == other.delta)

    def __hash__(self):
        return hash((self.field.p, self.n, self.polys, self.delta))

    def __repr__(self):
        body = ", ".join(str(P) for P in self.polys)
        extra = f", delta={list(self.delta)}" if self.delta is not None else ""
        return f"Factor([{body}]{extra}, p={self.p}, n={self.n})"

    def eval_many(self, points) -> np.ndarray:
        X = np.asarray(points, dtype=np.int64)
        if X.ndim != 2 or X.shape[1] != self.n:
            raise DimensionMismatch(f"expected points of shape (N, {self.n})")
        if not self.polys:
            return np.zeros((X.shape[0], 0), dtype=np.int64)
        return np.stack([P.eval_many(X) for P in self.polys], axis=1)

    def with_delta(self, delta) -> "Factor":
        return Factor(self.polys, delta, self.field, self.n)

    def default_delta(self) -> Tuple[int, ...]:
        return self.delta if self.delta is not None else tuple(P.degree for P in self.polys)


def factor_eval(F: Factor, x: Sequence[int]) -> Atom:
    if len(x) != F.n:
        raise DimensionMismatch(f"point has length {len(x)}, factor has n={F.n}")
    return tuple(P(x) for P in F.polys)


def _enumeration(F: Factor, plan: EstimatorPlan, what: str):
    size = F.p ** F.n
    if plan.mode == "exact":
        if size > plan.exact_budget:
            raise BudgetExceeded(f"exact {what} needs {size} points, budget is {plan.exact_budget}")
        return cube(F.p, F.n), True
    return rng.points(plan.seed, (what,), plan.samples, F.n, F.p), False


def atom_distribution(F: Factor, plan: EstimatorPlan) -> Dict[Atom, float]:
    """Probability of each atom. Exact mode also lists empty atoms when p^dim is small."""
    X, exact = _enumeration(F, plan, "atoms")
    labels = F.eval_many(X)
    uniq, counts = np.unique(labels, axis=0, return_counts=True)
    total = labels.shape[0]
    dist: Dict[Atom, float] = {}
    if exact and F.size <= min(plan.exact_budget, 1 << 20):
        for lab in itertools.product(range(F.p), repeat=F.dim):
            dist[lab] = 0.0
    for row, c in zip(uniq, counts):
        dist[tuple(int(v) for v in row)] = float(c / total)
    return dict(sorted(dist.items()))


@dataclass
class GammaSchedule:
    """gamma(m) = min(A, A * p^(-B m))."""

    A: float = 1.0
    B: float = 1.0

    def __post_init__(self):
        if not 0 < self.A <= 1:
            raise ValueError("A must lie in (0, 1]")
        if self.B < 0:
            raise ValueError("B must be >= 0")

    def __call__(self, m: int, p: int) -> float:
        return min(self.A, self.A * float(p) ** (-self.B * m))

    @classmethod
    def query_access(cls):
        """gamma(m) = 1 / (2 p^m), the choice that makes every atom easy to hit."""
        return cls(0.5, 1.0)

    def as_dict(self):
        return {"A": self.A, "B": self.B}


@dataclass
class DegreeBoundProfile:
    delta: Tuple[int, ...]

    def B(self, r: int) -> int:
        return sum(comb(r, j) for dl in self.delta for j in range(dl + 1))

    def pairs(self, r: int) -> List[Tuple[int, Tuple[int, ...]]]:
        """All (i, I) with I a subset of range(r) and |I| <= delta_i, in canonical order."""
        out = []
        for i, dl in enumerate(self.delta):
            for size in range(min(dl, r) + 1):
                for I in itertools.combinations(range(r), size):
                    out.append((i, I))
        return out


def shifted_polys(F: Factor, r: int, delta: Optional[Sequence[int]] = None, full: bool = False):
    """The polynomials P_i(x + y_I) in variables (x, y_1..y_r), n(r+1) of them.

    Only pairs with |I| <= delta_i are produced unless ``full`` is set.
    Returns a list of ((i, I), polynomial).
    """
    n, f = F.n, F.field
    N = n * (r + 1)
    if full:
        delta = [r] * F.dim
    elif delta is None:
        delta = F.default_delta()
    xs = [Polynomial.var(f, N, i) for i in range(n)]
    ys = [[Polynomial.var(f, N, n * (j + 1) + i) for i in range(n)] for j in range(r)]
    zero = Polynomial.zero(f, N)
    out = []
    for i, I in DegreeBoundProfile(tuple(delta)).pairs(r):
        imgs = [xs[t] + sum((ys[j][t] for j in I), zero) for t in range(n)]
        out.append(((i, I), F.polys[i].substitute(imgs)))
    return out


@dataclass
class Counterexample:
    x: Tuple[int, ...]
    x_other: Tuple[int, ...]
    atom: Atom
    values: Tuple[int, int]


class QueryAccess:
    """Answers Gamma(a) with a single oracle query per atom (rejection sampling)."""

    def __init__(self, F: Factor, oracle: Callable, beta: float, schedule: Optional[GammaSchedule] = None,
                 seed: int = 0):
        self.F = F
        self.oracle = oracle
        self.beta = beta
        self.schedule = schedule
        self.seed = seed

    def __call__(self, a: Atom) -> int:
        return query_gamma(self.F, a, self.oracle, self.beta, self.schedule, self.seed)


class MeasurabilityWitness:
    """Gamma as a partial table, with optional query access for missing atoms.

    When ``exact`` is set the table covers every nonempty atom, so labels
    not in it are empty atoms and map to UNDEFINED.
    """

    def __init__(self, F: Factor, table: Dict[Atom, int], exact: bool,
                 fallback: Optional[QueryAccess] = None, samples: int = 0):
        self.F = F
        self.table = dict(table)
        self.exact = exact
        self.fallback = fallback
        self.samples = samples

    def __call__(self, a: Atom):
        a = tuple(int(v) for v in a)
        if a in self.table:
            return self.table[a]
        if self.exact:
            return UNDEFINED
        if self.fallback is None:
            return UNDEFINED
        try:
            v = self.fallback(a)
        except AtomNotHit:
            return UNDEFINED
        self.table[a] = v
        return v

    def evaluate(self, x) -> int:
        return self(factor_eval(self.F, x))

    def is_constant(self) -> bool:
        return len(set(self.table.values())) <= 1

    def as_dict(self):
        return {
            "exact": self.exact,
            "samples": self.samples,
            "atoms": [[list(k), v] for k, v in sorted(self.table.items())],
        }


def measurability_check(P: Polynomial, F: Factor, plan: Optional[EstimatorPlan] = None):
    """Witness that P = Gamma(F), or two points of one atom where P differs.

    Exact when p^n fits the plan's budget; otherwise checks a sample and
    returns a witness flagged ``exact=False``.
    """
    plan = plan or EstimatorPlan.exact()
    if P.field != F.field or P.n != F.n:
        raise DimensionMismatch("polynomial and factor live over different spaces")
    size = F.p ** F.n
    if size <= plan.exact_budget:
        X = cube(F.p, F.n)
        exact = True
    else:
        X = rng.points(plan.seed, ("measurability",), plan.samples, F.n, F.p)
        exact = False
    labels = F.eval_many(X)
    vals = P.eval_many(X)
    if F.dim == 0:
        inv = np.zeros(len(vals), dtype=np.int64)
        uniq = np.zeros((1, 0), dtype=np.int64)
    else:
        uniq, inv = np.unique(labels, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
    g = len(uniq)
    lo = np.full(g, np.iinfo(np.int64).max)
    hi = np.full(g, -1)
    np.minimum.at(lo, inv, vals)
    np.maximum.at(hi, inv, vals)
    bad = np.nonzero(lo != hi)[0]
    if bad.size:
        # report the bad atom that shows up first in enumeration order
        members_bad = np.isin(inv, bad)
        i0 = int(np.argmax(members_bad))
        grp = inv[i0]
        same = np.nonzero((inv == grp) & (vals != vals[i0]))[0]
        i1 = int(same[0])
        return Counterexample(tuple(int(v) for v in X[i0]), tuple(int(v) for v in X[i1]),
                              tuple(int(v) for v in labels[i0]), (int(vals[i0]), int(vals[i1])))
    table = {tuple(int(v) for v in uniq[j]): int(lo[j]) for j in range(g)}
    return MeasurabilityWitness(F, table, exact, samples=0 if exact else plan.samples)


def query_gamma(F: Factor, a: Atom, f_oracle: Callable, beta: float,
                schedule: Optional[GammaSchedule] = None, seed: int = 0):
    """f at a random point of atom a, found by rejection sampling.

    Draws K = ceil(2 p^dim ln(1/beta)) points. If F is gamma-unbiased with
    gamma(m) <= 1/(2p^m), every atom has mass >= 1/(2 p^dim) and the search
    fails with probability at most beta.
    """
    a = tuple(int(v) % F.p for v in a)
    if len(a) != F.dim:
        raise DimensionMismatch("atom label length differs from factor dimension")
    if schedule is not None and schedule(F.dim, F.p) > 1.0 / (2 * F.p ** F.dim) + 1e-15:
        warnings.warn("schedule is coarser than 1/(2p^m); query access guarantee does not apply")
    if not 0 < beta <= 1:
        raise ValueError("beta must lie in (0, 1]")
    K = max(1, math.ceil(2 * F.size * math.log(1.0 / beta)))
    target = np.array(a, dtype=np.int64)
    batch = min(K, 4096)
    done = 0
    while done < K:
        cnt = min(batch, K - done)
        X = rng.points(seed, ("query", a), cnt, F.n, F.p, start=done)
        hit = np.nonzero(np.all(F.eval_many(X) == target, axis=1))[0]
        if hit.size:
            x = tuple(int(v) for v in X[hit[0]])
            return int(f_oracle(x)) % F.p
        done += cnt
    raise AtomNotHit(f"no point of atom {a} in {K} draws")


def sigma_box_dim(F: Factor, k: int, weighted: bool = False) -> int:
    """Size exponent of the parallelepiped consistency space for k > deg F.

    The literal formula sums over every degree i in [d] once. With
    ``weighted`` each inner sum is multiplied by M_i, the number of
    polynomials of degree i, which is what the exact elimination in
    :func:`consistency_basis` agrees with when some M_i differs from 1.
    """
    d = F.degree
    if k <= d:
        raise PreconditionError(f"need k > deg F = {d}, got k = {k}")
    if weighted:
        M = F.dim_vector
        return sum(M[i - 1] * sum(comb(k, j) for j in range(i + 1)) for i in range(1, d + 1))
    return sum(sum(comb(k, j) for j in range(i + 1)) for i in range(1, d + 1))


def consistency_basis(F: Factor, k: int, budget: int = 200_000) -> List[np.ndarray]:
    """Basis of the coefficient vectors lambda with sum lambda_{i,w} P_i(x + w.y) == 0.

    Coordinates are ordered (i, w) with i major and w the bitmask of the
    0/1 vector over y_1..y_k.
    """
    polys = []
    n, f = F.n, F.field
    N = n * (k + 1)
    xs = [Polynomial.var(f, N, i) for i in range(n)]
    ys = [[Polynomial.var(f, N, n * (j + 1) + i) for i in range(n)] for j in range(k)]
    zero = Polynomial.zero(f, N)
    for P in F.polys:
        for w in range(1 << k):
            imgs = [xs[t] + sum((ys[j][t] for j in range(k) if w >> j & 1), zero) for t in range(n)]
            polys.append(P.substitute(imgs))
    if not polys:
        return []
    M = coefficient_matrix(polys)
    if M.size > budget:
        raise BudgetExceeded(f"consistency matrix has {M.size} entries, budget {budget}")
    return linalg.nullspace(M.T, F.p)


def consistency_value_dim(F: Factor, k: int) -> int:
    return F.dim * (1 << k) - len(consistency_basis(F, k))


def approximation_error(P: Polynomial, F: Factor, plan: Optional[EstimatorPlan] = None) -> float:
    """min over Gamma of Pr(P != Gamma(F)): take the majority value on each atom."""
    plan = plan or EstimatorPlan.exact()
    X, _ = _enumeration(F, plan, "closeness")
    vals = P.eval_many(X)
    if F.dim == 0:
        inv = np.zeros(len(vals), dtype=np.int64)
        g = 1
    else:
        _, inv = np.unique(F.eval_many(X), axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        g = int(inv.max()) + 1
    counts = np.zeros((g, F.p), dtype=np.int64)
    np.add.at(counts, (inv, vals), 1)
    return 1.0 - counts.max(axis=1).sum() / len(vals)
