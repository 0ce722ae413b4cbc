"""Prime fields and sparse multivariate polynomials over them.

Polynomials are functions F_p^n -> F_p, so every exponent is reduced with
x^p = x as soon as a term is built. A polynomial is a map from exponent
tuples to nonzero coefficients; field elements are plain ints in [0, p).

Variables are numbered from 1 in text (``x1``, ``x2``, ...) and from 0 in
exponent tuples.
"""
from __future__ import annotations

import itertools
import math
import re
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import CharacteristicTooSmall, DimensionMismatch, InterpolationError
from . import linalg, rng

Exps = Tuple[int, ...]

MAX_P = 1 << 16


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return False
        f += 2
    return True


class PrimeField:
    __slots__ = ("p",)

    def __init__(self, p: int):
        p = int(p)
        if not (2 <= p <= MAX_P) or not is_prime(p):
            raise ValueError(f"modulus must be a prime in [2, 2^16], got {p}")
        self.p = p

    def __eq__(self, other):
        return isinstance(other, PrimeField) and other.p == self.p

    def __hash__(self):
        return hash(("F", self.p))

    def __repr__(self):
        return f"F_{self.p}"

    def __len__(self):
        return self.p

    def inv(self, a: int) -> int:
        a %= self.p
        if a == 0:
            raise ZeroDivisionError("0 has no inverse")
        return pow(a, self.p - 2, self.p)

    def elements(self):
        return range(self.p)


def as_field(field) -> PrimeField:
    return field if isinstance(field, PrimeField) else PrimeField(field)


def reduce_exponent(e: int, p: int) -> int:
    # x^p = x, so any positive exponent lands in [1, p-1]
    if e <= 0:
        return 0
    return (e - 1) % (p - 1) + 1


def grlex_key(exps: Exps):
    return (-sum(exps), tuple(-e for e in exps))


class Polynomial:
    """Sparse polynomial over F_p in n variables. Immutable."""

    __slots__ = ("field", "n", "_terms", "_degree", "_hash")

    def __init__(self, field, n: int, terms: Mapping[Sequence[int], int] | None = None):
        self.field = as_field(field)
        self.n = int(n)
        p = self.field.p
        clean: Dict[Exps, int] = {}
        for exps, c in (terms or {}).items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != self.n:
                raise DimensionMismatch(f"monomial {exps} has wrong length for n={n}")
            if any(e < 0 for e in exps):
                raise ValueError("negative exponent")
            exps = tuple(reduce_exponent(e, p) for e in exps)
            clean[exps] = (clean.get(exps, 0) + int(c)) % p
        self._terms = {e: c for e, c in clean.items() if c}
        self._degree = max((sum(e) for e in self._terms), default=0)
        self._hash = None

    # construction helpers

    @classmethod
    def zero(cls, field, n):
        return cls(field, n)

    @classmethod
    def constant(cls, field, n, c):
        return cls(field, n, {(0,) * n: c})

    @classmethod
    def var(cls, field, n, i, coeff=1):
        """The coordinate polynomial x_{i+1} (0-based index i)."""
        e = [0] * n
        e[i] = 1
        return cls(field, n, {tuple(e): coeff})

    @classmethod
    def linear(cls, field, coeffs: Sequence[int], const: int = 0):
        n = len(coeffs)
        terms = {(0,) * n: const}
        for i, c in enumerate(coeffs):
            e = [0] * n
            e[i] = 1
            terms[tuple(e)] = c
        return cls(field, n, terms)

    @classmethod
    def parse(cls, text: str, field, n: int):
        """Parse strings like ``"x1*x2 + 3*x3^2 - 1"``."""
        field = as_field(field)
        src = text.replace(" ", "").replace("**", "^")
        if not src:
            raise ValueError("empty polynomial string")
        if src[0] not in "+-":
            src = "+" + src
        terms: Dict[Exps, int] = {}
        for sign, body in re.findall(r"([+-])([^+-]+)", src):
            coeff = 1
            e = [0] * n
            for factor in body.split("*"):
                m = re.fullmatch(r"x(\d+)(?:\^(\d+))?", factor)
                if m:
                    i = int(m.group(1)) - 1
                    if not 0 <= i < n:
                        raise DimensionMismatch(f"variable {factor} outside n={n}")
                    e[i] += int(m.group(2) or 1)
                elif re.fullmatch(r"\d+", factor):
                    coeff *= int(factor)
                else:
                    raise ValueError(f"cannot parse factor {factor!r}")
            if sign == "-":
                coeff = -coeff
            key = tuple(e)
            terms[key] = terms.get(key, 0) + coeff
        # exponent reduction and merging of collided terms happen in __init__
        return cls(field, n, terms)

    # basic properties

    @property
    def p(self) -> int:
        return self.field.p

    @property
    def terms(self) -> Dict[Exps, int]:
        return dict(self._terms)

    @property
    def degree(self) -> int:
        return self._degree

    def is_zero(self) -> bool:
        return not self._terms

    def is_constant(self) -> bool:
        return all(sum(e) == 0 for e in self._terms)

    def constant_term(self) -> int:
        return self._terms.get((0,) * self.n, 0)

    def sorted_terms(self) -> List[Tuple[Exps, int]]:
        return sorted(self._terms.items(), key=lambda t: grlex_key(t[0]))

    def variables_used(self) -> List[int]:
        used = set()
        for e in self._terms:
            used.update(i for i, x in enumerate(e) if x)
        return sorted(used)

    def __len__(self):
        return len(self._terms)

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.field == other.field and self.n == other.n and self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.field.p, self.n, frozenset(self._terms.items())))
        return self._hash

    def __repr__(self):
        return f"Polynomial({self}, p={self.p}, n={self.n})"

    def __str__(self):
        if not self._terms:
            return "0"
        parts = []
        for e, c in self.sorted_terms():
            vs = [f"x{i + 1}" + (f"^{x}" if x > 1 else "") for i, x in enumerate(e) if x]
            if not vs:
                parts.append(str(c))
            elif c == 1:
                parts.append("*".join(vs))
            else:
                parts.append(f"{c}*" + "*".join(vs))
        return " + ".join(parts)

    # arithmetic

    def _check(self, other: "Polynomial"):
        if self.field != other.field or self.n != other.n:
            raise DimensionMismatch("polynomials live over different (field, n)")

    def _coerce(self, other):
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        if isinstance(other, (int, np.integer)):
            return Polynomial.constant(self.field, self.n, int(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        t = dict(self._terms)
        for e, c in other._terms.items():
            t[e] = t.get(e, 0) + c
        return Polynomial(self.field, self.n, t)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.field, self.n, {e: -c for e, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, c: int) -> "Polynomial":
        c %= self.p
        if c == 0:
            return Polynomial.zero(self.field, self.n)
        return Polynomial(self.field, self.n, {e: v * c for e, v in self._terms.items()})

    def __mul__(self, other):
        if isinstance(other, (int, np.integer)):
            return self.scale(int(other))
        if not isinstance(other, Polynomial):
            return NotImplemented
        self._check(other)
        p = self.p
        out: Dict[Exps, int] = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                e = tuple(reduce_exponent(a + b, p) for a, b in zip(e1, e2))
                out[e] = (out.get(e, 0) + c1 * c2) % p
        return Polynomial(self.field, self.n, out)

    def __rmul__(self, other):
        if isinstance(other, (int, np.integer)):
            return self.scale(int(other))
        return NotImplemented

    def __pow__(self, k: int):
        if k < 0:
            raise ValueError("negative power")
        result = Polynomial.constant(self.field, self.n, 1)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    # evaluation

    def __call__(self, x):
        return poly_eval(self, x)

    def eval_many(self, points) -> np.ndarray:
        """Evaluate on an (N, n) integer array; returns an int64 array of length N."""
        X = np.asarray(points, dtype=np.int64)
        if X.ndim != 2 or X.shape[1] != self.n:
            raise DimensionMismatch(f"expected points of shape (N, {self.n}), got {X.shape}")
        p = self.p
        X = X % p
        out = np.zeros(X.shape[0], dtype=np.int64)
        cache: Dict[Tuple[int, int], np.ndarray] = {}
        for e, c in self._terms.items():
            acc = np.full(X.shape[0], c, dtype=np.int64)
            for i, k in enumerate(e):
                if k == 0:
                    continue
                key = (i, k)
                if key not in cache:
                    cache[key] = _powmod_vec(X[:, i], k, p)
                acc = (acc * cache[key]) % p
            out = (out + acc) % p
        return out

    # structural operations

    def substitute(self, images: Sequence["Polynomial"]) -> "Polynomial":
        """Compose: replace x_i by images[i]. All images must share (field, n')."""
        if len(images) != self.n:
            raise DimensionMismatch("need one image per variable")
        if not images:
            return self
        target = images[0]
        for im in images:
            target._check(im)
        one = Polynomial.constant(self.field, target.n, 1)
        powers: Dict[Tuple[int, int], Polynomial] = {}

        def pw(i, k):
            if (i, k) not in powers:
                powers[(i, k)] = images[i] ** k
            return powers[(i, k)]

        acc: Dict[Exps, int] = {}
        p = self.p
        for e, c in self._terms.items():
            term = one
            for i, k in enumerate(e):
                if k:
                    term = term * pw(i, k)
            for te, tc in term._terms.items():
                acc[te] = (acc.get(te, 0) + c * tc) % p
        return Polynomial(self.field, target.n, acc)

    def shift(self, h: Sequence[int]) -> "Polynomial":
        """The polynomial x -> P(x + h)."""
        if len(h) != self.n:
            raise DimensionMismatch("shift has wrong length")
        imgs = [Polynomial.var(self.field, self.n, i) + int(h[i]) for i in range(self.n)]
        return self.substitute(imgs)

    def embed(self, n_new: int, offset: int = 0) -> "Polynomial":
        """Same polynomial viewed in n_new variables, x_i renamed to x_{offset+i}."""
        if offset + self.n > n_new:
            raise DimensionMismatch("embedding does not fit")
        t = {}
        for e, c in self._terms.items():
            full = [0] * n_new
            full[offset:offset + self.n] = e
            t[tuple(full)] = c
        return Polynomial(self.field, n_new, t)

    def without_constant(self) -> "Polynomial":
        t = dict(self._terms)
        t.pop((0,) * self.n, None)
        return Polynomial(self.field, self.n, t)

    def homogeneous_part(self, k: int) -> "Polynomial":
        return Polynomial(self.field, self.n, {e: c for e, c in self._terms.items() if sum(e) == k})

    def coefficient_vector(self, index: Mapping[Exps, int]) -> np.ndarray:
        v = np.zeros(len(index), dtype=np.int64)
        for e, c in self._terms.items():
            v[index[e]] = c
        return v


def _powmod_vec(x: np.ndarray, k: int, p: int) -> np.ndarray:
    result = np.ones_like(x)
    base = x % p
    while k:
        if k & 1:
            result = (result * base) % p
        base = (base * base) % p
        k >>= 1
    return result


def cube(p: int, n: int) -> np.ndarray:
    """All points of F_p^n as an (p^n, n) array, first coordinate slowest."""
    if n == 0:
        return np.zeros((1, 0), dtype=np.int64)
    grids = np.indices((p,) * n, dtype=np.int64).reshape(n, -1)
    return grids.T.copy()


# ---------------------------------------------------------------------------
# operations


def poly_eval(P: Polynomial, x: Sequence[int]) -> int:
    if len(x) != P.n:
        raise DimensionMismatch(f"point has length {len(x)}, polynomial has n={P.n}")
    p = P.p
    xs = [int(v) % p for v in x]
    total = 0
    for e, c in P._terms.items():
        t = c
        for v, k in zip(xs, e):
            if k:
                t = (t * pow(v, k, p)) % p
        total += t
    return total % p


def directional_derivative(P: Polynomial, hs: Sequence[Sequence[int]]) -> Polynomial:
    """D_{h_1} ... D_{h_k} P as an explicit polynomial."""
    out = P
    for h in hs:
        if len(h) != P.n:
            raise DimensionMismatch("direction has wrong length")
        out = out.shift(h) - out
    return out


class ExtendedPolynomial:
    """A polynomial over blocks of variables (x, y_1, ..., y_k), each of size n.

    When ``has_x`` is False the x block was dropped and the variables are
    just y_1..y_k.
    """

    __slots__ = ("poly", "n", "k", "has_x")

    def __init__(self, poly: Polynomial, n: int, k: int, has_x: bool):
        nb = k + (1 if has_x else 0)
        if poly.n != n * nb:
            raise DimensionMismatch("block layout does not match polynomial size")
        self.poly = poly
        self.n = n
        self.k = k
        self.has_x = has_x

    @property
    def blocks(self) -> List[Tuple[str, int, int]]:
        out = []
        off = 0
        if self.has_x:
            out.append(("x", 0, self.n))
            off = self.n
        for j in range(self.k):
            out.append((f"y{j + 1}", off + j * self.n, off + (j + 1) * self.n))
        return out

    def y_offset(self, j: int) -> int:
        """Start index of block y_{j+1} (0-based j)."""
        return (self.n if self.has_x else 0) + j * self.n

    def diagonal(self) -> Polynomial:
        """Substitute x for every block."""
        f = self.poly.field
        nb = self.k + (1 if self.has_x else 0)
        imgs = [Polynomial.var(f, self.n, i % self.n) for i in range(self.n * nb)]
        return self.poly.substitute(imgs)

    @property
    def degree(self):
        return self.poly.degree

    def __repr__(self):
        return f"ExtendedPolynomial(k={self.k}, n={self.n}, has_x={self.has_x}, {self.poly})"

    def pretty(self) -> str:
        """Render with block names, e.g. ``y1_1*y2_2``."""
        names = []
        for name, lo, hi in self.blocks:
            names.extend(f"{name}_{i + 1}" for i in range(hi - lo))
        parts = []
        for e, c in self.poly.sorted_terms():
            vs = [names[i] + (f"^{x}" if x > 1 else "") for i, x in enumerate(e) if x]
            body = "*".join(vs) if vs else ""
            if not vs:
                parts.append(str(c))
            else:
                parts.append(body if c == 1 else f"{c}*{body}")
        return " + ".join(parts) if parts else "0"


def derivative_polynomial(P: Polynomial, k: int) -> ExtendedPolynomial:
    """Sum over I in [k] of (-1)^(k-|I|) P(x + y_I), as a polynomial in (x, y_1..y_k)."""
    if k < 1:
        raise ValueError("k must be at least 1")
    n, f = P.n, P.field
    N = n * (k + 1)
    xs = [Polynomial.var(f, N, i) for i in range(n)]
    ys = [[Polynomial.var(f, N, n * (j + 1) + i) for i in range(n)] for j in range(k)]
    total = Polynomial.zero(f, N)
    if k <= P.degree:
        for r in range(k + 1):
            sign = -1 if (k - r) % 2 else 1
            for I in itertools.combinations(range(k), r):
                imgs = [xs[i] + sum((ys[j][i] for j in I), Polynomial.zero(f, N)) for i in range(n)]
                total = total + P.substitute(imgs).scale(sign)
    uses_x = any(any(e[:n]) for e in total._terms)
    if k >= P.degree and not uses_x:
        t = {e[n:]: c for e, c in total._terms.items()}
        return ExtendedPolynomial(Polynomial(f, n * k, t), n, k, has_x=False)
    return ExtendedPolynomial(total, n, k, has_x=True)


def monomials_up_to(n: int, d: int, p: int) -> List[Exps]:
    """All exponent vectors with total degree <= d and entries < p, graded-lex order."""
    out = []
    cap = min(d, p - 1)

    def rec(i, left, cur):
        if i == n:
            out.append(tuple(cur))
            return
        for e in range(min(left, cap) + 1):
            cur.append(e)
            rec(i + 1, left - e, cur)
            cur.pop()

    rec(0, d, [])
    out.sort(key=grlex_key)
    return out


def interpolation_points(n: int, d: int, p: int) -> np.ndarray:
    """Deterministic low-weight grid that determines any degree-<=d function.

    For each support S with |S| = j <= d, take the points whose coordinates on
    S range over {1, ..., min(p-1, d-j+1)} and vanish elsewhere.
    """
    pts = [np.zeros(n, dtype=np.int64)]
    for j in range(1, min(d, n) + 1):
        top = min(p - 1, d - j + 1)
        vals = range(1, top + 1)
        for S in itertools.combinations(range(n), j):
            for combo in itertools.product(vals, repeat=j):
                v = np.zeros(n, dtype=np.int64)
                v[list(S)] = combo
                pts.append(v)
    return np.array(pts, dtype=np.int64).reshape(-1, n)


def interpolate_from_oracle(oracle: Callable[[Tuple[int, ...]], int], n: int, d: int, field,
                            probes: int = 16) -> Polynomial:
    """Recover the degree-<=d polynomial behind ``oracle`` from point queries.

    The grid system is square, so a bad oracle is caught by comparing the
    solution with the oracle at ``probes`` extra seeded random points.
    """
    field = as_field(field)
    p = field.p
    mons = monomials_up_to(n, d, p)
    pts = interpolation_points(n, d, p)
    vals = np.array([int(oracle(tuple(int(v) for v in x))) % p for x in pts], dtype=np.int64)
    A = np.ones((len(pts), len(mons)), dtype=np.int64)
    for j, e in enumerate(mons):
        col = np.ones(len(pts), dtype=np.int64)
        for i, k in enumerate(e):
            if k:
                col = (col * _powmod_vec(pts[:, i], k, p)) % p
        A[:, j] = col
    sol = linalg.solve(A, vals, p)
    if sol is None:
        raise InterpolationError(f"oracle is not a polynomial of degree <= {d} (inconsistent system)")
    P = Polynomial(field, n, {e: int(c) for e, c in zip(mons, sol) if c})
    if probes and n:
        for x in rng.points(0, ("interpolation-probe", n, d), probes, n, p):
            x = tuple(int(v) for v in x)
            if poly_eval(P, x) != int(oracle(x)) % p:
                raise InterpolationError(f"oracle disagrees with its degree-{d} interpolant at {x}")
    return P


def monomial_index(polys: Iterable[Polynomial]) -> Dict[Exps, int]:
    mons = set()
    for P in polys:
        mons.update(P._terms)
    return {e: i for i, e in enumerate(sorted(mons, key=grlex_key))}


def coefficient_matrix(polys: Sequence[Polynomial]) -> np.ndarray:
    idx = monomial_index(polys)
    M = np.zeros((len(polys), len(idx)), dtype=np.int64)
    for r, P in enumerate(polys):
        for e, c in P._terms.items():
            M[r, idx[e]] = c
    return M


def find_linear_dependency(polys: Sequence[Polynomial]) -> Optional[Tuple[int, ...]]:
    """Nonzero c with sum c_i P_i == 0 identically, or None.

    The returned vector is scaled so its first nonzero entry is 1.
    """
    polys = list(polys)
    if not polys:
        return None
    for P in polys[1:]:
        polys[0]._check(P)
    p = polys[0].p
    M = coefficient_matrix(polys)
    if M.shape[1] == 0:
        # every polynomial is zero
        return tuple([1] + [0] * (len(polys) - 1))
    basis = linalg.nullspace(M.T, p)
    if not basis:
        return None
    v = basis[0] % p
    lead = int(v[np.nonzero(v)[0][0]])
    v = (v * pow(lead, p - 2, p)) % p
    return tuple(int(c) for c in v)


def taylor_split(Q: Polynomial) -> Tuple[Polynomial, Polynomial]:
    """Split Q = head + R with head = DQ(x,...,x)/k! and deg R < k = deg Q."""
    k = Q.degree
    p = Q.p
    if Q.is_zero():
        return Q, Q
    if k >= p:
        raise CharacteristicTooSmall(f"deg Q = {k} but p = {p}; need p > deg Q to divide by {k}!")
    if k == 0:
        return Q, Polynomial.zero(Q.field, Q.n)
    diag = derivative_polynomial(Q, k).diagonal()
    head = diag.scale(pow(math.factorial(k) % p, p - 2, p))
    return head, Q - head


def homogeneous_parts(P: Polynomial) -> List[Polynomial]:
    """Nonzero homogeneous components, highest degree first."""
    degs = sorted({sum(e) for e in P._terms}, reverse=True)
    return [P.homogeneous_part(k) for k in degs]


def linear_combination(polys: Sequence[Polynomial], coeffs: Sequence[int], field=None, n=None) -> Polynomial:
    if len(polys) != len(coeffs):
        raise DimensionMismatch("need one coefficient per polynomial")
    if not polys:
        return Polynomial.zero(field, n)
    acc: Dict[Exps, int] = {}
    p = polys[0].p
    for P, c in zip(polys, coeffs):
        c %= p
        if not c:
            continue
        for e, v in P._terms.items():
            acc[e] = (acc.get(e, 0) + c * v) % p
    return Polynomial(polys[0].field, polys[0].n, acc)
