import itertools
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polyreg.algebra import (Polynomial, PrimeField, cube, derivative_polynomial, directional_derivative,
                             find_linear_dependency, coefficient_matrix, homogeneous_parts,
                             interpolate_from_oracle, poly_eval, taylor_split)
from polyreg.errors import CharacteristicTooSmall, DimensionMismatch, InterpolationError
from polyreg import linalg

import oracles

F2, F3, F5, F7 = (PrimeField(p) for p in (2, 3, 5, 7))


def poly(text, f, n):
    return Polynomial.parse(text, f, n)


@st.composite
def polys(draw, primes=(2, 3, 5, 7), max_n=3, max_d=3):
    p = draw(st.sampled_from(primes))
    n = draw(st.integers(1, max_n))
    f = PrimeField(p)
    terms = draw(st.dictionaries(
        st.tuples(*[st.integers(0, min(p - 1, max_d)) for _ in range(n)]).filter(lambda e: sum(e) <= max_d),
        st.integers(0, p - 1), max_size=5))
    return Polynomial(f, n, terms)


class TestField:
    def test_rejects_composite(self):
        with pytest.raises(ValueError):
            PrimeField(4)

    def test_inverse(self):
        for a in range(1, 7):
            assert a * F7.inv(a) % 7 == 1

    def test_exponent_reduction(self):
        # x^p = x on F_p
        assert poly("x1^5", F5, 1) == poly("x1", F5, 1)
        assert poly("x1^6", F5, 1) == poly("x1^2", F5, 1)


class TestEval:
    def test_zero(self):
        assert poly_eval(Polynomial.zero(F5, 3), (1, 2, 3)) == 0

    def test_fixture(self):
        assert poly_eval(poly("x1*x2 + x3", F5, 3), (2, 3, 4)) == 0

    def test_coordinate(self):
        assert poly_eval(poly("x1", F2, 1), (1,)) == 1

    def test_wrong_length(self):
        with pytest.raises(DimensionMismatch):
            poly_eval(poly("x1", F2, 2), (1,))

    @given(polys())
    @settings(max_examples=60, deadline=None)
    def test_eval_many_matches_oracle(self, P):
        X = cube(P.p, P.n)
        got = P.eval_many(X)
        want = [oracles.ev(P, tuple(x)) for x in X.tolist()]
        assert got.tolist() == want


class TestArithmetic:
    @given(polys(primes=(5,), max_n=2), polys(primes=(5,), max_n=2))
    @settings(max_examples=40, deadline=None)
    def test_ring_ops_pointwise(self, P, Q):
        if P.n != Q.n:
            return
        for x in itertools.product(range(5), repeat=P.n):
            a, b = oracles.ev(P, x), oracles.ev(Q, x)
            assert poly_eval(P + Q, x) == (a + b) % 5
            assert poly_eval(P - Q, x) == (a - b) % 5
            assert poly_eval(P * Q, x) == (a * b) % 5

    def test_parse_and_str_roundtrip(self):
        P = poly("x1*x2 + 3*x3^2 - 1", F5, 3)
        assert Polynomial.parse(str(P), F5, 3) == P


class TestDerivative:
    def test_fixture_e1(self):
        assert directional_derivative(poly("x1*x2", F2, 2), [(1, 0)]) == poly("x2", F2, 2)

    def test_zero_direction(self):
        P = poly("x1*x2 + x2^2", F3, 2)
        assert directional_derivative(P, [(0, 0)]).is_zero()

    def test_linear(self):
        D = directional_derivative(poly("x1", F3, 2), [(2, 0)])
        assert D == Polynomial.constant(F3, 2, 2)

    @given(polys(), st.data())
    @settings(max_examples=60, deadline=None)
    def test_derivative_identity(self, P, data):
        h = tuple(data.draw(st.integers(0, P.p - 1)) for _ in range(P.n))
        D = directional_derivative(P, [h])
        assert D.degree <= max(P.degree - 1, 0)
        for x in itertools.product(range(P.p), repeat=P.n):
            xh = tuple((a + b) % P.p for a, b in zip(x, h))
            assert poly_eval(D, x) == (oracles.ev(P, xh) - oracles.ev(P, x)) % P.p


class TestDerivativePolynomial:
    def test_fixture_x1x2(self):
        DP = derivative_polynomial(poly("x1*x2", F5, 2), 2)
        assert DP.pretty() == "y1_1*y2_2 + y1_2*y2_1"
        assert not DP.has_x

    def test_linear(self):
        DP = derivative_polynomial(poly("x1", F2, 1), 1)
        assert DP.pretty() == "y1_1"

    @given(polys(max_n=2, max_d=2))
    @settings(max_examples=30, deadline=None)
    def test_vanishes_above_degree(self, P):
        assert derivative_polynomial(P, P.degree + 1).poly.is_zero()

    @given(polys(primes=(2, 3), max_n=2, max_d=2), st.integers(1, 2))
    @settings(max_examples=30, deadline=None)
    def test_matches_iterated_derivative(self, P, k):
        # evaluating at (x, h_1..h_k) gives D_{h_1}..D_{h_k} P (x)
        DP = derivative_polynomial(P, k)
        rnd = random.Random(0)
        for _ in range(10):
            x = [rnd.randrange(P.p) for _ in range(P.n)]
            hs = [[rnd.randrange(P.p) for _ in range(P.n)] for _ in range(k)]
            val = poly_eval(directional_derivative(P, hs), x)
            pt = (x if DP.has_x else []) + sum(hs, [])
            assert poly_eval(DP.poly, pt) == val


class TestInterpolation:
    def test_zero(self):
        assert interpolate_from_oracle(lambda x: 0, 3, 2, F3).is_zero()

    def test_linear(self):
        P = poly("x1 + x2", F3, 2)
        assert interpolate_from_oracle(lambda x: poly_eval(P, x), 2, 1, F3) == P

    def test_cubic(self):
        P = poly("x1*x2*x3", F5, 3)
        assert interpolate_from_oracle(lambda x: poly_eval(P, x), 3, 3, F5) == P

    def test_inconsistent(self):
        with pytest.raises(InterpolationError):
            interpolate_from_oracle(lambda x: x[0] * x[1] % 5, 2, 1, F5)

    @given(polys(max_n=3, max_d=3))
    @settings(max_examples=40, deadline=None)
    def test_roundtrip(self, P):
        Q = interpolate_from_oracle(lambda x: oracles.ev(P, x), P.n, max(P.degree, 0), P.field)
        assert Q == P


class TestDependency:
    def test_fixture_f3(self):
        assert find_linear_dependency([poly("x1", F3, 2), poly("x2", F3, 2), poly("x1+x2", F3, 2)]) == (1, 1, 2)

    def test_independent(self):
        assert find_linear_dependency([poly("x1", F3, 2), poly("x2", F3, 2)]) is None

    def test_fixture_f2(self):
        fam = [poly("x1*x2", F2, 3), poly("x1*x2 + x3", F2, 3), poly("x3", F2, 3)]
        assert find_linear_dependency(fam) == (1, 1, 1)

    @given(st.lists(polys(primes=(3,), max_n=2, max_d=2).filter(lambda P: P.n == 2), min_size=1, max_size=5))
    @settings(max_examples=60, deadline=None)
    def test_none_iff_full_rank(self, fam):
        dep = find_linear_dependency(fam)
        r = linalg.rank(coefficient_matrix(fam), 3)
        assert (dep is None) == (r == len(fam))
        if dep is not None:
            acc = Polynomial.zero(F3, 2)
            for c, P in zip(dep, fam):
                acc = acc + P.scale(c)
            assert acc.is_zero()


class TestTaylor:
    def test_x1x2(self):
        head, R = taylor_split(poly("x1*x2", F5, 2))
        assert head == poly("x1*x2", F5, 2) and R.is_zero()

    def test_affine(self):
        head, R = taylor_split(poly("x1 + 3", F5, 1))
        assert head == poly("x1", F5, 1) and R == Polynomial.constant(F5, 1, 3)

    def test_square_plus_linear(self):
        head, R = taylor_split(poly("x1^2 + x2", F7, 2))
        assert head == poly("x1^2", F7, 2) and R == poly("x2", F7, 2)

    def test_small_characteristic(self):
        with pytest.raises(CharacteristicTooSmall):
            taylor_split(poly("x1*x2", F2, 2))

    @given(polys(primes=(5, 7), max_n=3, max_d=3))
    @settings(max_examples=50, deadline=None)
    def test_reconstruction(self, P):
        head, R = taylor_split(P)
        assert R.degree < max(P.degree, 1) or P.degree == 0
        for x in itertools.product(range(P.p), repeat=P.n):
            assert (poly_eval(head, x) + poly_eval(R, x)) % P.p == oracles.ev(P, x)


class TestHomogeneous:
    def test_parts(self):
        parts = homogeneous_parts(poly("x1*x2 + x3 + 1", F5, 3))
        assert [str(h) for h in parts] == ["x1*x2", "x3", "1"]

    def test_homogeneous(self):
        P = poly("x1*x2 + x2*x3", F5, 3)
        assert homogeneous_parts(P) == [P]

    def test_zero(self):
        assert homogeneous_parts(Polynomial.zero(F5, 2)) == []


class TestLinalg:
    @given(st.lists(st.lists(st.integers(0, 6), min_size=3, max_size=3), min_size=1, max_size=4))
    @settings(max_examples=60, deadline=None)
    def test_nullspace(self, rows):
        M = np.array(rows, dtype=np.int64)
        ns = linalg.nullspace(M, 7)
        assert len(ns) + linalg.rank(M, 7) == 3
        for v in ns:
            assert not ((M @ v) % 7).any()

    def test_solve(self):
        A = np.array([[1, 2], [3, 4]])
        x = linalg.solve(A, np.array([5, 6]), 7)
        assert ((A @ x - np.array([5, 6])) % 7 == 0).all()
        assert linalg.solve(np.array([[1, 1], [1, 1]]), np.array([0, 1]), 7) is None
