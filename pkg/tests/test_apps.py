import itertools
import random

import pytest

from polyreg import linalg
from polyreg.algebra import Polynomial, PrimeField, coefficient_matrix
from polyreg.apps import (bias_to_factor, decode_rm, find_correlated_multiple, find_shift,
                          goldreich_levin, gowers_to_factor, worst_to_average)
from polyreg.errors import (NoApproximation, NoCorrelatedMultiple, PipelineError,
                            PreconditionError)
from polyreg.estimators import EstimatorPlan, estimate_gowers
from polyreg.factor import Factor, measurability_check

import oracles

F2, F3, F5, F7 = (PrimeField(p) for p in (2, 3, 5, 7))
EXACT = EstimatorPlan.exact()


def poly(text, f, n):
    return Polynomial.parse(text, f, n)


def computes(P, F, wit):
    return all(wit.evaluate(x) == oracles.ev(P, x) for x in itertools.product(range(P.p), repeat=P.n))


def spans(F, texts):
    target = [poly(t, F.field, F.n) for t in texts]
    r = linalg.rank(coefficient_matrix(list(F.polys)), F.p)
    return linalg.rank(coefficient_matrix(list(F.polys) + target), F.p) == r


class TestCorrelatedMultiple:
    def test_low_degree(self):
        assert find_correlated_multiple(poly("x1 + x2", F5, 2), 1, 1.0, 0.1, EXACT) == 1

    def test_planted(self):
        P = poly("x1 + x2*x3*x4", F5, 4)
        t = find_correlated_multiple(P, 1, 0.28, 0.1, EXACT)
        assert 1 <= t <= 4
        assert estimate_gowers(P.scale(t), 2, EXACT).norm >= 0.14

    def test_none(self):
        with pytest.raises(NoCorrelatedMultiple):
            find_correlated_multiple(poly("x1*x2*x3 + x4*x5*x6", F5, 6), 1, 1.0, 0.1, EXACT)


class TestGowersToFactor:
    def test_x1x2(self):
        P = poly("x1*x2", F5, 2)
        F, wit = gowers_to_factor(P, 0.4, 0.1, EXACT)
        assert F.degree == 1 and spans(F, ["x1", "x2"])
        assert computes(P, F, wit)

    def test_two_products(self):
        P = poly("x1*x2 + x3*x4", F5, 4)
        assert estimate_gowers(P, 2, EXACT).norm == pytest.approx(0.2)
        F, wit = gowers_to_factor(P, 0.15, 0.1, EXACT)
        assert F.degree == 1 and F.dim <= 4
        assert computes(P, F, wit)

    def test_linear_rejected(self):
        with pytest.raises(PreconditionError):
            gowers_to_factor(poly("x1", F5, 2), 0.5, 0.1, EXACT)


class TestBiasToFactor:
    @pytest.mark.parametrize("mode", ["high_char", "low_char"])
    def test_constant(self, mode):
        F, wit = bias_to_factor(Polynomial.constant(F5, 2, 3), 1.0, 0.1, mode, EXACT)
        assert F.dim == 0 and wit.is_constant()

    def test_low_char(self):
        P = poly("x1*x2", F2, 2)
        F, wit = bias_to_factor(P, 0.4, 0.1, "low_char", EXACT)
        assert F.degree == 1 and F.delta is not None
        assert computes(P, F, wit)

    def test_high_char(self):
        P = poly("x1*x2", F7, 2)
        F, wit = bias_to_factor(P, 0.1, 0.1, "high_char", EXACT)
        assert spans(F, ["x1", "x2"]) and computes(P, F, wit)


class TestGoldreichLevin:
    def test_single_character(self):
        out = goldreich_levin(lambda z: (2 * z[0] + z[2]) % 3, 3, 3, 0.5)
        assert [e.eta for e in out] == [(2, 0, 1)]
        assert out[0].coefficient == pytest.approx(1)

    @pytest.mark.parametrize("method", ["exhaustive", "bucket"])
    def test_x1x2(self, method):
        out = goldreich_levin(lambda z: z[0] * z[1] % 2, 2, 2, 0.4, method=method)
        assert sorted(e.eta for e in out) == [(0, 0), (0, 1), (1, 0), (1, 1)]
        assert all(abs(e.magnitude - 0.5) <= 0.2 for e in out)

    def test_large_zeta(self):
        assert goldreich_levin(lambda z: 0, 2, 3, 1.5) == []

    def test_magnitude_is_abs(self):
        for e in goldreich_levin(lambda z: (z[0] ** 2) % 5, 1, 5, 0.2):
            assert e.magnitude == pytest.approx(abs(e.coefficient))

    @pytest.mark.parametrize("gamma,m,p", [
        (lambda z: (z[0] * z[1] + z[2]) % 2, 8, 2),
        (lambda z: (z[0] ** 2 + z[1]) % 3, 5, 3),
    ])
    def test_completeness_and_soundness(self, gamma, m, p):
        zeta, rho = 0.5, 0.05
        spectrum = oracles.fourier(gamma, m, p)
        heavy = {eta for eta, c in spectrum.items() if abs(c) >= zeta}
        assert heavy
        good = 0
        runs = 100
        for s in range(runs):
            out = goldreich_levin(gamma, m, p, zeta, rho, seed=s, method="bucket")
            for e in out:
                assert abs(e.coefficient - spectrum[e.eta]) <= zeta / 2
            good += heavy <= {e.eta for e in out}
        assert good / runs >= 1 - rho - 0.02


class TestFindShift:
    def test_equal(self):
        Q = poly("x1*x2", F5, 2)
        assert find_shift(Q, Q, 1.0, 0.1, EXACT) == 0

    def test_constant_offset(self):
        Q = poly("x1 + x2", F5, 2)
        assert find_shift(Q + 3, Q, 1.0, 0.1, EXACT) == 3

    def test_peak(self):
        # x1*x2 + 2 is 2 on 9 of 25 points
        P, Q = poly("x1*x2 + x3 + 2", F5, 3), poly("x3", F5, 3)
        assert find_shift(P, Q, 0.5, 0.1, EXACT) == 2

    def test_montecarlo_matches(self):
        P, Q = poly("x1*x2 + x3 + 2", F5, 3), poly("x3", F5, 3)
        assert find_shift(P, Q, 0.5, 0.1, EstimatorPlan.montecarlo(0.05, 0.05, seed=4)) == 2


def test_distance_to_correlation():
    rnd = random.Random(2024)
    for _ in range(50):
        p = rnd.choice([2, 3, 5])
        n = 3 if p < 5 else 2
        P = oracles.random_poly(rnd, p, n, 3)
        Q = oracles.random_poly(rnd, p, n, 1)
        # bias P toward Q so the bound is not vacuous
        P = Q + P.scale(rnd.randrange(2))
        best = max(oracles.inner(P.scale(t), Q.scale(t)) for t in range(1, p))
        assert best >= oracles.agreement(P, Q) - 1 / p - 1e-9


class TestDecode:
    def test_trivial(self):
        P = poly("x1 + 2*x2", F5, 3)
        res = decode_rm(P, 1, 0.2, 0.1, EXACT)
        assert res.Q_tilde == P and res.agreement == 1.0

    def test_planted(self):
        P = poly("x1 + x2*x3*x4", F5, 6)
        res = decode_rm(P, 1, 0.2, 0.1, EstimatorPlan.exact(seed=1))
        assert res.Q_tilde.degree <= 1
        assert res.agreement == pytest.approx(oracles.agreement(P, res.Q_tilde))
        assert res.agreement >= 0.25

    def test_selected_form_is_heavy(self):
        P = poly("x1 + x2*x3*x4", F5, 5)
        res = decode_rm(P, 1, 0.2, 0.1, EstimatorPlan.exact(seed=2))
        st = {s["stage"]: s for s in res.trace}
        Q = poly(st["select"]["Q"], F5, 5)
        assert Q.degree <= 1
        delta_prime = 2 * st["goldreich-levin"]["zeta"]
        assert oracles.inner(P.scale(res.t), Q) >= delta_prime / 4

    def test_precondition(self):
        with pytest.raises(PreconditionError):
            decode_rm(poly("x1*x2*x3", F3, 3), 1, 0.2, 0.1, EXACT)

    @pytest.mark.parametrize("seed", range(4))
    def test_output_degree_or_named_error(self, seed):
        rnd = random.Random(seed)
        P = oracles.random_poly(rnd, 5, 4, 3, terms=6, exact_degree=True)
        try:
            res = decode_rm(P, 1, 0.3, 0.1, EstimatorPlan.exact(seed=seed), max_C=500)
        except PipelineError:
            return
        assert res.Q_tilde.degree <= 1

    def test_unstructured_violation_is_named(self):
        P = poly("x1*x2*x3 + x4*x5*x6", F5, 6)
        with pytest.raises(PipelineError):
            decode_rm(P, 1, 1.0, 0.1, EXACT)


class TestWorstToAverage:
    def test_identity(self):
        P = poly("x1*x2 + x3", F3, 3)
        F = Factor([P])
        G, wit = worst_to_average(P, F, measurability_check(P, F), 1.0, 0.1, EXACT)
        assert computes(P, G, wit)

    def test_fixture(self):
        P = poly("x1*x2", F2, 3)
        F = Factor([poly("x1*x2 + x1*x3", F2, 3)])
        trace = []
        G, wit = worst_to_average(P, F, None, 0.5, 0.1, EXACT, trace=trace)
        assert trace[0]["alpha"] == [1]
        assert computes(P, G, wit)

    def test_no_approximation(self):
        P = poly("x1 + x2", F3, 3)
        with pytest.raises(NoApproximation):
            worst_to_average(P, Factor([poly("x3", F3, 3)]), None, 0.5, 0.1, EXACT)

