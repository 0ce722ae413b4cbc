import itertools
from collections import Counter

import numpy as np
import pytest

from polyreg.algebra import Polynomial, PrimeField, linear_combination
from polyreg.errors import CharacteristicTooSmall
from polyreg.estimators import EstimatorPlan
from polyreg.factor import Factor, GammaSchedule, measurability_check, shifted_polys
from polyreg.refine import (check_regularity, refine_strongly_unbiased, refine_unbiased,
                            refine_uniform)

import oracles

F2, F3, F5 = PrimeField(2), PrimeField(3), PrimeField(5)
EXACT = EstimatorPlan.exact()


def fac(texts, f, n, delta=None):
    return Factor([Polynomial.parse(t, f, n) for t in texts], delta)


def assert_revlex_decreasing(report):
    for s in report.steps:
        if "key_before" in s:
            assert tuple(s["key_after"]) < tuple(s["key_before"])


class TestCheck:
    def test_independent_linear(self):
        v = check_regularity(fac(["x1", "x2"], F3, 2), "unbiased", GammaSchedule(1e-6, 0), EXACT)
        assert v.passed and v.witness is None

    def test_x1x2_f2_unbiased_fails(self):
        v = check_regularity(fac(["x1*x2"], F2, 2), "unbiased", GammaSchedule(0.6, 1), EXACT)
        assert not v.passed
        assert list(v.witness["coefficients"]) == [1]
        assert v.measured == pytest.approx(0.5)

    def test_x1x2_f5_uniform_fails(self):
        v = check_regularity(fac(["x1*x2"], F5, 2), "uniform", GammaSchedule(0.4, 0), EXACT)
        assert not v.passed
        assert v.measured == pytest.approx(5 ** -0.5)

    def test_witness_iff_fail(self):
        for texts in (["x1"], ["x1*x2"], ["x1", "x1*x2 + x3"]):
            for notion in ("unbiased", "uniform", "strong"):
                v = check_regularity(fac(texts, F3, 3), notion, GammaSchedule(0.5, 1), EXACT)
                assert (v.witness is None) == v.passed

    def test_scans_whole_space(self):
        v = check_regularity(fac(["x1", "x2", "x3"], F3, 3), "unbiased", GammaSchedule(0.5, 1), EXACT)
        assert v.passed and v.checked == 3 ** 3 - 1


class TestRefineUnbiased:
    def test_independent_unchanged(self):
        F = fac(["x1", "x2"], F3, 2)
        G, rep = refine_unbiased(F, GammaSchedule(0.5, 1), 0.1, 0.1, EXACT)
        assert G == F and rep.success

    def test_dependency_removed(self):
        F = fac(["x1", "x1 + x2", "x2"], F3, 2)
        G, rep = refine_unbiased(F, GammaSchedule(0.5, 1), 0.1, 0.1, EXACT)
        assert len(G) == 2
        assert_revlex_decreasing(rep)

    def test_x1x2_f2(self):
        F = fac(["x1*x2"], F2, 2)
        sched = GammaSchedule(0.6, 1)
        G, rep = refine_unbiased(F, sched, 0.1, 0.1, EXACT)
        assert G.degree == 1
        assert check_regularity(G, "unbiased", sched, EXACT).passed
        assert rep.closeness is not None and rep.closeness <= 0.1
        assert_revlex_decreasing(rep)


class TestRefineUniform:
    def test_linear_unchanged(self):
        F = fac(["x1"], F5, 2)
        G, rep = refine_uniform(F, GammaSchedule(1, 1), 0.1, EXACT)
        assert G == F

    def test_x1x2_f5(self):
        F = fac(["x1*x2"], F5, 2)
        sched = GammaSchedule(1, 1)
        G, rep = refine_uniform(F, sched, 0.1, EXACT)
        assert G.degree == 1 and len(G) == 2
        assert check_regularity(G, "uniform", sched, EXACT).passed
        w = measurability_check(F.polys[0], G)
        for x in itertools.product(range(5), repeat=2):
            assert w.evaluate(x) == x[0] * x[1] % 5
        assert_revlex_decreasing(rep)

    def test_small_characteristic(self):
        with pytest.raises(CharacteristicTooSmall):
            refine_uniform(fac(["x1*x2*x3"], F2, 3), GammaSchedule(1, 1), 0.1, EXACT)


class TestRefineStrong:
    def test_linear_unchanged(self):
        F = fac(["x1"], F3, 2, delta=[1])
        G, rep = refine_strongly_unbiased(F, GammaSchedule(0.5, 1), 0.1, 0.1, EXACT)
        assert G.polys == F.polys and G.delta == (1,)

    def test_identity_absorbed(self):
        # x1(x+y1+y2) - x1(x+y1) - x1(x+y2) + x1(x) = 0 is excluded by delta = 1
        F = fac(["x1"], F3, 2, delta=[1])
        v = check_regularity(F, "strong", GammaSchedule(0.5, 1), EXACT, r_max=2)
        assert v.passed
        full = shifted_polys(F, 2, full=True)
        assert len(full) == 4 and len(shifted_polys(F, 2)) == 3
        Q = linear_combination([q for _, q in full], [1, 2, 2, 1])
        assert Q.is_zero()

    def test_x1x2_f2(self):
        F = fac(["x1*x2"], F2, 2)
        sched = GammaSchedule(0.25, 1)
        G, rep = refine_strongly_unbiased(F, sched, 0.1, 0.1, EXACT)
        assert G.degree == 1
        assert check_regularity(G, "strong", sched, EXACT, r_max=2).passed
        assert_revlex_decreasing(rep)


def _shift_tables(polys, n, p, k, x):
    """Values of P(x + w.y) for all y in F^{nk}, one row per (P, w)."""
    Y = np.array(list(itertools.product(range(p), repeat=n * k)), dtype=np.int64)
    rows = []
    for P in polys:
        for w in itertools.product((0, 1), repeat=k):
            pts = np.tile(np.array(x, dtype=np.int64), (len(Y), 1))
            for j in range(k):
                if w[j]:
                    pts = pts + Y[:, j * n:(j + 1) * n]
            rows.append(P.eval_many(pts % p))
    return np.array(rows)


class TestNearOrthogonality:
    # Combinations of parallelepiped shifts of a uniform factor are either
    # constant in y or have small bias.
    @pytest.mark.parametrize("k", [1, 2])
    def test_rank_four_quadratic(self, k):
        p, n = 3, 4
        F = fac(["x1*x2 + x3*x4"], F3, n)
        assert check_regularity(F, "uniform", GammaSchedule(0.5, 0), EXACT).passed
        phase = np.exp(2j * np.pi / p)
        worst = 0.0
        for x in [(0, 0, 0, 0), (1, 2, 0, 1)]:
            T = _shift_tables(F.polys, n, p, k, x)
            for lam in itertools.product(range(p), repeat=len(T)):
                if not any(lam):
                    continue
                vals = (np.array(lam) @ T) % p
                if (vals == vals[0]).all():
                    continue
                worst = max(worst, abs(np.mean(phase ** vals)))
        # every nonzero quadratic part has rank >= 4, so bias <= 3^-2
        assert worst <= 1 / 9 + 1e-9

    def test_refined_output(self):
        F = fac(["x1*x2"], F5, 2)
        G, _ = refine_uniform(F, GammaSchedule(1, 1), 0.1, EXACT)
        T = _shift_tables(G.polys, 2, 5, 2, (3, 1))
        for lam in itertools.product(range(5), repeat=len(T)):
            vals = (np.array(lam) @ T) % 5
            # linear outputs: every combination is affine in y
            assert (vals == vals[0]).all() or abs(np.mean(np.exp(2j * np.pi * vals / 5))) < 1e-9


class TestStrongEquidistribution:
    @pytest.mark.parametrize("p,texts,delta,n,k,sched,refine", [
        (2, ["x1*x2"], None, 2, 2, GammaSchedule(0.25, 1), True),
        (2, ["x1*x2 + x3*x4 + x5*x6"], [1], 6, 1, GammaSchedule(0.9, 0), False),
        (3, ["x1 + x2", "x3"], [1, 1], 3, 2, GammaSchedule(0.5, 1), False),
    ])
    def test_tv_bound(self, p, texts, delta, n, k, sched, refine):
        G = fac(texts, PrimeField(p), n, delta)
        if refine:
            G, _ = refine_strongly_unbiased(G, sched, 0.1, 0.1, EXACT)
        assert check_regularity(G, "strong", sched, EXACT).passed
        d = max(G.degree, 1)
        gam = sched(G.dim, p)
        fam = shifted_polys(G, k)
        cube = list(itertools.product(range(p), repeat=n))
        x0 = cube[len(cube) // 3]
        counts = Counter()
        for ys in itertools.product(cube, repeat=k):
            pt = tuple(x0) + sum(ys, ())
            counts[tuple(oracles.ev(q, pt) for _, q in fam)] += 1
        total = len(cube) ** k
        B = len(fam)
        # shifts with I empty are constant in y; compare the rest to uniform
        fixed = [j for j, (pi, _) in enumerate(fam) if not pi[1]]
        free = [j for j in range(B) if j not in fixed]
        marg = Counter()
        for pat, c in counts.items():
            marg[tuple(pat[j] for j in free)] += c
        tv = 0.5 * sum(abs(marg.get(v, 0) / total - p ** -len(free))
                       for v in itertools.product(range(p), repeat=len(free)))
        assert tv <= gam ** (1 / 2 ** d) + 1e-9
