"""Regularity checks and the three refinement procedures.

All three loops follow the same induction: find a nonzero combination of
the factor's polynomials whose statistic is too large, replace one
polynomial of top degree by lower-degree derivative polynomials from the
Bogdanov-Viola step, and repeat. Each step lowers the dimension vector in
reverse lexicographic order, which the report records and asserts.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .algebra import ExtendedPolynomial, Polynomial, cube, derivative_polynomial, \
    find_linear_dependency, homogeneous_parts, linear_combination, taylor_split
from .bv import bv_approximate, bv_disagreement, derivative_span, unique_rows
from .errors import BudgetExceeded, CharacteristicTooSmall, Diverged, RefinementBroken
from .estimators import EstimatorPlan, _uk_power, estimate_bias, estimate_gowers, roots_of_unity
from .factor import (Counterexample, DegreeBoundProfile, Factor, GammaSchedule,
                     approximation_error, measurability_check, shifted_polys)

NOTIONS = ("unbiased", "uniform", "strong")
DEFAULT_MAX_ITER = 64
DEFAULT_COMBO_BUDGET = 1 << 20


def default_sigma_d(d: int) -> float:
    return 2.0 ** (-4 * (d + 1))


@dataclass
class RegularityVerdict:
    notion: str
    passed: bool
    witness: Optional[dict] = None
    measured: float = 0.0
    threshold: float = 0.0
    checked: int = 0
    exact: bool = True

    def as_dict(self):
        return {"notion": self.notion, "pass": self.passed, "witness": self.witness,
                "measured": self.measured, "threshold": self.threshold,
                "checked": self.checked, "exact": self.exact}


@dataclass
class RefinementReport:
    notion: str
    input_factor: Factor
    output_factor: Optional[Factor] = None
    steps: List[dict] = field(default_factory=list)
    closeness: Optional[float] = None
    success: bool = False
    final_verdict: Optional[RegularityVerdict] = None
    config: dict = field(default_factory=dict)

    def as_dict(self):
        def fac(F):
            if F is None:
                return None
            return {"polys": [str(P) for P in F.polys],
                    "delta": list(F.delta) if F.delta is not None else None,
                    "dim_vector": list(F.dim_vector)}
        return {"notion": self.notion, "input": fac(self.input_factor),
                "output": fac(self.output_factor), "steps": self.steps,
                "closeness": self.closeness, "success": self.success,
                "final_verdict": self.final_verdict.as_dict() if self.final_verdict else None,
                "config": self.config}


# ---------------------------------------------------------------------------
# statistics of linear combinations


class _ComboStats:
    """Bias / Gowers statistics of combinations of a fixed list of polynomials.

    In exact mode every polynomial is tabulated once on the cube of the
    variables any of them uses, so a combination costs one matrix-vector
    product instead of a fresh enumeration.
    """

    def __init__(self, polys: Sequence[Polynomial], plan: EstimatorPlan, label):
        self.polys = list(polys)
        self.plan = plan
        self.label = label
        self.exact = plan.mode == "exact"
        if not self.polys:
            return
        p = self.polys[0].p
        self.p = p
        used = sorted(set().union(*(P.variables_used() for P in self.polys)))
        self.nvars = len(used)
        if self.exact:
            size = p ** self.nvars
            if size > plan.exact_budget:
                raise BudgetExceeded(f"exact tables need {size} points, budget {plan.exact_budget}")
            X = np.zeros((size, self.polys[0].n), dtype=np.int64)
            X[:, used] = cube(p, self.nvars)
            self.tables = np.stack([P.eval_many(X) for P in self.polys])
            self.roots = roots_of_unity(p)

    def _values(self, coeffs):
        return (np.asarray(coeffs, dtype=np.int64) @ self.tables) % self.p

    def bias(self, coeffs, Q: Polynomial) -> float:
        if Q.is_constant():
            return 1.0
        if self.exact:
            if Q.degree == 1:
                return 0.0
            return float(abs(self.roots[self._values(coeffs)].mean()))
        return estimate_bias(Q, self.plan, (self.label, tuple(int(c) for c in coeffs))).magnitude

    def gowers_power(self, coeffs, Q: Polynomial, k: int) -> float:
        if Q.degree < k:
            return 1.0
        if self.exact:
            if Q.degree == 1:
                return 0.0
            size = self.p ** (self.nvars * max(1, k - 1))
            if size > self.plan.exact_budget:
                raise BudgetExceeded(f"exact U^{k} needs {size} evaluations, budget {self.plan.exact_budget}")
            f = self.roots[self._values(coeffs)].reshape((self.p,) * self.nvars)
            return max(0.0, min(1.0, _uk_power(f, k)))
        return estimate_gowers(Q, k, self.plan, (self.label, tuple(int(c) for c in coeffs))).power_mean


def _combinations(p: int, degrees: Sequence[int]):
    """Nonzero coefficient vectors; the highest-degree positions vary fastest.

    Biased combinations almost always involve top-degree polynomials, so
    putting them first makes failing checks stop early.
    """
    m = len(degrees)
    order = sorted(range(m), key=lambda i: (-degrees[i], i))
    for t in itertools.product(range(p), repeat=m):
        if not any(t):
            continue
        c = [0] * m
        for j, pos in enumerate(order):
            c[pos] = t[m - 1 - j]
        yield c


def _check_space(p: int, m: int, budget: int):
    if p ** m > budget:
        raise BudgetExceeded(f"{p}^{m} = {p ** m} combinations exceed the budget of {budget}")


def check_regularity(F: Factor, notion: str, schedule: GammaSchedule, plan: EstimatorPlan,
                     r_max: Optional[int] = None, combo_budget: int = DEFAULT_COMBO_BUDGET) -> RegularityVerdict:
    """Scan every nonzero combination and fail on the first that is too large.

    unbiased: bias(Q) against 3/4 gamma(dim).
    uniform:  ||e(Q)||_{U^k}^{2^k} against 3/4 gamma(dim)^{2^k}, k = deg Q.
    strong:   bias of sum c_{i,I} P_i(x + y_I) over |I| <= delta_i and
              r = 0..r_max (default deg F) against 3/4 gamma(dim)^{2^d}.
    """
    if notion not in NOTIONS:
        raise ValueError(f"unknown notion {notion!r}")
    p, m = F.p, F.dim
    gam = schedule(m, p)
    exact = plan.mode == "exact"
    if notion == "strong":
        return _check_strong(F, gam, plan, r_max, combo_budget)
    if m == 0:
        return RegularityVerdict(notion, True, None, 0.0, 0.75 * gam, 0, exact)
    _check_space(p, m, combo_budget)
    stats = _ComboStats(F.polys, plan, f"check-{notion}")
    degs = [P.degree for P in F.polys]
    worst = 0.0
    count = 0
    thr_report = 0.75 * gam
    for c in _combinations(p, degs):
        count += 1
        Q = linear_combination(F.polys, c)
        if notion == "unbiased":
            val = stats.bias(c, Q)
            thr = 0.75 * gam
            worst = max(worst, val)
            if val > thr:
                return RegularityVerdict(notion, False, {"coefficients": c, "degree": Q.degree},
                                         val, thr, count, exact)
        else:
            k = max(Q.degree, 1)
            power = stats.gowers_power(c, Q, k)
            thr = 0.75 * gam ** (2 ** k)
            norm = power ** (1.0 / 2 ** k)
            worst = max(worst, norm)
            if power > thr:
                return RegularityVerdict(notion, False,
                                         {"coefficients": c, "degree": k, "power": power},
                                         norm, thr, count, exact)
    return RegularityVerdict(notion, True, None, worst, thr_report, count, exact)


def _check_strong(F: Factor, gam: float, plan: EstimatorPlan, r_max: Optional[int], combo_budget: int):
    d = F.degree
    r_max = d if r_max is None else r_max
    thr = 0.75 * gam ** (2 ** max(d, 1))
    exact = plan.mode == "exact"
    delta = F.default_delta()
    prof = DegreeBoundProfile(delta)
    worst = 0.0
    count = 0
    for r in range(r_max + 1):
        B = prof.B(r)
        if B == 0:
            continue
        _check_space(F.p, B, combo_budget)
        fam = shifted_polys(F, r, delta)
        pairs = [pi for pi, _ in fam]
        polys = [q for _, q in fam]
        stats = _ComboStats(polys, plan, f"check-strong-{r}")
        for c in _combinations(F.p, [q.degree for q in polys]):
            count += 1
            Q = linear_combination(polys, c)
            val = stats.bias(c, Q)
            worst = max(worst, val)
            if val > thr:
                wit = {"r": r, "terms": [[i, list(I), int(cc)] for (i, I), cc in zip(pairs, c) if cc],
                       "kind": "identity" if Q.is_constant() else "bias", "degree": Q.degree}
                return RegularityVerdict("strong", False, wit, val, thr, count, exact)
    return RegularityVerdict("strong", True, None, worst, thr, count, exact)


# ---------------------------------------------------------------------------
# shared bookkeeping


def _revlex_key(polys: Sequence[Polynomial], top: int, delta: Optional[Sequence[int]] = None):
    """Counts by degree from `top` down to 1 (and by delta within a degree)."""
    key = []
    for k in range(top, 0, -1):
        if delta is None:
            key.append(sum(1 for P in polys if P.degree == k))
        else:
            for dl in range(k, 0, -1):
                key.append(sum(1 for P, x in zip(polys, delta) if P.degree == k and x == dl))
    return tuple(key)


def _pick_top(polys: Sequence[Polynomial], coeffs: Sequence[int]) -> int:
    """Largest index among the highest-degree polynomials with a nonzero coefficient."""
    cand = [i for i, c in enumerate(coeffs) if c]
    top = max(polys[i].degree for i in cand)
    return max(i for i in cand if polys[i].degree == top)


def _drop_dependencies(polys: List[Polynomial], steps: List[dict], top: int, extra=None):
    """Remove polynomials until the nonconstant parts are linearly independent."""
    while polys:
        dep = find_linear_dependency([P.without_constant() for P in polys])
        if dep is None:
            break
        before = _revlex_key(polys, top)
        i = _pick_top(polys, dep)
        steps.append({"kind": "dependency", "coefficients": list(dep), "statistic": None,
                      "action": f"removed {polys[i]}", "key_before": list(before)})
        del polys[i]
        if extra is not None:
            del extra[i]
        steps[-1]["key_after"] = list(_revlex_key(polys, top))
    return polys


def _nonconstant(polys: Sequence[Polynomial]) -> List[Polynomial]:
    out = []
    for P in polys:
        Q = P.without_constant()
        if not Q.is_zero():
            out.append(Q)
    return out


def _closeness(originals: Sequence[Polynomial], G: Factor, plan: EstimatorPlan) -> Optional[float]:
    if G.p ** G.n > plan.exact_budget:
        return None
    return max((approximation_error(P, G, EstimatorPlan.exact(exact_budget=plan.exact_budget))
                for P in originals), default=0.0)


def _assert_decreasing(steps: List[dict]):
    for s in steps:
        if "key_before" in s and "key_after" in s:
            assert tuple(s["key_after"]) < tuple(s["key_before"]), f"step did not shrink the factor: {s}"


# ---------------------------------------------------------------------------
# refine_unbiased


def refine_unbiased(F: Factor, schedule: GammaSchedule, sigma: float, rho: float,
                    plan: EstimatorPlan, max_iter: int = DEFAULT_MAX_ITER, max_C: int = 5000):
    """Refine to a gamma-unbiased factor that is sigma-close to refining F."""
    report = RefinementReport("unbiased", F, config={
        "schedule": schedule.as_dict(), "sigma": sigma, "rho": rho, "plan": plan.as_dict(),
        "max_iter": max_iter, "max_C": max_C})
    polys = list(F.polys)
    top = F.degree
    field_, n = F.field, F.n
    for it in range(max_iter + 1):
        _drop_dependencies(polys, report.steps, top)
        G = Factor(polys, field=field_, n=n)
        if G.degree <= 1:
            break
        verdict = check_regularity(G, "unbiased", schedule, plan)
        if verdict.passed:
            break
        if it == max_iter:
            report.output_factor = G
            raise Diverged(f"no unbiased factor after {max_iter} steps", report)
        c = verdict.witness["coefficients"]
        Q = linear_combination(polys, c)
        gam = schedule(G.dim, G.p)
        approx = bv_approximate(Q, delta=min(1.0, gam / 2), sigma=sigma / 2 ** (it + 1),
                                beta=rho / 2 ** (it + 2), seed=plan.seed, max_C=max_C,
                                stream=("refine-unbiased", it))
        new = approx.derivative_span()
        i = _pick_top(polys, c)
        before = _revlex_key(polys, top)
        removed = polys[i]
        polys = polys[:i] + polys[i + 1:] + new
        report.steps.append({
            "kind": "bias", "coefficients": list(c), "statistic": verdict.measured,
            "threshold": verdict.threshold,
            "action": f"replaced {removed} by {len(new)} derivative polynomials",
            "added": [str(P) for P in new], "bv": approx.as_dict(),
            "key_before": list(before), "key_after": list(_revlex_key(polys, top))})
    G = Factor(polys, field=field_, n=n)
    _assert_decreasing(report.steps)
    report.output_factor = G
    report.final_verdict = check_regularity(G, "unbiased", schedule, plan) if G.degree > 1 else \
        RegularityVerdict("unbiased", True, None, 0.0, 0.75 * schedule(G.dim, G.p), 0, True)
    report.closeness = _closeness(F.polys, G, plan)
    report.success = report.final_verdict.passed and (report.closeness is None or report.closeness <= sigma)
    return G, report


# ---------------------------------------------------------------------------
# refine_uniform


def _homogenize(polys: Sequence[Polynomial]) -> List[Polynomial]:
    out = []
    for P in polys:
        out.extend(h for h in homogeneous_parts(P) if h.degree > 0)
    return out


def refine_uniform(F: Factor, schedule: GammaSchedule, rho: float, plan: EstimatorPlan,
                   max_iter: int = DEFAULT_MAX_ITER, max_C: int = 5000,
                   sigma: Optional[float] = None, verify_budget: int = 4096):
    """Refine to a gamma-uniform factor in which every P of F is measurable.

    Needs p > deg F for the Taylor step. After the loop each original
    polynomial is checked against the output exactly; a counterexample
    raises RefinementBroken.
    """
    p = F.p
    if F.degree >= p:
        raise CharacteristicTooSmall(f"uniform refinement needs p > deg F; p = {p}, deg F = {F.degree}")
    report = RefinementReport("uniform", F, config={
        "schedule": schedule.as_dict(), "rho": rho, "plan": plan.as_dict(),
        "max_iter": max_iter, "max_C": max_C, "sigma": sigma})
    top = F.degree
    field_, n = F.field, F.n
    polys = _homogenize(F.polys)
    for it in range(max_iter + 1):
        _drop_dependencies(polys, report.steps, top)
        G = Factor(polys, field=field_, n=n)
        if G.degree <= 1:
            break
        verdict = check_regularity(G, "uniform", schedule, plan)
        if verdict.passed:
            break
        if it == max_iter:
            report.output_factor = G
            raise Diverged(f"no uniform factor after {max_iter} steps", report)
        c = verdict.witness["coefficients"]
        k = verdict.witness["degree"]
        Q = linear_combination(polys, c)
        gam = schedule(G.dim, p)
        DQ = derivative_polynomial(Q, k)
        sig = sigma if sigma is not None else default_sigma_d(k)
        approx = bv_approximate(DQ.poly, delta=min(1.0, gam ** (2 ** k) / 2), sigma=sig,
                                beta=rho / 2 ** (it + 2), seed=plan.seed, max_C=max_C,
                                stream=("refine-uniform", it))
        span = approx.derivative_span()
        diag = [ExtendedPolynomial(s, n, k, DQ.has_x).diagonal() for s in span]
        head, R = taylor_split(Q)
        new = _homogenize(diag + [R])
        i = _pick_top(polys, c)
        before = _revlex_key(polys, top)
        removed = polys[i]
        step = {
            "kind": "uniformity", "coefficients": list(c), "degree": k,
            "statistic": verdict.measured, "power": verdict.witness["power"],
            "threshold": verdict.threshold,
            "action": f"replaced {removed} by diagonal derivative polynomials and the Taylor remainder",
            "added": [str(P) for P in new], "bv": approx.as_dict()}
        if DQ.poly.p ** DQ.poly.n <= verify_budget:
            step["bv_disagreement_exact"] = bv_disagreement(approx)
        polys = polys[:i] + polys[i + 1:] + new
        step["key_before"] = list(before)
        step["key_after"] = list(_revlex_key(polys, top))
        report.steps.append(step)
    G = Factor(polys, field=field_, n=n)
    _assert_decreasing(report.steps)
    report.output_factor = G
    report.final_verdict = check_regularity(G, "uniform", schedule, plan) if G.degree > 1 else \
        RegularityVerdict("uniform", True, None, 0.0, 0.75 * schedule(G.dim, p), 0, True)
    mplan = EstimatorPlan.exact(plan.seed, plan.exact_budget) if plan.mode == "exact" else plan
    for P in F.polys:
        res = measurability_check(P, G, mplan)
        if isinstance(res, Counterexample):
            raise RefinementBroken(f"{P} is not measurable in the refined factor", res)
    report.closeness = 0.0
    report.success = report.final_verdict.passed
    return G, report


# ---------------------------------------------------------------------------
# refine_strongly_unbiased


def _identity_step(polys, delta, steps, top, rmax, plan) -> bool:
    """Look for an identity among the shifted polynomials; lower delta if found."""
    if not polys:
        return False
    G = Factor(polys, delta)
    for r in range(rmax + 1):
        fam = shifted_polys(G, r, delta)
        if not fam:
            continue
        dep = find_linear_dependency([q.without_constant() for _, q in fam])
        if dep is None:
            continue
        pairs = [pi for pi, _ in fam]
        support = [(pairs[j], c) for j, c in enumerate(dep) if c]
        dmax = max(polys[i].degree for (i, _), _ in support)
        i = max(i for (i, _), _ in support if polys[i].degree == dmax)
        I = max((I for (j, I), _ in support if j == i), key=lambda s: (len(s), s))
        before = _revlex_key(polys, top, delta)
        new_delta = len(I) - 1
        action = f"delta({polys[i]}) := {new_delta}"
        if new_delta <= 0:
            action = f"removed {polys[i]}"
            del polys[i]
            del delta[i]
        else:
            delta[i] = new_delta
        steps.append({"kind": "identity", "r": r,
                      "terms": [[j, list(II), int(c)] for (j, II), c in support],
                      "statistic": None, "action": action, "key_before": list(before),
                      "key_after": list(_revlex_key(polys, top, delta))})
        return True
    return False


def refine_strongly_unbiased(F: Factor, schedule: GammaSchedule, sigma: float, beta: float,
                             plan: EstimatorPlan, max_iter: int = DEFAULT_MAX_ITER,
                             max_C: int = 5000):
    """Refine to a strongly gamma-unbiased factor with degree bounds (any characteristic)."""
    report = RefinementReport("strong", F, config={
        "schedule": schedule.as_dict(), "sigma": sigma, "beta": beta, "plan": plan.as_dict(),
        "max_iter": max_iter, "max_C": max_C})
    polys = list(F.polys)
    delta = list(F.default_delta())
    top = F.degree
    field_, n, p = F.field, F.n, F.p
    it = 0
    while True:
        if it > max_iter:
            report.output_factor = Factor(polys, delta, field_, n)
            raise Diverged(f"no strongly unbiased factor after {max_iter} steps", report)
        it += 1
        d = max((P.degree for P in polys), default=0)
        if _identity_step(polys, delta, report.steps, top, d, plan):
            continue
        if d <= 1:
            break
        G = Factor(polys, delta, field_, n)
        verdict = check_regularity(G, "strong", schedule, plan)
        if verdict.passed:
            break
        r = verdict.witness["r"]
        terms = verdict.witness["terms"]
        fam = dict(shifted_polys(G, r, delta))
        QC = linear_combination([fam[(i, tuple(I))] for i, I, _ in terms], [c for _, _, c in terms])
        approx = bv_approximate(QC, delta=min(1.0, verdict.threshold * 2 / 3), sigma=sigma / 2 ** it,
                                beta=beta / 2 ** (it + 1), seed=plan.seed, max_C=max_C,
                                stream=("refine-strong", it))
        H = unique_rows(approx.directions)
        hx = H[:, :n]
        new: List[Polynomial] = []
        per_poly: Dict[int, List[np.ndarray]] = {}
        for i, I, _ in terms:
            comb = hx.copy()
            for j in I:
                comb = comb + H[:, n * (j + 1): n * (j + 2)]
            per_poly.setdefault(i, []).append(comb % p)
        for i in sorted(per_poly):
            dirs = unique_rows(np.concatenate(per_poly[i]))
            new.extend(derivative_span(polys[i], dirs))
        dmax = max(polys[i].degree for i, _, _ in terms)
        i_star = max(i for i, _, _ in terms if polys[i].degree == dmax)
        I_star = max((tuple(I) for i, I, _ in terms if i == i_star), key=lambda s: (len(s), s))
        before = _revlex_key(polys, top, delta)
        removed = polys[i_star]
        nd = len(I_star) - 1
        if nd <= 0:
            del polys[i_star]
            del delta[i_star]
            action = f"removed {removed}"
        else:
            delta[i_star] = nd
            action = f"delta({removed}) := {nd}"
        polys.extend(new)
        delta.extend(P.degree for P in new)
        report.steps.append({
            "kind": "bias", "r": r, "terms": terms, "statistic": verdict.measured,
            "threshold": verdict.threshold, "action": action + f", added {len(new)} shifted derivatives",
            "added": [str(P) for P in new], "bv": approx.as_dict(),
            "key_before": list(before), "key_after": list(_revlex_key(polys, top, delta))})
    G = Factor(polys, delta, field_, n)
    _assert_decreasing(report.steps)
    report.output_factor = G
    report.final_verdict = check_regularity(G, "strong", schedule, plan)
    report.closeness = _closeness(F.polys, G, plan)
    report.success = report.final_verdict.passed and (report.closeness is None or report.closeness <= sigma)
    return G, report
