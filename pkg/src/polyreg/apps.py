"""End-to-end pipelines built from the lower modules.

* polynomials with a large Gowers norm are computed from a factor of lower
  degree (``gowers_to_factor``);
* biased polynomials likewise, in large or small characteristic
  (``bias_to_factor``);
* Reed-Muller decoding when the noise is itself a low-degree polynomial
  (``decode_rm``), using a Goldreich-Levin search over the factor;
* a worst-case to average-case reduction (``worst_to_average``).

Every pipeline re-checks its output by enumeration when the cube is small
and raises a named error instead of returning an unverified answer.
"""
from __future__ import annotations

import contextlib
import itertools
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .algebra import ExtendedPolynomial, Polynomial, derivative_polynomial, linear_combination, taylor_split
from .bv import bv_approximate, bv_disagreement
from .errors import (BudgetExceeded, NoApproximation, NoCorrelatedMultiple,
                     NoHeavyLowDegreeCoefficient, PreconditionError, PromiseViolated,
                     RefinementBroken)
from .estimators import (EstimatorPlan, derivative_distribution, estimate_bias, estimate_gowers,
                         roots_of_unity)
from .factor import (UNDEFINED, Counterexample, Factor, GammaSchedule, MeasurabilityWitness,
                     QueryAccess, measurability_check)
from .refine import _homogenize, _nonconstant, default_sigma_d, refine_strongly_unbiased, \
    refine_uniform
from . import rng

EXHAUSTIVE_LIMIT = 10 ** 6


@dataclass
class FourierEntry:
    eta: Tuple[int, ...]
    coefficient: complex
    magnitude: float

    def as_dict(self):
        return {"eta": list(self.eta), "re": self.coefficient.real, "im": self.coefficient.imag,
                "magnitude": self.magnitude}


@dataclass
class DecodingResult:
    t: int
    factor: Factor
    Q_tilde: Polynomial
    agreement: float
    agreement_exact: bool = True
    trace: List[dict] = field(default_factory=list)

    def as_dict(self):
        return {"t": self.t, "factor": [str(P) for P in self.factor.polys],
                "Q_tilde": str(self.Q_tilde), "degree": self.Q_tilde.degree,
                "agreement": self.agreement, "agreement_exact": self.agreement_exact,
                "trace": self.trace}


@contextlib.contextmanager
def _stage(trace: Optional[list], name: str, **info):
    """Time a stage and keep any warnings it raised in the trace."""
    entry = {"stage": name, **info}
    start = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        yield entry
    entry["seconds"] = round(time.perf_counter() - start, 6)
    msgs = sorted({str(w.message) for w in caught})
    if msgs:
        entry["warnings"] = msgs
    if trace is not None:
        trace.append(entry)


def _exact_plan(plan: EstimatorPlan) -> EstimatorPlan:
    return EstimatorPlan.exact(plan.seed, plan.exact_budget)


def _constant_witness(P: Polynomial) -> Tuple[Factor, MeasurabilityWitness]:
    F = Factor([], field=P.field, n=P.n)
    return F, MeasurabilityWitness(F, {(): P.constant_term}, exact=True)


def _verified_witness(P: Polynomial, G: Factor, plan: EstimatorPlan, beta: float,
                      schedule: Optional[GammaSchedule], err):
    res = measurability_check(P, G, _exact_plan(plan) if G.p ** G.n <= plan.exact_budget else plan)
    if isinstance(res, Counterexample):
        raise err(f"{P} is not measurable in the computed factor; points {res.x} and "
                  f"{res.x_other} share atom {res.atom}")
    if not res.exact:
        res.fallback = QueryAccess(G, P, beta, schedule, plan.seed)
    return res


# ---------------------------------------------------------------------------
# correlated multiple


def find_correlated_multiple(P: Polynomial, k: int, eps: float, beta: float, plan: EstimatorPlan,
                             trace: Optional[list] = None) -> int:
    """First t in 1..p-1 whose estimated U^{k+1} norm of e(tP) reaches 3/4 eps."""
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    if P.degree <= k:
        if trace is not None:
            trace.append({"t": 1, "norm": 1.0, "exact": True})
        return 1
    thr = 0.75 * eps
    seen = []
    for t in range(1, P.p):
        g = estimate_gowers(P.scale(t), k + 1, plan, stream=("t-scan", t))
        seen.append({"t": t, "norm": g.norm, "exact": g.exact})
        if g.norm >= thr:
            if trace is not None:
                trace.extend(seen)
            return t
    if trace is not None:
        trace.extend(seen)
    raise NoCorrelatedMultiple(
        f"U^{k + 1} norm of tP below {thr:.4g} for every nonzero t (max {max(s['norm'] for s in seen):.4g})")


# ---------------------------------------------------------------------------
# computing structured polynomials


def gowers_to_factor(P: Polynomial, delta: float, beta: float, plan: EstimatorPlan,
                     schedule: Optional[GammaSchedule] = None, max_C: int = 5000,
                     trace: Optional[list] = None):
    """A factor of degree d-1 computing P, given ||e(P)||_{U^d} >= delta.

    The bias of the d-fold derivative polynomial equals the 2^d-th power of
    the norm, so it is approximated from its own derivatives. Those are
    restricted to the diagonal, joined with the Taylor remainder of P, and
    the result is refined to a uniform factor.
    """
    d, p = P.degree, P.p
    if not (p > d >= 2):
        raise PreconditionError(f"need |F| > d >= 2, got |F| = {p}, d = {d}")
    schedule = schedule or GammaSchedule.query_access()
    DP = derivative_polynomial(P, d)
    with _stage(trace, "bv-derivative", degree=d) as st:
        approx = bv_approximate(DP.poly, delta=min(1.0, delta ** (2 ** d)), sigma=default_sigma_d(d - 1),
                                beta=beta / 3, seed=plan.seed, max_C=max_C, stream=("gowers-bv",))
        span = approx.derivative_span()
        st["bv"] = approx.as_dict()
        st["span"] = len(span)
    diag = [ExtendedPolynomial(s, P.n, d, DP.has_x).diagonal() for s in span]
    _, Q = taylor_split(P)
    polys = _nonconstant(_homogenize(diag + [Q]))
    if not polys:
        raise PromiseViolated("derivative step produced no nonconstant polynomials")
    with _stage(trace, "refine-uniform") as st:
        G, report = refine_uniform(Factor(polys), schedule, beta / 3, plan, max_C=max_C)
        st["steps"] = len(report.steps)
        st["dim"] = G.dim
        st["dim_vector"] = list(G.dim_vector)
    with _stage(trace, "measurability"):
        wit = _verified_witness(P, G, plan, beta / 3, schedule, RefinementBroken)
    return G, wit


def bias_to_factor(P: Polynomial, delta: float, beta: float, mode: str, plan: EstimatorPlan,
                   schedule: Optional[GammaSchedule] = None, sigma: Optional[float] = None,
                   max_C: int = 5000, trace: Optional[list] = None):
    """A factor of degree d-1 computing P, given bias(P) >= delta.

    ``mode`` picks the refinement: uniform for ``high_char`` (needs p > d),
    strongly unbiased for ``low_char`` (any p).
    """
    if mode not in ("high_char", "low_char"):
        raise ValueError("mode must be 'high_char' or 'low_char'")
    if P.is_constant():
        return _constant_witness(P)
    d, p = P.degree, P.p
    if mode == "high_char" and p <= d:
        raise PreconditionError(f"high_char needs |F| > d, got |F| = {p}, d = {d}")
    schedule = schedule or GammaSchedule.query_access()
    sigma = sigma if sigma is not None else default_sigma_d(d)
    with _stage(trace, "bv", degree=d) as st:
        approx = bv_approximate(P, delta=min(1.0, delta), sigma=sigma, beta=beta / 3,
                                seed=plan.seed, max_C=max_C, stream=("bias-bv",))
        span = approx.derivative_span()
        st["bv"] = approx.as_dict()
        st["span"] = len(span)
        if P.p ** P.n <= 4096:
            st["disagreement_exact"] = bv_disagreement(approx)
    polys = _nonconstant(span)
    if not polys:
        # only a degree-1 P has constant derivatives; it is its own factor
        polys = [P.without_constant()]
    F0 = Factor(polys)
    with _stage(trace, f"refine-{'uniform' if mode == 'high_char' else 'strong'}") as st:
        if mode == "high_char":
            if F0.degree > 1:
                F0 = Factor(_nonconstant(_homogenize(F0.polys)))
            G, report = refine_uniform(F0, schedule, beta / 3, plan, max_C=max_C)
        else:
            G, report = refine_strongly_unbiased(F0, schedule, sigma, beta / 3, plan, max_C=max_C)
        st["steps"] = len(report.steps)
        st["dim"] = G.dim
        st["dim_vector"] = list(G.dim_vector)
    with _stage(trace, "measurability"):
        wit = _verified_witness(P, G, plan, beta / 3, schedule, PromiseViolated)
    return G, wit


# ---------------------------------------------------------------------------
# Goldreich-Levin over F_p


class _Memo:
    """Freezes a (possibly randomised) oracle into a function on F^m."""

    def __init__(self, oracle: Callable, m: int, p: int):
        self.oracle, self.m, self.p = oracle, m, p
        self.cache: Dict[Tuple[int, ...], int] = {}

    def __call__(self, Z: np.ndarray) -> np.ndarray:
        if self.m == 0:
            return np.array([self._value(())] * len(Z), dtype=np.int64)
        if self.p ** self.m < 2 ** 62:
            # rows as base-p integers: 1-d unique is much faster than axis=0
            keys = Z @ (self.p ** np.arange(self.m - 1, -1, -1, dtype=np.int64))
            uniq, first, inv = np.unique(keys, return_index=True, return_inverse=True)
            rows = Z[first]
        else:
            rows, inv = np.unique(Z, axis=0, return_inverse=True)
        vals = np.array([self._value(tuple(int(v) for v in row)) for row in rows], dtype=np.int64)
        return vals[inv.reshape(-1)]

    def _value(self, key: Tuple[int, ...]) -> int:
        if key not in self.cache:
            v = self.oracle(key)
            self.cache[key] = 0 if v is UNDEFINED else int(v) % self.p
        return self.cache[key]


def _gl_exhaustive(f: _Memo, m: int, p: int, zeta: float) -> List[FourierEntry]:
    if m == 0:
        c = complex(roots_of_unity(p)[f(np.zeros((1, 0), dtype=np.int64))[0]])
        return [FourierEntry((), c, abs(c))] if abs(c) >= zeta / 2 else []
    Z = np.array(list(itertools.product(range(p), repeat=m)), dtype=np.int64)
    vals = roots_of_unity(p)[f(Z)].reshape((p,) * m)
    # fftn uses exp(-2 pi i a.z / p), matching E_z e(Gamma(z) - a.z)
    coef = np.fft.fftn(vals) / vals.size
    out = []
    for eta in itertools.product(range(p), repeat=m):
        c = complex(coef[eta])
        if abs(c) >= zeta / 2:
            out.append(FourierEntry(tuple(eta), c, abs(c)))
    return out


def _gl_bucket(f: _Memo, m: int, p: int, zeta: float, rho: float, seed: int,
               budget: int) -> List[FourierEntry]:
    """Prefix search: keep prefixes a whose weight sum_b |f^(a, b)|^2 looks >= zeta^2 / 2."""
    roots = roots_of_unity(p)
    max_alive = math.floor(2 / zeta ** 2) + 1
    n_est = m * p * max_alive + max_alive
    w_samples = max(1, math.ceil(2 / (zeta ** 2 / 4) ** 2 * math.log(4 * n_est / rho)))
    c_samples = max(1, math.ceil(2 / (zeta / (2 * math.sqrt(2))) ** 2 * math.log(4 * n_est / rho)))
    if max(w_samples, c_samples) > budget:
        raise BudgetExceeded(f"Goldreich-Levin needs {max(w_samples, c_samples)} samples per estimate")
    alive: List[Tuple[int, ...]] = [()]
    for j in range(1, m + 1):
        nxt = []
        for a in alive:
            for v in range(p):
                pre = a + (v,)
                lab = ("gl-weight", pre)
                U = rng.points(seed, lab + ("u",), w_samples, j, p)
                U2 = rng.points(seed, lab + ("u2",), w_samples, j, p)
                V = rng.points(seed, lab + ("v",), w_samples, m - j, p)
                fa = roots[f(np.concatenate([U, V], axis=1))]
                fb = roots[f(np.concatenate([U2, V], axis=1))]
                phase = roots[(-((U - U2) @ np.array(pre, dtype=np.int64))) % p]
                est = float(np.mean(fa * np.conj(fb) * phase).real)
                if est >= zeta ** 2 / 2:
                    nxt.append(pre)
        alive = nxt[:max_alive] if len(nxt) > max_alive else nxt
        if not alive:
            return []
    out = []
    for eta in alive:
        Z = rng.points(seed, ("gl-coef", eta), c_samples, m, p)
        phase = roots[(f(Z) - Z @ np.array(eta, dtype=np.int64)) % p]
        c = complex(phase.mean())
        if abs(c) >= zeta / 2:
            out.append(FourierEntry(eta, c, abs(c)))
    return out


def goldreich_levin(gamma_oracle: Callable, m: int, p: int, zeta: float, rho: float = 0.05,
                    seed: int = 0, method: str = "auto", budget: int = 10 ** 7) -> List[FourierEntry]:
    """Characters eta with a large coefficient in e(Gamma) = sum_eta c_eta e(eta . z).

    ``gamma_oracle`` maps a tuple in F^m to a field element; answers are
    memoised so a randomised oracle is queried once per point. The
    ``bucket`` method never enumerates F^m; ``exhaustive`` computes the
    full transform and ``auto`` uses it when p^m <= 10^6. Entries with
    |coefficient| >= zeta/2 are returned, sorted by magnitude.
    """
    if zeta <= 0:
        raise ValueError("zeta must be positive")
    if zeta > 1:
        return []
    if method not in ("auto", "bucket", "exhaustive"):
        raise ValueError("method must be auto, bucket or exhaustive")
    f = _Memo(gamma_oracle, m, p)
    if method == "exhaustive" or (method == "auto" and p ** m <= EXHAUSTIVE_LIMIT):
        out = _gl_exhaustive(f, m, p, zeta)
    else:
        out = _gl_bucket(f, m, p, zeta, rho, seed, budget)
    out.sort(key=lambda e: (-round(e.magnitude, 12), e.eta))
    return out


# ---------------------------------------------------------------------------
# Reed-Muller decoding


def find_shift(P_tilde: Polynomial, Q: Polynomial, delta_prime: float, beta: float,
               plan: EstimatorPlan) -> int:
    """argmax_r Pr(P~ - Q = r), smallest r on ties."""
    D = P_tilde - Q
    if plan.mode == "exact":
        mu = derivative_distribution(D, 0, plan)
    else:
        eps = max(delta_prime, 1e-12) / (8 * D.p ** 2)
        samples = max(plan.samples, math.ceil(math.log(2 * D.p / beta) / (2 * eps ** 2)))
        samples = min(samples, plan.exact_budget)
        mu = derivative_distribution(D, 0, EstimatorPlan("montecarlo", samples, beta, plan.seed,
                                                         plan.exact_budget), stream=("shift",))
    return int(np.argmax(mu))


def _agreement(P: Polynomial, Q: Polynomial, plan: EstimatorPlan) -> Tuple[float, bool]:
    D = P - Q
    if plan.mode == "exact" or D.p ** len(D.variables_used()) <= plan.exact_budget:
        try:
            return float(derivative_distribution(D, 0, _exact_plan(plan))[0]), True
        except BudgetExceeded:
            pass
    return float(derivative_distribution(D, 0, plan.with_seed(plan.seed) if plan.mode == "montecarlo"
                                         else EstimatorPlan.montecarlo(0.01, 0.05, plan.seed),
                                         stream=("agreement",))[0]), False


def decode_rm(P: Polynomial, k: int, eps: float, beta: float, plan: EstimatorPlan,
              max_C: int = 5000, gl_method: str = "auto") -> DecodingResult:
    """A degree-k polynomial agreeing with P noticeably more often than 1/p.

    Promise: some degree-k Q has Pr(P = Q) >= 1/p + eps, and k < deg P < p.
    """
    trace: List[dict] = []
    d, p = P.degree, P.p
    if d <= k:
        return DecodingResult(1, Factor([], field=P.field, n=P.n), P, 1.0, True,
                              [{"stage": "trivial", "reason": "deg P <= k"}])
    if not d < p:
        raise PreconditionError(f"need k < deg P < |F|, got k = {k}, d = {d}, |F| = {p}")
    with _stage(trace, "t-scan") as st:
        scans: List[dict] = []
        t = find_correlated_multiple(P, k, eps, beta / 6, plan, trace=scans)
        st["scan"] = scans
        st["t"] = t
    tP = P.scale(t)
    sigma = eps ** (2 ** (k + 1)) / 4
    schedule = GammaSchedule(min(1.0, sigma), 2.0)
    sub: List[dict] = []
    with _stage(trace, "gowers-to-factor", schedule=schedule.as_dict()) as st:
        F, wit = gowers_to_factor(tP, eps / 2, beta / 3, plan, schedule=schedule, max_C=max_C, trace=sub)
        st["substages"] = sub
        st["dim"] = F.dim
        st["factor"] = [str(G) for G in F.polys]
    m = F.dim
    L = p ** m
    zeta = min(1.0, eps ** (2 ** (k + 1)) / (2 * L))
    with _stage(trace, "goldreich-levin", zeta=zeta) as st:
        entries = goldreich_levin(wit, m, p, zeta, beta / 6, plan.seed, gl_method)
        st["entries"] = len(entries)
    with _stage(trace, "select") as st:
        best = None
        for e in entries:
            Qa = linear_combination(F.polys, e.eta, field=P.field, n=P.n)
            if Qa.degree > k:
                continue
            c = estimate_bias(tP - Qa, plan, stream=("select", e.eta)).magnitude
            if best is None or c > best[0] + 1e-12:
                best = (c, e, Qa)
        if best is None:
            raise NoHeavyLowDegreeCoefficient(
                f"none of {len(entries)} heavy characters gives a form of degree <= {k}")
        corr, entry, Qa = best
        st["eta"] = list(entry.eta)
        st["gl_magnitude"] = entry.magnitude
        st["correlation"] = corr
        st["Q"] = str(Qa)
    with _stage(trace, "shift") as st:
        h = find_shift(tP, Qa, min(1.0, 4 * corr), beta / 6, plan)
        st["h"] = h
    Q_tilde = (Qa + h).scale(P.field.inv(t))
    agree, exact = _agreement(P, Q_tilde, plan)
    trace.append({"stage": "verify", "agreement": agree, "exact": exact,
                  "excess_over_uniform": agree - 1.0 / p})
    return DecodingResult(t, F, Q_tilde, agree, exact, trace)


# ---------------------------------------------------------------------------
# worst case to average case


def _alpha_order(p: int, m: int):
    zero = (0,) * m
    for a in itertools.product(range(p), repeat=m):
        if a != zero:
            yield a
    yield zero


def worst_to_average(P: Polynomial, F: Factor, Lambda, delta: float, beta: float,
                     plan: EstimatorPlan, max_C: int = 5000, scan_budget: int = 10 ** 5,
                     trace: Optional[list] = None):
    """A factor computing P exactly, given a function of F that correlates with P.

    Some combination Q_a = sum a_i P_i then has bias(P - Q_a) >= delta / p^m.
    The first a (nonzero ones first) whose estimate beats 3/4 of that is
    used, and P - Q_a is computed from a factor by the low-characteristic
    bias pipeline.
    """
    p, m = F.p, F.dim
    if p ** m > scan_budget:
        raise BudgetExceeded(f"scan over {p ** m} combinations exceeds budget {scan_budget}")
    dprime = delta / p ** m
    thr = 0.75 * dprime
    chosen = None
    with _stage(trace, "alpha-scan", threshold=thr) as st:
        scanned = 0
        for a in _alpha_order(p, m):
            scanned += 1
            Qa = linear_combination(F.polys, a, field=P.field, n=P.n)
            b = estimate_bias(P - Qa, plan, stream=("w2a", a)).magnitude
            if b > thr:
                chosen = (a, Qa, b)
                break
        st["scanned"] = scanned
        if chosen is None:
            raise NoApproximation(f"no combination of the factor has bias above {thr:.4g}")
        st["alpha"] = list(chosen[0])
        st["bias"] = chosen[2]
    a, Qa, _ = chosen
    R = P - Qa
    sub: List[dict] = []
    with _stage(trace, "bias-to-factor") as st:
        G, _ = bias_to_factor(R, dprime / 2, beta / 3, "low_char", plan, max_C=max_C, trace=sub)
        st["substages"] = sub
    polys = list(G.polys) + [F.polys[i] for i in range(m) if a[i]]
    out = Factor(polys, field=P.field, n=P.n)
    with _stage(trace, "measurability"):
        wit = _verified_witness(P, out, plan, beta / 3, None, PromiseViolated)
    return out, wit
