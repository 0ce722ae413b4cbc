"""Command-line entry point.

Every command writes ``<out-dir>/<name>.report.json``. Exit codes: 0 on
success, 1 when a pipeline raises a named error (or a regularity check
fails), 2 on usage errors such as bad flags or unreadable input files.

Reports are deterministic given argv and seed except for the ``volatile``
block, which holds the timestamp and stage timings.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import os
import sys
import warnings
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__, apps, io, rng
from .algebra import Polynomial, PrimeField, cube
from .bv import bv_approximate, bv_disagreement
from .errors import PipelineError, PreconditionError
from .estimators import EstimatorPlan, derivative_distribution, estimate_bias, estimate_gowers
from .factor import Counterexample, Factor, GammaSchedule, measurability_check
from .refine import (check_regularity, refine_strongly_unbiased, refine_unbiased,
                     refine_uniform)

SEED_ENV = "POLYREG_SEED"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument parsing


def _plan_flags(sp, eps_flag=True):
    sp.add_argument("--mode", choices=["exact", "montecarlo"], default="exact")
    sp.add_argument("--samples", type=int, default=None, help="Monte Carlo sample count")
    if eps_flag:
        sp.add_argument("--eps", dest="est_eps", type=float, default=None,
                        help="Monte Carlo accuracy; sets --samples by Hoeffding's bound")
    sp.add_argument("--rho", type=float, default=0.05, help="failure probability")
    sp.add_argument("--budget", type=int, default=10 ** 7, help="largest exact enumeration")


def _common(sp):
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out-dir", default=".")
    sp.add_argument("--report", default=None, help="report path (default <out-dir>/<command>.report.json)")


def _schedule_flags(sp, A=0.5, B=1.0):
    sp.add_argument("--gammaA", type=float, default=A)
    sp.add_argument("--gammaB", type=float, default=B)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="polyreg", description="Regularity of polynomial factors over F_p.")
    ap.add_argument("--version", action="version", version=f"polyreg {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="bias, Gowers norm or output distribution of a polynomial")
    est.add_argument("statistic", choices=["bias", "gowers", "mu"])
    est.add_argument("--poly", required=True)
    est.add_argument("--k", type=int, default=2, help="Gowers norm order")
    est.add_argument("--a", type=int, default=0, help="shift for mu")
    _plan_flags(est)
    _common(est)

    bv = sub.add_parser("bv", help="approximate a biased polynomial by its derivatives")
    bv.add_argument("--poly", required=True)
    bv.add_argument("--delta", type=float, required=True)
    bv.add_argument("--sigma", type=float, default=0.1)
    bv.add_argument("--beta", type=float, default=0.1)
    bv.add_argument("--max-c", type=int, default=5000)
    _common(bv)

    ref = sub.add_parser("refine", help="refine a factor")
    ref.add_argument("notion", choices=["unbiased", "uniform", "strong"])
    ref.add_argument("--factor", required=True)
    ref.add_argument("--sigma", type=float, default=0.1)
    ref.add_argument("--beta", type=float, default=0.1)
    ref.add_argument("--max-c", type=int, default=5000)
    ref.add_argument("--max-iter", type=int, default=64)
    _schedule_flags(ref)
    _plan_flags(ref)
    _common(ref)

    chk = sub.add_parser("check", help="check a regularity notion")
    chk.add_argument("--factor", required=True)
    chk.add_argument("--notion", choices=["unbiased", "uniform", "strong"], required=True)
    chk.add_argument("--r-max", type=int, default=None)
    _schedule_flags(chk)
    _plan_flags(chk)
    _common(chk)

    dec = sub.add_parser("decode-rm", help="decode a Reed-Muller word with structured noise")
    dec.add_argument("--poly", required=True)
    dec.add_argument("--k", type=int, required=True)
    dec.add_argument("--eps", type=float, required=True)
    dec.add_argument("--beta", type=float, default=0.1)
    dec.add_argument("--max-c", type=int, default=5000)
    _plan_flags(dec, eps_flag=False)
    _common(dec)

    red = sub.add_parser("reduce", help="compute a structured polynomial from a factor")
    red.add_argument("kind", choices=["bias", "gowers", "w2a"])
    red.add_argument("--poly", required=True)
    red.add_argument("--factor", default=None, help="approximating factor (w2a)")
    red.add_argument("--delta", type=float, required=True)
    red.add_argument("--beta", type=float, default=0.1)
    red.add_argument("--char", choices=["high_char", "low_char"], default="low_char")
    red.add_argument("--max-c", type=int, default=5000)
    _plan_flags(red, eps_flag=False)
    _common(red)

    gen = sub.add_parser("gen", help="generate instances")
    gen.add_argument("kind", choices=["planted-rm", "random-poly", "random-factor"])
    gen.add_argument("--p", type=int, required=True)
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--d", type=int, default=2, help="degree (noise degree for planted-rm)")
    gen.add_argument("--k", type=int, default=1, help="code degree for planted-rm")
    gen.add_argument("--m", type=int, default=2, help="factor size")
    gen.add_argument("--terms", type=int, default=4)
    gen.add_argument("--out", default=None, help="instance path")
    gen.add_argument("--budget", type=int, default=10 ** 7)
    _common(gen)
    return ap


# ---------------------------------------------------------------------------
# helpers


def resolve_seed(flag: Optional[int]) -> int:
    if flag is not None:
        seed = flag
    elif os.environ.get(SEED_ENV, "").strip():
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer") from None
    else:
        seed = 0
    if not 0 <= seed < 1 << 64:
        raise UsageError("seed must be an unsigned 64-bit integer")
    return seed


def make_plan(args, seed: int) -> EstimatorPlan:
    if args.mode == "exact":
        return EstimatorPlan.exact(seed, args.budget)
    eps = getattr(args, "est_eps", None)
    if eps is not None:
        return EstimatorPlan.montecarlo(eps, args.rho, seed, args.budget)
    return EstimatorPlan("montecarlo", args.samples or 1000, args.rho, seed, args.budget)


def _read_poly(path) -> Polynomial:
    try:
        return io.read_poly(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except io.FormatError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _read_factor(path) -> Factor:
    try:
        polys, delta, p, n = io.loads_factor(Path(path).read_text())
        return Factor(polys, delta, field=PrimeField(p), n=n)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, (Polynomial, Factor)):
        return str(obj)
    return obj


def _pop_timings(obj, path="", out=None):
    """Move every 'seconds' entry out of obj so the rest is deterministic."""
    out = [] if out is None else out
    if isinstance(obj, dict):
        if "seconds" in obj:
            out.append({"where": path + "/" + str(obj.get("stage", "")), "seconds": obj.pop("seconds")})
        for k, v in obj.items():
            _pop_timings(v, f"{path}/{k}", out)
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _pop_timings(v, f"{path}[{i}]", out)
    return out


def _factor_dict(F: Factor):
    return {"p": F.p, "n": F.n, "dim": F.dim, "degree": F.degree,
            "dim_vector": list(F.dim_vector), "polys": [str(P) for P in F.polys],
            "delta": list(F.delta) if F.delta is not None else None}


def _small(P_or_F, budget) -> bool:
    return P_or_F.p ** P_or_F.n <= budget


# ---------------------------------------------------------------------------
# commands


def cmd_estimate(args, ctx):
    P = _read_poly(args.poly)
    ctx.inputs(args.poly)
    plan = make_plan(args, ctx.seed)
    ctx.config["plan"] = plan.as_dict()
    exact_plan = EstimatorPlan.exact(ctx.seed, args.budget)
    if args.statistic == "bias":
        v = estimate_bias(P, plan)
        ctx.results.update(bias=v.magnitude, mean=v.complex_mean, exact=v.exact, samples=v.samples)
        if not v.exact and _small(P, args.budget):
            ex = estimate_bias(P, exact_plan).magnitude
            ctx.verify("bias_exact", ex, abs(ex - v.magnitude) <= plan.epsilon * math.sqrt(2))
    elif args.statistic == "gowers":
        ctx.config["k"] = args.k
        v = estimate_gowers(P, args.k, plan)
        ctx.results.update(k=v.k, power=v.power_mean, norm=v.norm, exact=v.exact, samples=v.samples)
        if not v.exact and _small(P, args.budget):
            try:
                ex = estimate_gowers(P, args.k, exact_plan).power_mean
                ctx.verify("power_exact", ex, abs(ex - v.power_mean) <= plan.epsilon)
            except PipelineError:
                pass
    else:
        ctx.config["a"] = args.a
        mu = derivative_distribution(P, args.a, plan)
        ctx.results.update(a=args.a, mu=[float(x) for x in mu], exact=plan.mode == "exact")
    return 0


def cmd_bv(args, ctx):
    P = _read_poly(args.poly)
    ctx.inputs(args.poly)
    ctx.config.update(delta=args.delta, sigma=args.sigma, beta=args.beta, max_C=args.max_c)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        approx = bv_approximate(P, args.delta, args.sigma, args.beta, seed=ctx.seed, max_C=args.max_c)
    ctx.results.update(approx.as_dict())
    ctx.results["derivative_span"] = [str(Q) for Q in approx.derivative_span()]
    ctx.results["warnings"] = sorted({str(w.message) for w in caught})
    if _small(P, 10 ** 6):
        dis = bv_disagreement(approx)
        ctx.verify("disagreement_exact", dis, dis <= args.sigma)
    return 0


def cmd_refine(args, ctx):
    F = _read_factor(args.factor)
    ctx.inputs(args.factor)
    plan = make_plan(args, ctx.seed)
    sched = GammaSchedule(args.gammaA, args.gammaB)
    ctx.config.update(plan=plan.as_dict(), schedule=sched.as_dict(), sigma=args.sigma, beta=args.beta,
                      max_C=args.max_c, max_iter=args.max_iter)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if args.notion == "unbiased":
            G, rep = refine_unbiased(F, sched, args.sigma, args.beta, plan, args.max_iter, args.max_c)
        elif args.notion == "uniform":
            G, rep = refine_uniform(F, sched, args.beta, plan, args.max_iter, args.max_c)
        else:
            G, rep = refine_strongly_unbiased(F, sched, args.sigma, args.beta, plan, args.max_iter, args.max_c)
    ctx.results.update(rep.as_dict())
    ctx.results["warnings"] = sorted({str(w.message) for w in caught})
    out = ctx.out_path("refined.fac")
    out.write_text(io.dumps_factor(G.polys, G.p, G.n, G.delta))
    ctx.outputs(out)
    if rep.final_verdict is not None:
        ctx.verify("final_check", rep.final_verdict.measured, rep.final_verdict.passed)
    if rep.closeness is not None:
        ctx.verify("closeness", rep.closeness, rep.closeness <= args.sigma)
    return 0


def cmd_check(args, ctx):
    F = _read_factor(args.factor)
    ctx.inputs(args.factor)
    plan = make_plan(args, ctx.seed)
    sched = GammaSchedule(args.gammaA, args.gammaB)
    ctx.config.update(plan=plan.as_dict(), schedule=sched.as_dict(), notion=args.notion, r_max=args.r_max)
    v = check_regularity(F, args.notion, sched, plan, r_max=args.r_max)
    ctx.results.update(v.as_dict())
    ctx.verify("regular", v.measured, v.passed)
    return 0 if v.passed else 1


def cmd_decode(args, ctx):
    P = _read_poly(args.poly)
    ctx.inputs(args.poly)
    plan = make_plan(args, ctx.seed)
    ctx.config.update(plan=plan.as_dict(), k=args.k, eps=args.eps, beta=args.beta, max_C=args.max_c)
    res = apps.decode_rm(P, args.k, args.eps, args.beta, plan, max_C=args.max_c)
    ctx.results.update(res.as_dict())
    out = ctx.out_path("q.poly")
    io.write_poly(out, res.Q_tilde)
    ctx.outputs(out)
    ctx.verify("degree", res.Q_tilde.degree, res.Q_tilde.degree <= args.k)
    if res.agreement_exact:
        ctx.verify("agreement_exact", res.agreement, res.agreement > 1.0 / P.p)
    return 0


def cmd_reduce(args, ctx):
    P = _read_poly(args.poly)
    ctx.inputs(args.poly)
    plan = make_plan(args, ctx.seed)
    ctx.config.update(plan=plan.as_dict(), delta=args.delta, beta=args.beta, max_C=args.max_c)
    trace: List[dict] = []
    if args.kind == "bias":
        ctx.config["char"] = args.char
        G, wit = apps.bias_to_factor(P, args.delta, args.beta, args.char, plan, max_C=args.max_c, trace=trace)
    elif args.kind == "gowers":
        G, wit = apps.gowers_to_factor(P, args.delta, args.beta, plan, max_C=args.max_c, trace=trace)
    else:
        if args.factor is None:
            raise UsageError("reduce w2a needs --factor")
        F = _read_factor(args.factor)
        ctx.inputs(args.factor)
        G, wit = apps.worst_to_average(P, F, None, args.delta, args.beta, plan, max_C=args.max_c, trace=trace)
    ctx.results.update(factor=_factor_dict(G), witness=wit.as_dict(), trace=trace)
    out = ctx.out_path("factor.fac")
    out.write_text(io.dumps_factor(G.polys, G.p, G.n, G.delta))
    ctx.outputs(out)
    if _small(P, plan.exact_budget):
        res = measurability_check(P, G, EstimatorPlan.exact(ctx.seed, plan.exact_budget))
        ctx.verify("measurable_exact", None, not isinstance(res, Counterexample))
    return 0


def _random_poly(gen: np.random.Generator, field, n, d, terms) -> Polynomial:
    p = field.p
    out = {}
    while len(out) < terms:
        deg = int(gen.integers(1, d + 1))
        e = [0] * n
        for _ in range(deg):
            e[int(gen.integers(n))] += 1
        if any(x >= p for x in e):
            continue
        out[tuple(e)] = int(gen.integers(1, p))
    P = Polynomial(field, n, out)
    return P if P.degree == d else P + Polynomial.var(field, n, 0) ** d


def cmd_gen(args, ctx):
    try:
        field = PrimeField(args.p)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    n, d = args.n, args.d
    if n < 1 or d < 1 or d >= args.p * n:
        raise UsageError("need n >= 1 and 1 <= d")
    gen = rng.generator(ctx.seed, "gen", args.kind)
    ctx.config.update(p=args.p, n=n, d=d, k=args.k, m=args.m, terms=args.terms)
    if args.kind == "planted-rm":
        if not args.k < d < args.p or d + 1 > n:
            raise UsageError("planted-rm needs k < d < p and n > d")
        # code word: a random degree-k polynomial through x1; noise: a product of d other variables
        Q = Polynomial.var(field, n, 0)
        if args.k > 1:
            Q = Q + _random_poly(gen, field, n, args.k, args.terms)
        vs = sorted(int(v) for v in gen.choice(np.arange(1, n), size=d, replace=False))
        N = Polynomial.constant(field, n, int(gen.integers(1, args.p)))
        for v in vs:
            N = N * Polynomial.var(field, n, v)
        P = Q + N
        declared = 1.0 - (1.0 - 1.0 / args.p) ** d
        ctx.results.update(codeword=str(Q), noise=str(N), poly=str(P), planted_agreement=declared)
        out = Path(args.out) if args.out else ctx.out_path("planted.poly")
        io.write_poly(out, P)
        qout = out.with_name(out.stem + ".codeword.poly")
        io.write_poly(qout, Q)
        ctx.outputs(out, qout)
        if _small(P, args.budget):
            X = cube(args.p, n)
            exact = float(np.mean(P.eval_many(X) == Q.eval_many(X)))
            ctx.verify("planted_agreement_exact", exact, abs(exact - declared) < 1e-12)
    elif args.kind == "random-poly":
        P = _random_poly(gen, field, n, d, args.terms)
        ctx.results.update(poly=str(P), degree=P.degree)
        out = Path(args.out) if args.out else ctx.out_path("random.poly")
        io.write_poly(out, P)
        ctx.outputs(out)
    else:
        polys = [_random_poly(gen, field, n, d, args.terms) for _ in range(args.m)]
        ctx.results.update(polys=[str(P) for P in polys])
        out = Path(args.out) if args.out else ctx.out_path("random.fac")
        out.write_text(io.dumps_factor(polys, args.p, n))
        ctx.outputs(out)
    return 0


COMMANDS = {"estimate": cmd_estimate, "bv": cmd_bv, "refine": cmd_refine, "check": cmd_check,
            "decode-rm": cmd_decode, "reduce": cmd_reduce, "gen": cmd_gen}


class _Context:
    def __init__(self, args, argv, seed):
        self.args = args
        self.argv = list(argv)
        self.seed = seed
        self.config = {}
        self.results = {}
        self.verification = {}
        self.input_hashes = {}
        self.output_hashes = {}
        self.out_dir = Path(args.out_dir)

    def inputs(self, *paths):
        for p in paths:
            self.input_hashes[str(p)] = io.file_digest(p)

    def outputs(self, *paths):
        for p in paths:
            self.output_hashes[str(p)] = io.file_digest(p)

    def out_path(self, name) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name

    def verify(self, name, value, ok):
        self.verification[name] = {"value": value, "pass": bool(ok)}

    def report_name(self):
        a = self.args
        sub = {"estimate": "statistic", "refine": "notion", "reduce": "kind", "gen": "kind"}.get(a.command)
        return f"{a.command}-{getattr(a, sub)}" if sub else a.command

    def write(self, status, error=None):
        body = {
            "command": self.args.command,
            "argv": self.argv,
            "seed": self.seed,
            "config": self.config,
            "inputs": self.input_hashes,
            "outputs": self.output_hashes,
            "results": self.results,
            "verification": self.verification,
            "status": status,
            "error": error,
        }
        body = _jsonable(body)
        timings = _pop_timings(body)
        body["volatile"] = {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(), "timings": timings}
        path = Path(self.args.report) if self.args.report else self.out_path(self.report_name() + ".report.json")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(body, sort_keys=True, indent=2) + "\n")
        return path


def run(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        seed = resolve_seed(args.seed)
    except UsageError as exc:
        print(f"polyreg: error: {exc}", file=sys.stderr)
        return 2
    ctx = _Context(args, argv, seed)
    try:
        code = COMMANDS[args.command](args, ctx)
    except UsageError as exc:
        print(f"polyreg {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (PipelineError, PreconditionError) as exc:
        name = type(exc).__name__
        print(f"polyreg {args.command}: {name}: {exc}", file=sys.stderr)
        ctx.write("error", {"name": name, "message": str(exc)})
        return 1
    path = ctx.write("ok" if code == 0 else "failed")
    print(path)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
