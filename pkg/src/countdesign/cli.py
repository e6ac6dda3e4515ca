"""Command-line front end.

Exit codes: 0 success, 1 unreadable or malformed input, 2 invalid model or
arguments, 3 the one-feature design is not optimal (``check``), 4 the
optimizer did not converge.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .fisher import (Design, DesignError, SingularInformationError,
                     full_factorial, xi0)
from .model import ModelError, ModelSpec, standardize
from .optimality import (boundary_curve, d_efficiency, fullfactorial_min_efficiency,
                         indifference_efficiency_xi0, kw_certify, lemma1_check,
                         theorem1_check)
from .optimizer import (DEFAULT_MAX_ITER, DEFAULT_PRUNE, DEFAULT_TOL,
                        compare_designs, d1_d2_volume_ratio, design_d1, design_d2,
                        optimize, round_to_exact)
from .simulate import FitError, SimConfig, covariance_check

EXIT_OK, EXIT_PARSE, EXIT_INVALID, EXIT_NOT_OPTIMAL, EXIT_NO_CONVERGENCE = 0, 1, 2, 3, 4


class ParseError(Exception):
    pass


class UsageError(Exception):
    pass


def _load_json(arg: str):
    text = arg if arg.lstrip().startswith("{") else None
    if text is None:
        try:
            text = Path(arg).read_text()
        except OSError as exc:
            raise ParseError(f"cannot read {arg}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON in {arg[:40]!r}: {exc}") from exc


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from exc


def _model(args) -> ModelSpec:
    d = _load_json(args.model) if args.model else {}
    if not isinstance(d, dict):
        raise ModelError("model must be a JSON object")
    # flags override file values
    if args.effects is not None:
        d["effects"] = _floats(args.effects)
        d.pop("k", None)
    for key in ("beta0", "theta0", "a", "b"):
        val = getattr(args, key)
        if val is not None:
            d[key] = val
    if args.family is not None:
        d["family"] = args.family
        d.pop("theta0" if args.family == "poisson-gamma" else "a", None)
        if args.family == "poisson":
            d.pop("b", None)
    d.setdefault("family", "poisson")
    if d["family"] == "poisson":
        d.setdefault("theta0", 1.0)
    if "effects" not in d:
        raise ModelError("model needs effects (file or --effects)")
    return ModelSpec.from_dict(d)


def _design(arg: str, m: ModelSpec | None) -> tuple[str, Design]:
    if arg in ("xi0", "full-factorial", "optimal"):
        if m is None:
            raise UsageError(f"design {arg!r} needs a model")
        if arg == "xi0":
            return arg, xi0(m.k)
        if arg == "full-factorial":
            return arg, full_factorial(m.k)
        report = optimize(m)
        return arg, report.design
    d = _load_json(arg)
    return Path(arg).stem if not arg.lstrip().startswith("{") else "inline", \
        Design.from_dict(d)


def _emit(args, text: str):
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def _fmt(x: float) -> str:
    return f"{x:.6g}" if math.isfinite(x) else str(x)


def _model_lines(m: ModelSpec) -> list[str]:
    lines = [f"model: {m.family} K={m.k} beta0={m.beta0:g}"]
    for k, e in enumerate(m.effects, 1):
        lines.append(f"  feature {k}: beta={e:.6g} difficulty exp(-beta)={math.exp(-e):.6g}")
    return lines


def cmd_check(args) -> int:
    m = _model(args)
    s = standardize(m)
    pairs = theorem1_check(s)
    vert = lemma1_check(s)
    cert = kw_certify(xi0(m.k), m, args.tol)
    verdict = cert.optimal and pairs.holds
    if args.format == "json":
        _emit(args, json.dumps({"pairwise": pairs.to_dict(), "vertexwise": vert.to_dict(),
                                "certificate": cert.to_dict(),
                                "xi0_optimal": verdict}, indent=2) + "\n")
    elif args.format == "csv":
        rows = ["check,holds,checked,max_slack"]
        rows.append(f"pairwise,{pairs.holds},{pairs.checked_count},{pairs.max_slack!r}")
        rows.append(f"vertexwise,{vert.holds},{vert.checked_count},{vert.max_slack!r}")
        rows.append(f"certificate,{cert.optimal},{2 ** m.k},{cert.max_sensitivity - cert.threshold!r}")
        _emit(args, "\n".join(rows) + "\n")
    else:
        lines = _model_lines(m)
        b = s.b_scale
        v = s.difficulties
        for j in range(m.k):
            for k in range(j + 1, m.k):
                lhs = 3 * b + 1 + v[j] + v[k]
                rhs = b + v[j] * v[k]
                ok = "ok" if lhs <= rhs else "VIOLATED"
                lines.append(f"pair ({j + 1},{k + 1}): q0+qj+qk={lhs:.6g} "
                             f"qjk={rhs:.6g} slack={lhs - rhs:.6g} {ok}")
        lines.append(f"pairwise conditions: {'hold' if pairs.holds else 'fail'} "
                     f"({len(pairs.violations)} of {pairs.checked_count} violated)")
        lines.append(f"vertex conditions: {'hold' if vert.holds else 'fail'} "
                     f"({len(vert.violations)} of {vert.checked_count} violated)")
        lines.append(f"equivalence certificate: max sensitivity {cert.max_sensitivity:.6g} "
                     f"at {cert.worst_item}, threshold {cert.threshold:.6g}")
        lines.append("xi0 OPTIMAL" if verdict else "xi0 NOT optimal")
        _emit(args, "\n".join(lines) + "\n")
    return EXIT_OK if verdict else EXIT_NOT_OPTIMAL


def cmd_optimize(args) -> int:
    m = _model(args)
    start = _design(args.start, m)[1] if args.start else None
    report = optimize(m, max_iter=args.max_iter, tol=args.tol,
                      prune_threshold=args.prune, start_design=start,
                      record_history=bool(args.history))
    if args.history:
        Path(args.history).write_text(report.history_csv())
    if args.format == "json":
        _emit(args, json.dumps(report.to_dict(), indent=2) + "\n")
    elif args.format == "csv":
        rows = ["item,weight,sensitivity"]
        for x, s in report.certification.per_support:
            w = report.design.as_dict()[x]
            rows.append(f"{''.join(map(str, x))},{w!r},{s!r}")
        _emit(args, "\n".join(rows) + "\n")
    else:
        lines = _model_lines(m)
        lines.append(f"{'converged' if report.converged else 'NOT converged'} after "
                     f"{report.iterations} iterations, logdet={report.final_logdet:.10g}")
        for x, s in report.certification.per_support:
            w = report.design.as_dict()[x]
            lines.append(f"  {x}: weight={w:.6f} sensitivity={s:.6f}")
        lines.append(f"max sensitivity {report.certification.max_sensitivity:.8g} "
                     f"(bound {report.certification.threshold:.8g})")
        _emit(args, "\n".join(lines) + "\n")
    return EXIT_OK if report.converged else EXIT_NO_CONVERGENCE


def _parse_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise UsageError(f"--v-range must look like LO:HI, got {text!r}") from exc
    return lo, hi


def cmd_boundary(args) -> int:
    bs = _floats(args.b)
    if any(b < 0 for b in bs):
        raise UsageError("b values must be >= 0")
    if args.v is not None:
        grid = _floats(args.v)
    else:
        lo, hi = _parse_range(args.v_range)
        if args.step <= 0 or hi < lo:
            raise UsageError("need a positive --step and LO <= HI")
        grid = list(np.round(np.arange(lo, hi + args.step / 2, args.step), 12))
    if any(v <= 1 for v in grid):
        raise UsageError("all v values must exceed 1; the condition cannot hold for v <= 1")
    rows = []
    for b in bs:
        rows += [(b, v, u) for v, u in boundary_curve(b, grid)]
    if args.format == "json":
        _emit(args, json.dumps([{"b": b, "v": v, "u_min": u} for b, v, u in rows]) + "\n")
    else:
        text = "b,v,u_min\n" + "".join(f"{b:g},{v:g},{u!r}\n" for b, v, u in rows)
        _emit(args, text)
    return EXIT_OK


def cmd_efficiency(args) -> int:
    if args.indifference is not None:
        k = args.indifference
        rep = indifference_efficiency_xi0(k)
        ff = fullfactorial_min_efficiency(k)
        if args.format == "json":
            _emit(args, json.dumps({**rep.to_dict(), "full_factorial_min": ff}) + "\n")
        else:
            lines = rep.lines() + [f"K={k} full factorial minimal efficiency (K+1)/2^K={ff:.4f}"]
            _emit(args, "\n".join(lines) + "\n")
        return EXIT_OK
    m = _model(args)
    _, d = _design(args.design, m)
    _, ref = _design(args.reference, m)
    eff = d_efficiency(d, ref, m)
    if args.format == "json":
        _emit(args, json.dumps({"efficiency": eff}) + "\n")
    else:
        _emit(args, f"{eff:.4f}\n")
    return EXIT_OK


def cmd_round(args) -> int:
    m = _model(args) if (args.model or args.effects) else None
    _, d = _design(args.design, m)
    exact = round_to_exact(d, args.n)
    if args.format == "json":
        _emit(args, json.dumps(exact.to_dict()) + "\n")
    else:
        rows = ["item,weight,count"] + [
            f"{''.join(map(str, x))},{w!r},{c}"
            for x, w, c in zip(d.support(), d.weights.tolist(), exact.counts.tolist())]
        _emit(args, "\n".join(rows) + "\n")
    return EXIT_OK


def cmd_simulate(args) -> int:
    d = _load_json(args.config)
    if args.seed is not None:
        d["seed"] = args.seed
    if args.replications is not None:
        d["replications"] = args.replications
    cfg = SimConfig.from_dict(d)
    report = covariance_check(cfg)
    if args.betas_csv:
        Path(args.betas_csv).write_text(report.beta_hats_csv())
    if args.format == "json":
        _emit(args, json.dumps(report.to_dict(), indent=2) + "\n")
    else:
        lines = [f"replications={report.replications} failures={report.failures}",
                 f"max relative error (diagonal)={report.max_rel_error:.4f}",
                 f"max off-diagonal error (correlation scale)={report.max_corr_error:.4f}",
                 "empirical vs predicted variances:"]
        for j, (e, p) in enumerate(zip(np.diag(report.empirical_cov),
                                       np.diag(report.predicted_cov))):
            lines.append(f"  beta{j}: {e:.6g} vs {p:.6g}")
        _emit(args, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_compare(args) -> int:
    if args.d1_d2:
        m = ModelSpec.poisson([0.0, 0.0, 0.0])
        ids, designs = ["D1", "D2"], [design_d1(), design_d2()]
    else:
        m = _model(args)
        if not args.designs:
            raise UsageError("compare needs at least one design")
        named = [_design(a, m) for a in args.designs]
        ids = [f"{i}:{name}" for i, (name, _) in enumerate(named)]
        designs = [d for _, d in named]
    rows = compare_designs(designs, m, ids)
    if args.format == "json":
        out = {"rows": [r.__dict__ for r in rows]}
        if args.d1_d2:
            rep = d1_d2_volume_ratio()
            out["volume_ratio"] = {"det_ratio": rep.det_ratio, "oracle": rep.volume_ratio,
                                   "published": rep.published, "discrepant": rep.discrepant}
        _emit(args, json.dumps(out) + "\n")
    else:
        text = "id,logdet,efficiency,singular\n" + "".join(
            f"{r.id},{_fmt(r.logdet)},{_fmt(r.efficiency)},{r.singular}\n" for r in rows)
        if args.d1_d2 and args.format == "human":
            text += "\n".join(d1_d2_volume_ratio().lines()) + "\n"
        _emit(args, text)
    return EXIT_OK


def _add_model_args(p, required=True):
    p.add_argument("model", nargs="?" if not required else None,
                   help="model JSON file or inline JSON object")
    g = p.add_argument_group("model overrides")
    g.add_argument("--family", choices=("poisson", "poisson-gamma"))
    g.add_argument("--effects", help="comma-separated effects beta_1..beta_K")
    g.add_argument("--beta0", type=float)
    g.add_argument("--theta0", type=float)
    g.add_argument("--a", type=float)
    g.add_argument("--b", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="countdesign",
        description="Locally D-optimal designs for count models with binary item features.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("json", "csv", "human"), default="human")
    common.add_argument("-o", "--output", help="write to this file instead of stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help):
        return sub.add_parser(name, help=help, parents=[common])

    p = add("check", help="optimality conditions for the one-feature design")
    _add_model_args(p, required=False)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.set_defaults(func=cmd_check)

    p = add("optimize", help="compute a certified D-optimal design")
    _add_model_args(p, required=False)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    p.add_argument("--prune", type=float, default=DEFAULT_PRUNE)
    p.add_argument("--start", help="start design (JSON or xi0/full-factorial)")
    p.add_argument("--history", metavar="CSV", help="write the iteration trace here")
    p.set_defaults(func=cmd_optimize)

    p = add("boundary", help="pairwise-condition boundary curves as CSV")
    p.add_argument("--b", default="0,0.5,1,2", help="comma-separated b values")
    grid = p.add_mutually_exclusive_group()
    grid.add_argument("--v", help="comma-separated difficulty values > 1")
    grid.add_argument("--v-range", default="1.1:10", help="LO:HI, LO > 1")
    p.add_argument("--step", type=float, default=0.1)
    p.set_defaults(func=cmd_boundary)

    p = add("efficiency", help="D-efficiency of a design")
    _add_model_args(p, required=False)
    p.add_argument("--design", default="xi0")
    p.add_argument("--reference", default="optimal")
    p.add_argument("--indifference", type=int, metavar="K",
                   help="report the one-feature design's efficiency at zero effects")
    p.set_defaults(func=cmd_efficiency)

    p = add("round", help="round an approximate design to n items")
    p.add_argument("design", help="design JSON, or xi0/full-factorial/optimal with a model")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--model", dest="model")
    p.add_argument("--effects")
    p.add_argument("--family", choices=("poisson", "poisson-gamma"))
    for key in ("beta0", "theta0", "a", "b"):
        p.add_argument(f"--{key}", type=float)
    p.set_defaults(func=cmd_round)

    p = add("simulate", help="Monte-Carlo covariance check")
    p.add_argument("config", help="simulation config JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--betas-csv", help="write per-replication estimates here")
    p.set_defaults(func=cmd_simulate)

    p = add("compare", help="log-determinants and efficiencies of designs")
    _add_model_args(p, required=False)
    p.add_argument("--design", dest="designs", action="append", default=[])
    p.add_argument("--d1-d2", action="store_true",
                   help="compare the two eight-item designs under a linear model")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ModelError, DesignError, UsageError, SingularInformationError,
            FitError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
