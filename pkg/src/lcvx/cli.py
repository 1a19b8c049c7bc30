"""Command-line interface: solve, synthesize, certify, spotcheck and oracle
over instance files or built-in instances.

Exit codes: 0 success/verified, 1 not verified (inconclusive certificate,
stabilization without certificate, failed spot check, oracle mismatch),
2 usage error, 3 internal error. Diagnostics go to standard error; reports go
to standard output or --output. JSON output is canonical, so identical
invocations produce byte-identical bytes.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import cert, control, corpus
from .bmi import GridBudgetExceeded, NoFeasibleGridPoint
from .convexify import SamplingFailed, inclusion_spotcheck, surjection_spotcheck
from .corpus import (NoConvexificationAvailable, ParseError, SchemaMismatch,
                     canonical_dumps)
from .sdp import SolveStatus, solve


class UsageError(ValueError):
    pass


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lcvx",
        description="Convexify, solve and certify matrix-inequality programs.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (
            ("solve", "solve the convexified problem"),
            ("synthesize", "state-feedback gain synthesis"),
            ("certify", "produce a strong-duality certificate"),
            ("spotcheck", "surjectivity and epigraph-inclusion spot checks"),
            ("oracle", "brute-force grid oracle run")):
        p = sub.add_parser(name, help=doc)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--builtin", metavar="NAME", help="built-in instance name")
        src.add_argument("--input", metavar="PATH", help="instance file path")
        p.add_argument("--tol-gap", type=float, default=None,
                       help="duality gap tolerance (module default when omitted)")
        p.add_argument("--tol-feas", type=float, default=None,
                       help="feasibility tolerance (module default when omitted)")
        p.add_argument("--epsilon", type=float, default=None,
                       help="strictness offset override for synthesis instances")
        p.add_argument("--samples", type=int, default=100, help="spot-check samples")
        p.add_argument("--seed", type=int, default=0, help="sampling seed")
        p.add_argument("--grid", type=int, default=2001, help="oracle grid per dimension")
        p.add_argument("--format", choices=("text", "json"), default="text")
        p.add_argument("--output", metavar="PATH", help="write the report here")
    return parser


def _load_instance(args) -> corpus.InstanceFile:
    if args.builtin:
        try:
            return corpus.builtin(args.builtin)
        except KeyError as exc:
            raise UsageError(str(exc)) from exc
    return corpus.load(args.input)


def _instance_with_overrides(args, inst):
    if args.epsilon is not None:
        if args.epsilon <= 0:
            raise UsageError("--epsilon must be positive")
        data = dict(inst.data)
        data["epsilon"] = args.epsilon
        inst = corpus.InstanceFile(kind=inst.kind, data=data, name=inst.name,
                                   expected=inst.expected)
    return inst


def _tols(args):
    out = {}
    if args.tol_gap is not None:
        if args.tol_gap <= 0:
            raise UsageError("--tol-gap must be positive")
        out["tol_gap"] = args.tol_gap
    if args.tol_feas is not None:
        if args.tol_feas <= 0:
            raise UsageError("--tol-feas must be positive")
        out["tol_feas"] = args.tol_feas
    return out


def _emit(args, report: dict, text_lines: list) -> None:
    if args.format == "json":
        payload = canonical_dumps(report)
    else:
        payload = "\n".join(text_lines) + "\n"
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(payload)
    else:
        sys.stdout.write(payload)


def _fmt_matrix(m) -> str:
    arr = np.atleast_2d(np.asarray(m, dtype=float))
    return "; ".join(" ".join(f"{x: .6g}" for x in row) for row in arr)


def _cmd_solve(args) -> int:
    inst = _instance_with_overrides(args, _load_instance(args))
    cov = corpus.to_change_of_variables(inst)
    sol = solve(cov.target_sdp, **_tols(args))
    assignment = sol.assignment(cov.target_sdp)
    variables = {k: np.asarray(assignment[k]).tolist() if not np.isscalar(assignment[k])
                 else float(assignment[k]) for k in cov.paper_vars}
    report = {"status": sol.status.value, "primal_value": sol.primal_value,
              "dual_value": sol.dual_value, "iterations": sol.iterations,
              "variables": variables}
    lines = [f"status: {sol.status.value}",
             f"primal_value: {sol.primal_value:.12g}",
             f"dual_value: {sol.dual_value:.12g}",
             f"iterations: {sol.iterations}"]
    lines += [f"{k}: {_fmt_matrix(v)}" for k, v in variables.items()]
    _emit(args, report, lines)
    return 0 if sol.status is SolveStatus.OPTIMAL else 1


def _cmd_synthesize(args) -> int:
    inst = _instance_with_overrides(args, _load_instance(args))
    if inst.kind not in ("ct_stabilization", "dt_stabilization"):
        raise UsageError(f"synthesize needs a stabilization instance, got {inst.kind}")
    sys_ = corpus.to_system(inst)
    synth = (control.ct_synthesize if sys_.clock is control.Clock.CONTINUOUS
             else control.dt_synthesize)
    result = synth(sys_, epsilon=inst.data.get("epsilon"),
                   nsamples=min(args.samples, 25), seed=args.seed)
    closed = sys_.A + sys_.B @ result.F
    if sys_.clock is control.Clock.CONTINUOUS:
        stability = float(np.max(control.eig_general(closed).real))
        stability_label = "max_real_eigenvalue"
    else:
        stability = control.spectral_radius(closed)
        stability_label = "spectral_radius"
    report = {"F": result.F.tolist(), "P": result.P.data.tolist(),
              "epsilon": result.epsilon, "margin": result.margin,
              stability_label: stability,
              "certificate": result.certificate.as_dict()}
    lines = [f"F: {_fmt_matrix(result.F)}",
             f"{stability_label}: {stability:.9g}",
             f"epsilon: {result.epsilon:.9g}",
             f"margin: {result.margin:.9g}",
             f"certificate_verdict: {result.certificate.verdict.value}"]
    _emit(args, report, lines)
    return 0


def _cmd_certify(args) -> int:
    inst = _instance_with_overrides(args, _load_instance(args))
    cov = corpus.to_change_of_variables(inst)
    certificate = cert.certify(cov.source, cov, nsamples=args.samples,
                               seed=args.seed, **_tols(args))
    report = certificate.as_dict()
    lines = [f"verdict: {certificate.verdict.value}",
             f"primal_value: {certificate.primal_value:.12g}",
             f"dual_value: {certificate.dual_value:.12g}",
             f"gap: {certificate.gap:.6g}",
             f"slater_margin: {certificate.slater_margin:.6g}"]
    if certificate.failure_stage:
        lines.append(f"failure_stage: {certificate.failure_stage}")
    _emit(args, report, lines)
    return 0 if certificate.verdict is cert.Verdict.STRONG_DUALITY_VERIFIED else 1


def _cmd_spotcheck(args) -> int:
    inst = _instance_with_overrides(args, _load_instance(args))
    cov = corpus.to_change_of_variables(inst)
    surjection = surjection_spotcheck(cov, args.samples, args.seed)
    inclusion = inclusion_spotcheck(cov.source, cov, args.samples, args.seed + 1)
    report = {"surjection": surjection.as_dict(), "inclusion": inclusion.as_dict()}
    lines = [f"surjection: {'pass' if surjection.passed else 'fail'} "
             f"(worst roundtrip {surjection.worst_roundtrip:.3e}, "
             f"worst source violation {surjection.worst_source_violation:.3e})",
             f"inclusion: {'pass' if inclusion.passed else 'fail'} "
             f"({inclusion.counterexamples} counterexamples in "
             f"{inclusion.checked} checked samples)"]
    _emit(args, report, lines)
    return 0 if surjection.passed and inclusion.passed else 1


def _cmd_oracle(args) -> int:
    from .bmi import primal_oracle
    inst = _instance_with_overrides(args, _load_instance(args))
    problem = corpus.to_bmi(inst)
    result = primal_oracle(problem, args.grid)
    argmin = {k: (float(v) if np.isscalar(v) else np.asarray(v).tolist())
              for k, v in result.argmin.items()}
    report = {"primal_value": result.value, "argmin": argmin}
    lines = [f"primal_value: {result.value:.12g}"]
    lines += [f"{k}: {_fmt_matrix(v)}" for k, v in argmin.items()]
    code = 0
    if inst.expected and "p_star" in inst.expected:
        expected = float(inst.expected["p_star"])
        step = 0.0
        for block in problem.layout:
            lo, hi = block.box
            step = max(step, (hi - lo) / (args.grid - 1))
        ok = abs(result.value - expected) <= 2.0 * step * (1.0 + abs(expected))
        report["expected_p_star"] = expected
        report["matches_expected"] = ok
        lines.append(f"expected_p_star: {expected:.12g} ({'ok' if ok else 'MISMATCH'})")
        code = 0 if ok else 1
    _emit(args, report, lines)
    return code


_HANDLERS = {"solve": _cmd_solve, "synthesize": _cmd_synthesize,
             "certify": _cmd_certify, "spotcheck": _cmd_spotcheck,
             "oracle": _cmd_oracle}


def run(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(list(argv))
    except SystemExit as exc:  # argparse prints its own diagnostics
        return int(exc.code or 0)
    try:
        return _HANDLERS[args.command](args)
    except (UsageError, NoConvexificationAvailable, ParseError, SchemaMismatch,
            FileNotFoundError, IsADirectoryError, GridBudgetExceeded) as exc:
        print(f"lcvx: error: {exc}", file=sys.stderr)
        return 2
    except (control.NotStabilizable, NoFeasibleGridPoint, SamplingFailed) as exc:
        print(f"lcvx: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"lcvx: internal error: {exc!r}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
