"""Command-line front end.

Exit codes: 0 success / causality holds, 1 invalid circuit or causality
violated, 2 usage error or unreadable input.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import backends as B
from . import engine as E
from .circuit import CircuitError, CircuitParseError, future_cone, parse_circuit, past_cone, validate

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--circuit", help="circuit description file")
    common.add_argument("--payloads", help="JSON payload file")
    common.add_argument("--backend", choices=["quantum", "classical", "table"], default="quantum")
    common.add_argument("--seed", type=int, default=0, help="seed for randomised alternative tests")
    common.add_argument("--tol", type=float, default=None, help="tolerance override")
    common.add_argument("--output", choices=["text", "json"], default="text")

    parser = argparse.ArgumentParser(prog="optcausal", description="OPT circuit simulator and causality checker")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check circuit structure")
    p = sub.add_parser("cones", parents=[common], help="past and future cone of a node")
    p.add_argument("--node", required=True)
    sub.add_parser("simulate", parents=[common], help="joint outcome distribution")
    p = sub.add_parser("check", parents=[common], help="causality checks")
    p.add_argument("--kind", choices=["no-signaling", "marginal", "uniqueness"], default="no-signaling")
    p.add_argument("--node", help="target node")
    p.add_argument("--swap", help="node whose test is varied (marginal check)")
    p.add_argument("--alternatives", help="comma-separated payload keys for the swapped node (marginal check)")
    p.add_argument("--dim", type=int, help="system dimension (uniqueness check)")
    p.add_argument("--random-tests", type=int, default=2, help="random tests per node in the alternative library")
    p.add_argument("--jobs", type=int, default=1, help="threads for the no-signaling sweep")
    p = sub.add_parser("falsify", parents=[common], help="cascade experiment with an impossible outcome")
    p.add_argument("--prep", required=True)
    p.add_argument("--test-a", required=True)
    p.add_argument("--test-b", required=True)
    p.add_argument("--test-b-alt", required=True)
    p.add_argument("--test-a-alt")
    return parser


def _read(path: str | None, what: str) -> str:
    if not path:
        raise UsageError(f"--{what} is required")
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read {what} file {path}: {e.strerror}") from None


def _circuit(args):
    try:
        return parse_circuit(_read(args.circuit, "circuit"))
    except CircuitParseError as e:
        raise UsageError(f"{args.circuit}: {e}") from None


def _backend(args):
    try:
        return B.make_backend(args.backend, _read(args.payloads, "payloads"))
    except (ValueError, KeyError, TypeError) as e:
        raise UsageError(f"{args.payloads}: {e}") from None


def _fmt(p: float) -> str:
    return f"{p:.12g}"


def _emit(args, payload: dict, text_lines: list[str], out):
    if args.output == "json":
        out.write(json.dumps(payload, indent=2) + "\n")
    else:
        out.write("\n".join(text_lines) + "\n")


def cmd_validate(args, out) -> int:
    circuit = _circuit(args)
    problems = validate(circuit)
    _emit(args, {"valid": not problems, "violations": problems},
          problems or ["valid"], out)
    return EXIT_FAIL if problems else EXIT_OK


def _valid_circuit(args, out):
    circuit = _circuit(args)
    problems = validate(circuit)
    if problems:
        _emit(args, {"valid": False, "violations": problems}, problems, out)
        return None
    return circuit


def cmd_cones(args, out) -> int:
    circuit = _valid_circuit(args, out)
    if circuit is None:
        return EXIT_FAIL
    circuit.node(args.node)
    past = sorted(past_cone(circuit, args.node))
    future = sorted(future_cone(circuit, args.node))
    _emit(args, {"node": args.node, "past": past, "future": future},
          [f"past: {' '.join(past)}".rstrip(), f"future: {' '.join(future)}".rstrip()], out)
    return EXIT_OK


def cmd_simulate(args, out) -> int:
    circuit = _valid_circuit(args, out)
    if circuit is None:
        return EXIT_FAIL
    dist = E.joint_distribution(circuit, _backend(args))
    names = dist.nodes
    rows = [(idx, p) for idx, p in dist.items()]
    lines = ["\t".join(names + ["p"])]
    lines += ["\t".join([str(i) for i in idx] + [_fmt(p)]) for idx, p in rows]
    lines.append(f"total\t{_fmt(dist.total)}")
    payload = {
        "axes": [[n, k] for n, k in dist.axes],
        "table": [{"outcome": list(idx), "p": p} for idx, p in rows],
        "total": dist.total,
    }
    _emit(args, payload, lines, out)
    return EXIT_OK


def _report_lines(rep: E.CausalityReport) -> list[str]:
    return [
        f"kind: {rep.kind}",
        f"tolerance: {rep.tolerance:g}",
        f"max_deviation: {_fmt(rep.max_deviation)}",
        f"witness: {rep.witness}",
        f"verdict: {rep.verdict}",
    ]


def cmd_check(args, out) -> int:
    tol = E.INVARIANCE_TOL if args.tol is None else args.tol
    backend = _backend(args)
    if args.kind == "uniqueness":
        if args.backend != "table" and not args.dim:
            raise UsageError("--dim is required for the uniqueness check")
        rep = E.check_deterministic_effect_uniqueness(backend, args.dim, tol=tol)
    else:
        if not args.node:
            raise UsageError("--node is required")
        circuit = _valid_circuit(args, out)
        if circuit is None:
            return EXIT_FAIL
        circuit.node(args.node)
        if args.kind == "marginal":
            if not args.swap or not args.alternatives:
                raise UsageError("--swap and --alternatives are required for the marginal check")
            alts = [a.strip() for a in args.alternatives.split(",") if a.strip()]
            rep = E.check_marginal_invariance(circuit, backend, args.node, args.swap, alts, tol=tol)
        else:
            rep = E.check_no_signaling_from_future(
                circuit, backend, args.node, seed=args.seed, n_random=args.random_tests, tol=tol, jobs=args.jobs
            )
    _emit(args, rep.to_dict(), _report_lines(rep), out)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_falsify(args, out) -> int:
    if args.backend != "quantum":
        raise UsageError("falsify runs on the quantum backend")
    backend = _backend(args)
    tests = {k: list(backend.test(getattr(args, k))) for k in ("prep", "test_a", "test_b", "test_b_alt")}
    alt = list(backend.test(args.test_a_alt)) if args.test_a_alt else None
    tol = E.FALSIFY_TOL if args.tol is None else args.tol
    rep = E.falsification_experiment(tests["prep"], tests["test_a"], tests["test_b"], tests["test_b_alt"], alt, tol=tol)
    lines = _report_lines(rep)
    d = rep.details
    for key in ("p_A_with_B", "p_A_with_B_alt", "p_B_after_A", "p_B_after_A_alt",
                "p_B_alt_after_A", "p_B_alt_after_A_alt"):
        lines.append(f"{key}: {' '.join(_fmt(float(v)) for v in d[key])}")
    lines.append(f"forward_deviation: {_fmt(d['forward_deviation'])}")
    _emit(args, rep.to_dict(), lines, out)
    return EXIT_OK if rep.passed else EXIT_FAIL


COMMANDS = {
    "validate": cmd_validate,
    "cones": cmd_cones,
    "simulate": cmd_simulate,
    "check": cmd_check,
    "falsify": cmd_falsify,
}


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.tol is not None and args.tol <= 0:
        err.write("error: --tol must be positive\n")
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args, out)
    except UsageError as e:
        err.write(f"error: {e}\n")
        return EXIT_USAGE
    except (CircuitError, B.PayloadError, E.IncompleteTestError, ValueError, KeyError) as e:
        err.write(f"error: {e}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
