"""``adhoc-ckpt`` command line.

Records go to stdout, one per line; chatter goes to stderr and is dropped by
``--quiet``. Exit codes: 0 success, 1 unreadable input, 2 verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .fig4 import fig4_config
from .metrics import MetricsError, MetricsReport, run_all_process_baseline, summarize_metrics
from .netsim import ScenarioError, load_scenario, parse_trace, run
from .topology import TopologyError, build_graph, classify_gateways, elect_clusterheads, weight
from .verify import VerifyError, verify_trace

EXIT_OK, EXIT_PARSE, EXIT_VIOLATION = 0, 1, 2


class InputError(Exception):
    pass


class Out:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def record(self, *fields) -> None:
        print(" ".join(str(f) for f in fields))

    def note(self, msg: str) -> None:
        if not self.quiet:
            print(msg, file=sys.stderr)


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None


def _scenario(arg: str, seed: int | None = None):
    if arg == "fig4":
        config = fig4_config()
    else:
        try:
            config = load_scenario(_read(arg))
        except ScenarioError as exc:
            raise InputError(f"{arg}: {exc}") from None
    if seed is not None:
        config = replace(config, seed=seed)
    return config


def _trace(path: str):
    try:
        return parse_trace(_read(path))
    except ScenarioError as exc:
        raise InputError(f"{path}: {exc}") from None


def _violations(out: Out, trace) -> int:
    try:
        found = verify_trace(trace)
    except (VerifyError, KeyError, TypeError) as exc:
        found = [{"check": "malformed", "reason": str(exc)}]
    for v in found:
        out.record("violation", json.dumps(v, sort_keys=True))
    if found:
        out.note(f"{len(found)} violation(s)")
        return EXIT_VIOLATION
    out.record("verified", "ok")
    return EXIT_OK


def _iterations(out: Out, report: MetricsReport, label: str = "iteration") -> None:
    for m in report.iterations:
        status = "committed" if m.committed else "open"
        out.record(label, m.iteration, "initiator", m.initiator, status, "permanents", m.permanents,
                   "minimum_set_size", m.minimum_set_size, "cluster_size", m.cluster_size)


def cmd_run(args, out: Out) -> int:
    config = _scenario(args.scenario, args.seed)
    trace = run(config)
    if args.trace_out:
        Path(args.trace_out).write_text(trace.dumps())
        out.note(f"trace written to {args.trace_out}")
    for e in trace.entries:
        if e.kind == "CheckpointPromoted" and "minimum_set" in e.detail:
            out.record("commit", e.detail["iteration"], "time", e.time,
                       "minimum_set", ",".join(map(str, e.detail["minimum_set"])))
    for e in trace.of_kind("Error"):
        out.record("error", e.node, json.dumps(e.detail, sort_keys=True))
    if args.verify:
        return _violations(out, trace)
    return EXIT_OK


def cmd_verify(args, out: Out) -> int:
    return _violations(out, _trace(args.trace))


def _metric_lines(report: MetricsReport) -> list[tuple[str, object]]:
    d = report.to_dict()
    rows = [(k, v) for k, v in d.items() if k not in ("iterations", "control_messages")]
    rows += [(f"control.{k}", v) for k, v in d["control_messages"].items()]
    return rows


def cmd_metrics(args, out: Out) -> int:
    try:
        a = summarize_metrics(_trace(args.trace))
        b = summarize_metrics(_trace(args.compare)) if args.compare else None
    except MetricsError as exc:
        raise InputError(str(exc)) from None
    if b is None:
        for k, v in _metric_lines(a):
            out.record("metric", k, v)
        _iterations(out, a)
        return EXIT_OK
    left, right = dict(_metric_lines(a)), dict(_metric_lines(b))
    for k in sorted(set(left) | set(right), key=lambda k: (k.startswith("control."), k)):
        out.record("compare", k, left.get(k, 0), right.get(k, 0))
    return EXIT_OK


def cmd_baseline(args, out: Out) -> int:
    config = _scenario(args.scenario)
    proto = summarize_metrics(run(config))
    base = summarize_metrics(run_all_process_baseline(config))
    _iterations(out, proto, "protocol")
    _iterations(out, base, "baseline")
    out.record("total", "permanents", proto.permanents, base.permanents)
    out.record("total", "control", proto.control_total, base.control_total)
    return EXIT_OK


def cmd_cluster(args, out: Out) -> int:
    try:
        doc = json.loads(_read(args.graph))
        g = build_graph(doc["n"], [tuple(e) for e in doc.get("edges", [])])
    except json.JSONDecodeError as exc:
        raise InputError(f"{args.graph}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    except (KeyError, TypeError, TopologyError) as exc:
        raise InputError(f"{args.graph}: {exc}") from None
    if args.require_connected and not g.is_connected():
        raise InputError(f"{args.graph}: graph is not connected")
    a = classify_gateways(g, elect_clusterheads(g))
    for x in g.nodes:
        w = weight(g, x)
        out.record(x, a.role[x], a.cluster_of[x], f"{w.numerator}/{w.denominator}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS,
                        help="only print records")
    p = argparse.ArgumentParser(prog="adhoc-ckpt", parents=[common],
                                description="Simulate and verify cluster checkpointing runs.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="simulate a scenario file or the built-in fig4")
    r.add_argument("scenario")
    r.add_argument("--verify", action="store_true")
    r.add_argument("--trace-out", metavar="PATH")
    r.add_argument("--seed", type=int)
    r.set_defaults(fn=cmd_run)

    v = sub.add_parser("verify", parents=[common], help="check a recorded trace")
    v.add_argument("trace")
    v.set_defaults(fn=cmd_verify)

    m = sub.add_parser("metrics", parents=[common], help="count checkpoints and messages in a trace")
    m.add_argument("trace")
    m.add_argument("--compare", metavar="TRACE")
    m.set_defaults(fn=cmd_metrics)

    c = sub.add_parser("cluster", parents=[common], help="elect clusterheads for a graph")
    c.add_argument("graph")
    c.add_argument("--require-connected", action="store_true")
    c.set_defaults(fn=cmd_cluster)

    b = sub.add_parser("baseline", parents=[common], help="compare with all-process checkpointing")
    b.add_argument("scenario")
    b.set_defaults(fn=cmd_baseline)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_PARSE
    out = Out(getattr(args, "quiet", False))
    try:
        return args.fn(args, out)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
