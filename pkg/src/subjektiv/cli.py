"""Command-line entry point: validate, fmt, run, analyze, serve, start, tasks, corpus."""

from __future__ import annotations

import argparse
import json
import sys
import urllib.error
import urllib.request
from pathlib import Path
from typing import Any

from . import analysis, model as M, pdl
from .node import ConfigError, NodeConfig, serve_forever
from .tasks import DeciderScript, NonQuiescent, run_scripted


def _read(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


def _parse_model(path: str) -> M.ProcessModel | None:
    try:
        return pdl.parse(_read(path))
    except pdl.PdlSyntaxError as exc:
        print(f"{path}:{exc}", file=sys.stderr)
        return None
    except OSError as exc:
        print(f"cannot read {path}: {exc}", file=sys.stderr)
        return None


def _print_violations(report: M.ValidationReport) -> None:
    for v in report.violations:
        print(f"{v.severity}: {v.rule} at {v.location}: {v.message}")


def infer_starters(m: M.ProcessModel) -> dict[str, int]:
    """One instance of every subject whose behavior does not start by waiting."""
    starters = {}
    for b in m.behaviors:
        start = b.start_states()[0] if b.start_states() else None
        if start is not None and start.kind != M.RECEIVE:
            starters[b.subject] = 1
    if not starters and m.behaviors:
        starters[m.behaviors[0].subject] = 1
    return starters


def _starter_args(pairs: list[str] | None, m: M.ProcessModel, from_script: dict | None) -> dict[str, int]:
    if pairs:
        out = {}
        for pair in pairs:
            name, sep, count = pair.partition("=")
            if not sep or not count.isdigit():
                raise SystemExit(2)
            out[name] = int(count)
        return out
    if from_script:
        return {str(k): int(v) for k, v in from_script.items()}
    return infer_starters(m)


# -- subcommands ---------------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    m = _parse_model(args.file)
    if m is None:
        return 1
    report = M.validate(m)
    if report.violations:
        _print_violations(report)
        return 1
    return 0


def cmd_fmt(args: argparse.Namespace) -> int:
    m = _parse_model(args.file)
    if m is None:
        return 1
    report = M.validate(m)
    if not report.ok:
        _print_violations(report)
        return 1
    canonical = pdl.serialize(m)
    if args.write:
        Path(args.file).write_text(canonical, encoding="utf-8")
    else:
        print(canonical, end="")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    m = _parse_model(args.file)
    if m is None:
        return 1
    report = M.validate(m)
    if not report.ok:
        _print_violations(report)
        return 1
    script_data: dict[str, Any] = {}
    if args.script:
        script_data = json.loads(_read(args.script))
    decider = DeciderScript.from_dict(script_data) if script_data else DeciderScript(default="earliest")
    if decider.default is None and not script_data.get("rules"):
        decider.default = "earliest"
    advance = [int(x) for x in args.advance.split(",")] if args.advance else script_data.get("advance", [])
    starters = _starter_args(args.starter, m, script_data.get("starters"))
    try:
        result = run_scripted(m, starters, decider, advance_plan=advance)
    except NonQuiescent as exc:
        print(f"NON_QUIESCENT: {exc}", file=sys.stderr)
        return 1
    if args.trace:
        from .trace import dump_record

        for record in result.trace:
            print(dump_record(record))
    print(f"instance {result.instance}: {result.commands} commands, quiescent={result.quiescent}")
    for agent, status in sorted(result.statuses.items()):
        print(f"  {agent}: {status} at {result.agent_states[agent]}")
    for agent, entries in sorted(result.residue.items()):
        print(f"  residue {agent}: {entries}")
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    m = _parse_model(args.file)
    if m is None:
        return 1
    report = M.validate(m)
    if not report.ok:
        _print_violations(report)
        return 1
    starters = _starter_args(args.starter, m, None)
    bounds = analysis.ExploreBounds(
        max_instances=args.max_instances, pool_bound=args.pool_bound, max_states=args.max_states
    )
    stats = analysis.explore(m, starters, bounds)
    deadlocks = analysis.find_deadlocks(m, starters, bounds)
    leaks = analysis.find_message_leaks(m, starters, bounds)
    if args.json:
        print(
            json.dumps(
                {
                    "states": stats.states,
                    "transitions": stats.transitions,
                    "truncated": stats.truncated,
                    "deadlocks": [
                        {
                            "state": d.state,
                            "moves": [mv.describe() for mv in d.path],
                            "replay": {"script": d.script, "advance": d.advance_plan},
                        }
                        for d in deadlocks
                    ],
                    "leaks": [{"state": l.state, "residue": l.residue} for l in leaks],
                },
                indent=2,
            )
        )
    else:
        print(f"{stats.states} states, {stats.transitions} transitions" + (" (truncated)" if stats.truncated else ""))
        if not deadlocks:
            print("no deadlocks within bounds")
        for d in deadlocks:
            print(f"deadlock: {[f'{a[0]}#{a[1]}@{a[2]}' for a in d.state if not a[3]]}")
            for mv in d.path:
                print(f"  {mv.describe()}")
        if leaks:
            print(f"{len(leaks)} terminal states with unconsumed messages")
    return 1 if deadlocks else 0


def cmd_serve(args: argparse.Namespace) -> int:
    try:
        config = NodeConfig.load(args.config)
    except (ConfigError, OSError) as exc:
        print(f"bad config: {exc}", file=sys.stderr)
        return 1
    serve_forever(config)
    return 0


def _http(method: str, url: str, body: dict | None = None) -> tuple[int, Any]:
    data = json.dumps(body).encode("utf-8") if body is not None else None
    req = urllib.request.Request(url, data=data, method=method)
    req.add_header("Content-Type", "application/json")
    try:
        with urllib.request.urlopen(req, timeout=10) as resp:
            return resp.status, json.loads(resp.read().decode("utf-8") or "null")
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read().decode("utf-8") or "null")


def cmd_start(args: argparse.Namespace) -> int:
    starters = {}
    for pair in args.starter or []:
        name, sep, count = pair.partition("=")
        if not sep or not count.isdigit():
            print(f"bad --starter {pair!r}", file=sys.stderr)
            return 2
        starters[name] = int(count)
    status, body = _http("POST", f"{args.on}/instances", {"process": args.process, "starters": starters})
    print(json.dumps(body))
    return 0 if status == 201 else 1


def cmd_tasks(args: argparse.Namespace) -> int:
    if args.action == "list":
        query = []
        if args.subject:
            query.append(f"subject={args.subject}")
        if args.instance:
            query.append(f"instance={args.instance}")
        suffix = ("?" + "&".join(query)) if query else ""
        status, body = _http("GET", f"{args.on}/tasks{suffix}")
        print(json.dumps(body, indent=2))
        return 0 if status == 200 else 1
    status, body = _http("POST", f"{args.on}/tasks/{args.task_id}/complete", {"choice": json.loads(args.choice)})
    print(json.dumps(body))
    return 0 if status == 200 else 1


def cmd_corpus(args: argparse.Namespace) -> int:
    from . import patterns

    if args.action == "list":
        for c in patterns.corpus():
            variants = f" (variants: {', '.join(v.name for v in c.variants)})" if c.variants else ""
            print(f"{c.name:24s} {c.description}{variants}")
        return 0
    names = [args.name] if args.name else [c.name for c in patterns.corpus()]
    failed = 0
    for name in names:
        if args.distributed:
            from .patterns.distributed import run_case_distributed

            result = run_case_distributed(name, variant=args.variant)
        else:
            result = patterns.run_case(name, variant=args.variant)
        tag = f"{name}[{args.variant}]" if args.variant else name
        mode = " (distributed)" if args.distributed else ""
        if result.passed:
            print(f"PASS {tag}{mode}")
        else:
            print(f"FAIL {tag}{mode}: {result.message}")
            failed += 1
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="subjektiv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a .sbpm file, print violations")
    p.add_argument("file")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("fmt", help="canonical form of a .sbpm file")
    p.add_argument("file")
    p.add_argument("--write", action="store_true", help="rewrite the file in place")
    p.set_defaults(func=cmd_fmt)

    p = sub.add_parser("run", help="execute a process under a decider script")
    p.add_argument("file")
    p.add_argument("--script", help="decider script JSON")
    p.add_argument("--advance", help="clock advance points, comma-separated ms")
    p.add_argument("--starter", action="append", metavar="SUBJECT=N")
    p.add_argument("--trace", action="store_true", help="print every trace record")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="bounded deadlock/leak exploration")
    p.add_argument("file")
    p.add_argument("--starter", action="append", metavar="SUBJECT=N")
    p.add_argument("--max-instances", type=int, default=4)
    p.add_argument("--pool-bound", type=int, default=8)
    p.add_argument("--max-states", type=int, default=1_000_000)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("serve", help="run a node (bus + HTTP API)")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("start", help="start a process instance on a node")
    p.add_argument("process")
    p.add_argument("--on", required=True, metavar="URL")
    p.add_argument("--starter", action="append", metavar="SUBJECT=N")
    p.set_defaults(func=cmd_start)

    p = sub.add_parser("tasks", help="list or complete tasks on a node")
    task_sub = p.add_subparsers(dest="action", required=True)
    pl = task_sub.add_parser("list")
    pl.add_argument("--on", required=True, metavar="URL")
    pl.add_argument("--subject")
    pl.add_argument("--instance")
    pl.set_defaults(func=cmd_tasks, action="list")
    pc = task_sub.add_parser("complete")
    pc.add_argument("task_id")
    pc.add_argument("--on", required=True, metavar="URL")
    pc.add_argument("--choice", required=True, help="choice JSON")
    pc.set_defaults(func=cmd_tasks, action="complete")

    p = sub.add_parser("corpus", help="run the service-interaction-pattern corpus")
    corpus_sub = p.add_subparsers(dest="action", required=True)
    pr = corpus_sub.add_parser("run")
    pr.add_argument("name", nargs="?")
    pr.add_argument("--variant")
    pr.add_argument("--distributed", action="store_true")
    pr.set_defaults(func=cmd_corpus, action="run")
    pli = corpus_sub.add_parser("list")
    pli.set_defaults(func=cmd_corpus, action="list")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
