"""``lcpsim`` command line: run, audit and sweep scenario files.

Exit codes: 0 ok, 1 unreadable scenario or bad arguments, 2 fork found,
3 network stuck.
For ``audit`` a nonzero status (4) means at least one pair fails the condition.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .analysis import rounds_without_full_validation
from .scenario import ScenarioParseError, dumps_report, dumps_trace, load
from .sim import run
from .trust import Condition, audit, check_pair

EXIT_OK, EXIT_PARSE, EXIT_FORK, EXIT_STUCK, EXIT_AUDIT_FAIL = 0, 1, 2, 3, 4


def _seeds(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty seed list")
    return out


def _load(path: str, args):
    scenario = load(path)
    changes = {}
    if getattr(args, "max_ticks", None) is not None:
        changes["max_ticks"] = args.max_ticks
    if getattr(args, "probe_ticks", None) is not None:
        changes["probe_ticks"] = args.probe_ticks
    return dataclasses.replace(scenario, **changes) if changes else scenario


def _verdict_code(report) -> int:
    if report.fork is not None:
        return EXIT_FORK
    if report.stuck is not None:
        return EXIT_STUCK
    return EXIT_OK


def cmd_run(args) -> int:
    scenario = _load(args.scenario, args)
    report, sim = run(scenario, seed=args.seed)
    text = dumps_report(report, sim.store)
    if args.report:
        Path(args.report).write_text(text)
    else:
        sys.stdout.write(text)
    if args.trace:
        Path(args.trace).write_text(dumps_trace(report.trace))
    store = sim.store
    status = "fork" if report.fork else "stuck" if report.stuck else "ok"
    print(
        f"{report.scenario}: seed={report.seed} ticks={report.ticks} verdict={status}",
        file=sys.stderr,
    )
    for i, f in sorted(report.final.items()):
        if i in scenario.perspective:
            print(f"  node {i}: preferred {store.label(f.preferred)}", file=sys.stderr)
    return _verdict_code(report)


def cmd_audit(args) -> int:
    scenario = load(args.scenario)
    g = scenario.graph
    condition = Condition.parse(args.condition)
    failing = audit(g, condition)
    # one row per pair of (UNL, budget) classes, keyed by its lowest ordered pair
    classes = defaultdict(list)
    for i in g.nodes:
        classes[(g.unls[i], g.t(i))].append(i)
    reps = sorted(members for members in classes.values())
    print(f"condition: {condition.value}")
    print(f"{'i':>6} {'j':>6} {'pairs':>7} {'overlap':>8} {'bound':>8} {'margin':>8}  status")
    for ma in reps:
        for mb in reps:
            i = ma[0]
            j = mb[0] if mb is not ma else (mb[1] if len(mb) > 1 else None)
            if j is None:
                continue
            count = len(ma) * len(mb) - (len(ma) if ma is mb else 0)
            chk = check_pair(g, i, j, condition)
            status = "pass" if chk.holds else "FAIL"
            print(
                f"{i:>6} {j:>6} {count:>7} {chk.overlap:>8} {str(chk.bound):>8} {str(chk.margin):>8}  {status}"
            )
    if args.pairs:
        for chk in failing:
            print(f"fail {chk.i} {chk.j} margin={chk.margin}")
    print(f"failing ordered pairs: {len(failing)}")
    return EXIT_AUDIT_FAIL if failing else EXIT_OK


def _sweep_one(scenario, seed: int) -> tuple[bool, bool, int]:
    report, sim = run(scenario, seed=seed)
    horizon = scenario.update_interval + scenario.policy.delay
    return report.fork is not None, report.stuck is not None, len(
        rounds_without_full_validation(report, sim.store, horizon)
    )


def cmd_sweep(args) -> int:
    scenario = _load(args.scenario, args)
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_sweep_one, [scenario] * len(args.seeds), args.seeds))
    else:
        results = [_sweep_one(scenario, seed) for seed in args.seeds]
    # results come back in seed order either way, so the totals are stable
    forks = sum(f for f, _s, _n in results)
    stuck = sum(s for _f, s, _n in results)
    no_full = sum(n for _f, _s, n in results)
    print(f"scenario: {scenario.name}")
    print(f"runs: {len(args.seeds)}")
    print(f"forks: {forks}")
    print(f"stuck: {stuck}")
    print(f"rounds_without_full_validation: {no_full}")
    if forks:
        return EXIT_FORK
    if stuck:
        return EXIT_STUCK
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    """Usage errors exit 1 so they never read as a fork (2) in CI."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_PARSE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lcpsim", description="Ledger consensus simulator and overlap auditor")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run one scenario and write a report")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    r.add_argument("--max-ticks", type=int, default=None)
    r.add_argument("--probe-ticks", type=int, default=None, help="civil ticks for the stuck probe (0 disables)")
    r.add_argument("--report", default=None, help="write the JSON report here instead of stdout")
    r.add_argument("--trace", default=None, help="write the trace as line-delimited JSON")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("audit", help="check every node pair against an overlap condition")
    a.add_argument("scenario")
    a.add_argument("--condition", default="fork-safety", help=", ".join(c.value for c in Condition))
    a.add_argument("--pairs", action="store_true", help="also list every failing ordered pair")
    a.set_defaults(func=cmd_audit)

    s = sub.add_parser("sweep", help="run a scenario over many seeds and count verdicts")
    s.add_argument("scenario")
    s.add_argument("--seeds", type=_seeds, default=list(range(10)), help="e.g. 0-99 or 1,5,9")
    s.add_argument("--max-ticks", type=int, default=None)
    s.add_argument("--probe-ticks", type=int, default=None)
    s.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ValueError as exc:
        # bad --condition and similar argument-level problems
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
