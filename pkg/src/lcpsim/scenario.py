"""Scenario files (YAML) and run-report serialization.

A scenario file is a YAML mapping.  Node ids may be written as ranges
(``"0-4"``) wherever a list of ids is expected, and a ``nodes`` entry whose
``id`` is a range configures every node in it.  Unknown keys are rejected with
the file line that introduced them.
"""

from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional

import yaml

from .analysis import rounds_without_full_validation
from .ledger import LedgerStore
from .protocol import Proposal, ThresholdSchedule, Validation
from .sim import (
    AdversaryPolicy,
    Injection,
    LedgerSpec,
    Partition,
    Rule,
    RunReport,
    Scenario,
    ScenarioError,
)
from .trust import InvalidUNLError, QuorumPolicy, TrustGraph, TrustGraphError

SCHEMA_VERSION = 1


class ScenarioParseError(ValueError):
    def __init__(self, message: str, source: str = "<scenario>", line: Optional[int] = None):
        self.source, self.line, self.message = source, line, message
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


# -- YAML with line numbers ---------------------------------------------------------


class _Map(dict):
    line: Optional[int] = None
    key_lines: dict


class _Loader(yaml.SafeLoader):
    pass


def _construct_map(loader, node):
    loader.flatten_mapping(node)
    out = _Map()
    out.line = node.start_mark.line + 1
    out.key_lines = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        if key in out:
            raise ScenarioParseError(f"duplicate key {key!r}", line=key_node.start_mark.line + 1)
        out[key] = loader.construct_object(value_node, deep=True)
        out.key_lines[key] = key_node.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)


class _Reader:
    """Carries the source name so every error points at a file and line."""

    def __init__(self, source: str):
        self.source = source

    def fail(self, message: str, where: Any = None, key: Any = None):
        line = None
        if isinstance(where, _Map):
            line = where.key_lines.get(key, where.line) if key is not None else where.line
        raise ScenarioParseError(message, self.source, line)

    def mapping(self, value, what: str, allowed: set, required: set = frozenset(), parent=None, key=None) -> _Map:
        if not isinstance(value, dict):
            self.fail(f"{what} must be a mapping", parent, key)
        for k in value:
            if k not in allowed:
                self.fail(f"unknown key {k!r} in {what} (allowed: {', '.join(sorted(allowed))})", value, k)
        for k in sorted(required):
            if k not in value:
                self.fail(f"{what} is missing required key {k!r}", value)
        return value

    def integer(self, m: _Map, key: str, what: str, default=None, minimum: Optional[int] = None) -> int:
        if key not in m:
            return default
        v = m[key]
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(f"{what}.{key} must be an integer, got {v!r}", m, key)
        if minimum is not None and v < minimum:
            self.fail(f"{what}.{key} must be >= {minimum}, got {v}", m, key)
        return v

    def ids(self, value, m: _Map, key: str) -> list[int]:
        """Parse ``3``, ``"0-4"``, ``[1, "3-5"]`` into a sorted list of ints."""
        items = value if isinstance(value, list) else [value]
        out: set[int] = set()
        for item in items:
            if isinstance(item, bool):
                self.fail(f"{key}: bad node id {item!r}", m, key)
            if isinstance(item, int):
                out.add(item)
                continue
            if isinstance(item, str):
                text = item.strip()
                try:
                    if "-" in text:
                        lo, hi = (int(p) for p in text.split("-", 1))
                        if hi < lo:
                            raise ValueError
                        out.update(range(lo, hi + 1))
                    else:
                        out.add(int(text))
                    continue
                except ValueError:
                    pass
            self.fail(f"{key}: cannot read node ids from {item!r}", m, key)
        return sorted(out)

    def fraction(self, value, m: _Map, key: str) -> Fraction:
        try:
            if isinstance(value, float):
                return Fraction(str(value))
            return Fraction(value)
        except (TypeError, ValueError, ZeroDivisionError):
            self.fail(f"{key}: not a rational number: {value!r}", m, key)

    def txs(self, value, m: _Map, key: str) -> tuple[str, ...]:
        if value is None:
            return ()
        if not isinstance(value, list):
            self.fail(f"{key} must be a list of transaction ids", m, key)
        return tuple(str(x) for x in value)


TOP_KEYS = {
    "name", "seed", "max_ticks", "probe_ticks", "update_interval", "open_phase", "quorum",
    "thresholds", "nodes", "ledgers", "adversary", "submissions", "perspective", "stop",
}
NODE_KEYS = {"id", "unl", "fault_budget", "pending", "validated", "working", "offset"}
ADVERSARY_KEYS = {
    "kind", "delay", "byzantine", "accountability", "rules", "partitions", "injections",
    "drop_rate", "partition_count", "byzantine_rate", "civil_after",
}
RULE_KEYS = {"action", "delay", "kind", "round", "senders", "recipients", "sent_from", "sent_until"}
INJECTION_KEYS = {"tick", "kind", "sender", "ledger", "prior", "round", "txs", "to"}


def loads(text: str, source: str = "<scenario>") -> Scenario:
    try:
        doc = yaml.load(text, Loader=_Loader)
    except ScenarioParseError as exc:
        raise ScenarioParseError(exc.message, source, exc.line) from None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ScenarioParseError(f"invalid YAML: {getattr(exc, 'problem', exc)}", source, line) from None
    r = _Reader(source)
    top = r.mapping(doc, "scenario", TOP_KEYS, {"nodes"})
    try:
        return _build(r, top, source)
    except (ScenarioError, TrustGraphError, InvalidUNLError) as exc:
        raise ScenarioParseError(str(exc), source) from None


def load(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read file: {exc.strerror}", str(path)) from None
    return loads(text, str(path))


def _build(r: _Reader, top: _Map, source: str) -> Scenario:
    policy = _quorum(r, top)
    nodes, unls, budgets = _nodes(r, top)
    graph = TrustGraph.build(unls, policy, budgets)
    ledgers = _ledgers(r, top)
    by_name = _store_for(ledgers)

    pending, validated, working, offsets = {}, {}, {}, {}
    for i, entry in sorted(nodes.items()):
        if "pending" in entry:
            pending[i] = frozenset(r.txs(entry["pending"], entry, "pending"))
        for key, table in (("validated", validated), ("working", working)):
            if key in entry:
                name = str(entry[key])
                if name not in by_name:
                    r.fail(f"node {i}: unknown ledger {name!r}", entry, key)
                table[i] = name
        if "offset" in entry:
            offsets[i] = r.integer(entry, "offset", f"node {i}", minimum=0)

    schedule = ThresholdSchedule()
    if "thresholds" in top:
        steps = top["thresholds"]
        if not isinstance(steps, list) or not steps:
            r.fail("thresholds must be a non-empty list", top, "thresholds")
        try:
            schedule = ThresholdSchedule(tuple(r.fraction(s, top, "thresholds") for s in steps))
        except ValueError as exc:
            r.fail(str(exc), top, "thresholds")

    adversary = _adversary(r, top, by_name, len(unls))

    submissions = []
    for item in top.get("submissions") or []:
        m = r.mapping(item, "submission", {"tick", "node", "tx"}, {"tick", "node", "tx"}, top, "submissions")
        submissions.append((r.integer(m, "tick", "submission", minimum=0), r.integer(m, "node", "submission"), str(m["tx"])))

    stop_on_fork, stop_at_seq = False, None
    if "stop" in top:
        stop = r.mapping(top["stop"], "stop", {"on_fork", "at_seq"}, parent=top, key="stop")
        stop_on_fork = bool(stop.get("on_fork", False))
        stop_at_seq = r.integer(stop, "at_seq", "stop", minimum=1)

    perspective = ()
    if "perspective" in top:
        perspective = tuple(r.ids(top["perspective"], top, "perspective"))

    name = str(top.get("name", Path(source).stem if source != "<scenario>" else "scenario"))
    scenario = Scenario(
        graph=graph,
        policy=adversary,
        schedule=schedule,
        initial_pending=pending,
        max_ticks=r.integer(top, "max_ticks", "scenario", default=50, minimum=1),
        name=name,
        seed=r.integer(top, "seed", "scenario", default=0),
        ledgers=ledgers,
        validated=validated,
        working=working,
        submissions=tuple(submissions),
        update_interval=r.integer(top, "update_interval", "scenario", default=1, minimum=1),
        open_phase=r.integer(top, "open_phase", "scenario", default=0, minimum=0),
        offsets=offsets,
        probe_ticks=r.integer(top, "probe_ticks", "scenario", default=0, minimum=0),
        perspective=perspective,
        stop_on_fork=stop_on_fork,
        stop_at_seq=stop_at_seq,
    )
    scenario.validate()
    return scenario


def _quorum(r: _Reader, top: _Map) -> QuorumPolicy:
    if "quorum" not in top:
        return QuorumPolicy.fraction()
    m = r.mapping(top["quorum"], "quorum", {"kind", "ratio", "k"}, {"kind"}, top, "quorum")
    try:
        if m["kind"] == "fraction":
            return QuorumPolicy.fraction(r.fraction(m.get("ratio", "4/5"), m, "ratio"))
        if m["kind"] == "floordiv":
            return QuorumPolicy.floor_div(r.integer(m, "k", "quorum", default=0))
    except ValueError as exc:
        r.fail(str(exc), m)
    r.fail(f"quorum.kind must be 'fraction' or 'floordiv', got {m['kind']!r}", m, "kind")


def _nodes(r: _Reader, top: _Map):
    raw = top["nodes"]
    if not isinstance(raw, list) or not raw:
        r.fail("nodes must be a non-empty list", top, "nodes")
    entries: dict[int, _Map] = {}
    for item in raw:
        m = r.mapping(item, "node entry", NODE_KEYS, {"id", "unl"}, top, "nodes")
        for i in r.ids(m["id"], m, "id"):
            if i in entries:
                r.fail(f"node {i} configured twice", m, "id")
            entries[i] = m
    ids = sorted(entries)
    if ids != list(range(len(ids))):
        missing = sorted(set(range(max(ids) + 1)) - set(ids))
        r.fail(f"node ids must be dense from 0; missing {missing[:10]}", top, "nodes")
    unls, budgets = {}, {}
    for i in ids:
        m = entries[i]
        unls[i] = r.ids(m["unl"], m, "unl")
        if "fault_budget" in m:
            budgets[i] = r.integer(m, "fault_budget", f"node {i}", minimum=0)
    return entries, unls, budgets


def _ledgers(r: _Reader, top: _Map) -> tuple[LedgerSpec, ...]:
    if "ledgers" not in top or top["ledgers"] is None:
        return ()
    section = top["ledgers"]
    if not isinstance(section, dict):
        r.fail("ledgers must be a mapping of name -> {parent, txs}", top, "ledgers")
    out = []
    known = {"genesis"}
    for name, body in section.items():
        m = r.mapping(body, f"ledger {name}", {"parent", "txs"}, {"parent"}, section, name)
        parent = str(m["parent"])
        if parent not in known:
            r.fail(f"ledger {name}: parent {parent!r} is not defined above it", m, "parent")
        if str(name) in known:
            r.fail(f"ledger {name!r} defined twice", section, name)
        known.add(str(name))
        out.append(LedgerSpec(str(name), parent, r.txs(m.get("txs"), m, "txs")))
    return tuple(out)


def _store_for(ledgers) -> dict:
    store = LedgerStore()
    by_name = {"genesis": store.genesis}
    for spec in ledgers:
        by_name[spec.name] = store.apply(by_name[spec.parent], spec.txs)
    return by_name


def _adversary(r: _Reader, top: _Map, by_name: dict, n_nodes: int) -> AdversaryPolicy:
    if "adversary" not in top:
        return AdversaryPolicy()
    m = r.mapping(top["adversary"], "adversary", ADVERSARY_KEYS, parent=top, key="adversary")
    kind = m.get("kind", "civil")
    rules = []
    for item in m.get("rules") or []:
        rm = r.mapping(item, "rule", RULE_KEYS, {"action"}, m, "rules")
        try:
            rules.append(Rule(
                action=rm["action"],
                delay=r.integer(rm, "delay", "rule", default=1),
                kind=rm.get("kind"),
                round=r.integer(rm, "round", "rule", minimum=0),
                senders=frozenset(r.ids(rm["senders"], rm, "senders")) if "senders" in rm else None,
                recipients=frozenset(r.ids(rm["recipients"], rm, "recipients")) if "recipients" in rm else None,
                sent_from=r.integer(rm, "sent_from", "rule", minimum=0),
                sent_until=r.integer(rm, "sent_until", "rule", minimum=0),
            ))
        except ScenarioError as exc:
            r.fail(str(exc), rm)
    partitions = []
    for item in m.get("partitions") or []:
        pm = r.mapping(item, "partition", {"groups", "from", "until"}, {"groups", "from", "until"}, m, "partitions")
        if not isinstance(pm["groups"], list):
            r.fail("partition groups must be a list", pm, "groups")
        try:
            partitions.append(Partition(
                tuple(frozenset(r.ids(grp, pm, "groups")) for grp in pm["groups"]),
                r.integer(pm, "from", "partition", minimum=0),
                r.integer(pm, "until", "partition", minimum=0),
            ))
        except ScenarioError as exc:
            r.fail(str(exc), pm)
    injections = []
    for item in m.get("injections") or []:
        im = r.mapping(item, "injection", INJECTION_KEYS, {"tick", "kind", "sender"}, m, "injections")
        sender = r.integer(im, "sender", "injection")
        if im["kind"] == "validation":
            lname = str(im.get("ledger"))
            if lname not in by_name:
                r.fail(f"injection names unknown ledger {lname!r}", im, "ledger")
            led = by_name[lname]
            msg = Validation(led.hash, led.seq, sender)
        elif im["kind"] == "proposal":
            pname = str(im.get("prior", "genesis"))
            if pname not in by_name:
                r.fail(f"injection names unknown prior {pname!r}", im, "prior")
            msg = Proposal(frozenset(r.txs(im.get("txs"), im, "txs")), r.integer(im, "round", "injection", default=0, minimum=0), by_name[pname].hash, sender)
        else:
            r.fail(f"injection kind must be 'proposal' or 'validation', got {im['kind']!r}", im, "kind")
        to = frozenset(r.ids(im["to"], im, "to")) if "to" in im else None
        injections.append(Injection(r.integer(im, "tick", "injection", minimum=0), msg, to))
    byz = frozenset(r.ids(m["byzantine"], m, "byzantine")) if m.get("byzantine") is not None else frozenset()
    for inj in injections:
        if inj.sender not in byz:
            r.fail(f"injection from node {inj.sender}, which is not byzantine", m, "injections")
    try:
        return AdversaryPolicy(
            kind=kind,
            delay=r.integer(m, "delay", "adversary", default=1, minimum=1),
            rules=tuple(rules),
            partitions=tuple(partitions),
            injections=tuple(injections),
            byzantine=byz,
            accountability=bool(m.get("accountability", False)),
            drop_rate=float(m.get("drop_rate", 0.0)),
            partition_count=r.integer(m, "partition_count", "adversary", default=0, minimum=0),
            byzantine_rate=float(m.get("byzantine_rate", 0.5)),
            civil_after=r.integer(m, "civil_after", "adversary", minimum=0),
        )
    except ScenarioError as exc:
        r.fail(str(exc), m)


# -- reports ---------------------------------------------------------------------


def report_dict(report: RunReport, store: LedgerStore, include_trace: bool = True) -> dict:
    ledgers = sorted(store, key=lambda led: (led.seq, led.hash))
    out = {
        "schema_version": SCHEMA_VERSION,
        "scenario": report.scenario,
        "seed": report.seed,
        "ticks": report.ticks,
        "ledgers": [dict(name=store.label(led.hash), **led.to_dict()) for led in ledgers],
        "nodes": {
            str(i): {
                "fully_validated": f.fully_validated.hex(),
                "fully_validated_seq": f.fv_seq,
                "s_max": f.s_max,
                "working": f.working.hex(),
                "preferred": f.preferred.hex(),
                "preferred_name": store.label(f.preferred),
            }
            for i, f in sorted(report.final.items())
        },
        "verdicts": {
            "fork": report.fork.to_dict() if report.fork else None,
            "stuck": report.stuck.to_dict() if report.stuck else None,
            "rounds_without_full_validation": rounds_without_full_validation(report, store),
        },
        "annotations": {
            str(i): {
                store.label(h): list(v)
                for h, v in sorted(table.items(), key=lambda kv: (store.get(kv[0]).seq, kv[0]))
            }
            for i, table in sorted(report.annotations.items())
        },
    }
    if include_trace:
        out["trace"] = report.trace
    return out


def dumps_report(report: RunReport, store: LedgerStore, include_trace: bool = True) -> str:
    return json.dumps(report_dict(report, store, include_trace), indent=2) + "\n"


def dumps_trace(trace: list) -> str:
    return "".join(json.dumps(rec, separators=(",", ":")) + "\n" for rec in trace)
