"""Mechanical safety audits over a simulation trace.

Each replica incarnation (a replica restarted after a crash is a new
incarnation with an empty log) is audited separately; delivery logs,
execution sequences and DAG admissions are rebuilt from trace records.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

from ..simnet import Simulator, Trace


@dataclass
class AuditReport:
    violations: list[str] = field(default_factory=list)
    incarnations: int = 0
    deliveries: int = 0
    executions: int = 0
    admissions: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        head = "OK" if self.ok else f"{len(self.violations)} violation(s)"
        stats = (
            f"{self.incarnations} incarnations, {self.deliveries} deliveries, "
            f"{self.executions} executions, {self.admissions} admissions"
        )
        return "\n".join([f"audit: {head} ({stats})"] + [f"  - {v}" for v in self.violations[:50]])


def _is_prefix(a: list, b: list) -> bool:
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    return long_[: len(short)] == short


def _first_divergence(a: list, b: list) -> int:
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return i
    return min(len(a), len(b))


def audit_events(events, extra_byzantine=()) -> AuditReport:
    report = AuditReport()
    logs: dict[tuple, list[bytes]] = {}
    execs: dict[tuple, list[tuple]] = {}
    admitted: dict[tuple, set[bytes]] = {}
    slots: dict[tuple[int, int], dict[bytes, tuple]] = {}
    finals: dict[tuple, tuple] = {}
    recoveries: dict[int, dict[tuple, list[bytes]]] = {}
    byzantine = set(extra_byzantine)

    for ev in events:
        tag = ev[0]
        if tag == "admit":
            _, _t, rid, inc, rnd, source, _counter, digest, edges = ev
            key = (rid, inc)
            seen = admitted.setdefault(key, set())
            for e in edges:
                if e not in seen:
                    report.violations.append(
                        f"closure: replica {rid}/{inc} admitted r{rnd}/s{source} before its edge {e.hex()[:8]}"
                    )
            if digest in seen:
                report.violations.append(f"closure: replica {rid}/{inc} admitted {digest.hex()[:8]} twice")
            seen.add(digest)
            slots.setdefault((rnd, source), {})[digest] = key
            report.admissions += 1
        elif tag == "deliver":
            _, _t, rid, inc, digest = ev
            logs.setdefault((rid, inc), []).append(digest)
            report.deliveries += 1
        elif tag == "exec":
            _, _t, rid, inc, client, seq, result = ev
            execs.setdefault((rid, inc), []).append((client, seq, result))
            report.executions += 1
        elif tag == "final":
            _, _t, rid, inc, _status, state, _log_len = ev
            finals[(rid, inc)] = state
        elif tag == "recovered":
            _, _t, rid, inc, recoverer, _top, digest = ev
            recoveries.setdefault(recoverer, {}).setdefault((rid, inc), []).append(digest)
        elif tag == "byzantine":
            byzantine.update(ev[2])

    correct = lambda key: key[0] not in byzantine  # noqa: E731
    report.incarnations = len({k for k in list(logs) + list(admitted) + list(execs) if correct(k)})

    for (rnd, source), by_digest in sorted(slots.items()):
        if source in byzantine or len(by_digest) < 2:
            continue
        holders = sorted({k for k in by_digest.values() if correct(k)})
        if len(by_digest) > 1 and holders:
            report.violations.append(f"consistency: {len(by_digest)} different vertices admitted for r{rnd}/s{source}")

    keys = sorted(k for k in logs if correct(k))
    for a, b in combinations(keys, 2):
        if not _is_prefix(logs[a], logs[b]):
            i = _first_divergence(logs[a], logs[b])
            report.violations.append(f"agreement: delivery logs of {a} and {b} diverge at position {i}")

    for key in sorted(k for k in execs if correct(k)):
        seen_pairs = set()
        for client, seq, _ in execs[key]:
            if (client, seq) in seen_pairs:
                report.violations.append(f"exactly-once: {key} executed ({client}, {seq}) twice")
            seen_pairs.add((client, seq))
    ekeys = sorted(k for k in execs if correct(k))
    for a, b in combinations(ekeys, 2):
        if not _is_prefix(execs[a], execs[b]):
            i = _first_divergence(execs[a], execs[b])
            report.violations.append(f"state: executions of {a} and {b} diverge at position {i}")
    fkeys = sorted(k for k in finals if correct(k))
    for a, b in combinations(fkeys, 2):
        if len(execs.get(a, ())) == len(execs.get(b, ())) and finals[a] != finals[b]:
            report.violations.append(f"state: {a} and {b} executed the same sequence but hold different states")

    for recoverer, per_replica in sorted(recoveries.items()):
        lists = [v for k, v in sorted(per_replica.items()) if correct(k)]
        for a, b in combinations(lists, 2):
            if not _is_prefix(a, b):
                report.violations.append(f"recovery: replicas adopted different histories for {recoverer}")
                break
    return report


def audit_trace_bytes(data: bytes) -> AuditReport:
    return audit_events(Trace.iter_bytes(data))


def audit_trace_file(path) -> AuditReport:
    return audit_events(Trace.iter_file(path))


def audit_simulation(sim: Simulator) -> AuditReport:
    report = audit_events(Trace.iter_bytes(sim.trace.to_bytes()), sim.byzantine)
    bound = sim.config.sync_bound
    if sim.metrics.max_sync_delay > bound + 1e-12:
        report.violations.append(
            f"network: a setup/recovery message took {sim.metrics.max_sync_delay:.6f}s > bound {bound:.6f}s"
        )
    for r in sim.live_replicas():
        if r.id in sim.byzantine:
            continue
        for v in r.dag:
            for e in v.edges:
                if e not in r.dag.by_ref:
                    report.violations.append(f"closure: replica {r.id} holds {v!r} without {e!r}")
    return report
