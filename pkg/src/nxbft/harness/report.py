"""Summaries of a finished simulation: throughput, latency, IDT, message counts."""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field

import numpy as np

from ..simnet import Metrics

BUCKET = 0.75


@dataclass
class Summary:
    window: tuple[float, float]
    submitted: int
    completed: int
    throughput: float
    latency_mean: float
    latency_p50: float
    latency_p95: float
    latency_p99: float
    idt_mean: float
    commit_gap_mean: float
    direct_commit_fraction: float
    vertex_messages_per_round: float
    dag_messages_per_round: float
    skipped_arrivals: int
    buckets: list[tuple[float, int, float]] = field(default_factory=list)

    def as_rows(self) -> list[tuple[str, float]]:
        return [
            ("window_start", self.window[0]),
            ("window_end", self.window[1]),
            ("submitted", self.submitted),
            ("completed", self.completed),
            ("throughput", self.throughput),
            ("latency_mean", self.latency_mean),
            ("latency_p50", self.latency_p50),
            ("latency_p95", self.latency_p95),
            ("latency_p99", self.latency_p99),
            ("idt_mean", self.idt_mean),
            ("commit_gap_mean", self.commit_gap_mean),
            ("direct_commit_fraction", self.direct_commit_fraction),
            ("vertex_messages_per_round", self.vertex_messages_per_round),
            ("dag_messages_per_round", self.dag_messages_per_round),
            ("skipped_arrivals", self.skipped_arrivals),
        ]


def _mean(values) -> float:
    return float(np.mean(values)) if len(values) else float("nan")


def _gaps(times, lo, hi) -> list[float]:
    inside = [t for t in times if lo <= t <= hi]
    return list(np.diff(inside)) if len(inside) > 1 else []


def summarize(metrics: Metrics, start: float, end: float, replicas=None, round_range=None) -> Summary:
    """Summarise requests completing in ``[start, end]``.

    ``replicas`` restricts IDT to those replica ids (e.g. never-faulty ones).
    ``round_range`` restricts the per-round message averages.
    """
    if end <= start:
        raise ValueError("empty measurement window")
    recs = list(metrics.requests.values())
    done = [r for r in recs if r.complete_time is not None and start <= r.complete_time <= end]
    lat = np.array([r.complete_time - r.submit_time for r in done], dtype=float)
    pct = np.percentile(lat, [50, 95, 99]) if lat.size else [float("nan")] * 3

    ids = sorted(metrics.decisions) if replicas is None else sorted(replicas)
    idt, gaps, waves, direct = [], [], 0, 0
    for rid in ids:
        decs = metrics.decisions.get(rid, [])
        idt += _gaps([t for t, _, present, _ in decs if present], start, end)
        gaps += _gaps([t for t, _ in metrics.commits.get(rid, [])], start, end)
        inside = [d for d in decs if start <= d[0] <= end]
        waves += len(inside)
        direct += sum(1 for d in inside if d[3])

    per_round: dict[int, int] = {}
    vertex_round: dict[int, int] = {}
    for (kind, rnd), count in metrics.msg_by_round.items():
        if round_range is not None and not round_range[0] <= rnd <= round_range[1]:
            continue
        per_round[rnd] = per_round.get(rnd, 0) + count
        if kind == "VERTEX":
            vertex_round[rnd] = vertex_round.get(rnd, 0) + count

    buckets = []
    t = start
    while t < end - 1e-12:
        hi = min(t + BUCKET, end)
        inb = [r for r in done if t <= r.complete_time < hi]
        buckets.append((t, len(inb), _mean([r.complete_time - r.submit_time for r in inb])))
        t += BUCKET

    return Summary(
        window=(start, end),
        submitted=sum(1 for r in recs if start <= r.submit_time <= end),
        completed=len(done),
        throughput=len(done) / (end - start),
        latency_mean=_mean(lat),
        latency_p50=float(pct[0]),
        latency_p95=float(pct[1]),
        latency_p99=float(pct[2]),
        idt_mean=_mean(idt),
        commit_gap_mean=_mean(gaps),
        direct_commit_fraction=direct / waves if waves else float("nan"),
        vertex_messages_per_round=_mean(list(vertex_round.values())),
        dag_messages_per_round=_mean(list(per_round.values())),
        skipped_arrivals=metrics.skipped_arrivals,
        buckets=buckets,
    )


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format(value, ".9g")
    if isinstance(value, bytes):
        return value.hex()
    return str(value)


def metrics_csv(metrics: Metrics, summary: Summary | None = None) -> str:
    """Long-format CSV: ``section,key,subkey,value`` (see README for the sections)."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["section", "key", "subkey", "value"])
    if summary is not None:
        for name, value in summary.as_rows():
            w.writerow(["summary", name, "", _fmt(value)])
        for t, count, mean_lat in summary.buckets:
            w.writerow(["bucket", _fmt(t), "completed", count])
            w.writerow(["bucket", _fmt(t), "latency_mean", _fmt(mean_lat)])
    for kind in sorted(metrics.msg_counts):
        w.writerow(["messages", kind, "total", metrics.msg_counts[kind]])
    for kind in sorted(metrics.omitted):
        w.writerow(["messages", kind, "omitted", metrics.omitted[kind]])
    for (kind, rnd) in sorted(metrics.msg_by_round):
        w.writerow(["messages_round", kind, rnd, metrics.msg_by_round[(kind, rnd)]])
    w.writerow(["network", "delivered", "", metrics.delivered])
    w.writerow(["network", "dropped_dead", "", metrics.dropped_dead])
    w.writerow(["network", "max_sync_delay", "", _fmt(metrics.max_sync_delay)])
    for reason in sorted(metrics.verdicts):
        w.writerow(["drops", reason, "", metrics.verdicts[reason]])
    for rid in sorted(metrics.setup):
        t, ok, reason = metrics.setup[rid]
        w.writerow(["setup", rid, "ok" if ok else "abort", _fmt(t)])
    for rid in sorted(metrics.decisions):
        for t, wave, present, directly in metrics.decisions[rid]:
            w.writerow(["wave", rid, wave, f"{_fmt(t)}|{int(present)}|{int(directly)}"])
    for t, rid, recoverer, top, digest in metrics.recoveries:
        w.writerow(["recovery", rid, recoverer, f"{_fmt(t)}|{top}|{digest.hex()}"])
    for t, rid, what in metrics.crashes:
        w.writerow(["fault", rid, what, _fmt(t)])
    for key in sorted(metrics.requests):
        r = metrics.requests[key]
        done = "" if r.complete_time is None else _fmt(r.complete_time)
        w.writerow(["request", f"{r.client_id}:{r.sequence_number}", r.sends, f"{_fmt(r.submit_time)}|{done}"])
    return out.getvalue()


def csv_digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def text_table(summary: Summary) -> str:
    rows = summary.as_rows()
    width = max(len(name) for name, _ in rows)
    lines = [f"{name:<{width}}  {_fmt(value)}" for name, value in rows]
    if summary.buckets:
        lines.append("")
        lines.append(f"{'bucket_start':>12}  {'completed':>9}  {'latency_mean':>12}")
        for t, count, mean_lat in summary.buckets:
            lines.append(f"{t:>12.2f}  {count:>9d}  {mean_lat:>12.4f}")
    return "\n".join(lines)
