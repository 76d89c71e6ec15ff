"""Command-line entry point: ``nxbft run|sweep|check-core|audit``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..errors import ConfigError, MalformedDag, NxbftError
from .audit import audit_trace_file
from .experiment import PRESETS, load_experiment, run_experiment
from .getcore import check_get_core, load_dag
from .report import text_table


def _cmd_run(args) -> int:
    exp = load_experiment(args.experiment, args.set)
    result = run_experiment(exp)
    print(f"# {exp.name}: n={exp.n} seed={exp.sim.scheduler_seed} duration={exp.duration}s")
    print(text_table(result.summary))
    print(f"metrics_csv_sha256  {result.csv_digest}")
    print(f"trace_sha256        {result.sim.trace.digest()}")
    if args.csv:
        Path(args.csv).write_text(result.csv)
    if args.trace:
        result.sim.trace.save(args.trace)
    if args.dot:
        replica = result.sim.replicas[args.dot_replica] if 0 <= args.dot_replica < exp.n else None
        if replica is None:
            raise ConfigError(f"replica {args.dot_replica} is not alive at the end of the run")
        Path(args.dot).write_text(replica.dag.to_dot())
    print(result.audit)
    return 0 if result.audit.ok else 1


def sweep_rates(experiment, overrides, rates, tolerance):
    """Run each rate in ascending order; stop at the first one the system cannot sustain.

    A rate is sustained when throughput is within ``tolerance`` (relative) of
    the offered rate and no arrival found every client busy.
    """
    rows, best, violations = [], None, 0
    for rate in sorted(rates):
        exp = load_experiment(experiment, list(overrides) + [f"clients.rate={rate}"])
        result = run_experiment(exp)
        s = result.summary
        ok = abs(s.throughput - rate) <= tolerance * rate and s.skipped_arrivals == 0
        rows.append((rate, s.throughput, s.latency_mean, ok, result.audit.ok))
        violations += 0 if result.audit.ok else 1
        if not ok:
            break
        best = rate
    return rows, best, violations


def _cmd_sweep(args) -> int:
    rates = [float(r) for r in args.rates.split(",") if r.strip()]
    if not rates or any(r <= 0 for r in rates):
        raise ConfigError("--rates needs positive comma-separated values")
    rows, best, violations = sweep_rates(args.experiment, args.set, rates, args.tolerance)
    print(f"{'rate':>10}  {'throughput':>10}  {'latency':>9}  sustained  audit")
    for rate, tput, lat, ok, audit_ok in rows:
        print(f"{rate:>10.1f}  {tput:>10.1f}  {lat:>9.4f}  {'yes' if ok else 'no':>9}  {'ok' if audit_ok else 'FAIL'}")
    print(f"max sustained rate: {best if best is not None else 'none'}")
    return 1 if violations else 0


def _cmd_check_core(args) -> int:
    dag = load_dag(args.dag)
    report = check_get_core(dag, args.n, args.wave_len, args.min_links)
    status = "holds" if report.holds else "FAILS"
    print(f"max_common_core_size {report.max_common_core_size}")
    print(f"witness {' '.join(map(str, report.witness))}")
    print(f"threshold {report.threshold}")
    print(f"get-core {status}")
    return 0 if report.holds else 1


def _cmd_audit(args) -> int:
    report = audit_trace_file(args.trace)
    print(report)
    return 0 if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nxbft", description="NxBFT simulation harness")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment file (or preset:<name>)")
    run.add_argument("experiment", help=f"YAML file or preset:<name> ({', '.join(sorted(PRESETS))})")
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override, e.g. clients.rate=500")
    run.add_argument("--csv", help="write the metrics CSV here")
    run.add_argument("--trace", help="write the binary trace here")
    run.add_argument("--dot", help="write one replica's final DAG in Graphviz DOT format here")
    run.add_argument("--dot-replica", type=int, default=0, metavar="ID", help="replica for --dot (default 0)")
    run.set_defaults(func=_cmd_run)

    sweep = sub.add_parser("sweep", help="search the highest sustainable request rate")
    sweep.add_argument("experiment")
    sweep.add_argument("--rates", required=True, help="comma-separated request rates (req/s)")
    sweep.add_argument("--tolerance", type=float, default=0.05)
    sweep.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    sweep.set_defaults(func=_cmd_sweep)

    core = sub.add_parser("check-core", help="compute the maximum common core of a .dag wave file")
    core.add_argument("dag")
    core.add_argument("--n", type=int)
    core.add_argument("--wave-len", type=int)
    core.add_argument("--min-links", type=int)
    core.set_defaults(func=_cmd_check_core)

    audit = sub.add_parser("audit", help="audit a binary trace for safety violations")
    audit.add_argument("trace")
    audit.set_defaults(func=_cmd_audit)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, MalformedDag) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, NxbftError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
