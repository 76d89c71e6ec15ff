"""Experiment harness: client emulation, reports, audits and the common-core checker."""

from .audit import AuditReport, audit_simulation, audit_trace_bytes, audit_trace_file
from .clients import ClientEmulator, ClientModel
from .experiment import PRESETS, Experiment, RunResult, build_experiment, load_experiment, run_experiment
from .getcore import CoreReport, ExplicitDag, bundled_counterexample, check_get_core, load_dag, parse_dag, wave_from_store
from .report import Summary, metrics_csv, summarize, text_table

__all__ = [
    "AuditReport",
    "ClientEmulator",
    "ClientModel",
    "CoreReport",
    "Experiment",
    "ExplicitDag",
    "PRESETS",
    "RunResult",
    "Summary",
    "audit_simulation",
    "audit_trace_bytes",
    "audit_trace_file",
    "build_experiment",
    "bundled_counterexample",
    "check_get_core",
    "load_dag",
    "load_experiment",
    "metrics_csv",
    "parse_dag",
    "run_experiment",
    "summarize",
    "text_table",
    "wave_from_store",
]
