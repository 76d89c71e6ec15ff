"""Experiment files (YAML), presets, and the end-to-end run driver."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from ..broadcast import BroadcastConfig
from ..errors import ConfigError
from ..replica import ReplicaConfig
from ..simnet import FaultAction, SimConfig, Simulator
from .audit import AuditReport, audit_simulation
from .clients import ClientEmulator, ClientModel
from .report import Summary, csv_digest, metrics_csv, summarize

DEFAULTS: dict[str, Any] = {
    "name": "experiment",
    "n": 5,
    "seed": 0,
    "duration": 5.0,
    "warmup": 1.0,
    "network": {
        "rtt_ms": 0.2,
        "jitter": 0.2,
        "jitter_mode": "symmetric",
        "client_rtt_ms": None,
        "synchronous_phase_bound_ms": 50.0,
        "adversarial": False,
        "adversary_slowdown": 8.0,
        "adversary_intensity": 0.8,
        "trace_messages": False,
    },
    "broadcast": {
        "batch_min": 100,
        "batch_max": 1000,
        "batch_timer": 0.1,
        "holdback_limit": 1024,
        "window_rounds": 16,
        "backfill_delay": "auto",
    },
    "replica": {"respond": "all", "setup_timeout": "auto"},
    "clients": {
        "kind": "nxb",
        "rate": 1000.0,
        "clients": 200,
        "fallback_timeout": 5.0,
        "payload_size": 0,
        "start": "auto",
        "shared_blacklist": True,
    },
    "faults": [],
}

PRESETS: dict[str, dict[str, Any]] = {
    "smoke": {"name": "smoke", "n": 4, "duration": 2.0, "warmup": 0.5, "clients": {"rate": 500, "clients": 50}},
    "lan-n5": {"name": "lan-n5", "n": 5, "duration": 5.0, "clients": {"rate": 2000, "clients": 400}},
    "wan35-n5": {
        "name": "wan35-n5",
        "n": 5,
        "duration": 6.0,
        "network": {"rtt_ms": 35.0, "jitter_mode": "positive"},
        "broadcast": {"batch_min": 1},
        "clients": {"rate": 2000, "clients": 3000},
    },
    "crash-n10": {
        "name": "crash-n10",
        "n": 10,
        "duration": 26.0,
        "warmup": 2.0,
        "broadcast": {"batch_min": 20, "batch_timer": 0.02},
        "replica": {"respond": "origin"},
        "clients": {"rate": 1000, "clients": 1000, "fallback_timeout": 2.0},
        "faults": [
            {"time": 6.0, "replica": 9, "action": "crash"},
            {"time": 12.0, "replica": 8, "action": "crash"},
            {"time": 18.0, "replica": 7, "action": "crash"},
        ],
    },
    "recover-n5": {
        "name": "recover-n5",
        "n": 5,
        "duration": 6.0,
        "clients": {"rate": 500, "clients": 100},
        "faults": [
            {"time": 1.5, "replica": 2, "action": "crash"},
            {"time": 2.5, "replica": 2, "action": "recover"},
        ],
    },
    "omit-n5": {
        "name": "omit-n5",
        "n": 5,
        "duration": 4.0,
        "clients": {"rate": 500, "clients": 100},
        "faults": [{"time": 0.0, "replica": 1, "action": "omit", "targets": [2, 3], "kinds": ["VERTEX"]}],
    },
}


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def apply_override(raw: dict, assignment: str) -> dict:
    """Apply ``section.key=value`` (value parsed as YAML) to a raw experiment dict."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    path, text = assignment.split("=", 1)
    value = yaml.safe_load(text)
    keys = path.strip().split(".")
    node = raw
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {assignment!r} descends into a non-mapping")
    node[keys[-1]] = value
    return raw


@dataclass
class Experiment:
    name: str
    duration: float
    warmup: float
    sim: SimConfig
    replica: ReplicaConfig
    clients: ClientModel | None
    raw: dict

    @property
    def n(self) -> int:
        return self.sim.n


def build_experiment(raw: dict) -> Experiment:
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
    cfg = _merge(DEFAULTS, raw)
    for section in ("network", "broadcast", "replica"):
        extra = set(cfg[section]) - set(DEFAULTS[section])
        if extra:
            raise ConfigError(f"unknown keys in '{section}': {sorted(extra)}")
    try:
        faults = [
            FaultAction(
                time=float(f["time"]),
                replica=int(f["replica"]),
                action=f["action"],
                targets=tuple(f.get("targets", ())),
                kinds=tuple(f.get("kinds", ())),
                probability=float(f.get("probability", 1.0)),
                mode=f.get("mode", "forged-counter"),
            )
            for f in cfg["faults"]
        ]
        net = cfg["network"]
        sim = SimConfig(n=int(cfg["n"]), scheduler_seed=int(cfg["seed"]), faults=faults, **net)
        bc = dict(cfg["broadcast"])
        if bc["backfill_delay"] == "auto":
            slow = sim.adversary_slowdown if sim.adversarial else 1.0
            bc["backfill_delay"] = 2.0 * sim.max_one_way * slow
        broadcast = BroadcastConfig(**bc)
        rep = dict(cfg["replica"])
        if rep["setup_timeout"] == "auto":
            rep["setup_timeout"] = 5.0 * sim.sync_bound
        replica = ReplicaConfig(broadcast=broadcast, **rep)
        clients = None
        if cfg["clients"] is not None:
            cl = dict(cfg["clients"])
            if cl.get("start", "auto") == "auto":
                cl["start"] = replica.setup_timeout
            clients = ClientModel(**cl)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"invalid experiment: {exc}") from exc
    duration = float(cfg["duration"])
    warmup = float(cfg["warmup"])
    if duration <= 0 or not 0 <= warmup < duration:
        raise ConfigError("need duration > 0 and 0 <= warmup < duration")
    return Experiment(cfg["name"], duration, warmup, sim, replica, clients, cfg)


def load_experiment(source: str | Path, overrides=()) -> Experiment:
    """Load a YAML experiment file, or a preset when ``source`` is ``preset:<name>``."""
    text = str(source)
    if text.startswith("preset:"):
        name = text.split(":", 1)[1]
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        raw = copy.deepcopy(PRESETS[name])
    else:
        raw = yaml.safe_load(Path(source).read_text()) or {}
        if not isinstance(raw, dict):
            raise ConfigError("experiment file must contain a mapping")
    for assignment in overrides:
        apply_override(raw, assignment)
    return build_experiment(raw)


@dataclass
class RunResult:
    experiment: Experiment
    sim: Simulator
    summary: Summary
    audit: AuditReport
    csv: str

    @property
    def csv_digest(self) -> str:
        return csv_digest(self.csv)


def run_experiment(exp: Experiment, app_factory=None) -> RunResult:
    sim = Simulator(exp.sim, exp.replica, app_factory)
    if exp.clients is not None:
        sim.attach_client(ClientEmulator(exp.clients, exp.n, exp.sim.scheduler_seed))
    sim.run(exp.duration)
    sim.finish()
    correct = [i for i in range(exp.n) if i not in sim.ever_faulty]
    summary = summarize(sim.metrics, exp.warmup, exp.duration, replicas=correct)
    audit = audit_simulation(sim)
    return RunResult(exp, sim, summary, audit, metrics_csv(sim.metrics, summary))
