"""Deterministic discrete-event simulation of a replica federation.

Links are point-to-point, reorder freely and never lose messages. Virtual
time is in seconds. Everything random (link delays, adversarial choices,
replica entropy, client arrivals) is derived from ``scheduler_seed``, so a
run is a pure function of its configuration.
"""

from __future__ import annotations

import hashlib
import heapq
import random
import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterator

from . import codec
from .crypto import SigningKey, seeded_entropy
from .enclave import Platform, counter_message, CounterSignature
from .errors import ConfigError, SimulationError
from .messages import (
    ClientRequest,
    RecoveryCommitMsg,
    RecoveryProposalMsg,
    RecoveryRequestMsg,
    SetupCert,
    SetupEcho,
    SetupReady,
    SetupShare,
    Vertex,
    VertexMsg,
    VertexReply,
    VertexRequest,
    content_digest,
)
from .replica import Replica, ReplicaBackup, ReplicaConfig, Status

CLIENT = -1
SYNC_KINDS = frozenset(
    cls.KIND
    for cls in (SetupCert, SetupEcho, SetupShare, SetupReady, RecoveryRequestMsg, RecoveryProposalMsg, RecoveryCommitMsg)
)
DAG_KINDS = frozenset(("VERTEX", "VERTEX_REQUEST", "VERTEX_REPLY"))
FAULT_ACTIONS = ("crash", "recover", "omit", "heal", "equivocate")


@dataclass(frozen=True)
class FaultAction:
    """One scheduled fault.

    ``omit`` drops outbound messages of ``replica`` to ``targets`` (all peers
    when empty) whose kind is in ``kinds`` (all kinds when empty), each with
    ``probability``. ``heal`` cancels omissions. ``equivocate`` makes the
    replica's next vertex broadcast split between two conflicting vertices;
    ``mode`` is ``forged-counter`` (host relabels a second enclave signature)
    or ``key-leak`` (a genuine second signature under the reused counter).
    """

    time: float
    replica: int
    action: str
    targets: tuple[int, ...] = ()
    kinds: tuple[str, ...] = ()
    probability: float = 1.0
    mode: str = "forged-counter"

    def __post_init__(self):
        if self.action not in FAULT_ACTIONS:
            raise ConfigError(f"unknown fault action {self.action!r}")
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigError("omission probability must be in [0, 1]")
        if self.mode not in ("forged-counter", "key-leak"):
            raise ConfigError(f"unknown equivocation mode {self.mode!r}")


@dataclass
class SimConfig:
    n: int = 4
    scheduler_seed: int = 0
    rtt_ms: float = 0.2
    jitter: float = 0.2
    jitter_mode: str = "symmetric"
    client_rtt_ms: float | None = None
    synchronous_phase_bound_ms: float = 50.0
    adversarial: bool = False
    adversary_slowdown: float = 8.0
    adversary_intensity: float = 0.8
    faults: list[FaultAction] = field(default_factory=list)
    trace_messages: bool = False

    def __post_init__(self):
        if self.n < 3:
            raise ConfigError("n must be at least 3")
        if self.rtt_ms < 0 or (self.client_rtt_ms is not None and self.client_rtt_ms < 0):
            raise ConfigError("latencies must be non-negative")
        if not 0 <= self.jitter < 1:
            raise ConfigError("jitter must be in [0, 1)")
        if self.jitter_mode not in ("symmetric", "positive"):
            raise ConfigError("jitter_mode must be 'symmetric' or 'positive'")
        if self.synchronous_phase_bound_ms <= 0:
            raise ConfigError("synchronous_phase_bound_ms must be positive")
        if self.adversary_slowdown < 1:
            raise ConfigError("adversary_slowdown must be at least 1")
        for fa in self.faults:
            if not 0 <= fa.replica < self.n:
                raise ConfigError(f"fault targets unknown replica {fa.replica}")

    @property
    def half_rtt(self) -> float:
        return self.rtt_ms / 2000.0

    @property
    def client_half_rtt(self) -> float:
        rtt = self.rtt_ms if self.client_rtt_ms is None else self.client_rtt_ms
        return rtt / 2000.0

    @property
    def sync_bound(self) -> float:
        return self.synchronous_phase_bound_ms / 1000.0

    @property
    def max_one_way(self) -> float:
        """Upper bound on a fault-free inter-replica delay (jitter included)."""
        return self.half_rtt * (1 + self.jitter) + LINK_FLOOR


# a small per-hop floor keeps zero-latency runs from collapsing into one instant
LINK_FLOOR = 20e-6


@dataclass
class RequestRecord:
    client_id: int
    sequence_number: int
    submit_time: float
    complete_time: float | None = None
    sends: int = 1


@dataclass
class Metrics:
    n: int
    msg_counts: Counter = field(default_factory=Counter)
    msg_by_round: Counter = field(default_factory=Counter)
    omitted: Counter = field(default_factory=Counter)
    delivered: int = 0
    dropped_dead: int = 0
    max_sync_delay: float = 0.0
    verdicts: Counter = field(default_factory=Counter)
    requests: dict[tuple[int, int], RequestRecord] = field(default_factory=dict)
    decisions: dict[int, list[tuple[float, int, bool, bool]]] = field(default_factory=dict)
    commits: dict[int, list[tuple[float, int]]] = field(default_factory=dict)
    round_entries: dict[int, list[tuple[float, int]]] = field(default_factory=dict)
    setup: dict[int, tuple[float, bool, str]] = field(default_factory=dict)
    recoveries: list[tuple[float, int, int, int, bytes]] = field(default_factory=list)
    crashes: list[tuple[float, int, str]] = field(default_factory=list)
    skipped_arrivals: int = 0


class Trace:
    """Binary event log: magic header, then ``u32`` length-prefixed canonical records."""

    MAGIC = b"NXTRACE1"
    _LEN = struct.Struct(">I")

    def __init__(self):
        self._buf = bytearray(self.MAGIC)
        self._hash = hashlib.sha256(self.MAGIC)

    def record(self, *fields) -> None:
        data = codec.encode(fields)
        chunk = self._LEN.pack(len(data)) + data
        self._buf += chunk
        self._hash.update(chunk)

    def digest(self) -> str:
        return self._hash.hexdigest()

    def to_bytes(self) -> bytes:
        return bytes(self._buf)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self._buf)

    @classmethod
    def iter_file(cls, path) -> Iterator[tuple]:
        with open(path, "rb") as fh:
            yield from cls.iter_bytes(fh.read())

    @classmethod
    def iter_bytes(cls, data: bytes) -> Iterator[tuple]:
        if not data.startswith(cls.MAGIC):
            raise codec.DecodeError("not a trace file")
        pos = len(cls.MAGIC)
        while pos < len(data):
            if pos + 4 > len(data):
                raise codec.DecodeError("truncated trace record header")
            (size,) = cls._LEN.unpack_from(data, pos)
            pos += 4
            if pos + size > len(data):
                raise codec.DecodeError("truncated trace record")
            yield codec.decode(data[pos : pos + size])
            pos += size


def _ns(t: float) -> int:
    return int(round(t * 1e9))


def _msg_round(msg) -> int:
    if isinstance(msg, (VertexMsg, VertexReply)):
        return msg.vertex.round
    if isinstance(msg, VertexRequest):
        return msg.ref.round
    return 0


def forge_equivocation(replica: Replica, vertex: Vertex, mode: str) -> Vertex:
    """Test-only enclave bypass: a second vertex claiming ``vertex``'s counter.

    ``forged-counter`` asks the enclave for a genuine signature (which gets
    the next counter) and relabels it; receivers see an invalid signature.
    ``key-leak`` signs with the enclave's private key directly, producing a
    valid signature under the reused counter.
    """
    alt = (ClientRequest(2**31 - 1, vertex.round, b"equivocation"),)
    digest = content_digest(vertex.round, vertex.source, alt, vertex.edges)
    if mode == "forged-counter":
        genuine = replica.enclave.sign(digest)
        sig = CounterSignature(vertex.counter, genuine.signature)
    else:
        key = getattr(replica.enclave, "_Enclave__sign_key")
        sig = CounterSignature(vertex.counter, key.sign(counter_message(digest, vertex.counter)))
    return Vertex(vertex.round, vertex.source, alt, vertex.edges, sig)


class ReplicaEnv:
    """What one replica incarnation sees of the world; also its metrics observer."""

    def __init__(self, sim: "Simulator", rid: int, incarnation: int):
        self.sim = sim
        self.rid = rid
        self.incarnation = incarnation
        self.observer = self

    def now(self) -> float:
        return self.sim.now

    def send(self, dst: int, msg, synchronous: bool = False) -> None:
        self.sim.transmit(self.rid, dst, msg)

    def broadcast(self, msg, include_self: bool = False, synchronous: bool = False) -> None:
        sim = self.sim
        if isinstance(msg, VertexMsg) and self.rid in sim.equivocators:
            sim.split_broadcast(self.rid, msg)
            return
        for dst in range(sim.config.n):
            if dst != self.rid:
                sim.transmit(self.rid, dst, msg)
        if include_self:
            sim.transmit(self.rid, self.rid, msg)

    def send_client(self, client_id: int, msg) -> None:
        self.sim.transmit(self.rid, CLIENT, msg)

    def set_timer(self, delay: float, tag) -> None:
        self.sim.schedule_timer(self.rid, self.incarnation, delay, tag)

    def count_self(self, msg) -> None:
        self.sim.count(msg)

    # observer callbacks

    def on_setup(self, rid, ok, reason) -> None:
        self.sim.metrics.setup[rid] = (self.sim.now, ok, reason)
        self.sim.trace.record("setup", _ns(self.sim.now), rid, ok, reason)

    def on_backup(self, rid, backup: ReplicaBackup) -> None:
        self.sim.backups[rid] = backup

    def on_recovery(self, rid, recoverer, top, digest) -> None:
        self.sim.metrics.recoveries.append((self.sim.now, rid, recoverer, top, digest))
        self.sim.trace.record("recovered", _ns(self.sim.now), rid, self.incarnation, recoverer, top, digest)

    def on_verdict(self, rid, src, vertex, verdict) -> None:
        if verdict.dropped:
            self.sim.metrics.verdicts[verdict.value] += 1

    def on_admit(self, rid, vertices) -> None:
        t = _ns(self.sim.now)
        for v in vertices:
            self.sim.trace.record(
                "admit", t, rid, self.incarnation, v.round, v.source, v.counter, v.digest,
                [e.digest for e in v.edges],
            )

    def on_round(self, rid, rnd) -> None:
        self.sim.metrics.round_entries.setdefault(rid, []).append((self.sim.now, rnd))

    def on_propose(self, rid, vertex) -> None:
        pass

    def on_wave(self, rid, outcome) -> None:
        now = self.sim.now
        self.sim.metrics.decisions.setdefault(rid, []).append(
            (now, outcome.wave, outcome.root_present, outcome.direct_commit)
        )
        if outcome.direct_commit:
            self.sim.metrics.commits.setdefault(rid, []).append((now, outcome.wave))
        self.sim.trace.record(
            "wave", _ns(now), rid, self.incarnation, outcome.wave, outcome.coin, outcome.direct_commit,
            list(outcome.committed_waves),
        )

    def on_deliver(self, rid, batch) -> None:
        t = _ns(self.sim.now)
        for v in batch:
            self.sim.trace.record("deliver", t, rid, self.incarnation, v.digest)

    def on_execute(self, rid, responses) -> None:
        t = _ns(self.sim.now)
        for r in responses:
            self.sim.trace.record(
                "exec", t, rid, self.incarnation, r.client_id, r.sequence_number,
                hashlib.sha256(r.result).digest(),
            )


class ClientEnv:
    def __init__(self, sim: "Simulator"):
        self.sim = sim

    @property
    def metrics(self) -> Metrics:
        return self.sim.metrics

    def now(self) -> float:
        return self.sim.now

    def send(self, replica: int, msg) -> None:
        self.sim.transmit(CLIENT, replica, msg)

    def set_timer(self, delay: float, tag) -> None:
        self.sim.schedule_timer(CLIENT, 0, delay, tag)


class Simulator:
    def __init__(
        self,
        config: SimConfig,
        replica_config: ReplicaConfig | None = None,
        app_factory: Callable[[], object] | None = None,
    ):
        self.config = config
        self.replica_config = replica_config or ReplicaConfig()
        self.app_factory = app_factory
        seed = config.scheduler_seed
        self.rng = random.Random(f"nxbft/scheduler/{seed}")
        self.now = 0.0
        self._heap: list = []
        self._seq = 0
        n = config.n
        self.replica_keys = [
            SigningKey(hashlib.sha256(f"nxbft/replica-key/{seed}/{i}".encode()).digest()) for i in range(n)
        ]
        self.replica_publics = {i: k.public for i, k in enumerate(self.replica_keys)}
        self.platforms = [
            Platform(hashlib.sha256(f"nxbft/platform/{seed}/{i}".encode()).digest()) for i in range(n)
        ]
        self.incarnation = [0] * n
        self.alive = [True] * n
        self.replicas: list[Replica | None] = [None] * n
        self.backups: dict[int, ReplicaBackup] = {}
        self.omissions: dict[int, list[FaultAction]] = {}
        self.equivocators: dict[int, str] = {}
        self.equivocations: list[tuple[int, Vertex, Vertex]] = []
        self.ever_faulty: set[int] = set()
        self.byzantine: set[int] = set()
        self.metrics = Metrics(n)
        self.trace = Trace()
        self.client = None
        self.client_env = ClientEnv(self)
        self._slow_cache: dict[int, frozenset[int]] = {}
        self._started = False

    # -- construction -----------------------------------------------------------------

    def _entropy(self, rid: int, incarnation: int):
        return seeded_entropy(f"nxbft/entropy/{self.config.scheduler_seed}/{rid}/{incarnation}".encode())

    def _replica_kwargs(self, rid: int) -> dict:
        return dict(
            replica_key=self.replica_keys[rid],
            replica_publics=self.replica_publics,
            platform=self.platforms[rid],
            entropy=self._entropy(rid, self.incarnation[rid]),
            config=self.replica_config,
            app=self.app_factory() if self.app_factory else None,
        )

    def attach_client(self, client) -> None:
        self.client = client

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        cfg = self.config
        for rid in range(cfg.n):
            env = ReplicaEnv(self, rid, 0)
            self.replicas[rid] = Replica(rid, cfg.n, env, **self._replica_kwargs(rid))
        faults = sorted(cfg.faults, key=lambda f: f.time)
        # faults at time zero are in place before the first setup message leaves
        for fa in faults:
            if fa.time <= 0:
                self.inject_fault(fa)
        for rid in range(cfg.n):
            if self.alive[rid]:
                self.replicas[rid].start_setup()
        for fa in faults:
            if fa.time > 0:
                self._push(fa.time, "fault", fa)
        if self.client is not None:
            self.client.start(self.client_env)

    # -- event queue ------------------------------------------------------------------

    def _push(self, time: float, kind: str, payload) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (time, self._seq, kind, payload))

    def schedule_timer(self, node: int, incarnation: int, delay: float, tag) -> None:
        self._push(self.now + max(0.0, delay), "timer", (node, incarnation, tag))

    def schedule_call(self, delay: float, fn: Callable[[], None]) -> None:
        self._push(self.now + max(0.0, delay), "call", fn)

    def run(self, until: float) -> "Simulator":
        self.start()
        heap = self._heap
        while heap and heap[0][0] <= until:
            time, seq, kind, payload = heapq.heappop(heap)
            self.now = time
            try:
                self._dispatch(kind, payload)
            except Exception as exc:
                raise SimulationError(f"t={time:.6f} {kind} {payload!r:.200}: {exc!r}") from exc
        self.now = max(self.now, until)
        return self

    def pending_messages(self) -> int:
        return sum(1 for ev in self._heap if ev[2] == "msg")

    def _dispatch(self, kind: str, payload) -> None:
        if kind == "msg":
            src, dst, inc, msg, sent_at = payload
            if dst == CLIENT:
                self.metrics.delivered += 1
                if self.config.trace_messages:
                    self.trace.record("recv", _ns(self.now), src, dst, msg.KIND)
                if self.client is not None:
                    self.client.on_message(src, msg)
                return
            if not self.alive[dst] or self.incarnation[dst] != inc:
                self.metrics.dropped_dead += 1
                return
            self.metrics.delivered += 1
            if msg.KIND in SYNC_KINDS:
                self.metrics.max_sync_delay = max(self.metrics.max_sync_delay, self.now - sent_at)
            if self.config.trace_messages:
                self.trace.record("recv", _ns(self.now), src, dst, msg.KIND)
            self.replicas[dst].on_message(src, msg)
        elif kind == "timer":
            node, inc, tag = payload
            if node == CLIENT:
                if self.client is not None:
                    self.client.on_timer(tag)
                return
            if self.alive[node] and self.incarnation[node] == inc:
                self.replicas[node].on_timer(tag)
        elif kind == "fault":
            self.inject_fault(payload)
        elif kind == "call":
            payload()

    # -- links ------------------------------------------------------------------------

    def count(self, msg) -> None:
        kind = msg.KIND
        self.metrics.msg_counts[kind] += 1
        if kind in DAG_KINDS:
            self.metrics.msg_by_round[(kind, _msg_round(msg))] += 1

    def _omitted(self, src: int, dst: int, kind: str) -> bool:
        for fa in self.omissions.get(src, ()):
            if fa.targets and dst not in fa.targets:
                continue
            if fa.kinds and kind not in fa.kinds:
                continue
            if fa.probability >= 1.0 or self.rng.random() < fa.probability:
                return True
        return False

    def _slow_sources(self, rnd: int) -> frozenset[int]:
        slow = self._slow_cache.get(rnd)
        if slow is None:
            f = (self.config.n + 1) // 2 - 1
            pick = random.Random(f"nxbft/adversary/{self.config.scheduler_seed}/{rnd}")
            slow = frozenset(pick.sample(range(self.config.n), f))
            self._slow_cache[rnd] = slow
        return slow

    def delay(self, src: int, dst: int, msg) -> float:
        cfg = self.config
        if src == dst:
            return 0.0
        rng = self.rng
        half = cfg.client_half_rtt if CLIENT in (src, dst) else cfg.half_rtt
        lo = -cfg.jitter if cfg.jitter_mode == "symmetric" else 0.0
        d = half * (1.0 + rng.uniform(lo, cfg.jitter)) + LINK_FLOOR
        kind = msg.KIND
        if kind in SYNC_KINDS:
            if cfg.adversarial:
                d = rng.uniform(LINK_FLOOR, cfg.sync_bound)
            return min(d, cfg.sync_bound)
        if cfg.adversarial and kind in DAG_KINDS:
            rnd = _msg_round(msg)
            if src in self._slow_sources(rnd) and rng.random() < cfg.adversary_intensity:
                d = (d + LINK_FLOOR) * rng.uniform(2.0, cfg.adversary_slowdown)
            elif rng.random() < 0.1:
                d = (d + LINK_FLOOR) * rng.uniform(1.0, cfg.adversary_slowdown)
        return d

    def transmit(self, src: int, dst: int, msg) -> None:
        kind = msg.KIND
        if src != CLIENT and dst != src and self._omitted(src, dst, kind):
            self.metrics.omitted[kind] += 1
            if self.config.trace_messages:
                self.trace.record("omit", _ns(self.now), src, dst, kind)
            return
        if src != CLIENT:
            self.count(msg)
        if self.config.trace_messages:
            self.trace.record("send", _ns(self.now), src, dst, kind)
        inc = self.incarnation[dst] if dst != CLIENT else 0
        self._push(self.now + self.delay(src, dst, msg), "msg", (src, dst, inc, msg, self.now))

    def split_broadcast(self, src: int, msg: VertexMsg) -> None:
        mode = self.equivocators.pop(src)
        replica = self.replicas[src]
        v1 = msg.vertex
        v2 = forge_equivocation(replica, v1, mode)
        self.equivocations.append((src, v1, v2))
        others = [d for d in range(self.config.n) if d != src]
        self.rng.shuffle(others)
        half = len(others) // 2
        for i, dst in enumerate(sorted(others[:half])):
            self.transmit(src, dst, VertexMsg(v1))
        for dst in sorted(others[half:]):
            self.transmit(src, dst, VertexMsg(v2))
        self.trace.record("equivocate", _ns(self.now), src, v1.digest, v2.digest)

    # -- faults -----------------------------------------------------------------------

    def inject_fault(self, action: FaultAction) -> None:
        rid = action.replica
        t = _ns(self.now)
        if action.action == "crash":
            if not self.alive[rid]:
                return
            self.alive[rid] = False
            self.replicas[rid] = None  # volatile state, enclave included, is gone
            self.incarnation[rid] += 1
            self.ever_faulty.add(rid)
            self.metrics.crashes.append((self.now, rid, "crash"))
            self.trace.record("crash", t, rid)
        elif action.action == "recover":
            if self.alive[rid]:
                return
            backup = self.backups.get(rid)
            if backup is None:
                raise SimulationError(f"replica {rid} has no backup to recover from")
            env = ReplicaEnv(self, rid, self.incarnation[rid])
            self.alive[rid] = True
            self.metrics.crashes.append((self.now, rid, "recover"))
            self.trace.record("restart", t, rid, self.incarnation[rid])
            kwargs = self._replica_kwargs(rid)
            self.replicas[rid] = Replica.recover(backup, env, **kwargs)
        elif action.action == "omit":
            self.omissions.setdefault(rid, []).append(action)
            self.ever_faulty.add(rid)
            self.trace.record("omit-start", t, rid, list(action.targets), list(action.kinds))
        elif action.action == "heal":
            self.omissions.pop(rid, None)
            self.trace.record("heal", t, rid)
        elif action.action == "equivocate":
            self.equivocators[rid] = action.mode
            self.ever_faulty.add(rid)
            self.byzantine.add(rid)
            self.trace.record("equivocate-armed", t, rid)

    # -- end of run ---------------------------------------------------------------------

    def live_replicas(self) -> list[Replica]:
        return [r for r in self.replicas if r is not None]

    def finish(self) -> None:
        """Record final per-incarnation state in the trace (used by trace audits)."""
        t = _ns(self.now)
        for r in self.live_replicas():
            self.trace.record(
                "final", t, r.id, r.env.incarnation, r.status.value,
                hashlib.sha256(r.smr.state).digest(), len(r.consensus.delivery_log),
            )
        self.trace.record("byzantine", t, sorted(self.byzantine))


def equivocate_setup_cert(sim: Simulator, rid: int, targets) -> int:
    """Test-only: swap ``rid``'s queued attestation for ``targets`` with one from a second enclave.

    Call after :meth:`Simulator.start`. The second certificate is genuinely
    signed with ``rid``'s replica key, so only its conflict with the first
    one gives the attack away. Returns the number of rewritten messages.
    """
    from .enclave import Enclave

    twin = Enclave(rid, sim.config.n, replica_keys=sim.replica_publics,
                   entropy=seeded_entropy(f"nxbft/twin/{sim.config.scheduler_seed}/{rid}".encode()))
    forged = SetupCert(twin.make_attestation(sim.replica_keys[rid]))
    targets = set(targets)
    rewritten = 0
    for i, (time, seq, kind, payload) in enumerate(sim._heap):
        if kind != "msg":
            continue
        src, dst, inc, msg, sent_at = payload
        if src == rid and dst in targets and isinstance(msg, SetupCert):
            sim._heap[i] = (time, seq, kind, (src, dst, inc, forged, sent_at))
            rewritten += 1
    sim.byzantine.add(rid)
    sim.ever_faulty.add(rid)
    sim.trace.record("equivocate-setup", _ns(sim.now), rid, sorted(targets))
    return rewritten


def run(config: SimConfig, replica_config: ReplicaConfig | None = None, client=None, duration: float = 1.0,
        app_factory=None) -> Simulator:
    """Build a simulator, run it to ``duration`` (virtual seconds) and return it."""
    sim = Simulator(config, replica_config, app_factory)
    if client is not None:
        sim.attach_client(client)
    sim.run(duration)
    sim.finish()
    return sim


def replica_ready(sim: Simulator) -> list[bool]:
    return [r is not None and r.status is Status.RUNNING for r in sim.replicas]
