"""One replica: enclave, broadcast, DAG, consensus, state machine and lifecycle wired together.

A replica never talks to the network directly. It is driven by an
environment object (the simulator) that provides ``now``, ``send``,
``broadcast``, ``send_client``, ``set_timer`` and an ``observer`` for
metrics and trace events.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .broadcast import BroadcastConfig, Broadcaster
from .consensus import Consensus
from .crypto import Entropy, SigningKey
from .dag import DagStore
from .enclave import WAVE_LENGTH, Enclave, EnclavePublicKey, Platform, quorum, verify_counter_signature
from .lifecycle import RecoveryProtocol, SetupProtocol, SetupStatus
from .messages import (
    RecoveryCommitMsg,
    RecoveryProposalMsg,
    RecoveryRequestMsg,
    RequestMsg,
    SetupCert,
    SetupEcho,
    SetupReady,
    SetupShare,
    Vertex,
    VertexMsg,
    VertexReply,
    VertexRequest,
)
from .smr import Admission, App, StateMachine

_SETUP_TYPES = (SetupCert, SetupEcho, SetupShare, SetupReady)
_RECOVERY_TYPES = (RecoveryRequestMsg, RecoveryProposalMsg, RecoveryCommitMsg)


class Status(enum.Enum):
    SETUP = "setup"
    RUNNING = "running"
    RECOVERING = "recovering"
    ABORTED = "aborted"


@dataclass
class ReplicaConfig:
    broadcast: BroadcastConfig = field(default_factory=BroadcastConfig)
    respond: str = "all"  # "all" | "origin"
    setup_timeout: float = 1.0

    def __post_init__(self):
        if self.respond not in ("all", "origin"):
            raise ValueError(f"respond mode must be 'all' or 'origin', got {self.respond!r}")


@dataclass(frozen=True)
class ReplicaBackup:
    """Sealed enclave blob plus the untrusted state needed to rejoin.

    The DAG itself is not part of the backup; it is backfilled after recovery.
    """

    replica_id: int
    sealed: bytes
    keys: dict[int, EnclavePublicKey]
    retired_keys: dict[int, tuple[EnclavePublicKey, ...]]
    epoch_base: dict[int, int]
    history_digests: frozenset[bytes]


class Replica:
    def __init__(
        self,
        rid: int,
        n: int,
        env,
        *,
        replica_key: SigningKey,
        replica_publics: dict[int, bytes],
        platform: Platform,
        entropy: Entropy,
        config: ReplicaConfig | None = None,
        app: App | None = None,
        enclave: Enclave | None = None,
    ):
        self.id = rid
        self.n = n
        self.quorum = quorum(n)
        self.env = env
        self.config = config or ReplicaConfig()
        self.replica_key = replica_key
        self.replica_publics = dict(replica_publics)
        self.platform = platform
        self.entropy = entropy
        self.enclave = enclave or Enclave(
            rid, n, replica_keys=self.replica_publics, platform=platform, entropy=entropy
        )
        self.dag = DagStore()
        self.consensus = Consensus(n)
        self.smr = StateMachine(rid, app)
        self.broadcaster = Broadcaster(
            rid, n, self.enclave, {}, self.config.broadcast, self._bc_send, env.now
        )
        self.epoch_base = {s: 0 for s in range(n)}
        self.revealed_upto = 0
        self.status = Status.SETUP
        self.setup = SetupProtocol(self, self.config.setup_timeout)
        self.recovery = RecoveryProtocol(self)
        self.abort_reason = ""
        self._early: list[tuple[int, object]] = []
        self._origin_keys: set[tuple[int, int]] = set()
        self._backfill_timer: float | None = None

    # -- environment glue ---------------------------------------------------------

    def _bc_send(self, dst, msg) -> None:
        if dst is None:
            self.env.broadcast(msg)
        else:
            self.env.send(dst, msg)

    # -- lifecycle entry points -------------------------------------------------------

    def start_setup(self) -> None:
        self.setup.start()

    def on_setup_finished(self, status: SetupStatus, reason: str) -> None:
        if status is SetupStatus.ABORTED:
            self.status = Status.ABORTED
            self.abort_reason = reason
            self.env.observer.on_setup(self.id, False, reason)
            return
        self.broadcaster.keys.update({s: self.enclave.peer_key(s) for s in range(self.n)})
        self.status = Status.RUNNING
        self.env.observer.on_setup(self.id, True, "")
        self.env.observer.on_backup(self.id, self.make_backup())
        self._enter_round()
        early, self._early = self._early, []
        for src, msg in early:
            self.on_message(src, msg)
        self._progress()

    @classmethod
    def recover(cls, backup: ReplicaBackup, env, **kwargs) -> "Replica":
        """Build a fresh incarnation from a backup and broadcast its RecoveryRequest."""
        kwargs.pop("enclave", None)
        enclave = Enclave.unseal(
            backup.sealed,
            platform=kwargs["platform"],
            replica_keys=kwargs["replica_publics"],
            entropy=kwargs["entropy"],
        )
        n = enclave.n
        replica = cls(backup.replica_id, n, env, enclave=enclave, **kwargs)
        bc = replica.broadcaster
        bc.keys.update(backup.keys)
        bc.retired_keys = {s: list(ks) for s, ks in backup.retired_keys.items()}
        bc.history_digests = set(backup.history_digests)
        replica.epoch_base = dict(backup.epoch_base)
        for s, base in replica.epoch_base.items():
            bc.last_round[s] = base
            bc.seen_round[s] = base
        replica.status = Status.RECOVERING
        replica.recovery.initiate()
        return replica

    def make_backup(self) -> ReplicaBackup:
        bc = self.broadcaster
        return ReplicaBackup(
            self.id,
            self.enclave.seal_state(),
            dict(bc.keys),
            {s: tuple(ks) for s, ks in bc.retired_keys.items()},
            dict(self.epoch_base),
            frozenset(bc.history_digests),
        )

    def source_history(self, source: int) -> list[Vertex]:
        """Admitted and buffered vertices of ``source`` under its current key, counter-ascending."""
        base = self.epoch_base[source]
        found = {v.ref: v for v in self.dag if v.source == source and v.round > base}
        for ref, v in self.broadcaster.buffer.items():
            if ref.source == source and v.round > base and v.digest not in self.broadcaster.history_digests:
                found.setdefault(ref, v)
        return sorted(found.values(), key=lambda v: (v.counter, v.round))

    def on_recovery_complete(self, recoverer: int, top_round: int, digest: bytes) -> None:
        if recoverer == self.id and self.status is Status.RECOVERING:
            waves = top_round // WAVE_LENGTH
            self.enclave.fast_forward(waves)
            self.revealed_upto = waves
            bc = self.broadcaster
            bc.current_round = top_round + 1
            bc.last_proposed_round = top_round
            self.status = Status.RUNNING
            self._enter_round()
        self.env.observer.on_recovery(self.id, recoverer, top_round, digest)
        if self.status is Status.RUNNING:
            self.env.observer.on_backup(self.id, self.make_backup())
        self._progress()

    # -- event handlers -----------------------------------------------------------------

    def on_message(self, src: int, msg) -> None:
        if self.status is Status.ABORTED:
            return
        if isinstance(msg, _SETUP_TYPES):
            self.setup.on_message(src, msg)
            return
        if self.status is Status.SETUP:
            self._early.append((src, msg))
            return
        if isinstance(msg, _RECOVERY_TYPES):
            self.recovery.on_message(src, msg)
            self._progress()
            return
        bc = self.broadcaster
        if isinstance(msg, (VertexMsg, VertexReply)):
            verdict = bc.on_receive_vertex(msg.vertex, self.dag)
            self.env.observer.on_verdict(self.id, src, msg.vertex, verdict)
        elif isinstance(msg, VertexRequest):
            bc.on_vertex_request(self.dag, msg.ref, src)
        elif isinstance(msg, RequestMsg):
            self.on_client_request(msg)
        self._progress()

    def on_client_request(self, msg: RequestMsg) -> Admission:
        req = msg.request
        admission = self.smr.submit(req)
        if admission is Admission.ACK:
            self._origin_keys.add(req.key)
            self.broadcaster.add_payload(req)
        else:
            cached = self.smr.cached_response(req)
            if cached is not None:
                self.env.send_client(req.client_id, cached)
        return admission

    def on_timer(self, tag) -> None:
        if tag == "setup-deadline":
            self.setup.on_timer()
            return
        if self.status is not Status.RUNNING and self.status is not Status.RECOVERING:
            return
        if tag == "backfill":
            self._backfill_timer = None
            self.broadcaster.flush_backfill(self.dag)
        self._progress()

    # -- main loop ------------------------------------------------------------------------

    def _enter_round(self) -> None:
        bc = self.broadcaster
        bc.round_entry_time = self.env.now()
        self.env.set_timer(bc.config.batch_timer, ("batch", bc.current_round))

    def _progress(self) -> None:
        if self.status not in (Status.RUNNING, Status.RECOVERING):
            return
        bc, dag = self.broadcaster, self.dag
        running = self.status is Status.RUNNING
        while True:
            changed = False
            admitted = bc.try_admit(dag)
            if admitted:
                changed = True
                self.env.observer.on_admit(self.id, admitted)
            if not running:
                break
            if bc.try_advance_round(dag) is not None:
                changed = True
                self._enter_round()
                self.env.observer.on_round(self.id, bc.current_round)
            if self._process_waves():
                changed = True
            vertex = bc.propose_vertex(dag, self.smr.table.is_stale)
            if vertex is not None:
                changed = True
                self.env.observer.on_propose(self.id, vertex)
                bc.broadcast_vertex(vertex)
                self.env.count_self(VertexMsg(vertex))
                # only a replica whose enclave was bypassed can see its own vertex rejected
                verdict = bc.on_receive_vertex(vertex, dag)
                self.env.observer.on_verdict(self.id, self.id, vertex, verdict)
            if not changed:
                break
        self._schedule_backfill()

    def _schedule_backfill(self) -> None:
        deadline = self.broadcaster.next_backfill_deadline()
        if deadline is None:
            return
        if self._backfill_timer is not None and self._backfill_timer <= deadline:
            return
        self._backfill_timer = deadline
        self.env.set_timer(max(0.0, deadline - self.env.now()), "backfill")

    def _evidence(self, rnd: int) -> list[Vertex]:
        good = []
        for v in self.dag.round_vertices(rnd):
            key = self.enclave.peer_key(v.source)
            if key is not None and verify_counter_signature(key, v.digest, v.counter, v.counter_sig.signature):
                good.append(v)
        return good

    def _process_waves(self) -> bool:
        progressed = False
        bc, dag = self.broadcaster, self.dag
        while True:
            wave = self.consensus.last_wave + 1
            rnd = WAVE_LENGTH * wave
            if rnd >= bc.current_round:
                return progressed
            if wave <= self.revealed_upto:
                # catching up after recovery: the coin was revealed before the crash
                if len(dag.sources_at(rnd)) < self.quorum:
                    return progressed
                coin = self.enclave.revealed_coin(wave)
            else:
                evidence = self._evidence(rnd)
                if len(evidence) < self.quorum:
                    return progressed
                coin = self.enclave.toss_coin(evidence)
            outcome = self.consensus.on_wave_complete(dag, wave, coin)
            progressed = True
            self.env.observer.on_wave(self.id, outcome)
            if outcome.delivered:
                self._deliver(outcome.delivered)

    def _deliver(self, batch: list[Vertex]) -> None:
        self.env.observer.on_deliver(self.id, batch)
        for vertex in batch:
            responses = self.smr.on_delivery([vertex])
            self.env.observer.on_execute(self.id, responses)
            for resp in responses:
                key = (resp.client_id, resp.sequence_number)
                if self.config.respond == "all" or key in self._origin_keys:
                    self.env.send_client(resp.client_id, resp)
                self._origin_keys.discard(key)
