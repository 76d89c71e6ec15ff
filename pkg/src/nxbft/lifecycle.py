"""Synchronous setup and all-n crash recovery.

Setup runs one authenticated single-echo broadcast of every replica's
attestation certificate; a handshake with an origin completes once ``n``
consistent echoes are held, after which the encrypted seed share is sent to
that origin. Recovery is an interactive-consistency exchange
(RecoveryRequest, RecoveryProposal, RecoveryCommit) that needs every replica.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from .crypto import verify
from .enclave import AttestationCertificate, EnclavePublicKey, quorum, recovery_commit_digest, verify_counter_signature
from .errors import EnclaveError, MismatchedCert, SetupAbort
from .messages import (
    RecoveryCommitMsg,
    RecoveryProposalMsg,
    RecoveryRequestMsg,
    SetupCert,
    SetupEcho,
    SetupReady,
    SetupShare,
    Vertex,
    echo_payload,
    history_digest,
    recovery_proposal_payload,
    recovery_request_payload,
)

if TYPE_CHECKING:
    from .replica import Replica


class Phase(enum.Enum):
    AWAIT_ECHO = "await-echo"
    AWAIT_SHARE = "await-share"
    DONE = "done"


class SetupStatus(enum.Enum):
    RUNNING = "running"
    READY = "ready"
    ABORTED = "aborted"


def check_cert(cert: AttestationCertificate, replica_publics: dict[int, bytes], measurement: bytes) -> bool:
    public = replica_publics.get(cert.replica_id)
    return public is not None and cert.code_measurement == measurement and cert.verify(public)


@dataclass
class SetupState:
    phase: dict[int, Phase]
    received_certs: dict[int, AttestationCertificate] = field(default_factory=dict)
    echo_counts: dict[int, dict[int, bytes]] = field(default_factory=dict)
    shares_from: set[int] = field(default_factory=set)
    ready_from: set[int] = field(default_factory=set)
    ready_sent: bool = False
    deadline: float = 0.0
    status: SetupStatus = SetupStatus.RUNNING
    reason: str = ""


class SetupProtocol:
    def __init__(self, replica: "Replica", timeout: float):
        self.r = replica
        self.n = replica.n
        self.timeout = timeout
        self.state = SetupState(phase={i: Phase.AWAIT_ECHO for i in range(self.n)})

    @property
    def status(self) -> SetupStatus:
        return self.state.status

    def start(self) -> None:
        r = self.r
        self.state.deadline = r.env.now() + self.timeout
        r.env.set_timer(self.timeout, "setup-deadline")
        cert = r.enclave.make_attestation(r.replica_key)
        r.env.broadcast(SetupCert(cert), include_self=True)

    def abort(self, reason: str) -> None:
        if self.state.status is SetupStatus.RUNNING:
            self.state.status = SetupStatus.ABORTED
            self.state.reason = reason
            self.r.on_setup_finished(self.state.status, reason)

    def on_timer(self) -> None:
        if self.state.status is SetupStatus.RUNNING:
            pending = sorted(o for o, p in self.state.phase.items() if p is not Phase.DONE)
            self.abort(f"timeout (handshakes pending: {pending}, ready {len(self.state.ready_from)}/{self.n})")

    def _valid(self, cert: AttestationCertificate) -> bool:
        return check_cert(cert, self.r.replica_publics, self.r.enclave.code_measurement)

    def on_message(self, src: int, msg) -> None:
        if self.state.status is not SetupStatus.RUNNING:
            return
        try:
            if isinstance(msg, SetupCert):
                self._on_cert(src, msg)
            elif isinstance(msg, SetupEcho):
                self._on_echo(src, msg)
            elif isinstance(msg, SetupShare):
                self._on_share(src, msg)
            elif isinstance(msg, SetupReady):
                self._on_ready(src)
        except SetupAbort as exc:
            self.abort(str(exc))

    def _on_cert(self, src: int, msg: SetupCert) -> None:
        cert = msg.cert
        if cert.replica_id != src or not self._valid(cert):
            raise SetupAbort(f"invalid attestation from {src}")
        known = self.state.received_certs.get(src)
        if known is not None:
            if known != cert:
                raise SetupAbort(f"conflicting certificates from {src}")
            return
        self.state.received_certs[src] = cert
        r = self.r
        sig = r.replica_key.sign(echo_payload(src, cert))
        r.env.broadcast(SetupEcho(src, cert, r.id, sig), include_self=True)

    def _on_echo(self, src: int, msg: SetupEcho) -> None:
        r = self.r
        if msg.echoer != src:
            raise SetupAbort(f"echo from {src} claims echoer {msg.echoer}")
        public = r.replica_publics.get(src)
        if public is None or not verify(public, echo_payload(msg.origin, msg.cert), msg.signature):
            raise SetupAbort(f"invalid echo signature from {src}")
        if msg.cert.replica_id != msg.origin or not self._valid(msg.cert):
            raise SetupAbort(f"echo from {src} carries an invalid certificate")
        echoes = self.state.echo_counts.setdefault(msg.origin, {})
        digest = msg.cert.digest
        for other in echoes.values():
            if other != digest:
                raise SetupAbort(f"conflicting certificates echoed for {msg.origin}")
        known = self.state.received_certs.get(msg.origin)
        if known is not None and known.digest != digest:
            raise SetupAbort(f"echoed certificate for {msg.origin} differs from the one received")
        echoes[src] = digest
        if len(echoes) == self.n and self.state.phase[msg.origin] is Phase.AWAIT_ECHO:
            r.enclave.register_peer(msg.cert)
            origin = msg.origin
            if origin == r.id:
                # own share is already part of the local seed
                self.state.phase[origin] = Phase.DONE
            else:
                self.state.phase[origin] = Phase.AWAIT_SHARE
                r.env.send(origin, SetupShare(r.id, origin, r.enclave.export_seed_share(origin)))
                if origin in self.state.shares_from:
                    self.state.phase[origin] = Phase.DONE
            self._maybe_complete()

    def _on_share(self, src: int, msg: SetupShare) -> None:
        r = self.r
        if msg.sender != src or msg.recipient != r.id or src == r.id:
            raise SetupAbort(f"misaddressed seed share from {src}")
        if src in self.state.shares_from:
            raise SetupAbort(f"second seed share from {src}")
        r.enclave.absorb_seed_share(msg.ciphertext)
        self.state.shares_from.add(src)
        if self.state.phase[src] is Phase.AWAIT_SHARE:
            self.state.phase[src] = Phase.DONE
        self._maybe_complete()

    def _maybe_complete(self) -> None:
        st = self.state
        if not st.ready_sent and all(p is Phase.DONE for p in st.phase.values()):
            self.r.enclave.finalize_setup()
            st.ready_sent = True
            self.r.env.broadcast(SetupReady(self.r.id), include_self=True)

    def _on_ready(self, src: int) -> None:
        st = self.state
        st.ready_from.add(src)
        if len(st.ready_from) == self.n and st.ready_sent:
            st.status = SetupStatus.READY
            self.r.on_setup_finished(st.status, "")


# -- recovery ---------------------------------------------------------------------


def valid_chain_length(history, source: int, key: EnclavePublicKey, base_round: int) -> int:
    """Length of the longest prefix of ``history`` that is a valid vertex chain.

    A valid chain starts at counter 0 right after ``base_round``, steps the
    counter and the round by one per vertex, and every vertex verifies under
    ``key``.
    """
    length = 0
    for i, v in enumerate(history):
        if v.source != source or v.counter != i or v.round != base_round + i + 1:
            break
        if not verify_counter_signature(key, v.digest, v.counter, v.counter_sig.signature):
            break
        length += 1
    return length


def select_history(proposals, source: int, key: EnclavePublicKey, base_round: int) -> tuple[Vertex, ...]:
    """Longest valid chain among the proposals; ties go to the lowest proposer id."""
    best: tuple[Vertex, ...] = ()
    best_len = -1
    for proposer in sorted(proposals):
        history = proposals[proposer].history
        length = valid_chain_length(history, source, key, base_round)
        if length > best_len:
            best, best_len = tuple(history[:length]), length
    return best


@dataclass
class RecoveryInstance:
    recoverer: int
    cert: AttestationCertificate
    proposals: dict[int, RecoveryProposalMsg] = field(default_factory=dict)
    commits: dict[bytes, dict[int, RecoveryCommitMsg]] = field(default_factory=dict)
    sent_commit: bool = False
    completed: bool = False
    mismatched: set[int] = field(default_factory=set)


class RecoveryProtocol:
    def __init__(self, replica: "Replica"):
        self.r = replica
        self.instances: dict[int, RecoveryInstance] = {}
        self._early_proposals: dict[int, list[RecoveryProposalMsg]] = {}
        self._early_commits: dict[int, list[RecoveryCommitMsg]] = {}
        self.completed: list[tuple[int, bytes, int]] = []

    # recoverer side

    def initiate(self) -> RecoveryRequestMsg:
        r = self.r
        cert = r.enclave.make_attestation(r.replica_key)
        msg = RecoveryRequestMsg(r.id, cert, r.replica_key.sign(recovery_request_payload(r.id, cert)))
        r.env.broadcast(msg, include_self=True, synchronous=True)
        return msg

    # participant side

    def on_message(self, src: int, msg) -> None:
        if isinstance(msg, RecoveryRequestMsg):
            self.on_recovery_request(src, msg)
        elif isinstance(msg, RecoveryProposalMsg):
            self.on_recovery_proposal(src, msg)
        elif isinstance(msg, RecoveryCommitMsg):
            self.on_recovery_commit(src, msg)

    def _cert_ok(self, cert: AttestationCertificate) -> bool:
        return check_cert(cert, self.r.replica_publics, self.r.enclave.code_measurement)

    def on_recovery_request(self, src: int, msg: RecoveryRequestMsg) -> RecoveryProposalMsg | None:
        r = self.r
        c = msg.recoverer
        if c != src or msg.new_cert.replica_id != c or not self._cert_ok(msg.new_cert):
            return None
        if not verify(r.replica_publics[c], recovery_request_payload(c, msg.new_cert), msg.signature):
            return None
        current = self.instances.get(c)
        if current is not None and current.cert == msg.new_cert:
            return None
        # a newer request from the same replica supersedes a stale instance
        self.instances[c] = RecoveryInstance(c, msg.new_cert)
        bc = r.broadcaster
        bc.recovering.add(c)
        bc.drop_source_buffered(c)
        history = tuple(r.source_history(c))
        proposal = RecoveryProposalMsg(
            r.id, c, msg.new_cert, history,
            r.replica_key.sign(recovery_proposal_payload(r.id, c, msg.new_cert, history)),
        )
        r.env.broadcast(proposal, include_self=True, synchronous=True)
        for early in self._early_proposals.pop(c, []):
            self.on_recovery_proposal(early.proposer, early)
        for early in self._early_commits.pop(c, []):
            self.on_recovery_commit(early.committer, early)
        return proposal

    def on_recovery_proposal(self, src: int, msg: RecoveryProposalMsg) -> RecoveryCommitMsg | None:
        r = self.r
        if msg.proposer != src:
            return None
        public = r.replica_publics.get(src)
        payload = recovery_proposal_payload(msg.proposer, msg.recoverer, msg.new_cert, msg.history)
        if public is None or not verify(public, payload, msg.signature):
            return None
        inst = self.instances.get(msg.recoverer)
        if inst is None or inst.completed:
            if inst is None:
                self._early_proposals.setdefault(msg.recoverer, []).append(msg)
            return None
        if msg.new_cert != inst.cert:
            # all-n agreement on the certificate is required; a mismatch stalls this instance
            inst.mismatched.add(src)
            if msg.new_cert.digest != inst.cert.digest:
                self._early_proposals.setdefault(msg.recoverer, []).append(msg)
            return None
        inst.proposals[src] = msg
        if len(inst.proposals) < r.n or inst.sent_commit:
            return None
        return self.on_recovery_proposals(inst)

    def on_recovery_proposals(self, inst: RecoveryInstance) -> RecoveryCommitMsg:
        r = self.r
        certs = {p.new_cert for p in inst.proposals.values()}
        if len(inst.proposals) != r.n or len(certs) != 1:
            raise MismatchedCert(f"need {r.n} proposals with one certificate")
        c = inst.recoverer
        chosen = select_history(inst.proposals, c, r.broadcaster.keys[c], r.epoch_base[c])
        hd = history_digest(chosen)
        sig = r.replica_key.sign(recovery_commit_digest(c, inst.cert, hd))
        commit = RecoveryCommitMsg(r.id, c, inst.cert, hd, sig, chosen)
        inst.sent_commit = True
        r.env.broadcast(commit, include_self=True, synchronous=True)
        return commit

    def on_recovery_commit(self, src: int, msg: RecoveryCommitMsg) -> None:
        r = self.r
        if msg.committer != src:
            return
        public = r.replica_publics.get(src)
        if public is None or not verify(public, recovery_commit_digest(msg.recoverer, msg.new_cert, msg.chosen_history_digest), msg.signature):
            return
        if history_digest(msg.history) != msg.chosen_history_digest:
            return
        inst = self.instances.get(msg.recoverer)
        if inst is None:
            self._early_commits.setdefault(msg.recoverer, []).append(msg)
            return
        if inst.completed or msg.new_cert != inst.cert:
            return
        group = inst.commits.setdefault(msg.chosen_history_digest, {})
        group[src] = msg
        if len(group) >= quorum(r.n):
            self.on_recovery_commits(inst, list(group.values()))

    def on_recovery_commits(self, inst: RecoveryInstance, commits: list[RecoveryCommitMsg]) -> None:
        r = self.r
        c = inst.recoverer
        history = commits[0].history
        sigs = [(m.committer, m.chosen_history_digest, m.signature) for m in commits]
        try:
            r.enclave.replace_peer_key(c, inst.cert, sigs)
        except EnclaveError:
            return
        inst.completed = True
        bc = r.broadcaster
        old = bc.keys[c]
        if old != inst.cert.public_enclave_key:
            bc.retired_keys.setdefault(c, []).append(old)
        bc.keys[c] = inst.cert.public_enclave_key
        top = max((v.round for v in history), default=r.epoch_base[c])
        bc.fifo_next[c] = 0
        bc.last_round[c] = top
        bc.seen_round[c] = max(bc.seen_round[c], top)
        r.epoch_base[c] = top
        bc.history_digests.update(v.digest for v in history)
        for v in history:
            bc.insert_buffer(v, r.dag)
        bc.recovering.discard(c)
        self.completed.append((c, commits[0].chosen_history_digest, top))
        r.on_recovery_complete(c, top, commits[0].chosen_history_digest)
