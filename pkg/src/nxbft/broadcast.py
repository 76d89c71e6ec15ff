"""FIFO non-equivocating vertex broadcast with batching, buffering and backfilling.

The :class:`Broadcaster` owns a replica's broadcast-layer state. It never
touches the network directly; outbound messages go through the ``send``
callback (``dst=None`` means every other replica).
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from typing import Callable

from .dag import DagStore
from .enclave import Enclave, EnclavePublicKey, quorum, verify_counter_signature
from .messages import (
    ClientRequest,
    Vertex,
    VertexMsg,
    VertexRef,
    VertexReply,
    VertexRequest,
    content_digest,
)


class Verdict(enum.Enum):
    ACCEPTED = "accepted"
    HELD = "held"
    DUPLICATE = "duplicate"
    BAD_SIGNATURE = "bad-signature"
    STALE_KEY = "stale-key"
    COUNTER_REUSE = "counter-reuse"
    INSUFFICIENT_EDGES = "insufficient-edges"
    DUPLICATE_EDGE_SOURCE = "duplicate-edge-source"
    BAD_EDGE_ROUND = "bad-edge-round"
    MALFORMED = "malformed"
    ROUND_GAP = "round-gap"
    RECOVERING = "recovering"
    HOLDBACK_FULL = "holdback-full"
    TOO_FAR_AHEAD = "too-far-ahead"

    @property
    def dropped(self) -> bool:
        return self not in (Verdict.ACCEPTED, Verdict.HELD)


@dataclass
class BroadcastConfig:
    batch_min: int = 100
    batch_max: int = 1000
    batch_timer: float = 0.1
    holdback_limit: int = 1024
    window_rounds: int = 16
    # grace period before a missing ancestor is requested; in-flight vertices usually arrive first
    backfill_delay: float = 0.0


class Broadcaster:
    def __init__(
        self,
        own_id: int,
        n: int,
        enclave: Enclave,
        keys: dict[int, EnclavePublicKey],
        config: BroadcastConfig,
        send: Callable[[int | None, object], None],
        now: Callable[[], float],
    ):
        self.own_id = own_id
        self.n = n
        self.quorum = quorum(n)
        self.f = (n + 1) // 2 - 1
        self.enclave = enclave
        self.keys = keys
        self.retired_keys: dict[int, list[EnclavePublicKey]] = {}
        self.config = config
        self._send = send
        self._now = now

        self.current_round = 1
        self.last_proposed_round = 0
        self.round_entry_time = now()
        self.fifo_next = {s: 0 for s in range(n)}
        self.last_round = {s: 0 for s in range(n)}
        self.seen_round = {s: 0 for s in range(n)}
        self.holdback: dict[int, dict[int, Vertex]] = {s: {} for s in range(n)}
        self._held_refs: set[VertexRef] = set()
        self.buffer: dict[VertexRef, Vertex] = {}
        self._missing: dict[VertexRef, set[VertexRef]] = {}
        self._waiters: dict[VertexRef, list[VertexRef]] = {}
        self._ready: deque[VertexRef] = deque()
        self.pending_payload: deque[ClientRequest] = deque()
        self._pending_keys: set[tuple] = set()
        self.request_cache: dict[VertexRef, set[int]] = {}
        self.requested: set[VertexRef] = set()
        self.backfill_due: dict[VertexRef, float] = {}
        self.recovering: set[int] = set()
        self.history_digests: set[bytes] = set()
        self.drops: dict[str, int] = {}

    # -- payload ---------------------------------------------------------------

    def add_payload(self, req: ClientRequest) -> bool:
        key = (req.client_id, req.sequence_number, req.command)
        if key in self._pending_keys:
            return False
        self._pending_keys.add(key)
        self.pending_payload.append(req)
        return True

    def _drain(self, is_stale: Callable[[ClientRequest], bool]) -> tuple[ClientRequest, ...]:
        batch = []
        while self.pending_payload and len(batch) < self.config.batch_max:
            req = self.pending_payload.popleft()
            self._pending_keys.discard((req.client_id, req.sequence_number, req.command))
            if not is_stale(req):
                batch.append(req)
        return tuple(batch)

    # -- proposing --------------------------------------------------------------

    def can_propose(self, dag: DagStore) -> bool:
        r = self.current_round
        if self.last_proposed_round >= r:
            return False
        if r == 1:
            return True
        if dag.get(r - 1, self.own_id) is None:
            return False
        return len(dag.sources_at(r - 1)) >= self.quorum

    def batch_ready(self, dag: DagStore) -> bool:
        if len(self.pending_payload) >= self.config.batch_min:
            return True
        if self._now() >= self.round_entry_time + self.config.batch_timer:
            return True
        # lagging behind: the round already completes as soon as we contribute
        others = dag.sources_at(self.current_round) - {self.own_id}
        return len(others) >= self.quorum

    def propose_vertex(self, dag: DagStore, is_stale: Callable[[ClientRequest], bool] = lambda r: False):
        """Build and sign the vertex for the current round, or return ``None`` (not ready)."""
        if not self.can_propose(dag) or not self.batch_ready(dag):
            return None
        r = self.current_round
        edges = tuple(v.ref for v in dag.round_vertices(r - 1)) if r > 1 else ()
        payload = self._drain(is_stale)
        sig = self.enclave.sign(content_digest(r, self.own_id, payload, edges))
        vertex = Vertex(r, self.own_id, payload, edges, sig)
        self.last_proposed_round = r
        return vertex

    # -- receiving ----------------------------------------------------------------

    def _structure_error(self, v: Vertex) -> Verdict | None:
        if not (isinstance(v.round, int) and v.round >= 1 and 0 <= v.source < self.n):
            return Verdict.MALFORMED
        if v.round == 1:
            return Verdict.BAD_EDGE_ROUND if v.edges else None
        if len(v.edges) < self.quorum:
            return Verdict.INSUFFICIENT_EDGES
        sources = [e.source for e in v.edges]
        if len(set(sources)) != len(sources):
            return Verdict.DUPLICATE_EDGE_SOURCE
        for e in v.edges:
            if e.round != v.round - 1:
                return Verdict.BAD_EDGE_ROUND
            if not 0 <= e.source < self.n or len(e.digest) != 32:
                return Verdict.MALFORMED
        return None

    def _drop(self, verdict: Verdict) -> Verdict:
        self.drops[verdict.value] = self.drops.get(verdict.value, 0) + 1
        return verdict

    def knows(self, ref: VertexRef, dag: DagStore) -> bool:
        return ref in dag.by_ref or ref in self.buffer or ref in self._held_refs

    def on_receive_vertex(self, v: Vertex, dag: DagStore) -> Verdict:
        try:
            problem = self._structure_error(v)
        except (AttributeError, TypeError):
            problem = Verdict.MALFORMED
        if problem is not None:
            return self._drop(problem)

        if v.digest in self.history_digests:
            if v.ref in dag.by_ref or v.ref in self.buffer:
                return self._drop(Verdict.DUPLICATE)
            self._buffer(v, dag)
            return Verdict.ACCEPTED

        s = v.source
        if s in self.recovering:
            return self._drop(Verdict.RECOVERING)
        sig = v.counter_sig
        if not verify_counter_signature(self.keys[s], v.digest, sig.counter, sig.signature):
            for old in self.retired_keys.get(s, ()):
                if verify_counter_signature(old, v.digest, sig.counter, sig.signature):
                    return self._drop(Verdict.STALE_KEY)
            return self._drop(Verdict.BAD_SIGNATURE)

        if sig.counter < self.fifo_next[s]:
            if v.ref in dag.by_ref or v.ref in self.buffer:
                return self._drop(Verdict.DUPLICATE)
            return self._drop(Verdict.COUNTER_REUSE)

        if v.round > self.seen_round[s]:
            self.seen_round[s] = v.round
        if v.round > self._frontier() + self.config.window_rounds:
            return self._drop(Verdict.TOO_FAR_AHEAD)

        if sig.counter > self.fifo_next[s]:
            held = self.holdback[s]
            other = held.get(sig.counter)
            if other is not None:
                return self._drop(Verdict.DUPLICATE if other == v else Verdict.COUNTER_REUSE)
            if len(held) >= self.config.holdback_limit:
                return self._drop(Verdict.HOLDBACK_FULL)
            held[sig.counter] = v
            self._held_refs.add(v.ref)
            # a correct source links its own predecessor; fetching edges closes the FIFO gap
            self._want(v.edges, dag)
            return Verdict.HELD

        verdict = self._deliver(v, dag)
        held = self.holdback[s]
        while self.fifo_next[s] in held:
            nxt = held.pop(self.fifo_next[s])
            self._held_refs.discard(nxt.ref)
            self._deliver(nxt, dag)
        return verdict

    def _frontier(self) -> int:
        seen = sorted(self.seen_round.values(), reverse=True)
        return max(self.current_round, seen[self.f])

    def _deliver(self, v: Vertex, dag: DagStore) -> Verdict:
        s = v.source
        self.fifo_next[s] += 1
        if v.round != self.last_round[s] + 1:
            return self._drop(Verdict.ROUND_GAP)
        self.last_round[s] = v.round
        self._buffer(v, dag)
        return Verdict.ACCEPTED

    def _buffer(self, v: Vertex, dag: DagStore) -> None:
        ref = v.ref
        self.buffer[ref] = v
        self.requested.discard(ref)
        self.backfill_due.pop(ref, None)
        missing = {e for e in v.edges if e not in dag.by_ref}
        self._missing[ref] = missing
        if missing:
            for e in sorted(missing):
                self._waiters.setdefault(e, []).append(ref)
            self._want(sorted(missing), dag)
        else:
            self._ready.append(ref)
        for requester in sorted(self.request_cache.pop(ref, ())):
            self._send(requester, VertexReply(v))

    def insert_buffer(self, v: Vertex, dag: DagStore) -> bool:
        """Add a pre-validated vertex (e.g. from a committed recovery history)."""
        if v.ref in dag.by_ref or v.ref in self.buffer:
            return False
        self._buffer(v, dag)
        return True

    def drop_source_buffered(self, source: int) -> int:
        """Forget every unadmitted vertex of ``source``; returns how many were dropped."""
        doomed = [ref for ref in self.buffer if ref.source == source]
        for ref in doomed:
            del self.buffer[ref]
            for e in self._missing.pop(ref, ()):
                waiters = self._waiters.get(e)
                if waiters and ref in waiters:
                    waiters.remove(ref)
        dropped = len(doomed) + len(self.holdback[source])
        for v in self.holdback[source].values():
            self._held_refs.discard(v.ref)
        self.holdback[source] = {}
        self._ready = deque(r for r in self._ready if r.source != source)
        return dropped

    def try_admit(self, dag: DagStore) -> list[Vertex]:
        admitted = []
        while self._ready:
            ref = self._ready.popleft()
            v = self.buffer.pop(ref, None)
            if v is None:
                continue
            self._missing.pop(ref, None)
            dag.add(v)
            admitted.append(v)
            for waiter in self._waiters.pop(ref, ()):
                missing = self._missing.get(waiter)
                if missing is None:
                    continue
                missing.discard(ref)
                if not missing:
                    self._ready.append(waiter)
        return admitted

    # -- backfilling ------------------------------------------------------------------

    def _want(self, refs, dag: DagStore) -> None:
        now = self._now()
        due = now + self.config.backfill_delay
        wanted = []
        for ref in refs:
            if self.knows(ref, dag) or ref in self.requested or ref in self.backfill_due:
                continue
            if self.config.backfill_delay <= 0:
                wanted.append(ref)
            else:
                self.backfill_due[ref] = due
        if wanted:
            self.request_missing(wanted)

    def next_backfill_deadline(self) -> float | None:
        return min(self.backfill_due.values()) if self.backfill_due else None

    def flush_backfill(self, dag: DagStore) -> None:
        now = self._now()
        ripe = sorted(ref for ref, due in self.backfill_due.items() if due <= now)
        for ref in ripe:
            del self.backfill_due[ref]
        self.request_missing([r for r in ripe if not self.knows(r, dag)])

    def request_missing(self, refs) -> None:
        for ref in sorted(refs):
            if ref in self.requested:
                continue
            self.requested.add(ref)
            self._send(None, VertexRequest(ref))

    def on_vertex_request(self, dag: DagStore, ref: VertexRef, requester: int) -> Vertex | None:
        v = dag.by_ref.get(ref) or self.buffer.get(ref)
        if v is not None:
            self._send(requester, VertexReply(v))
            return v
        self.request_cache.setdefault(ref, set()).add(requester)
        return None

    # -- rounds ------------------------------------------------------------------------

    def try_advance_round(self, dag: DagStore) -> int | None:
        r = self.current_round
        if self.last_proposed_round < r:
            return None
        if len(dag.sources_at(r)) < self.quorum:
            return None
        self.current_round = r + 1
        self.round_entry_time = self._now()
        return self.current_round

    def broadcast_vertex(self, v: Vertex) -> None:
        self._send(None, VertexMsg(v))

