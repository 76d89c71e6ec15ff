"""Wave-based commit rules and the deterministic ordering traversal."""

from __future__ import annotations

from dataclasses import dataclass, field

from .dag import DagStore
from .enclave import WAVE_LENGTH, quorum
from .errors import InvariantViolation
from .messages import Vertex, VertexRef


def wave_of(rnd: int) -> int:
    if rnd < 1:
        raise ValueError("rounds start at 1")
    return -(-rnd // WAVE_LENGTH)


def first_round(wave: int) -> int:
    return WAVE_LENGTH * (wave - 1) + 1


def last_round(wave: int) -> int:
    return WAVE_LENGTH * wave


@dataclass
class WaveOutcome:
    wave: int
    coin: int
    root_present: bool
    direct_commit: bool
    committed_waves: list[int] = field(default_factory=list)
    delivered: list[Vertex] = field(default_factory=list)


class Consensus:
    """Per-replica wave bookkeeping (the ``WaveState``) and commit logic."""

    def __init__(self, n: int):
        self.n = n
        self.quorum = quorum(n)
        self.decided_coin: dict[int, int] = {}
        self.committed_root: dict[int, VertexRef] = {}
        self.last_direct_wave = 0
        self.delivery_log: list[Vertex] = []

    @property
    def last_wave(self) -> int:
        return max(self.decided_coin, default=0)

    def root_of(self, dag: DagStore, wave: int) -> Vertex | None:
        coin = self.decided_coin.get(wave)
        if coin is None:
            return None
        return dag.get(first_round(wave), coin)

    def on_wave_complete(self, dag: DagStore, wave: int, coin: int) -> WaveOutcome:
        """Record ``coin`` for ``wave`` and apply the direct/retrospective commit rules."""
        if wave in self.decided_coin:
            raise InvariantViolation(f"coin for wave {wave} already recorded")
        if wave != self.last_wave + 1:
            raise InvariantViolation(f"wave {wave} completed out of order")
        self.decided_coin[wave] = coin
        root = self.root_of(dag, wave)
        outcome = WaveOutcome(wave, coin, root is not None, False)
        if root is None:
            return outcome
        if len(dag.supporters_of(root.ref, last_round(wave))) < self.quorum:
            return outcome
        outcome.direct_commit = True

        chain = [(wave, root)]
        newest = root
        for u in range(wave - 1, self.last_direct_wave, -1):
            older = self.root_of(dag, u)
            if older is not None and dag.exists_path(newest.ref, older.ref):
                chain.append((u, older))
                newest = older
        for u, r in reversed(chain):
            if u in self.committed_root:
                raise InvariantViolation(f"wave {u} committed twice")
            self.committed_root[u] = r.ref
            outcome.committed_waves.append(u)
            outcome.delivered.extend(self.order_from_root(dag, r.ref))
        self.last_direct_wave = wave
        return outcome

    def order_from_root(self, dag: DagStore, root: VertexRef) -> list[Vertex]:
        batch = dag.unordered_history(root)
        batch.sort(key=lambda v: (v.round, v.source))
        dag.mark_ordered(v.ref for v in batch)
        self.delivery_log.extend(batch)
        return batch
