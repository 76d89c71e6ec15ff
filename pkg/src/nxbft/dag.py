"""Round-indexed store of admitted vertices with reachability queries."""

from __future__ import annotations

from typing import Iterable, Iterator

from .errors import DanglingEdge, DuplicateSlot
from .messages import Vertex, VertexRef


class DagStore:
    def __init__(self):
        self.by_round: dict[int, dict[int, Vertex]] = {}
        self.by_ref: dict[VertexRef, Vertex] = {}
        self.ordered_mark: set[VertexRef] = set()
        self.max_round = 0

    def __len__(self) -> int:
        return len(self.by_ref)

    def __contains__(self, ref: VertexRef) -> bool:
        return ref in self.by_ref

    def __iter__(self) -> Iterator[Vertex]:
        return iter(self.by_ref.values())

    def add(self, v: Vertex) -> None:
        slot = self.by_round.setdefault(v.round, {})
        if v.source in slot:
            raise DuplicateSlot(f"round {v.round} already holds a vertex of {v.source}")
        for edge in v.edges:
            if edge not in self.by_ref:
                raise DanglingEdge(f"{v!r} references unknown {edge!r}")
        slot[v.source] = v
        self.by_ref[v.ref] = v
        if v.round > self.max_round:
            self.max_round = v.round

    def get(self, rnd: int, source: int) -> Vertex | None:
        return self.by_round.get(rnd, {}).get(source)

    def round_vertices(self, rnd: int) -> list[Vertex]:
        slot = self.by_round.get(rnd, {})
        return [slot[s] for s in sorted(slot)]

    def sources_at(self, rnd: int) -> set[int]:
        return set(self.by_round.get(rnd, ()))

    def exists_path(self, start: VertexRef, target: VertexRef) -> bool:
        """True iff a (possibly empty) edge path leads from ``start`` down to ``target``."""
        if start == target:
            return True
        if start.round <= target.round:
            return False
        return target in self._reach(start, target.round)

    def _reach(self, start: VertexRef, floor: int) -> set[VertexRef]:
        """All vertices reachable from ``start`` whose round is at least ``floor``."""
        seen = {start}
        stack = [start]
        while stack:
            ref = stack.pop()
            for edge in self.by_ref[ref].edges:
                if edge.round >= floor and edge not in seen:
                    seen.add(edge)
                    stack.append(edge)
        return seen

    def supporters_of(self, root: VertexRef, rnd: int) -> set[int]:
        """Sources of stored round-``rnd`` vertices that have a path to ``root``."""
        if rnd < root.round:
            return set()
        if rnd == root.round:
            return {root.source} if root in self.by_ref else set()
        # walk upwards level by level: a vertex reaches root iff one of its edges does
        reaching = {root}
        for r in range(root.round + 1, rnd + 1):
            level = set()
            for v in self.by_round.get(r, {}).values():
                if any(e in reaching for e in v.edges):
                    level.add(v.ref)
            reaching = level
            if not reaching:
                return set()
        return {ref.source for ref in reaching}

    def causal_history(self, root: VertexRef) -> set[VertexRef]:
        return self._reach(root, 0)

    def unordered_history(self, root: VertexRef) -> list[Vertex]:
        """Causal history of ``root`` minus already ordered vertices.

        The ordered set is closed under ancestry, so the walk stops at the
        first ordered vertex on every branch.
        """
        if root in self.ordered_mark:
            return []
        seen = {root}
        stack = [root]
        while stack:
            ref = stack.pop()
            for edge in self.by_ref[ref].edges:
                if edge not in seen and edge not in self.ordered_mark:
                    seen.add(edge)
                    stack.append(edge)
        return [self.by_ref[r] for r in seen]

    def mark_ordered(self, refs: Iterable[VertexRef]) -> None:
        self.ordered_mark.update(refs)

    def check_closure(self) -> None:
        """Assert every stored edge resolves (ancestry closure)."""
        for v in self.by_ref.values():
            for edge in v.edges:
                if edge not in self.by_ref:
                    raise DanglingEdge(f"{v!r} references unknown {edge!r}")

    def to_dot(self) -> str:
        lines = ["digraph dag {", "  rankdir=RL;"]
        for ref in sorted(self.by_ref):
            v = self.by_ref[ref]
            style = ",style=filled" if ref in self.ordered_mark else ""
            lines.append(f'  "{_node(ref)}" [label="r{ref.round}/s{ref.source}"{style}];')
            for edge in v.edges:
                lines.append(f'  "{_node(ref)}" -> "{_node(edge)}";')
        lines.append("}")
        return "\n".join(lines) + "\n"


def _node(ref: VertexRef) -> str:
    return f"{ref.round}.{ref.source}.{ref.digest.hex()[:8]}"
