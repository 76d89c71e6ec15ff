"""Common-core checker for single waves given as explicit vertex/edge lists.

File format (``.dag``), one directive per line, ``#`` starts a comment::

    n 5
    wave_len 3
    min_links 3          # optional, defaults to n//2 + 1
    vertex <id> <round> <source>
    edge <from-id> <to-id>   # from a round-r vertex to a round-(r-1) vertex
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from ..dag import DagStore
from ..enclave import quorum
from ..errors import MalformedDag


@dataclass
class ExplicitDag:
    n: int
    wave_len: int
    vertices: dict[int, tuple[int, int]] = field(default_factory=dict)  # id -> (round, source)
    edges: dict[int, list[int]] = field(default_factory=dict)  # id -> parent ids
    min_links: int | None = None

    def add_vertex(self, vid: int, rnd: int, source: int) -> None:
        if vid in self.vertices:
            raise MalformedDag(f"duplicate vertex id {vid}")
        self.vertices[vid] = (rnd, source)
        self.edges.setdefault(vid, [])

    def add_edge(self, child: int, parent: int) -> None:
        self.edges.setdefault(child, []).append(parent)

    def round_ids(self, rnd: int) -> list[int]:
        return sorted(v for v, (r, _) in self.vertices.items() if r == rnd)


@dataclass
class CoreReport:
    max_common_core_size: int
    witness: tuple[int, ...]
    threshold: int

    @property
    def holds(self) -> bool:
        return self.max_common_core_size >= self.threshold


def parse_dag(text: str) -> ExplicitDag:
    header: dict[str, int] = {}
    vertices, edges = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            args = [int(p) for p in parts[1:]]
        except ValueError as exc:
            raise MalformedDag(f"line {lineno}: non-integer argument") from exc
        word = parts[0]
        if word in ("n", "wave_len", "min_links") and len(args) == 1:
            header[word] = args[0]
        elif word == "vertex" and len(args) == 3:
            vertices.append(args)
        elif word == "edge" and len(args) == 2:
            edges.append(args)
        else:
            raise MalformedDag(f"line {lineno}: cannot parse {raw.strip()!r}")
    for key in ("n", "wave_len"):
        if key not in header:
            raise MalformedDag(f"missing '{key}' directive")
    dag = ExplicitDag(header["n"], header["wave_len"], min_links=header.get("min_links"))
    for vid, rnd, source in vertices:
        dag.add_vertex(vid, rnd, source)
    for child, parent in edges:
        dag.add_edge(child, parent)
    return dag


def load_dag(path) -> ExplicitDag:
    return parse_dag(Path(path).read_text())


def format_dag(dag: ExplicitDag) -> str:
    lines = [f"n {dag.n}", f"wave_len {dag.wave_len}"]
    if dag.min_links is not None:
        lines.append(f"min_links {dag.min_links}")
    for vid in sorted(dag.vertices):
        rnd, source = dag.vertices[vid]
        lines.append(f"vertex {vid} {rnd} {source}")
    for vid in sorted(dag.edges):
        for parent in dag.edges[vid]:
            lines.append(f"edge {vid} {parent}")
    return "\n".join(lines) + "\n"


def validate(dag: ExplicitDag, min_links: int) -> None:
    if dag.n < 1 or dag.wave_len < 1:
        raise MalformedDag("n and wave_len must be positive")
    slots = set()
    for vid, (rnd, source) in dag.vertices.items():
        if not 1 <= rnd <= dag.wave_len:
            raise MalformedDag(f"vertex {vid} has round {rnd} outside 1..{dag.wave_len}")
        if not 0 <= source < dag.n:
            raise MalformedDag(f"vertex {vid} has source {source} outside 0..{dag.n - 1}")
        if (rnd, source) in slots:
            raise MalformedDag(f"two vertices of source {source} in round {rnd}")
        slots.add((rnd, source))
    for vid, parents in dag.edges.items():
        if vid not in dag.vertices:
            raise MalformedDag(f"edge from unknown vertex {vid}")
        rnd = dag.vertices[vid][0]
        if len(set(parents)) != len(parents):
            raise MalformedDag(f"vertex {vid} repeats an edge")
        for p in parents:
            if p not in dag.vertices:
                raise MalformedDag(f"edge {vid} -> {p} targets an unknown vertex")
            if dag.vertices[p][0] != rnd - 1:
                raise MalformedDag(f"edge {vid} -> {p} does not go to the previous round")
        if rnd > 1 and len(parents) < min_links:
            raise MalformedDag(f"vertex {vid} has {len(parents)} links, needs {min_links}")
    if not dag.round_ids(dag.wave_len):
        raise MalformedDag("no final-round vertices")


def _first_round_reach(dag: ExplicitDag, vid: int, memo: dict[int, frozenset[int]]) -> frozenset[int]:
    hit = memo.get(vid)
    if hit is not None:
        return hit
    rnd = dag.vertices[vid][0]
    if rnd == 1:
        out = frozenset((vid,))
    else:
        out = frozenset().union(*(_first_round_reach(dag, p, memo) for p in dag.edges[vid]))
    memo[vid] = out
    return out


def check_get_core(dag: ExplicitDag, n: int | None = None, wave_len: int | None = None,
                   min_links: int | None = None) -> CoreReport:
    """Largest set of round-1 vertices reached by every final-round vertex.

    Membership of a round-1 vertex in a common core does not depend on the
    other members, so the maximum core is the intersection of the final
    vertices' round-1 ancestor sets.
    """
    n = dag.n if n is None else n
    if wave_len is not None and wave_len != dag.wave_len:
        raise MalformedDag(f"wave_len {wave_len} does not match the graph's {dag.wave_len}")
    if min_links is None:
        min_links = dag.min_links if dag.min_links is not None else quorum(n)
    validate(dag, min_links)
    memo: dict[int, frozenset[int]] = {}
    core = None
    for vid in dag.round_ids(dag.wave_len):
        reach = _first_round_reach(dag, vid, memo)
        core = reach if core is None else core & reach
    witness = tuple(sorted(core))
    return CoreReport(len(witness), witness, quorum(n))


def wave_from_store(store: DagStore, n: int, first: int, last: int) -> ExplicitDag:
    """Extract rounds ``first..last`` of a replica's DAG, renumbered as rounds ``1..``."""
    dag = ExplicitDag(n, last - first + 1)
    ids = {}
    for rnd in range(first, last + 1):
        for v in store.round_vertices(rnd):
            vid = len(ids)
            ids[v.ref] = vid
            dag.add_vertex(vid, rnd - first + 1, v.source)
    for rnd in range(first + 1, last + 1):
        for v in store.round_vertices(rnd):
            for e in v.edges:
                dag.add_edge(ids[v.ref], ids[e])
    return dag


def bundled_counterexample() -> ExplicitDag:
    return load_dag(Path(__file__).with_name("data") / "counterexample_w3_n5.dag")
