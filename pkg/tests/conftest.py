import hashlib
import itertools

import pytest

from nxbft.crypto import SigningKey, seeded_entropy
from nxbft.enclave import Enclave, Platform
from nxbft.messages import ClientRequest, Vertex, content_digest


def replica_keys(n, tag="test"):
    keys = [SigningKey(hashlib.sha256(f"{tag}/rk/{i}".encode()).digest()) for i in range(n)]
    return keys, {i: k.public for i, k in enumerate(keys)}


def fresh_enclaves(n, tag="test"):
    keys, publics = replica_keys(n, tag)
    platforms = [Platform(hashlib.sha256(f"{tag}/pf/{i}".encode()).digest()) for i in range(n)]
    enclaves = [
        Enclave(i, n, replica_keys=publics, platform=platforms[i], entropy=seeded_entropy(f"{tag}/e/{i}".encode()))
        for i in range(n)
    ]
    return enclaves, keys, publics, platforms


def run_enclave_setup(enclaves, keys, share_order=None):
    """Key exchange without the network protocol: attest, register, exchange shares, finalize."""
    certs = [e.make_attestation(k) for e, k in zip(enclaves, keys)]
    for e in enclaves:
        for c in certs:
            e.register_peer(c)
    n = len(enclaves)
    pairs = [(s, r) for s in range(n) for r in range(n) if s != r]
    if share_order is not None:
        pairs = [pairs[i] for i in share_order]
    for s, r in pairs:
        enclaves[r].absorb_seed_share(enclaves[s].export_seed_share(r))
    for e in enclaves:
        e.finalize_setup()
    return certs


@pytest.fixture
def federation3():
    enclaves, keys, publics, platforms = fresh_enclaves(3)
    run_enclave_setup(enclaves, keys)
    return enclaves, keys, publics, platforms


@pytest.fixture
def federation5():
    enclaves, keys, publics, platforms = fresh_enclaves(5)
    run_enclave_setup(enclaves, keys)
    return enclaves, keys, publics, platforms


def signed_vertex(enclave, rnd, edges=(), payload=()):
    digest = content_digest(rnd, enclave.own_id, tuple(payload), tuple(edges))
    return Vertex(rnd, enclave.own_id, tuple(payload), tuple(edges), enclave.sign(digest))


def full_rounds(enclaves, rounds, quorum_only=False):
    """Fully connected rounds 1..rounds, every enclave signing once per round in order."""
    layers = []
    prev = ()
    for r in range(1, rounds + 1):
        layer = [signed_vertex(e, r, prev) for e in enclaves]
        layers.append(layer)
        prev = tuple(v.ref for v in layer)
    return layers


def req(client, seq, cmd=b""):
    return ClientRequest(client, seq, cmd)


def all_orders(items):
    return list(itertools.permutations(items))


def plain_vertex(rnd, source, edges=(), payload=(), counter=0):
    """Unsigned vertex for store-level tests that never check signatures."""
    from nxbft.enclave import CounterSignature

    return Vertex(rnd, source, tuple(payload), tuple(edges), CounterSignature(counter, b"\x00" * 64))


def store_from_explicit(explicit):
    """Materialise an ExplicitDag as a DagStore; returns (store, id -> VertexRef)."""
    from nxbft.dag import DagStore

    store, refs = DagStore(), {}
    for vid in sorted(explicit.vertices, key=lambda v: explicit.vertices[v]):
        rnd, source = explicit.vertices[vid]
        v = plain_vertex(rnd, source, [refs[p] for p in explicit.edges.get(vid, ())])
        store.add(v)
        refs[vid] = v.ref
    return store, refs


ACCEPTANCE_RESULTS: list[tuple[int, bool, str]] = []


def report_criterion(number, ok, detail):
    """Record one acceptance line; printed again in the terminal summary."""
    line = f"CRITERION {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_RESULTS.append((number, ok, line))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, _, line in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(line)
