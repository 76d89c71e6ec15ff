import itertools

import pytest

from nxbft.broadcast import BroadcastConfig, Broadcaster, Verdict
from nxbft.dag import DagStore
from nxbft.enclave import CounterSignature, counter_message
from nxbft.messages import Vertex, VertexMsg, VertexReply, VertexRequest, content_digest

from conftest import full_rounds, req, signed_vertex


class Clock:
    def __init__(self):
        self.t = 0.0

    def __call__(self):
        return self.t


def make_bc(enclaves, own=0, **cfg):
    ids = range(len(enclaves))
    keys = {i: enclaves[own].peer_key(i) for i in ids}
    sent, clock = [], Clock()
    bc = Broadcaster(own, len(enclaves), enclaves[own], keys, BroadcastConfig(**cfg),
                     lambda dst, m: sent.append((dst, m)), clock)
    return bc, DagStore(), sent, clock


def leaked_sign(enclave, rnd, edges, payload, counter):
    digest = content_digest(rnd, enclave.own_id, tuple(payload), tuple(edges))
    key = getattr(enclave, "_Enclave__sign_key")
    return Vertex(rnd, enclave.own_id, tuple(payload), tuple(edges),
                  CounterSignature(counter, key.sign(counter_message(digest, counter))))


def test_accept_and_admit(federation3):
    enclaves = federation3[0]
    layers = full_rounds(enclaves, 2)
    bc, dag, _, _ = make_bc(enclaves)
    for v in layers[0]:
        assert bc.on_receive_vertex(v, dag) is Verdict.ACCEPTED
    assert len(bc.try_admit(dag)) == 3
    assert bc.on_receive_vertex(layers[0][1], dag) is Verdict.DUPLICATE


def test_every_delivery_order_admits_everything(federation3):
    # held (FIFO gap) and buffered (missing edge) paths under all 720 orders of two rounds
    enclaves = federation3[0]
    layers = full_rounds(enclaves, 2)
    vertices = [v for layer in layers for v in layer]
    for order in itertools.permutations(vertices):
        bc, dag, _, _ = make_bc(enclaves, backfill_delay=10.0)
        for v in order:
            assert bc.on_receive_vertex(v, dag) in (Verdict.ACCEPTED, Verdict.HELD)
            bc.try_admit(dag)
        assert len(dag) == 6
        dag.check_closure()
        assert not bc.buffer and all(not h for h in bc.holdback.values())


def test_reverse_order_cascade(federation3):
    enclaves = federation3[0]
    layers = full_rounds(enclaves, 6)
    bc, dag, _, _ = make_bc(enclaves, backfill_delay=10.0)
    admitted = []
    for layer in reversed(layers):
        for v in layer:
            expected = Verdict.ACCEPTED if v.round == 1 else Verdict.HELD
            assert bc.on_receive_vertex(v, dag) is expected
            admitted += bc.try_admit(dag)
    assert len(dag) == 18
    assert [v.round for v in admitted] == sorted(v.round for v in admitted)


def test_bad_signature_and_counter_reuse(federation3):
    enclaves = federation3[0]
    layers = full_rounds(enclaves, 1)
    bc, dag, _, _ = make_bc(enclaves)
    v = layers[0][1]
    forged = Vertex(1, 1, (req(1, 1),), (), v.counter_sig)
    assert bc.on_receive_vertex(forged, dag) is Verdict.BAD_SIGNATURE
    assert bc.on_receive_vertex(v, dag) is Verdict.ACCEPTED
    twin = leaked_sign(enclaves[1], 1, (), (req(9, 9),), v.counter)
    assert bc.on_receive_vertex(twin, dag) is Verdict.COUNTER_REUSE
    assert bc.drops == {"bad-signature": 1, "counter-reuse": 1}


def test_equivocation_in_holdback_detected(federation3):
    enclaves = federation3[0]
    layers = full_rounds(enclaves, 2)
    bc, dag, _, _ = make_bc(enclaves, backfill_delay=10.0)
    v = layers[1][2]
    assert bc.on_receive_vertex(v, dag) is Verdict.HELD
    assert bc.on_receive_vertex(v, dag) is Verdict.DUPLICATE
    twin = leaked_sign(enclaves[2], 2, v.edges, (req(5, 5),), v.counter)
    assert bc.on_receive_vertex(twin, dag) is Verdict.COUNTER_REUSE


@pytest.mark.parametrize(
    "mutate,verdict",
    [
        (lambda l0, l1: (2, l0[:1]), Verdict.INSUFFICIENT_EDGES),
        (lambda l0, l1: (2, (l0[0], l0[0])), Verdict.DUPLICATE_EDGE_SOURCE),
        (lambda l0, l1: (3, l0[:2]), Verdict.BAD_EDGE_ROUND),
        (lambda l0, l1: (1, l0[:2]), Verdict.BAD_EDGE_ROUND),
    ],
)
def test_structure_checks(federation3, mutate, verdict):
    enclaves = federation3[0]
    layers = full_rounds(enclaves, 2)
    refs0 = tuple(v.ref for v in layers[0])
    bc, dag, _, _ = make_bc(enclaves)
    rnd, edges = mutate(refs0, None)
    bad = signed_vertex(enclaves[1], rnd, edges)
    assert bc.on_receive_vertex(bad, dag) is verdict


def test_round_gap_rejected(federation3):
    enclaves = federation3[0]
    layers = full_rounds(enclaves, 2)
    bc, dag, _, _ = make_bc(enclaves)
    for v in layers[0] + [layers[1][0], layers[1][2]]:
        bc.on_receive_vertex(v, dag)
    bc.try_admit(dag)
    # counter 1 is next for source 1, but it claims round 3 instead of round 2
    edges = (layers[1][0].ref, layers[1][2].ref)
    skip = leaked_sign(enclaves[1], 3, edges, (), 1)
    assert bc.on_receive_vertex(skip, dag) is Verdict.ROUND_GAP
    assert bc.fifo_next[1] == 2 and bc.last_round[1] == 1


def test_request_reply_and_cache(federation3):
    enclaves = federation3[0]
    layers = full_rounds(enclaves, 2)
    bc, dag, sent, clock = make_bc(enclaves, backfill_delay=0.5)
    target = layers[0][0]
    assert bc.on_vertex_request(dag, target.ref, 2) is None
    assert bc.on_receive_vertex(layers[1][1], dag) is Verdict.HELD
    assert not any(isinstance(m, VertexRequest) for _, m in sent)  # within grace period
    clock.t = 1.0
    bc.flush_backfill(dag)
    wanted = sorted(m.ref for _, m in sent if isinstance(m, VertexRequest))
    assert wanted == sorted(v.ref for v in layers[0])
    sent.clear()
    bc.on_receive_vertex(target, dag)
    assert (2, VertexReply(target)) in sent  # the cached request is answered on arrival
    bc.try_admit(dag)
    sent.clear()
    assert bc.on_vertex_request(dag, target.ref, 1) == target
    assert sent == [(1, VertexReply(target))]


def test_advance_requires_own_proposal_and_quorum(federation3):
    enclaves = federation3[0]
    bc, dag, sent, clock = make_bc(enclaves, batch_min=2, batch_timer=1.0)
    own = bc.propose_vertex(dag)
    assert own is None  # no payload, timer not expired
    bc.add_payload(req(1, 0))
    assert not bc.add_payload(req(1, 0))
    bc.add_payload(req(2, 0))
    own = bc.propose_vertex(dag)
    assert own is not None and own.payload == (req(1, 0), req(2, 0))
    assert bc.propose_vertex(dag) is None
    bc.on_receive_vertex(own, dag)
    bc.try_admit(dag)
    assert bc.try_advance_round(dag) is None
    others = [signed_vertex(e, 1) for e in enclaves[1:]]
    bc.on_receive_vertex(others[0], dag)
    bc.try_admit(dag)
    assert bc.try_advance_round(dag) == 2
    clock.t = 0.5
    assert bc.propose_vertex(dag) is None  # batch still short, timer running
    clock.t = 1.2
    v2 = bc.propose_vertex(dag)
    assert v2.round == 2 and len(v2.edges) == 2 and v2.payload == ()
    bc.broadcast_vertex(v2)
    assert sent[-1] == (None, VertexMsg(v2))


def test_batch_max_and_stale_filter(federation3):
    enclaves = federation3[0]
    bc, dag, _, _ = make_bc(enclaves, batch_min=1, batch_max=3)
    for i in range(5):
        bc.add_payload(req(i, 0))
    v = bc.propose_vertex(dag, is_stale=lambda r: r.client_id == 1)
    assert [r.client_id for r in v.payload] == [0, 2, 3]  # stale ones do not count
    assert len(bc.pending_payload) == 1


def test_too_far_ahead(federation3):
    enclaves = federation3[0]
    bc, dag, _, _ = make_bc(enclaves, window_rounds=2, backfill_delay=10.0)
    layers = full_rounds(enclaves, 5)
    assert bc.on_receive_vertex(layers[4][1], dag) is Verdict.TOO_FAR_AHEAD
    assert bc.on_receive_vertex(layers[2][1], dag) is Verdict.HELD
