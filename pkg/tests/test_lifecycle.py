import pytest

from nxbft.enclave import CounterSignature
from nxbft.lifecycle import select_history, valid_chain_length
from nxbft.messages import RecoveryProposalMsg, Vertex
from nxbft.replica import ReplicaConfig, Status
from nxbft.simnet import FaultAction, SimConfig, Simulator, equivocate_setup_cert

from conftest import fresh_enclaves, run_enclave_setup, signed_vertex


def setup_sim(n, seed=0, faults=(), **net):
    cfg = SimConfig(n=n, scheduler_seed=seed, faults=list(faults), **net)
    return Simulator(cfg, ReplicaConfig(setup_timeout=5 * cfg.sync_bound))


@pytest.mark.parametrize("n", [3, 5, 10])
def test_setup_completes_with_one_seed(n):
    sim = setup_sim(n, adversarial=True).run(0.3)
    assert all(r.status is Status.RUNNING for r in sim.replicas)
    assert len({r.enclave.seed_digest() for r in sim.replicas}) == 1
    assert all(ok for _, ok, _ in sim.metrics.setup.values())
    assert sim.metrics.max_sync_delay <= sim.config.sync_bound


def _assert_nobody_runs(sim):
    live = sim.live_replicas()
    assert live and all(r.status is Status.ABORTED for r in live)
    assert all(r.abort_reason for r in live)


@pytest.mark.parametrize("silent", [0, 2])
def test_silent_participant_aborts_everyone(silent):
    sim = setup_sim(3, faults=[FaultAction(0.0, silent, "crash")]).run(1.0)
    _assert_nobody_runs(sim)
    assert all("timeout" in r.abort_reason for r in sim.live_replicas())


@pytest.mark.parametrize("kind", ["SETUP_CERT", "SETUP_ECHO", "SETUP_SHARE"])
def test_omitted_setup_message_aborts(kind):
    sim = setup_sim(5, faults=[FaultAction(0.0, 3, "omit", targets=(1,), kinds=(kind,))])
    sim.run(1.0)
    assert sim.metrics.omitted[kind] >= 1
    _assert_nobody_runs(sim)


def test_omitted_ready_only_stalls_its_target():
    # everyone else already holds n readies, so only the starved replica times out
    sim = setup_sim(5, faults=[FaultAction(0.0, 3, "omit", targets=(1,), kinds=("SETUP_READY",))])
    sim.run(1.0)
    assert [r.status for r in sim.replicas] == [Status.RUNNING, Status.ABORTED] + [Status.RUNNING] * 3


def test_equivocated_certificate_aborts():
    sim = setup_sim(5)
    sim.start()
    assert equivocate_setup_cert(sim, 4, targets=[0, 1]) == 2
    sim.run(1.0)
    _assert_nobody_runs(sim)
    reasons = " ".join(r.abort_reason for r in sim.live_replicas())
    assert "conflicting" in reasons or "differs" in reasons


# -- recovery history selection --------------------------------------------------------


@pytest.fixture
def chain():
    enclaves, keys, _, _ = fresh_enclaves(3, "chain")
    run_enclave_setup(enclaves, keys)
    e = enclaves[1]
    history = [signed_vertex(e, r) for r in range(1, 13)]  # rounds without edges suffice here
    return e, history


def _proposal(proposer, history):
    return RecoveryProposalMsg(proposer, 1, None, tuple(history), b"")


def test_valid_chain_length(chain):
    e, h = chain
    key = e.public_key
    assert valid_chain_length(h, 1, key, 0) == 12
    assert valid_chain_length(h[:10], 1, key, 0) == 10
    assert valid_chain_length(h, 1, key, 3) == 0
    assert valid_chain_length(h[1:], 1, key, 0) == 0
    bad = list(h)
    v = bad[8]
    bad[8] = Vertex(v.round, v.source, v.payload, v.edges, CounterSignature(v.counter, bytes(64)))
    assert valid_chain_length(bad, 1, key, 0) == 8


def test_select_history_longest_valid_wins(chain):
    e, h = chain
    key = e.public_key
    bad = list(h)
    v = bad[8]
    bad[8] = Vertex(v.round, v.source, v.payload, v.edges, CounterSignature(v.counter, bytes(64)))
    proposals = {0: _proposal(0, h[:10]), 1: _proposal(1, h), 2: _proposal(2, bad)}
    assert select_history(proposals, 1, key, 0) == tuple(h)
    proposals = {0: _proposal(0, h[:10]), 2: _proposal(2, bad)}
    assert select_history(proposals, 1, key, 0) == tuple(h[:10])
    # equal length: lowest proposer id
    assert select_history({2: _proposal(2, h[:5]), 0: _proposal(0, h[:5])}, 1, key, 0) == tuple(h[:5])
    assert select_history({0: _proposal(0, [])}, 1, key, 0) == ()


# -- end-to-end recovery ------------------------------------------------------------------------


def test_crash_recovery_rejoins_with_agreed_history():
    from nxbft.harness.clients import ClientEmulator, ClientModel

    faults = [FaultAction(0.6, 2, "crash"), FaultAction(0.9, 2, "recover")]
    sim = setup_sim(5, faults=faults)
    sim.attach_client(ClientEmulator(ClientModel(rate=300, clients=50, start=0.25), 5, 0))
    sim.run(2.5)
    recs = sim.metrics.recoveries
    assert {rid for _, rid, c, _, _ in recs if c == 2} == set(range(5))
    assert len({(top, d) for _, _, c, top, d in recs if c == 2}) == 1
    r2 = sim.replicas[2]
    assert r2.status is Status.RUNNING
    assert len({r.enclave.seed_digest() for r in sim.replicas}) == 1
    peers = [r for r in sim.replicas if r.id != 2]
    assert r2.consensus.last_wave >= peers[0].consensus.last_wave - 2
    assert all(r.enclave.peer_key(2) == r2.enclave.public_key for r in peers)


def test_recovery_needs_every_replica():
    # replica 4 never answers recovery traffic, so replica 2 must not come back
    faults = [
        FaultAction(0.0, 4, "omit", kinds=("RECOVERY_PROPOSAL", "RECOVERY_COMMIT")),
        FaultAction(0.5, 2, "crash"),
        FaultAction(0.7, 2, "recover"),
    ]
    sim = setup_sim(5, faults=faults).run(1.5)
    assert sim.replicas[2].status is Status.RECOVERING
    assert not [rec for rec in sim.metrics.recoveries if rec[2] == 2]
