import hashlib
import itertools

import pytest
from hypothesis import given, settings, strategies as st

from nxbft.crypto import SigningKey, seeded_entropy
from nxbft.enclave import (
    SEAL_MAGIC,
    AttestationCertificate,
    Enclave,
    Platform,
    enclave_init,
    quorum,
    recovery_commit_digest,
    unseal_and_recover,
    verify_counter_signature,
)
from nxbft.errors import (
    BadAttestation,
    BadCommitSignature,
    BadSignature,
    EnclaveError,
    InsufficientCommits,
    InsufficientEvidence,
    SealBroken,
    SetupAbort,
    WrongRound,
)
from nxbft.messages import history_digest

from conftest import fresh_enclaves, full_rounds, replica_keys, run_enclave_setup, signed_vertex

D = hashlib.sha256(b"digest").digest()


def test_init_state():
    e = enclave_init(0, 3)
    assert e.expected_round == 4
    assert not e.setup_complete
    assert e.sign(D).counter == 0


def test_fresh_keys_differ_and_injected_entropy_is_reproducible():
    a, b = enclave_init(2, 3), enclave_init(2, 3)
    assert a.public_key != b.public_key
    c = enclave_init(1, 3, entropy=seeded_entropy(b"same"))
    d = enclave_init(1, 3, entropy=seeded_entropy(b"same"))
    assert c.public_key == d.public_key


@pytest.mark.parametrize("own_id,n", [(3, 3), (-1, 3), (0, 2)])
def test_init_rejects_bad_ids(own_id, n):
    with pytest.raises(ValueError):
        Enclave(own_id, n)


def test_sign_counters_are_consecutive_and_verify():
    e = enclave_init(0, 3)
    sigs = [e.sign(D) for _ in range(100)]
    assert [s.counter for s in sigs] == list(range(100))
    pub = e.public_key
    assert verify_counter_signature(pub, D, 0, sigs[0].signature)
    assert not verify_counter_signature(pub, D, 1, sigs[0].signature)
    flipped = bytes([D[0] ^ 1]) + D[1:]
    assert not verify_counter_signature(pub, flipped, 0, sigs[0].signature)
    assert not verify_counter_signature(pub, D, 0, b"junk")
    assert not verify_counter_signature(b"short", D, 0, sigs[0].signature)


@given(st.lists(st.binary(min_size=32, max_size=32), min_size=1, max_size=40))
@settings(max_examples=30, deadline=None)
def test_counters_never_repeat(digests):
    e = enclave_init(0, 3, entropy=seeded_entropy(b"prop"))
    counters = [e.sign(d).counter for d in digests]
    assert len(set(counters)) == len(counters)
    assert counters == sorted(counters)


def test_sign_rejects_non_digest():
    with pytest.raises(ValueError):
        enclave_init(0, 3).sign(b"short")


def test_attestation_roundtrip_and_tamper():
    keys, publics = replica_keys(3)
    e = Enclave(0, 3, replica_keys=publics)
    cert = e.make_attestation(keys[0])
    assert cert.verify(publics[0])
    other = enclave_init(0, 3)
    forged = AttestationCertificate(0, other.public_key, cert.code_measurement, cert.replica_signature)
    assert not forged.verify(publics[0])
    assert AttestationCertificate.from_value(cert.to_value()) == cert
    again = Enclave(0, 3, replica_keys=publics).make_attestation(keys[0])
    assert again.replica_id == cert.replica_id and again.public_enclave_key != cert.public_enclave_key


def test_absorb_zero_share_and_involution():
    enclaves, keys, publics, _ = fresh_enclaves(3, "absorb")
    for e in enclaves:
        for c in [x.make_attestation(k) for x, k in zip(enclaves, keys)]:
            e.register_peer(c)
    from nxbft.crypto import encrypt_to

    target = enclaves[0]
    before = target.seed_digest()
    key = target.public_key
    zero = encrypt_to(key.kex_key, bytes(32), b"nxbft/share" + key.verify_key, seeded_entropy(b"z"))
    target.absorb_seed_share(zero)
    assert target.seed_digest() == before
    share = enclaves[1].export_seed_share(0)
    target.absorb_seed_share(share)
    assert target.seed_digest() != before
    target.absorb_seed_share(share)
    assert target.seed_digest() == before


def test_absorb_rejects_garbage_and_after_setup(federation3):
    enclaves = federation3[0]
    with pytest.raises(SetupAbort):
        enclaves[0].absorb_seed_share(b"x" * 80)
    fresh = enclave_init(0, 3)
    with pytest.raises(SetupAbort):
        fresh.absorb_seed_share(b"x" * 80)


def test_all_share_orders_give_identical_seeds():
    # n=3 has 6 directed shares; every delivery order must end in the same seed
    digests = set()
    for order in itertools.permutations(range(6)):
        enclaves, keys, _, _ = fresh_enclaves(3, "orders")
        run_enclave_setup(enclaves, keys, share_order=order)
        seeds = {e.seed_digest() for e in enclaves}
        assert len(seeds) == 1
        digests |= seeds
    assert len(digests) == 1


def test_register_peer_errors():
    keys, publics = replica_keys(3)
    e = Enclave(0, 3, replica_keys=publics)
    other = Enclave(1, 3, replica_keys=publics)
    e.register_peer(other.make_attestation(keys[1]))
    again = Enclave(1, 3, replica_keys=publics)
    with pytest.raises(SetupAbort):
        e.register_peer(again.make_attestation(keys[1]))
    with pytest.raises(SetupAbort):
        e.register_peer(Enclave(2, 3, replica_keys=publics).make_attestation(keys[0]))
    with pytest.raises(SetupAbort):
        e.finalize_setup()


def test_toss_gate(federation5):
    enclaves = federation5[0]
    layers = full_rounds(enclaves, 4)
    e = enclaves[0]
    with pytest.raises(InsufficientEvidence):
        e.toss_coin(layers[3][:2])
    assert e.expected_round == 4
    with pytest.raises(InsufficientEvidence):
        e.toss_coin([layers[3][0]] * 3)
    with pytest.raises(WrongRound):
        e.toss_coin(layers[2][:3])
    coin = e.toss_coin(layers[3][:3])
    assert 0 <= coin < 5
    assert e.expected_round == 8


def test_toss_rejects_bad_signature(federation5):
    enclaves = federation5[0]
    layers = full_rounds(enclaves, 4)
    v = layers[3][1]
    from nxbft.enclave import CounterSignature
    from nxbft.messages import Vertex

    forged = Vertex(v.round, v.source, v.payload, v.edges, CounterSignature(v.counter + 1, v.counter_sig.signature))
    with pytest.raises(BadSignature):
        enclaves[0].toss_coin([layers[3][0], forged, layers[3][2]])


def test_toss_before_setup_refused():
    e = enclave_init(0, 3)
    with pytest.raises(EnclaveError):
        e.toss_coin([])


def test_coin_identical_across_replicas(federation3):
    enclaves = federation3[0]
    sequences = [[], [], []]
    layers = full_rounds(enclaves, 40)
    for w in range(10):
        evidence = layers[4 * w + 3]
        for seq, e in zip(sequences, enclaves):
            seq.append(e.toss_coin(evidence))
    assert sequences[0] == sequences[1] == sequences[2]


def test_seal_envelope_and_tamper(federation3):
    enclaves, keys, publics, platforms = federation3
    blob = enclaves[0].seal_state()
    assert blob.startswith(SEAL_MAGIC)
    for pos in (len(SEAL_MAGIC) + 3, len(blob) - 1):
        bad = bytearray(blob)
        bad[pos] ^= 1
        with pytest.raises(SealBroken):
            unseal_and_recover(bytes(bad), 0, platform=platforms[0], replica_keys=publics)
    with pytest.raises(SealBroken):
        unseal_and_recover(blob, 0, platform=platforms[1], replica_keys=publics)
    with pytest.raises(SealBroken):
        unseal_and_recover(b"NOPE" + blob, 0, platform=platforms[0], replica_keys=publics)


def test_seal_excludes_signing_key_and_counter(federation3):
    enclaves, keys, publics, platforms = federation3
    e = enclaves[0]
    for _ in range(5):
        e.sign(D)
    r = unseal_and_recover(e.seal_state(), 0, platform=platforms[0], replica_keys=publics)
    assert r.public_key != e.public_key
    assert r.sign(D).counter == 0
    assert r.seed_digest() == e.seed_digest()


@pytest.mark.parametrize("crash_after", [0, 1, 3, 7])
def test_fast_forward_continues_the_stream(crash_after):
    enclaves, keys, publics, platforms = fresh_enclaves(3, f"ff{crash_after}")
    run_enclave_setup(enclaves, keys)
    blob = enclaves[0].seal_state()
    layers = full_rounds(enclaves, 4 * 12)
    reference = [enclaves[1].toss_coin(layers[4 * w + 3]) for w in range(12)]
    crashed = enclaves[0]
    before = [crashed.toss_coin(layers[4 * w + 3]) for w in range(crash_after)]
    r = unseal_and_recover(blob, crash_after, platform=platforms[0], replica_keys=publics)
    assert r.expected_round == 4 * (crash_after + 1)
    after = [r.toss_coin(layers[4 * w + 3]) for w in range(crash_after, 12)]
    assert before + after == reference
    assert [r.revealed_coin(w) for w in range(1, crash_after + 1)] == reference[:crash_after]


def test_unsealed_coin_locked_until_fast_forward(federation3):
    enclaves, keys, publics, platforms = federation3
    r = Enclave.unseal(enclaves[0].seal_state(), platform=platforms[0], replica_keys=publics)
    with pytest.raises(EnclaveError):
        r.toss_coin([])
    r.fast_forward(2)
    with pytest.raises(EnclaveError):
        r.fast_forward(2)


def _commit_setup(n=3):
    enclaves, keys, publics, platforms = fresh_enclaves(n, "replace")
    run_enclave_setup(enclaves, keys)
    recovered = unseal_and_recover(enclaves[2].seal_state(), 0, platform=platforms[2], replica_keys=publics)
    cert = recovered.make_attestation(keys[2])
    return enclaves, keys, cert


def test_replace_peer_key_happy_path():
    enclaves, keys, cert = _commit_setup()
    hd = history_digest(())
    digest = recovery_commit_digest(2, cert, hd)
    sigs = [(i, hd, keys[i].sign(digest)) for i in (0, 1)]
    enclaves[0].replace_peer_key(2, cert, sigs)
    assert enclaves[0].peer_key(2) == cert.public_enclave_key


def test_replace_peer_key_errors():
    enclaves, keys, cert = _commit_setup()
    hd = history_digest(())
    digest = recovery_commit_digest(2, cert, hd)
    with pytest.raises(InsufficientCommits):
        enclaves[0].replace_peer_key(2, cert, [(0, hd, keys[0].sign(digest))])
    with pytest.raises(InsufficientCommits):
        enclaves[0].replace_peer_key(2, cert, [(0, hd, keys[0].sign(digest))] * 2)
    other = b"\x01" * 32
    mixed = [(0, hd, keys[0].sign(digest)), (1, other, keys[1].sign(recovery_commit_digest(2, cert, other)))]
    with pytest.raises(BadCommitSignature):
        enclaves[0].replace_peer_key(2, cert, mixed)
    wrong_signer = [(0, hd, keys[0].sign(digest)), (1, hd, keys[2].sign(digest))]
    with pytest.raises(BadCommitSignature):
        enclaves[0].replace_peer_key(2, cert, wrong_signer)
    with pytest.raises(BadAttestation):
        enclaves[0].replace_peer_key(1, cert, [])
    forged = AttestationCertificate(2, cert.public_enclave_key, cert.code_measurement, b"\x00" * 64)
    with pytest.raises(BadAttestation):
        enclaves[0].replace_peer_key(2, forged, [])
    assert enclaves[0].peer_key(2) != cert.public_enclave_key


def test_boundary_exposes_no_secret_accessors():
    e = enclave_init(0, 3)
    public = {name for name in dir(e) if not name.startswith("_")}
    allowed = {
        "own_id", "n", "public_key", "expected_round", "setup_complete", "code_measurement",
        "peer_key", "seed_digest", "sign", "make_attestation", "register_peer", "export_seed_share",
        "absorb_seed_share", "finalize_setup", "toss_coin", "revealed_coin", "seal_state", "unseal",
        "fast_forward", "replace_peer_key",
    }
    assert public == allowed
    with pytest.raises(AttributeError):
        e.extra = 1  # __slots__: no ad-hoc attributes


def test_quorum():
    assert [quorum(n) for n in (3, 4, 5, 7, 10)] == [2, 3, 3, 4, 6]
