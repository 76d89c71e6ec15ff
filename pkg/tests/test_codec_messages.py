import pytest
from hypothesis import given, settings, strategies as st

from nxbft import codec
from nxbft.codec import DecodeError
from nxbft.messages import (
    MESSAGE_KINDS,
    RecoveryCommitMsg,
    RecoveryProposalMsg,
    RecoveryRequestMsg,
    RequestMsg,
    ResponseMsg,
    SetupCert,
    SetupEcho,
    SetupReady,
    SetupShare,
    VertexMsg,
    VertexReply,
    VertexRequest,
    decode_message,
    encode_message,
    vertex_digest,
)

from conftest import federation3, full_rounds, req  # noqa: F401

values = st.recursive(
    st.none() | st.booleans() | st.integers(-(2**63), 2**63 - 1) | st.binary(max_size=40) | st.text(max_size=20),
    lambda inner: st.lists(inner, max_size=5).map(tuple),
    max_leaves=25,
)


@given(values)
@settings(max_examples=300, deadline=None)
def test_codec_roundtrip(value):
    assert codec.decode(codec.encode(value)) == value


@given(values, values)
@settings(max_examples=200, deadline=None)
def test_codec_injective(a, b):
    if a != b:
        assert codec.encode(a) != codec.encode(b)


def test_lists_and_tuples_encode_alike():
    assert codec.encode([1, b"x"]) == codec.encode((1, b"x"))


@pytest.mark.parametrize("data", [b"", b"I\x00", b"Z", b"L\x00\x00\x00\x02N", codec.encode(5) + b"\x00"])
def test_decode_errors(data):
    with pytest.raises(DecodeError):
        codec.decode(data)


def test_encode_rejects_unsupported():
    with pytest.raises(TypeError):
        codec.encode(1.5)
    with pytest.raises(OverflowError):
        codec.encode(2**63)


def test_digest_domain_separation():
    assert codec.digest("a", 1) != codec.digest("b", 1)
    assert len(codec.digest("a", 1)) == 32


def _all_messages(federation3):
    enclaves, keys, _, _ = federation3
    layers = full_rounds(enclaves, 2)
    v = layers[1][0]
    cert = enclaves[0].make_attestation(keys[0])
    return [
        VertexMsg(v),
        VertexRequest(v.ref),
        VertexReply(layers[0][2]),
        RequestMsg(req(7, 3, b"cmd")),
        ResponseMsg(7, 3, b"res", 1, True),
        SetupCert(cert),
        SetupEcho(0, cert, 2, b"s" * 64),
        SetupShare(1, 2, b"c" * 80),
        SetupReady(2),
        RecoveryRequestMsg(0, cert, b"s" * 64),
        RecoveryProposalMsg(1, 0, cert, (layers[0][0], layers[1][0]), b"p" * 64),
        RecoveryCommitMsg(2, 0, cert, b"h" * 32, b"c" * 64, (layers[0][0],)),
    ]


def test_every_wire_kind_roundtrips(federation3):
    msgs = _all_messages(federation3)
    assert {m.KIND for m in msgs} == set(MESSAGE_KINDS)
    for m in msgs:
        data = encode_message(m)
        assert data[:4] == b"NXW\x01"
        assert decode_message(data) == m


def test_vertex_digest_survives_roundtrip(federation3):
    v = _all_messages(federation3)[0].vertex
    back = decode_message(encode_message(VertexMsg(v))).vertex
    assert back.digest == v.digest == vertex_digest(back)


@pytest.mark.parametrize(
    "data",
    [b"XYZ\x01", b"NXW\x02" + codec.encode(("VERTEX", ())), b"NXW\x01" + codec.encode(("NOPE", ())),
     b"NXW\x01" + codec.encode(("VERTEX", (1, 2)))],
)
def test_decode_message_rejects(data):
    with pytest.raises(DecodeError):
        decode_message(data)
