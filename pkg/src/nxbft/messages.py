"""Protocol data types and the versioned binary wire format.

Every wire message is framed as ``b"NXW" + version byte + canonical encoding
of (kind, fields)``. In-simulation delivery passes the objects themselves;
:func:`encode_message`/:func:`decode_message` define the byte-level surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import ClassVar

from . import codec
from .enclave import AttestationCertificate, CounterSignature

WIRE_MAGIC = b"NXW"
WIRE_VERSION = 1


@dataclass(frozen=True)
class ClientRequest:
    client_id: int
    sequence_number: int
    command: bytes

    @property
    def key(self) -> tuple[int, int]:
        return (self.client_id, self.sequence_number)

    def to_value(self) -> tuple:
        return (self.client_id, self.sequence_number, self.command)

    @classmethod
    def from_value(cls, value) -> "ClientRequest":
        client_id, seq, command = value
        return cls(client_id, int(seq), bytes(command))


@dataclass(frozen=True, order=True)
class VertexRef:
    round: int
    source: int
    digest: bytes

    def to_value(self) -> tuple:
        return (self.digest, self.round, self.source)

    @classmethod
    def from_value(cls, value) -> "VertexRef":
        digest, rnd, source = value
        return cls(int(rnd), int(source), bytes(digest))

    def __repr__(self) -> str:
        return f"VertexRef(r={self.round}, s={self.source}, {self.digest.hex()[:8]})"


def vertex_digest(vertex: "Vertex") -> bytes:
    """Content digest over (round, source, payload, edges); the signature is not covered."""
    return content_digest(vertex.round, vertex.source, vertex.payload, vertex.edges)


def content_digest(rnd, source, payload, edges) -> bytes:
    return codec.digest(
        "nxbft/vertex",
        (rnd, source, [r.to_value() for r in payload], [e.to_value() for e in edges]),
    )


@dataclass(frozen=True, eq=False)
class Vertex:
    round: int
    source: int
    payload: tuple[ClientRequest, ...]
    edges: tuple[VertexRef, ...]
    counter_sig: CounterSignature
    digest: bytes = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "digest", content_digest(self.round, self.source, self.payload, self.edges))

    @property
    def ref(self) -> VertexRef:
        return VertexRef(self.round, self.source, self.digest)

    @property
    def counter(self) -> int:
        return self.counter_sig.counter

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Vertex)
            and self.digest == other.digest
            and self.counter_sig == other.counter_sig
        )

    def __hash__(self) -> int:
        return hash(self.digest)

    def to_value(self) -> tuple:
        return (
            self.round,
            self.source,
            [r.to_value() for r in self.payload],
            [e.to_value() for e in self.edges],
            self.counter_sig.counter,
            self.counter_sig.signature,
        )

    @classmethod
    def from_value(cls, value) -> "Vertex":
        rnd, source, payload, edges, counter, sig = value
        return cls(
            int(rnd),
            int(source),
            tuple(ClientRequest.from_value(r) for r in payload),
            tuple(VertexRef.from_value(e) for e in edges),
            CounterSignature(int(counter), bytes(sig)),
        )

    def __repr__(self) -> str:
        return (
            f"Vertex(r={self.round}, s={self.source}, c={self.counter}, "
            f"|payload|={len(self.payload)}, |edges|={len(self.edges)})"
        )


def history_digest(history) -> bytes:
    """Digest of an ordered vertex history (used by recovery commits)."""
    return codec.digest("nxbft/history", [(v.digest, v.counter) for v in history])


# -- wire messages ------------------------------------------------------------

_REGISTRY: dict[str, type] = {}


def _wire(cls):
    _REGISTRY[cls.KIND] = cls
    return cls


@_wire
@dataclass(frozen=True)
class VertexMsg:
    KIND: ClassVar[str] = "VERTEX"
    vertex: Vertex

    def to_value(self):
        return self.vertex.to_value()

    @classmethod
    def from_value(cls, value):
        return cls(Vertex.from_value(value))


@_wire
@dataclass(frozen=True)
class VertexRequest:
    KIND: ClassVar[str] = "VERTEX_REQUEST"
    ref: VertexRef

    def to_value(self):
        return self.ref.to_value()

    @classmethod
    def from_value(cls, value):
        return cls(VertexRef.from_value(value))


@_wire
@dataclass(frozen=True)
class VertexReply:
    KIND: ClassVar[str] = "VERTEX_REPLY"
    vertex: Vertex

    def to_value(self):
        return self.vertex.to_value()

    @classmethod
    def from_value(cls, value):
        return cls(Vertex.from_value(value))


@_wire
@dataclass(frozen=True)
class RequestMsg:
    KIND: ClassVar[str] = "REQUEST"
    request: ClientRequest

    def to_value(self):
        return self.request.to_value()

    @classmethod
    def from_value(cls, value):
        return cls(ClientRequest.from_value(value))


@_wire
@dataclass(frozen=True)
class ResponseMsg:
    KIND: ClassVar[str] = "RESPONSE"
    client_id: int
    sequence_number: int
    result: bytes
    replica: int
    ok: bool = True

    def to_value(self):
        return (self.client_id, self.sequence_number, self.result, self.replica, self.ok)

    @classmethod
    def from_value(cls, value):
        client_id, seq, result, replica, ok = value
        return cls(client_id, int(seq), bytes(result), int(replica), bool(ok))


@_wire
@dataclass(frozen=True)
class SetupCert:
    KIND: ClassVar[str] = "SETUP_CERT"
    cert: AttestationCertificate

    def to_value(self):
        return self.cert.to_value()

    @classmethod
    def from_value(cls, value):
        return cls(AttestationCertificate.from_value(value))


def echo_payload(origin: int, cert: AttestationCertificate) -> bytes:
    return codec.encode(("nxbft/setup-echo", origin, cert.to_value()))


@_wire
@dataclass(frozen=True)
class SetupEcho:
    KIND: ClassVar[str] = "SETUP_ECHO"
    origin: int
    cert: AttestationCertificate
    echoer: int
    signature: bytes

    def to_value(self):
        return (self.origin, self.cert.to_value(), self.echoer, self.signature)

    @classmethod
    def from_value(cls, value):
        origin, cert, echoer, sig = value
        return cls(int(origin), AttestationCertificate.from_value(cert), int(echoer), bytes(sig))


@_wire
@dataclass(frozen=True)
class SetupShare:
    KIND: ClassVar[str] = "SETUP_SHARE"
    sender: int
    recipient: int
    ciphertext: bytes

    def to_value(self):
        return (self.sender, self.recipient, self.ciphertext)

    @classmethod
    def from_value(cls, value):
        sender, recipient, ct = value
        return cls(int(sender), int(recipient), bytes(ct))


@_wire
@dataclass(frozen=True)
class SetupReady:
    KIND: ClassVar[str] = "SETUP_READY"
    sender: int

    def to_value(self):
        return (self.sender,)

    @classmethod
    def from_value(cls, value):
        return cls(int(value[0]))


def recovery_request_payload(recoverer: int, cert: AttestationCertificate) -> bytes:
    return codec.encode(("nxbft/recovery-request", recoverer, cert.to_value()))


@_wire
@dataclass(frozen=True)
class RecoveryRequestMsg:
    KIND: ClassVar[str] = "RECOVERY_REQUEST"
    recoverer: int
    new_cert: AttestationCertificate
    signature: bytes

    def to_value(self):
        return (self.recoverer, self.new_cert.to_value(), self.signature)

    @classmethod
    def from_value(cls, value):
        recoverer, cert, sig = value
        return cls(int(recoverer), AttestationCertificate.from_value(cert), bytes(sig))


def recovery_proposal_payload(proposer, recoverer, cert, history) -> bytes:
    return codec.encode(
        ("nxbft/recovery-proposal", proposer, recoverer, cert.to_value(), history_digest(history))
    )


@_wire
@dataclass(frozen=True)
class RecoveryProposalMsg:
    KIND: ClassVar[str] = "RECOVERY_PROPOSAL"
    proposer: int
    recoverer: int
    new_cert: AttestationCertificate
    history: tuple[Vertex, ...]
    signature: bytes

    def to_value(self):
        return (
            self.proposer,
            self.recoverer,
            self.new_cert.to_value(),
            [v.to_value() for v in self.history],
            self.signature,
        )

    @classmethod
    def from_value(cls, value):
        proposer, recoverer, cert, history, sig = value
        return cls(
            int(proposer),
            int(recoverer),
            AttestationCertificate.from_value(cert),
            tuple(Vertex.from_value(v) for v in history),
            bytes(sig),
        )


@_wire
@dataclass(frozen=True)
class RecoveryCommitMsg:
    KIND: ClassVar[str] = "RECOVERY_COMMIT"
    committer: int
    recoverer: int
    new_cert: AttestationCertificate
    chosen_history_digest: bytes
    signature: bytes
    # carried so receivers can adopt the history without a second round trip
    history: tuple[Vertex, ...] = ()

    def to_value(self):
        return (
            self.committer,
            self.recoverer,
            self.new_cert.to_value(),
            self.chosen_history_digest,
            self.signature,
            [v.to_value() for v in self.history],
        )

    @classmethod
    def from_value(cls, value):
        committer, recoverer, cert, hdigest, sig, history = value
        return cls(
            int(committer),
            int(recoverer),
            AttestationCertificate.from_value(cert),
            bytes(hdigest),
            bytes(sig),
            tuple(Vertex.from_value(v) for v in history),
        )


def encode_message(msg) -> bytes:
    return WIRE_MAGIC + bytes([WIRE_VERSION]) + codec.encode((msg.KIND, msg.to_value()))


def decode_message(data: bytes):
    if len(data) < 4 or data[:3] != WIRE_MAGIC:
        raise codec.DecodeError("not a wire message")
    if data[3] != WIRE_VERSION:
        raise codec.DecodeError(f"unsupported wire version {data[3]}")
    kind, value = codec.decode(data[4:])
    cls = _REGISTRY.get(kind)
    if cls is None:
        raise codec.DecodeError(f"unknown message kind {kind!r}")
    try:
        return cls.from_value(value)
    except (TypeError, ValueError) as exc:
        raise codec.DecodeError(f"malformed {kind}: {exc}") from exc


MESSAGE_KINDS = tuple(_REGISTRY)
