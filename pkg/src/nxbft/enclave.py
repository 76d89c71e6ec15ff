"""Emulated trusted subsystem.

The enclave owns the counter-based signature service, the PRNG behind the
common coin, the seed-share absorption during setup, sealing, and the
recovery-time replacement of peer enclave keys. Secrets (signing key, seed,
coin stream, counter) are kept in name-mangled slots and are only reachable
through the methods below; everything outside this module is untrusted code.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms

from . import codec
from .crypto import (
    Entropy,
    KexKey,
    SigningKey,
    aead_open,
    aead_seal,
    encrypt_to,
    system_entropy,
    verify,
)
from .errors import (
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

if TYPE_CHECKING:
    from .messages import Vertex

SEAL_MAGIC = b"NXSEAL1"
DEFAULT_BUILD_ID = "nxbft-enclave/1"
WAVE_LENGTH = 4

_U64_SPAN = 1 << 64


def quorum(n: int) -> int:
    """Size of a majority quorum, ``floor(n/2) + 1``."""
    return n // 2 + 1


def code_measurement(build_id: str) -> bytes:
    return hashlib.sha256(b"nxbft/measurement\x00" + build_id.encode("utf-8")).digest()


@dataclass(frozen=True)
class EnclavePublicKey:
    """Public half of an enclave identity: Ed25519 verify key plus X25519 share key."""

    verify_key: bytes
    kex_key: bytes

    def to_value(self) -> tuple:
        return (self.verify_key, self.kex_key)

    @classmethod
    def from_value(cls, value) -> "EnclavePublicKey":
        verify_key, kex_key = value
        return cls(bytes(verify_key), bytes(kex_key))


@dataclass(frozen=True)
class CounterSignature:
    counter: int
    signature: bytes


def counter_message(message_digest: bytes, counter: int) -> bytes:
    return b"nxbft/counter\x00" + bytes(message_digest) + counter.to_bytes(8, "big")


def verify_counter_signature(pub, message_digest: bytes, counter: int, signature: bytes) -> bool:
    """Check a signature-service signature; callable outside the enclave."""
    try:
        key = pub.verify_key if isinstance(pub, EnclavePublicKey) else bytes(pub)
        if not isinstance(counter, int) or counter < 0 or len(message_digest) != 32:
            return False
        return verify(key, counter_message(message_digest, counter), bytes(signature))
    except (TypeError, ValueError, OverflowError, AttributeError):
        return False


@dataclass(frozen=True)
class AttestationCertificate:
    replica_id: int
    public_enclave_key: EnclavePublicKey
    code_measurement: bytes
    replica_signature: bytes

    @staticmethod
    def payload(replica_id: int, key: EnclavePublicKey, measurement: bytes) -> bytes:
        return codec.encode(("nxbft/attest", replica_id, key.to_value(), measurement))

    def verify(self, replica_public: bytes) -> bool:
        return verify(
            replica_public,
            self.payload(self.replica_id, self.public_enclave_key, self.code_measurement),
            self.replica_signature,
        )

    def to_value(self) -> tuple:
        return (
            self.replica_id,
            self.public_enclave_key.to_value(),
            self.code_measurement,
            self.replica_signature,
        )

    @classmethod
    def from_value(cls, value) -> "AttestationCertificate":
        rid, key, measurement, sig = value
        return cls(int(rid), EnclavePublicKey.from_value(key), bytes(measurement), bytes(sig))

    @property
    def digest(self) -> bytes:
        return codec.digest("nxbft/cert", self.to_value())


def recovery_commit_digest(recoverer: int, cert: AttestationCertificate, history_digest: bytes) -> bytes:
    """What every RecoveryCommit signer signs; binds the new certificate and the chosen history."""
    return codec.digest("nxbft/recovery-commit", (recoverer, cert.to_value(), history_digest))


class Platform:
    """Emulated TEE hardware: holds the sealing key, which survives crashes."""

    __slots__ = ("__sealing_key",)

    def __init__(self, sealing_key: bytes):
        if len(sealing_key) != 32:
            raise ValueError("sealing key must be 32 bytes")
        self.__sealing_key = bytes(sealing_key)

    def _seal(self, plaintext: bytes, entropy: Entropy) -> bytes:
        return SEAL_MAGIC + aead_seal(self.__sealing_key, plaintext, SEAL_MAGIC, entropy)

    def _unseal(self, blob: bytes) -> bytes:
        if not blob.startswith(SEAL_MAGIC):
            raise SealBroken("missing seal envelope magic")
        try:
            return aead_open(self.__sealing_key, blob[len(SEAL_MAGIC):], SEAL_MAGIC)
        except ValueError as exc:
            raise SealBroken(str(exc)) from exc


class _CoinStream:
    """Seekable keyed stream: toss ``k`` reads its own ChaCha20 substream."""

    __slots__ = ("__key",)

    def __init__(self, seed: bytes):
        self.__key = hashlib.sha256(b"nxbft/coin\x00" + seed).digest()

    def value(self, toss_index: int, n: int) -> int:
        limit = _U64_SPAN - (_U64_SPAN % n)
        block = 0
        while True:
            nonce = block.to_bytes(4, "little") + toss_index.to_bytes(12, "little")
            stream = Cipher(algorithms.ChaCha20(self.__key, nonce), mode=None).encryptor().update(bytes(256))
            for off in range(0, len(stream), 8):
                draw = int.from_bytes(stream[off:off + 8], "little")
                if draw < limit:
                    return draw % n
            block += 4


class Enclave:
    """One replica's enclave. Constructing it is ``enclave_init``."""

    __slots__ = (
        "__own_id",
        "__n",
        "__sign_key",
        "__kex_key",
        "__public",
        "__counter",
        "__share",
        "__seed",
        "__coin",
        "__tosses",
        "__peer_keys",
        "__replica_keys",
        "__measurement",
        "__platform",
        "__entropy",
        "__setup_done",
        "__awaiting_fast_forward",
    )

    def __init__(
        self,
        own_id: int,
        n: int,
        *,
        replica_keys: Mapping[int, bytes] | None = None,
        platform: Platform | None = None,
        build_id: str = DEFAULT_BUILD_ID,
        entropy: Entropy = system_entropy,
    ):
        if n < 3:
            raise ValueError("federation needs at least 3 replicas")
        if not 0 <= own_id < n:
            raise ValueError(f"replica id {own_id} outside [0, {n})")
        self.__own_id = own_id
        self.__n = n
        self.__entropy = entropy
        self.__sign_key = SigningKey(entropy(32))
        self.__kex_key = KexKey(entropy(32))
        self.__public = EnclavePublicKey(self.__sign_key.public, self.__kex_key.public)
        self.__counter = 0
        self.__share = entropy(32)
        self.__seed = self.__share
        self.__coin = None
        self.__tosses = 0
        self.__peer_keys: dict[int, EnclavePublicKey] = {}
        self.__replica_keys = dict(replica_keys or {})
        self.__measurement = code_measurement(build_id)
        self.__platform = platform
        self.__setup_done = False
        self.__awaiting_fast_forward = False

    # -- read-only, non-secret views --------------------------------------

    @property
    def own_id(self) -> int:
        return self.__own_id

    @property
    def n(self) -> int:
        return self.__n

    @property
    def public_key(self) -> EnclavePublicKey:
        return self.__public

    @property
    def expected_round(self) -> int:
        return WAVE_LENGTH * (self.__tosses + 1)

    @property
    def setup_complete(self) -> bool:
        return self.__setup_done

    @property
    def code_measurement(self) -> bytes:
        return self.__measurement

    def peer_key(self, replica_id: int) -> EnclavePublicKey | None:
        return self.__peer_keys.get(replica_id)

    def seed_digest(self) -> bytes:
        """Test hook: digest of the current seed (comparing seeds across replicas)."""
        return hashlib.sha256(b"nxbft/seed-digest\x00" + self.__seed).digest()

    # -- signature service -------------------------------------------------

    def sign(self, message_digest: bytes) -> CounterSignature:
        if len(message_digest) != 32:
            raise ValueError("message digest must be 32 bytes")
        counter = self.__counter
        self.__counter = counter + 1
        return CounterSignature(counter, self.__sign_key.sign(counter_message(message_digest, counter)))

    def make_attestation(self, replica_signing_key: SigningKey) -> AttestationCertificate:
        payload = AttestationCertificate.payload(self.__own_id, self.__public, self.__measurement)
        return AttestationCertificate(
            self.__own_id, self.__public, self.__measurement, replica_signing_key.sign(payload)
        )

    def _check_cert(self, cert: AttestationCertificate) -> None:
        replica_public = self.__replica_keys.get(cert.replica_id)
        if replica_public is None:
            raise BadAttestation(f"no registered replica key for {cert.replica_id}")
        if cert.code_measurement != self.__measurement:
            raise BadAttestation("unexpected code measurement")
        if not cert.verify(replica_public):
            raise BadAttestation("replica signature does not verify")

    # -- setup ---------------------------------------------------------------

    def register_peer(self, cert: AttestationCertificate) -> None:
        """Accept a peer's attested enclave key during setup."""
        if self.__setup_done:
            raise SetupAbort("setup already complete")
        try:
            self._check_cert(cert)
        except BadAttestation as exc:
            raise SetupAbort(f"invalid attestation: {exc}") from exc
        known = self.__peer_keys.get(cert.replica_id)
        if known is not None and known != cert.public_enclave_key:
            raise SetupAbort(f"conflicting enclave keys for replica {cert.replica_id}")
        if cert.replica_id == self.__own_id and cert.public_enclave_key != self.__public:
            raise SetupAbort("certificate for own id carries a foreign key")
        self.__peer_keys[cert.replica_id] = cert.public_enclave_key

    def export_seed_share(self, recipient: int) -> bytes:
        key = self.__peer_keys.get(recipient)
        if key is None:
            raise SetupAbort(f"replica {recipient} not attested")
        return encrypt_to(key.kex_key, self.__share, b"nxbft/share" + key.verify_key, self.__entropy)

    def absorb_seed_share(self, encrypted_share: bytes) -> None:
        if self.__setup_done:
            raise SetupAbort("seed is frozen after setup")
        try:
            share = self.__kex_key.decrypt(bytes(encrypted_share), b"nxbft/share" + self.__public.verify_key)
        except (ValueError, TypeError) as exc:
            raise SetupAbort(f"invalid seed share: {exc}") from exc
        if len(share) != 32:
            raise SetupAbort("seed share must be 32 bytes")
        self.__seed = bytes(a ^ b for a, b in zip(self.__seed, share))

    def finalize_setup(self) -> None:
        if self.__setup_done:
            return
        if len(self.__peer_keys) != self.__n:
            raise SetupAbort(f"only {len(self.__peer_keys)}/{self.__n} peers attested")
        self.__setup_done = True
        self.__coin = _CoinStream(self.__seed)

    # -- common coin -----------------------------------------------------------

    def toss_coin(self, evidence: Iterable["Vertex"]) -> int:
        """Reveal the next coin value given round-completion evidence.

        Every evidence vertex must be from ``expected_round`` and carry a
        counter signature that verifies under its source's stored peer key;
        at least a quorum of distinct sources is required.
        """
        from .messages import vertex_digest

        if not self.__setup_done or self.__awaiting_fast_forward:
            raise EnclaveError("coin not available before setup/recovery completes")
        expected = self.expected_round
        sources = set()
        for vertex in evidence:
            if vertex.round != expected:
                raise WrongRound(f"evidence for round {vertex.round}, expected {expected}")
            key = self.__peer_keys.get(vertex.source)
            sig = vertex.counter_sig
            if key is None or not verify_counter_signature(key, vertex_digest(vertex), sig.counter, sig.signature):
                raise BadSignature(f"evidence vertex from {vertex.source} does not verify")
            sources.add(vertex.source)
        if len(sources) < quorum(self.__n):
            raise InsufficientEvidence(f"{len(sources)} distinct sources, need {quorum(self.__n)}")
        value = self.__coin.value(self.__tosses, self.__n)
        self.__tosses += 1
        return value

    def revealed_coin(self, wave: int) -> int:
        """Re-read the coin of an already tossed wave (used while catching up after recovery)."""
        if not self.__setup_done or self.__awaiting_fast_forward:
            raise EnclaveError("coin not available")
        if not 1 <= wave <= self.__tosses:
            raise EnclaveError(f"coin of wave {wave} has not been revealed")
        return self.__coin.value(wave - 1, self.__n)

    # -- sealing and recovery ------------------------------------------------

    def seal_state(self) -> bytes:
        if not self.__setup_done:
            raise EnclaveError("nothing to seal before setup completes")
        if self.__platform is None:
            raise EnclaveError("no sealing platform attached")
        peers = [(pid, key.to_value()) for pid, key in sorted(self.__peer_keys.items())]
        plaintext = codec.encode((self.__own_id, self.__n, self.__seed, self.expected_round, peers))
        return self.__platform._seal(plaintext, self.__entropy)

    @classmethod
    def unseal(
        cls,
        blob: bytes,
        *,
        platform: Platform,
        replica_keys: Mapping[int, bytes] | None = None,
        build_id: str = DEFAULT_BUILD_ID,
        entropy: Entropy = system_entropy,
    ) -> "Enclave":
        """Restore sealed state into a fresh enclave (new keys, counter 0).

        The coin stays locked until :meth:`fast_forward` positions it.
        """
        plaintext = platform._unseal(bytes(blob))
        try:
            own_id, n, seed, _expected_round, peers = codec.decode(plaintext)
        except (codec.DecodeError, ValueError) as exc:
            raise SealBroken(f"undecodable sealed state: {exc}") from exc
        enclave = cls(own_id, n, replica_keys=replica_keys, platform=platform, build_id=build_id, entropy=entropy)
        enclave.__seed = bytes(seed)
        enclave.__peer_keys = {int(pid): EnclavePublicKey.from_value(key) for pid, key in peers}
        enclave.__setup_done = True
        enclave.__coin = _CoinStream(enclave.__seed)
        enclave.__awaiting_fast_forward = True
        return enclave

    def fast_forward(self, toss_count: int) -> None:
        if not self.__awaiting_fast_forward:
            raise EnclaveError("fast-forward is only allowed once, right after unsealing")
        if toss_count < 0:
            raise ValueError("toss_count must be non-negative")
        self.__tosses = toss_count
        self.__awaiting_fast_forward = False

    def replace_peer_key(
        self,
        peer_id: int,
        new_cert: AttestationCertificate,
        commit_sigs: Sequence[tuple[int, bytes, bytes]],
    ) -> None:
        """Swap ``peer_id``'s enclave key after a completed recovery.

        ``commit_sigs`` holds ``(committer, history_digest, signature)`` triples
        taken from RecoveryCommit messages.
        """
        if not self.__setup_done:
            raise EnclaveError("peer keys are fixed by setup first")
        if new_cert.replica_id != peer_id:
            raise BadAttestation("certificate is for a different replica")
        self._check_cert(new_cert)
        committers = {committer for committer, _, _ in commit_sigs}
        if len(committers) < quorum(self.__n) or len(committers) != len(commit_sigs):
            raise InsufficientCommits(f"{len(committers)} distinct commits, need {quorum(self.__n)}")
        history_digests = {bytes(h) for _, h, _ in commit_sigs}
        if len(history_digests) != 1:
            raise BadCommitSignature("commits sign different histories")
        commit_digest = recovery_commit_digest(peer_id, new_cert, history_digests.pop())
        for committer, _, signature in commit_sigs:
            replica_public = self.__replica_keys.get(committer)
            if replica_public is None or not verify(replica_public, commit_digest, bytes(signature)):
                raise BadCommitSignature(f"commit signature of {committer} does not verify")
        self.__peer_keys[peer_id] = new_cert.public_enclave_key


def enclave_init(own_id: int, n: int, **kwargs) -> Enclave:
    return Enclave(own_id, n, **kwargs)


def unseal_and_recover(blob: bytes, toss_count: int, **kwargs) -> Enclave:
    enclave = Enclave.unseal(blob, **kwargs)
    enclave.fast_forward(toss_count)
    return enclave
