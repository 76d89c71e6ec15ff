"""NxBFT: an asynchronous, DAG-based BFT protocol for replicas with trusted execution."""

from .broadcast import BroadcastConfig, Broadcaster, Verdict
from .consensus import Consensus, WaveOutcome, wave_of
from .dag import DagStore
from .enclave import (
    AttestationCertificate,
    CounterSignature,
    Enclave,
    EnclavePublicKey,
    Platform,
    enclave_init,
    quorum,
    unseal_and_recover,
)
from .messages import ClientRequest, Vertex, VertexRef, decode_message, encode_message
from .replica import Replica, ReplicaBackup, ReplicaConfig, Status
from .simnet import FaultAction, Metrics, SimConfig, Simulator, run
from .smr import Admission, EchoApp, StateMachine

__all__ = [
    "Admission",
    "AttestationCertificate",
    "BroadcastConfig",
    "Broadcaster",
    "ClientRequest",
    "Consensus",
    "CounterSignature",
    "DagStore",
    "EchoApp",
    "Enclave",
    "EnclavePublicKey",
    "FaultAction",
    "Metrics",
    "Platform",
    "Replica",
    "ReplicaBackup",
    "ReplicaConfig",
    "SimConfig",
    "Simulator",
    "StateMachine",
    "Status",
    "Verdict",
    "Vertex",
    "VertexRef",
    "WaveOutcome",
    "decode_message",
    "enclave_init",
    "encode_message",
    "quorum",
    "run",
    "unseal_and_recover",
    "wave_of",
]

__version__ = "0.1.0"
