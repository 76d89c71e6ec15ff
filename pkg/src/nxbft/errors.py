"""Exception hierarchy shared by all protocol layers."""


class NxbftError(Exception):
    """Base class for protocol errors."""


class EnclaveError(NxbftError):
    """Raised by the emulated trusted subsystem when it refuses a request."""


class SetupAbort(EnclaveError):
    """Setup cannot complete; the whole federation must restart setup."""


class InsufficientEvidence(EnclaveError):
    pass


class WrongRound(EnclaveError):
    pass


class BadSignature(EnclaveError):
    pass


class SealBroken(EnclaveError):
    pass


class InsufficientCommits(EnclaveError):
    pass


class BadAttestation(EnclaveError):
    pass


class BadCommitSignature(EnclaveError):
    pass


class DagError(NxbftError):
    """Upstream logic bug detected by the DAG store."""


class DuplicateSlot(DagError):
    pass


class DanglingEdge(DagError):
    pass


class CoinRefused(NxbftError):
    """The enclave refused a coin toss for evidence assembled by a replica."""


class MismatchedCert(NxbftError):
    pass


class MalformedDag(NxbftError):
    pass


class InvariantViolation(NxbftError):
    """A safety property was observed to be broken during a simulation."""


class ConfigError(NxbftError):
    pass


class SimulationError(NxbftError):
    """An exception escaped protocol code during a simulated event."""
