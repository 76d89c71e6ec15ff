"""Client emulation under the NxB and BFT client models."""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass

from ..enclave import quorum
from ..errors import ConfigError
from ..messages import ClientRequest, RequestMsg, ResponseMsg
from ..simnet import RequestRecord

MAX_CLIENTS_DEFAULT = 10_000


@dataclass
class ClientModel:
    """How emulated clients talk to the federation.

    ``kind`` is ``nxb`` (unicast to one random replica, one valid response
    suffices, fall back to another replica on timeout) or ``bft`` (broadcast,
    wait for a quorum of matching responses).
    """

    kind: str = "nxb"
    rate: float = 1000.0
    clients: int = 100
    fallback_timeout: float = 5.0
    payload_size: int = 0
    start: float = 0.0
    stop: float | None = None
    # share which replicas failed to answer across all emulated clients
    shared_blacklist: bool = True
    max_clients: int = MAX_CLIENTS_DEFAULT

    def __post_init__(self):
        if self.kind not in ("nxb", "bft"):
            raise ConfigError(f"client kind must be 'nxb' or 'bft', got {self.kind!r}")
        if not self.rate > 0:
            raise ConfigError("request rate must be positive")
        if not 1 <= self.clients <= self.max_clients:
            raise ConfigError(f"client count must be in [1, {self.max_clients}]")
        if self.fallback_timeout <= 0:
            raise ConfigError("fallback_timeout must be positive")
        if self.payload_size < 0:
            raise ConfigError("payload_size must be non-negative")


class _Open:
    __slots__ = ("req", "record", "target", "tried", "votes")

    def __init__(self, req, record, target):
        self.req = req
        self.record = record
        self.target = target
        self.tried = {target} if target is not None else set()
        self.votes: dict[bytes, set[int]] = {}


class ClientEmulator:
    """All emulated clients as one simulation node.

    Requests are issued at a constant aggregate ``rate``; each client has at
    most one open request, so arrivals that find every client busy are
    counted as skipped.
    """

    def __init__(self, model: ClientModel, n: int, seed: int = 0):
        self.model = model
        self.n = n
        self.quorum = quorum(n)
        self.rng = random.Random(f"nxbft/clients/{seed}")
        self.env = None
        self.next_seq = [0] * model.clients
        self.idle: deque[int] = deque(range(model.clients))
        self.open: dict[int, _Open] = {}
        self.blacklist: set[int] = set()
        self._blacklists: dict[int, set[int]] = {}
        self.arrivals = 0

    def start(self, env) -> None:
        self.env = env
        env.set_timer(max(0.0, self.model.start - env.now()), "arrival")

    def _suspects(self, client: int) -> set[int]:
        if self.model.shared_blacklist:
            return self.blacklist
        return self._blacklists.setdefault(client, set())

    def _pick(self, client: int, exclude: set[int]) -> int:
        suspects = self._suspects(client)
        choices = [r for r in range(self.n) if r not in exclude and r not in suspects]
        if not choices:
            choices = [r for r in range(self.n) if r not in exclude] or list(range(self.n))
        return self.rng.choice(choices)

    def _command(self) -> bytes:
        size = self.model.payload_size
        return self.rng.randbytes(size) if size else b""

    def on_timer(self, tag) -> None:
        if tag == "arrival":
            self._arrival()
        elif isinstance(tag, tuple) and tag[0] == "fallback":
            self._fallback(tag[1], tag[2])

    def _arrival(self) -> None:
        env, model = self.env, self.model
        now = env.now()
        if model.stop is not None and now >= model.stop:
            return
        self.arrivals += 1
        if self.idle:
            self._issue(self.idle.popleft())
        else:
            env.metrics.skipped_arrivals += 1
        env.set_timer(1.0 / model.rate, "arrival")

    def _issue(self, client: int) -> None:
        env = self.env
        seq = self.next_seq[client]
        self.next_seq[client] = seq + 1
        req = ClientRequest(client, seq, self._command())
        record = RequestRecord(client, seq, env.now())
        env.metrics.requests[(client, seq)] = record
        if self.model.kind == "nxb":
            target = self._pick(client, set())
            self.open[client] = _Open(req, record, target)
            env.send(target, RequestMsg(req))
        else:
            self.open[client] = _Open(req, record, None)
            for r in range(self.n):
                env.send(r, RequestMsg(req))
        env.set_timer(self.model.fallback_timeout, ("fallback", client, seq))

    def _fallback(self, client: int, seq: int) -> None:
        pending = self.open.get(client)
        if pending is None or pending.req.sequence_number != seq:
            return
        env = self.env
        pending.record.sends += 1
        if self.model.kind == "nxb":
            self._suspects(client).add(pending.target)
            target = self._pick(client, pending.tried)
            pending.tried.add(target)
            pending.target = target
            env.send(target, RequestMsg(pending.req))
        else:
            for r in range(self.n):
                env.send(r, RequestMsg(pending.req))
        env.set_timer(self.model.fallback_timeout, ("fallback", client, seq))

    def on_message(self, src: int, msg) -> None:
        if not isinstance(msg, ResponseMsg):
            return
        pending = self.open.get(msg.client_id)
        if pending is None or pending.req.sequence_number != msg.sequence_number or not msg.ok:
            return
        if self.model.kind == "bft":
            voters = pending.votes.setdefault(msg.result, set())
            voters.add(msg.replica)
            if len(voters) < self.quorum:
                return
        pending.record.complete_time = self.env.now()
        del self.open[msg.client_id]
        self.idle.append(msg.client_id)
