"""Client request intake, deduplication and deterministic execution."""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Protocol

from .messages import ClientRequest, ResponseMsg, Vertex


class App(Protocol):
    """Deterministic state machine: ``execute(command, state) -> (result, state)``."""

    def initial_state(self) -> bytes: ...

    def execute(self, command: bytes, state: bytes) -> tuple[bytes, bytes]: ...


class EchoApp:
    """No-op application: echoes the command; state is a hash chain of executions."""

    def initial_state(self) -> bytes:
        return bytes(32)

    def execute(self, command: bytes, state: bytes) -> tuple[bytes, bytes]:
        return command, hashlib.sha256(state + command).digest()


class Admission(enum.Enum):
    ACK = "ack"
    REJECTED = "rejected"


@dataclass
class ClientTable:
    last_executed: dict[int, int] = field(default_factory=dict)

    def is_stale(self, req: ClientRequest) -> bool:
        return req.sequence_number <= self.last_executed.get(req.client_id, -1)

    def record(self, req: ClientRequest) -> None:
        if self.is_stale(req):
            raise ValueError("client table only moves forward")
        self.last_executed[req.client_id] = req.sequence_number


class StateMachine:
    def __init__(self, replica_id: int, app: App | None = None):
        self.replica_id = replica_id
        self.app = app or EchoApp()
        self.state = self.app.initial_state()
        self.table = ClientTable()
        self.executed: list[tuple[int, int, bytes]] = []
        # latest response per client, replayed when a client retries an executed request
        self.last_response: dict[int, ResponseMsg] = {}

    def submit(self, req: ClientRequest) -> Admission:
        if self.table.is_stale(req):
            return Admission.REJECTED
        return Admission.ACK

    def cached_response(self, req: ClientRequest) -> ResponseMsg | None:
        resp = self.last_response.get(req.client_id)
        if resp is not None and resp.sequence_number == req.sequence_number:
            return resp
        return None

    def on_delivery(self, batch: Iterable[Vertex]) -> list[ResponseMsg]:
        responses = []
        for vertex in batch:
            for req in vertex.payload:
                if self.table.is_stale(req):
                    continue
                ok = True
                try:
                    result, self.state = self.app.execute(req.command, self.state)
                except Exception as exc:  # application faults become error responses
                    ok, result = False, repr(exc).encode()
                self.table.record(req)
                self.executed.append((req.client_id, req.sequence_number, hashlib.sha256(result).digest()))
                resp = ResponseMsg(req.client_id, req.sequence_number, result, self.replica_id, ok)
                self.last_response[req.client_id] = resp
                responses.append(resp)
        return responses
