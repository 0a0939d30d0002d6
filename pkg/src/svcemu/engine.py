"""Concurrent execution core for endpoint models.

An endpoint is passive data — a protocol spec, a dispatch dictionary, a store,
and a fault policy — activated only when a message arrives on one of its
channels. Nothing here spawns per-endpoint activities, which is what lets ten
thousand bound-but-idle endpoints cost nothing beyond their listener sockets.

Request processing enforces conformance on both directions: a reception the
channel's protocol state does not enable is recorded as a violation and
handled per the configured policy (drop the connection, or answer with a
protocolError result and continue); a transmission the protocol does not
enable means the shipped model itself is broken, which halts the endpoint
loudly rather than papering over it.

Fault injection draws a deterministic (delay, deliver) pair per request from
the policy seed; protocol state advances even when delivery is dropped — the
model answered, the wire lost it.
"""

from __future__ import annotations

import hashlib
import random
import time
from dataclasses import dataclass, field
from typing import Optional

from .behavior import DispatchDictionary, NoHandlerError, handle_request
from .datastore import DirectoryStore
from .ldapcodec import PROTOCOL_ERROR, result_message
from .message import Message
from .protocol import (
    Event,
    NoTransition,
    Progress,
    ProtocolSpec,
    ProtocolTerm,
    receive_shapes,
    recv,
    render_term,
    step,
    xmit,
)

VIOLATION_CLOSE = "close"
VIOLATION_REJECT = "reject"

# Shapes that can answer a rejected reception under the reject policy.
_REJECT_RESPONSE_SHAPES = {
    "BindRq": "BindRes",
    "SearchRq": "SearchDone",
    "ModRq": "ModRes",
    "AddRq": "AddRes",
    "DelRq": "DelRes",
}


class EngineError(Exception):
    pass


class EndpointUnknownError(EngineError):
    def __init__(self, endpoint_id: str):
        super().__init__(f"unknown endpoint {endpoint_id!r}")
        self.endpoint_id = endpoint_id


class EndpointHaltedError(EngineError):
    def __init__(self, endpoint_id: str, reason: str):
        super().__init__(f"endpoint {endpoint_id!r} halted: {reason}")
        self.endpoint_id = endpoint_id


class ModelIntegrityError(EngineError):
    """An emitted response was not enabled by the protocol — the shipped
    model is inconsistent. Always loud, never swallowed."""


class ModelValidationError(EngineError):
    pass


@dataclass(frozen=True)
class FaultPolicy:
    """Deterministic response-fault source: uniform delay in [0, max_delay_ms]
    and a drop probability, both drawn per (seed, endpoint, channel, request
    ordinal). The same policy always replays the same fault sequence."""

    max_delay_ms: int = 0
    drop_probability: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_delay_ms < 0:
            raise ValueError("max_delay_ms must be >= 0")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError("drop_probability must be within [0, 1]")

    def draw(self, endpoint_id: str, channel_id: int, ordinal: int) -> tuple[float, bool]:
        """Returns (delay_seconds, deliver)."""
        if self.max_delay_ms == 0 and self.drop_probability == 0.0:
            return 0.0, True
        key = f"{self.seed}:{endpoint_id}:{channel_id}:{ordinal}".encode()
        digest = hashlib.blake2b(key, digest_size=8).digest()
        rng = random.Random(int.from_bytes(digest, "big"))
        delay = rng.uniform(0.0, self.max_delay_ms) / 1000.0
        deliver = rng.random() >= self.drop_probability
        return delay, deliver


NO_FAULTS = FaultPolicy()


def apply_faults(
    policy: FaultPolicy,
    responses: tuple[Message, ...],
    *,
    endpoint_id: str,
    channel_id: int,
    ordinal: int,
) -> tuple[float, bool]:
    """Fault decision for one response batch: how long to hold it, and
    whether to deliver it at all. Empty batches are never delayed."""
    if not responses:
        return 0.0, True
    return policy.draw(endpoint_id, channel_id, ordinal)


@dataclass
class EndpointCounters:
    msgs_in: int = 0
    msgs_out: int = 0
    violations: int = 0
    open_channels: int = 0


@dataclass
class EndpointModel:
    id: str
    protocol: ProtocolSpec
    dispatch: DispatchDictionary
    store: DirectoryStore
    faults: FaultPolicy = NO_FAULTS
    halted_reason: Optional[str] = None
    counters: EndpointCounters = field(default_factory=EndpointCounters)

    def __post_init__(self) -> None:
        missing = receive_shapes(self.protocol) - self.dispatch.shapes()
        if missing:
            raise ModelValidationError(
                f"endpoint {self.id!r}: no handler for receivable shapes "
                f"{sorted(missing)}"
            )


@dataclass
class Channel:
    channel_id: int
    endpoint_id: str
    protocol_state: ProtocolTerm
    request_ordinal: int = 0
    closing: bool = False
    closed: bool = False


@dataclass(frozen=True)
class ConformanceViolation:
    endpoint_id: str
    channel_id: int
    event: Optional[Event]
    state_summary: str
    timestamp: float
    detail: str = ""


@dataclass(frozen=True)
class ProcessResult:
    responses: tuple[Message, ...]
    close_channel: bool
    violation: Optional[ConformanceViolation]
    delay_s: float
    deliver: bool


@dataclass(frozen=True)
class EngineStats:
    endpoints: int
    msgs_in: int
    msgs_out: int
    violations: int
    open_channels: int
    per_endpoint: dict[str, EndpointCounters]
    handler_latency_us: tuple[int, ...]  # power-of-two buckets, 1us..~1s


_LATENCY_BUCKETS = 21  # 2^20 us ~= 1s top bucket


class Engine:
    """Owns the endpoint fleet and processes channel messages.

    Single-channel processing is synchronous and atomic from the caller's
    perspective; run it from one event loop (or hold your own lock) and
    per-endpoint serialization comes for free.
    """

    def __init__(self, violation_policy: str = VIOLATION_CLOSE, violation_log_cap: int = 10_000):
        if violation_policy not in (VIOLATION_CLOSE, VIOLATION_REJECT):
            raise ValueError(f"unknown violation policy {violation_policy!r}")
        self.violation_policy = violation_policy
        self.endpoints: dict[str, EndpointModel] = {}
        self.violations: list[ConformanceViolation] = []
        self._violation_log_cap = violation_log_cap
        self._next_channel_id = 1
        self._latency_buckets = [0] * _LATENCY_BUCKETS

    def register(self, model: EndpointModel) -> None:
        if model.id in self.endpoints:
            raise EngineError(f"endpoint {model.id!r} already registered")
        self.endpoints[model.id] = model

    def get_model(self, endpoint_id: str) -> EndpointModel:
        model = self.endpoints.get(endpoint_id)
        if model is None:
            raise EndpointUnknownError(endpoint_id)
        return model

    # --- channels ---------------------------------------------------------

    def open_channel(self, endpoint_id: str) -> Channel:
        model = self.get_model(endpoint_id)
        if model.halted_reason is not None:
            raise EndpointHaltedError(endpoint_id, model.halted_reason)
        channel = Channel(
            channel_id=self._next_channel_id,
            endpoint_id=endpoint_id,
            protocol_state=model.protocol.root,
        )
        self._next_channel_id += 1
        model.counters.open_channels += 1
        return channel

    def close_channel(self, channel: Channel) -> None:
        if channel.closed:
            return
        channel.closed = True
        model = self.endpoints.get(channel.endpoint_id)
        if model is not None:
            model.counters.open_channels -= 1

    # --- request processing -------------------------------------------------

    def process_request(self, channel: Channel, msg: Message) -> ProcessResult:
        model = self.get_model(channel.endpoint_id)
        if model.halted_reason is not None:
            raise EndpointHaltedError(model.id, model.halted_reason)
        model.counters.msgs_in += 1
        ordinal = channel.request_ordinal
        channel.request_ordinal += 1

        # Reception conformance first: is this shape receivable right now?
        outcome = step(model.protocol, channel.protocol_state, recv(msg.shape))
        if isinstance(outcome, NoTransition):
            return self._reject(model, channel, msg, ordinal)
        assert isinstance(outcome, Progress)
        state = outcome.next

        t0 = time.perf_counter()
        try:
            result = handle_request(model.dispatch, msg, model.store)
        except NoHandlerError as exc:
            # Unreachable with load-time validation; still defended.
            model.halted_reason = str(exc)
            raise ModelIntegrityError(f"endpoint {model.id}: {exc}") from exc
        self._record_latency(time.perf_counter() - t0)

        # Transmission conformance: every response must be enabled, in order.
        for response in result.responses:
            out = step(model.protocol, state, xmit(response.shape))
            if isinstance(out, NoTransition):
                diagnostic = (
                    f"endpoint {model.id}: model emitted !{response.shape} "
                    f"not enabled at {render_term(state)}"
                )
                model.halted_reason = diagnostic
                raise ModelIntegrityError(diagnostic)
            assert isinstance(out, Progress)
            state = out.next
        channel.protocol_state = state

        if result.updated_store is not None:
            model.store = result.updated_store
        model.counters.msgs_out += len(result.responses)
        if result.close_channel:
            channel.closing = True

        delay_s, deliver = apply_faults(
            model.faults,
            result.responses,
            endpoint_id=model.id,
            channel_id=channel.channel_id,
            ordinal=ordinal,
        )
        return ProcessResult(result.responses, result.close_channel, None, delay_s, deliver)

    def _reject(
        self, model: EndpointModel, channel: Channel, msg: Message, ordinal: int
    ) -> ProcessResult:
        violation = self.record_violation(
            model,
            channel.channel_id,
            recv(msg.shape),
            render_term(channel.protocol_state),
            detail="reception not enabled by protocol state",
        )
        if self.violation_policy == VIOLATION_REJECT:
            response_shape = _REJECT_RESPONSE_SHAPES.get(msg.shape)
            if response_shape is not None:
                response = result_message(
                    response_shape,
                    msg.correlation_id,
                    PROTOCOL_ERROR,
                    diagnostic=b"request not allowed by protocol state",
                )
                model.counters.msgs_out += 1
                # The error reply is an off-model emission: protocol state is
                # deliberately left where it was.
                return ProcessResult((response,), False, violation, 0.0, True)
        return ProcessResult((), True, violation, 0.0, True)

    def record_violation(
        self,
        model: EndpointModel,
        channel_id: int,
        event: Optional[Event],
        state_summary: str,
        detail: str = "",
    ) -> ConformanceViolation:
        violation = ConformanceViolation(
            endpoint_id=model.id,
            channel_id=channel_id,
            event=event,
            state_summary=state_summary,
            timestamp=time.time(),
            detail=detail,
        )
        model.counters.violations += 1
        if len(self.violations) < self._violation_log_cap:
            self.violations.append(violation)
        return violation

    # --- stats --------------------------------------------------------------

    def _record_latency(self, seconds: float) -> None:
        us = max(1, int(seconds * 1e6))
        bucket = min(us.bit_length() - 1, _LATENCY_BUCKETS - 1)
        self._latency_buckets[bucket] += 1

    def stats(self) -> EngineStats:
        per_endpoint = {
            eid: EndpointCounters(
                c.counters.msgs_in,
                c.counters.msgs_out,
                c.counters.violations,
                c.counters.open_channels,
            )
            for eid, c in self.endpoints.items()
        }
        return EngineStats(
            endpoints=len(self.endpoints),
            msgs_in=sum(c.msgs_in for c in per_endpoint.values()),
            msgs_out=sum(c.msgs_out for c in per_endpoint.values()),
            violations=sum(c.violations for c in per_endpoint.values()),
            open_channels=sum(c.open_channels for c in per_endpoint.values()),
            per_endpoint=per_endpoint,
            handler_latency_us=tuple(self._latency_buckets),
        )
