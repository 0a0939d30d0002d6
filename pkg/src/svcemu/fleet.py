"""Fleet configuration, construction, and lifecycle.

A fleet is ``endpoint_count`` identically-shaped endpoint models, each seeded
deterministically from its index and bound to its own socket address —
loopback plus a contiguous port range by default, or one address per endpoint
in multi-ip mode. Configuration is one strict-schema JSON document; every
flag the CLI accepts overrides its file counterpart.

Stats are line-oriented JSON so long runs can be tailed: one line per
interval plus a final snapshot on shutdown.
"""

from __future__ import annotations

import asyncio
import json
import signal
import sys
import threading
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Optional, TextIO

from .behavior import EndpointCredentials, build_ldap_dispatch
from .ber import DEFAULT_MAX_FRAME
from .datastore import DistinguishedName, seed_store
from .engine import Engine, EndpointModel, FaultPolicy, VIOLATION_CLOSE, VIOLATION_REJECT
from .network import NativeBinding, start_listeners
from .protocol import ProtocolSpec, build_ldap_protocol, parse_protocol

PORT_RANGE = "port-range"
MULTI_IP = "multi-ip"


class ConfigError(Exception):
    def __init__(self, field: str, reason: str):
        super().__init__(f"config field {field!r}: {reason}")
        self.field = field
        self.reason = reason


@dataclass
class FleetConfig:
    endpoint_count: int = 1
    base_port: int = 20000
    host: str = "127.0.0.1"
    address_mode: str = PORT_RANGE
    addresses: tuple[str, ...] = ()
    protocol_file: str = "ldap"
    seed_users: int = 100
    base_dn: str = "o=acme"
    admin_dn: str = "cn=admin,o=acme"
    admin_password: str = "secret"
    max_delay_ms: int = 0
    drop_probability: float = 0.0
    fault_seed: int = 0
    violation_policy: str = VIOLATION_CLOSE
    max_frame_size: int = DEFAULT_MAX_FRAME
    stats_interval: float = 10.0

    def validate(self) -> None:
        if self.endpoint_count < 1:
            raise ConfigError("endpoint_count", "must be >= 1")
        if not 1 <= self.base_port <= 65535:
            raise ConfigError("base_port", "must be within 1..65535")
        if self.address_mode not in (PORT_RANGE, MULTI_IP):
            raise ConfigError("address_mode", f"must be {PORT_RANGE!r} or {MULTI_IP!r}")
        if self.address_mode == PORT_RANGE:
            if self.base_port + self.endpoint_count > 65536:
                raise ConfigError(
                    "endpoint_count",
                    f"port range {self.base_port}..{self.base_port + self.endpoint_count - 1} "
                    f"does not fit below 65536",
                )
        else:
            if len(self.addresses) < self.endpoint_count:
                raise ConfigError(
                    "addresses",
                    f"multi-ip mode needs one address per endpoint "
                    f"({len(self.addresses)} given, {self.endpoint_count} needed)",
                )
        if self.seed_users < 0:
            raise ConfigError("seed_users", "must be >= 0")
        if self.max_delay_ms < 0:
            raise ConfigError("max_delay_ms", "must be >= 0")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ConfigError("drop_probability", "must be within [0, 1]")
        if self.violation_policy not in (VIOLATION_CLOSE, VIOLATION_REJECT):
            raise ConfigError(
                "violation_policy", f"must be {VIOLATION_CLOSE!r} or {VIOLATION_REJECT!r}"
            )
        if self.max_frame_size < 64:
            raise ConfigError("max_frame_size", "must be >= 64")
        if self.stats_interval <= 0:
            raise ConfigError("stats_interval", "must be > 0")
        if self.protocol_file != "ldap" and not Path(self.protocol_file).is_file():
            raise ConfigError("protocol_file", f"file not found: {self.protocol_file}")
        try:
            DistinguishedName.parse(self.base_dn)
        except Exception as exc:
            raise ConfigError("base_dn", str(exc)) from None
        try:
            DistinguishedName.parse(self.admin_dn)
        except Exception as exc:
            raise ConfigError("admin_dn", str(exc)) from None


_FIELD_TYPES = {f.name: f.type for f in fields(FleetConfig)}


def config_from_dict(raw: dict[str, Any]) -> FleetConfig:
    cfg = FleetConfig()
    for key, value in raw.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(key, "unknown key (schema is strict)")
        if key == "addresses":
            if not isinstance(value, list) or not all(isinstance(a, str) for a in value):
                raise ConfigError(key, "must be a list of strings")
            value = tuple(value)
        elif key in ("drop_probability", "stats_interval"):
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(key, "must be a number")
            value = float(value)
        elif key in ("host", "address_mode", "protocol_file", "base_dn",
                     "admin_dn", "admin_password", "violation_policy"):
            if not isinstance(value, str):
                raise ConfigError(key, "must be a string")
        else:
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(key, "must be an integer")
        setattr(cfg, key, value)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> FleetConfig:
    """Load, default, and validate a fleet config file. Unknown keys and
    constraint violations name the offending field; JSON errors carry
    line/column."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            "(document)", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from None
    if not isinstance(raw, dict):
        raise ConfigError("(document)", "top level must be a JSON object")
    return config_from_dict(raw)


# --- fleet construction -------------------------------------------------------


def endpoint_id(index: int) -> str:
    return f"ep-{index:05d}"


def load_protocol(config: FleetConfig) -> ProtocolSpec:
    if config.protocol_file == "ldap":
        return build_ldap_protocol()
    return parse_protocol(Path(config.protocol_file).read_text(encoding="utf-8"))


def build_engine(config: FleetConfig) -> Engine:
    """Construct the engine with every endpoint registered and seeded."""
    config.validate()
    protocol = load_protocol(config)
    base_dn = DistinguishedName.parse(config.base_dn)
    credentials = EndpointCredentials(
        admin_dn=config.admin_dn, admin_password=config.admin_password.encode()
    )
    dispatch = build_ldap_dispatch(credentials)
    faults = FaultPolicy(
        max_delay_ms=config.max_delay_ms,
        drop_probability=config.drop_probability,
        seed=config.fault_seed,
    )
    engine = Engine(violation_policy=config.violation_policy)
    for i in range(config.endpoint_count):
        engine.register(
            EndpointModel(
                id=endpoint_id(i),
                protocol=protocol,
                dispatch=dispatch,
                store=seed_store(base_dn, config.seed_users, endpoint_index=i),
                faults=faults,
            )
        )
    return engine


def fleet_bindings(config: FleetConfig) -> list[NativeBinding]:
    if config.address_mode == MULTI_IP:
        return [
            NativeBinding(endpoint_id(i), config.addresses[i], config.base_port)
            for i in range(config.endpoint_count)
        ]
    return [
        NativeBinding(endpoint_id(i), config.host, config.base_port + i)
        for i in range(config.endpoint_count)
    ]


def _stats_line(engine: Engine) -> str:
    s = engine.stats()
    return json.dumps(
        {
            "t": round(time.time(), 3),
            "endpoints": s.endpoints,
            "msgs_in": s.msgs_in,
            "msgs_out": s.msgs_out,
            "violations": s.violations,
            "open_channels": s.open_channels,
        }
    )


async def serve(
    config: FleetConfig,
    out: TextIO = sys.stdout,
    stop_event: Optional[asyncio.Event] = None,
    install_signal_handlers: bool = True,
) -> int:
    """Run a fleet until a stop signal arrives; prints the ready line, the
    periodic stats lines, and a final snapshot. Returns the exit status."""
    engine = build_engine(config)
    bindings = fleet_bindings(config)
    started = time.perf_counter()
    fleet = await start_listeners(
        engine, bindings, max_frame=config.max_frame_size
    )
    stop = stop_event or asyncio.Event()
    if install_signal_handlers:
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGTERM, signal.SIGINT):
            loop.add_signal_handler(sig, stop.set)
    print(
        json.dumps(
            {
                "event": "ready",
                "endpoints": len(bindings),
                "base_port": config.base_port,
                "fd_budget": fleet.fd_budget,
                "startup_s": round(time.perf_counter() - started, 3),
            }
        ),
        file=out,
        flush=True,
    )
    try:
        while not stop.is_set():
            try:
                await asyncio.wait_for(stop.wait(), timeout=config.stats_interval)
            except asyncio.TimeoutError:
                print(_stats_line(engine), file=out, flush=True)
    finally:
        await fleet.stop()
        print(_stats_line(engine), file=out, flush=True)
    return 0


class FleetThread:
    """Run a fleet on a background event-loop thread.

    Gives synchronous code (tests, embedding applications) a running fleet
    with direct access to its engine for stats inspection.
    """

    def __init__(self, config: FleetConfig):
        self.config = config
        self.engine: Optional[Engine] = None
        self._loop: Optional[asyncio.AbstractEventLoop] = None
        self._thread: Optional[threading.Thread] = None
        self._stop_event: Optional[asyncio.Event] = None
        self._ready = threading.Event()
        self._error: Optional[BaseException] = None

    def __enter__(self) -> "FleetThread":
        self.start()
        return self

    def __exit__(self, *exc_info) -> None:
        self.stop()

    def start(self, timeout: float = 60.0) -> "FleetThread":
        def run() -> None:
            loop = asyncio.new_event_loop()
            asyncio.set_event_loop(loop)
            self._loop = loop
            self._stop_event = asyncio.Event()

            async def main() -> None:
                self.engine = build_engine(self.config)
                fleet = await start_listeners(
                    self.engine,
                    fleet_bindings(self.config),
                    max_frame=self.config.max_frame_size,
                )
                self._ready.set()
                try:
                    await self._stop_event.wait()
                finally:
                    await fleet.stop()

            try:
                loop.run_until_complete(main())
            except BaseException as exc:  # surfaced to start()/stop() callers
                self._error = exc
                self._ready.set()
            finally:
                loop.close()

        self._thread = threading.Thread(target=run, name="svcemu-fleet", daemon=True)
        self._thread.start()
        if not self._ready.wait(timeout):
            raise TimeoutError("fleet did not become ready in time")
        if self._error is not None:
            raise RuntimeError(f"fleet startup failed: {self._error}") from self._error
        return self

    def stop(self) -> None:
        if self._loop is None or self._stop_event is None or self._thread is None:
            return
        if self._thread.is_alive():
            self._loop.call_soon_threadsafe(self._stop_event.set)
        self._thread.join(timeout=30)
