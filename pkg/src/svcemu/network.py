"""Native TCP front: one listener per endpoint, one conduit per connection.

A conduit translates both ways between wire frames and engine messages: bytes
are framed incrementally (any TCP chunking works), decoded, run through the
engine, and the response sequence is encoded and written back in order.
Pipelined requests on one connection are processed strictly in arrival order,
so per-channel responses can never interleave. Idle endpoints cost one
listening socket and nothing else.

Startup is all-or-nothing: if any binding fails, everything already bound is
torn down and the error names the offending binding. The fleet raises the
process file-descriptor limit when the configured fleet needs more than the
current soft limit allows.
"""

from __future__ import annotations

import asyncio
import errno
import logging
import resource
from dataclasses import dataclass

from .ber import DEFAULT_MAX_FRAME, CodecError
from .engine import EndpointHaltedError, Engine, ModelIntegrityError
from .ldapcodec import decode, encode, frame_stream

log = logging.getLogger(__name__)

DEFAULT_WRITE_TIMEOUT = 30.0
FD_HEADROOM = 128


@dataclass(frozen=True)
class NativeBinding:
    endpoint_id: str
    address: str
    port: int


class FleetStartupError(Exception):
    pass


class AddressInUseError(FleetStartupError):
    def __init__(self, binding: NativeBinding):
        super().__init__(f"address in use: {binding.address}:{binding.port} "
                         f"(endpoint {binding.endpoint_id})")
        self.binding = binding


class PermissionDeniedError(FleetStartupError):
    def __init__(self, binding: NativeBinding):
        super().__init__(f"permission denied binding {binding.address}:{binding.port} "
                         f"(endpoint {binding.endpoint_id})")
        self.binding = binding


class FdLimitError(FleetStartupError):
    def __init__(self, needed: int, available: int):
        super().__init__(
            f"fleet needs ~{needed} file descriptors but only {available} are "
            f"available; raise the limit (ulimit -n / RLIMIT_NOFILE) or shrink "
            f"the fleet"
        )
        self.needed = needed
        self.available = available


def required_fd_budget(listener_count: int, peak_connections: int = 1024) -> int:
    """Listeners plus expected peak concurrent connections plus slack."""
    return listener_count + peak_connections + FD_HEADROOM


def ensure_fd_limit(needed: int) -> int:
    """Raise the soft RLIMIT_NOFILE to ``needed`` if necessary and possible.
    Returns the resulting soft limit; raises FdLimitError when even the hard
    limit cannot accommodate the fleet."""
    soft, hard = resource.getrlimit(resource.RLIMIT_NOFILE)
    if soft >= needed:
        return soft
    if hard != resource.RLIM_INFINITY and hard < needed:
        raise FdLimitError(needed, hard)
    resource.setrlimit(resource.RLIMIT_NOFILE, (needed, hard))
    return needed


class Fleet:
    """A running set of listeners bound to an engine."""

    def __init__(
        self,
        engine: Engine,
        bindings: list[NativeBinding],
        max_frame: int = DEFAULT_MAX_FRAME,
        write_timeout: float = DEFAULT_WRITE_TIMEOUT,
    ):
        self.engine = engine
        self.bindings = list(bindings)
        self.max_frame = max_frame
        self.write_timeout = write_timeout
        self.servers: list[asyncio.AbstractServer] = []
        self.fd_budget = required_fd_budget(len(bindings))
        self._conduits: set[asyncio.Task] = set()
        self._stopped = False

    async def start(self) -> None:
        seen = set()
        for b in self.bindings:
            key = (b.address, b.port)
            if key in seen:
                raise FleetStartupError(
                    f"duplicate binding {b.address}:{b.port} (endpoint {b.endpoint_id})"
                )
            seen.add(key)
        ensure_fd_limit(self.fd_budget)

        async def open_one(binding: NativeBinding) -> asyncio.AbstractServer:
            def on_connect(reader, writer, _binding=binding):
                task = asyncio.ensure_future(
                    self._conduit(_binding.endpoint_id, reader, writer)
                )
                self._conduits.add(task)
                task.add_done_callback(self._conduits.discard)

            return await asyncio.start_server(on_connect, binding.address, binding.port)

        results = await asyncio.gather(
            *(open_one(b) for b in self.bindings), return_exceptions=True
        )
        failure: Exception | None = None
        failed_binding: NativeBinding | None = None
        for binding, outcome in zip(self.bindings, results):
            if isinstance(outcome, Exception):
                if failure is None:
                    failure = outcome
                    failed_binding = binding
            else:
                self.servers.append(outcome)
        if failure is not None:
            await self._close_servers()
            assert failed_binding is not None
            raise _map_bind_error(failure, failed_binding) from failure

    async def _close_servers(self) -> None:
        servers, self.servers = self.servers, []
        for server in servers:
            server.close()
        for server in servers:
            await server.wait_closed()

    async def stop(self) -> None:
        if self._stopped:
            return
        self._stopped = True
        await self._close_servers()
        tasks = list(self._conduits)
        for task in tasks:
            task.cancel()
        if tasks:
            await asyncio.gather(*tasks, return_exceptions=True)

    # --- per-connection loop -------------------------------------------------

    async def _conduit(
        self, endpoint_id: str, reader: asyncio.StreamReader, writer: asyncio.StreamWriter
    ) -> None:
        try:
            channel = self.engine.open_channel(endpoint_id)
        except EndpointHaltedError:
            writer.close()
            return
        model = self.engine.get_model(endpoint_id)
        buffer = b""
        try:
            while True:
                data = await reader.read(65536)
                if not data:
                    break
                buffer += data
                try:
                    frames, buffer = frame_stream(buffer, self.max_frame)
                except CodecError as exc:
                    self.engine.record_violation(
                        model, channel.channel_id, None, "(framing)", detail=str(exc)
                    )
                    break
                done = False
                for frame in frames:
                    try:
                        msg = decode(frame, self.max_frame)
                    except CodecError as exc:
                        self.engine.record_violation(
                            model, channel.channel_id, None, "(decode)", detail=str(exc)
                        )
                        done = True
                        break
                    result = self.engine.process_request(channel, msg)
                    if result.responses and result.deliver:
                        if result.delay_s > 0:
                            await asyncio.sleep(result.delay_s)
                        payload = b"".join(
                            encode(r, self.max_frame) for r in result.responses
                        )
                        writer.write(payload)
                        await asyncio.wait_for(writer.drain(), self.write_timeout)
                    if result.close_channel:
                        done = True
                        break
                if done:
                    break
        except (ConnectionResetError, BrokenPipeError, asyncio.TimeoutError):
            pass  # peer went away or stopped reading; clean teardown below
        except asyncio.CancelledError:
            raise
        except (ModelIntegrityError, EndpointHaltedError) as exc:
            log.critical("%s", exc)
        finally:
            self.engine.close_channel(channel)
            try:
                if writer.can_write_eof():
                    writer.write_eof()
            except OSError:
                pass
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionResetError, BrokenPipeError, OSError):
                pass


def _map_bind_error(exc: Exception, binding: NativeBinding) -> Exception:
    if isinstance(exc, OSError):
        if exc.errno == errno.EADDRINUSE:
            return AddressInUseError(binding)
        if exc.errno in (errno.EACCES, errno.EPERM):
            return PermissionDeniedError(binding)
        if exc.errno in (errno.EMFILE, errno.ENFILE):
            soft, _ = resource.getrlimit(resource.RLIMIT_NOFILE)
            return FdLimitError(required_fd_budget(1), soft)
    return FleetStartupError(
        f"failed to bind {binding.address}:{binding.port} "
        f"(endpoint {binding.endpoint_id}): {exc}"
    )


async def start_listeners(
    engine: Engine,
    bindings: list[NativeBinding],
    max_frame: int = DEFAULT_MAX_FRAME,
    write_timeout: float = DEFAULT_WRITE_TIMEOUT,
) -> Fleet:
    """Bind every listener and return the running fleet handle."""
    fleet = Fleet(engine, bindings, max_frame=max_frame, write_timeout=write_timeout)
    await fleet.start()
    return fleet
