"""Workload driver: an honest external LDAP client that exercises a fleet.

Each worker thread owns a disjoint slice of the endpoints and walks every one
through the nine-step account-management workload — connect, bind, full
directory search, add a user, subtree search, password modify, verification
search, delete, unbind — validating response content (entry counts, the
modified password being visible) rather than just result codes. Requests on a
connection are strictly synchronous.

The driver shares the wire codec with the emulator but nothing else: all
traffic goes through real sockets, and expectations about the seeded
directory come from the published seeding recipe, not from engine internals.
"""

from __future__ import annotations

import argparse
import csv
import socket
import statistics
import sys
import threading
import time
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from . import datastore
from .ber import DEFAULT_MAX_FRAME, CodecError
from .datastore import DistinguishedName, people_dn, person_attributes, person_dn
from .ldapcodec import (
    SUCCESS,
    Equality,
    Filter,
    Present,
    SearchScope,
    decode,
    encode,
    filter_to_value,
    frame_stream,
    result_code,
)
from .message import Assoc, Base, Enumerated, Message, Seq, lookup_assoc

STEP_NAMES = (
    "connect",
    "bind",
    "search_all",
    "add",
    "search_subtree",
    "modify",
    "search_verify",
    "delete",
    "unbind",
)

CSV_HEADER = (
    ["endpoint", "verdict"]
    + [f"step{i}_ms" for i in range(1, 10)]
    + ["msgs_sent", "msgs_received", "total_ms"]
)


class WorkloadFailure(Exception):
    def __init__(self, step: int, reason: str):
        super().__init__(f"step{step} ({STEP_NAMES[step - 1]}): {reason}")
        self.step = step
        self.reason = reason


@dataclass(frozen=True)
class WorkloadSpec:
    host: str = "127.0.0.1"
    base_port: int = 20000
    endpoints: int = 1
    addresses: tuple[str, ...] = ()  # multi-ip targets; overrides host/port range
    threads: int = 1
    timeout_s: float = 60.0
    seed_users: int = 100
    base_dn: str = "o=acme"
    admin_dn: str = "cn=admin,o=acme"
    admin_password: bytes = b"secret"

    def targets(self) -> list[tuple[str, str, int]]:
        """(endpoint label, host, port) per endpoint, in index order."""
        if self.addresses:
            return [
                (f"{addr}:{self.base_port}", addr, self.base_port)
                for addr in self.addresses
            ]
        return [
            (f"{self.host}:{self.base_port + i}", self.host, self.base_port + i)
            for i in range(self.endpoints)
        ]


@dataclass
class EndpointReport:
    endpoint: str
    verdict: str  # "pass" or "fail:stepN:<reason>"
    step_ms: tuple[float, ...]  # 9 entries, 0.0 for steps never reached
    messages_sent: int
    messages_received: int
    total_ms: float

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


@dataclass
class Aggregate:
    endpoints: int = 0
    passed: int = 0
    failed: int = 0
    messages_sent: int = 0
    messages_received: int = 0
    median_total_ms: float = 0.0
    mean_total_ms: float = 0.0
    max_total_ms: float = 0.0
    median_step_ms: tuple[float, ...] = (0.0,) * 9

    @property
    def all_passed(self) -> bool:
        return self.endpoints > 0 and self.failed == 0


class LdapClient:
    """Minimal synchronous LDAP client over the shared codec."""

    def __init__(self, host: str, port: int, timeout_s: float = 60.0,
                 max_frame: int = DEFAULT_MAX_FRAME):
        self.sock = socket.create_connection((host, port), timeout=timeout_s)
        self.sock.settimeout(timeout_s)
        self.max_frame = max_frame
        self.buffer = b""
        self.next_id = 1
        self.sent = 0
        self.received = 0

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass

    def __enter__(self) -> "LdapClient":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def send(self, shape: str, values: Iterable) -> int:
        mid = self.next_id
        self.next_id += 1
        self.sock.sendall(encode(Message(shape, tuple(values), correlation_id=mid)))
        self.sent += 1
        return mid

    def recv_message(self) -> Message:
        while True:
            frames, self.buffer = frame_stream(self.buffer, self.max_frame)
            if frames:
                if len(frames) > 1:
                    # keep any extra complete frames buffered as raw bytes
                    self.buffer = b"".join(frames[1:]) + self.buffer
                self.received += 1
                return decode(frames[0], self.max_frame)
            data = self.sock.recv(65536)
            if not data:
                raise ConnectionError("server closed the connection")
            self.buffer += data

    def _expect_result(self, shape: str, mid: int) -> Message:
        msg = self.recv_message()
        if msg.shape != shape:
            raise ConnectionError(f"expected {shape}, got {msg.shape}")
        if msg.correlation_id != mid:
            raise ConnectionError(
                f"correlation id mismatch: sent {mid}, got {msg.correlation_id}"
            )
        return msg

    # --- operations --------------------------------------------------------

    def bind(self, dn: str = "", password: bytes = b"") -> int:
        mid = self.send(
            "BindRq",
            (
                Assoc("version", Base(3)),
                Assoc("name", Base(dn.encode())),
                Assoc("authentication", Assoc("simple", Base(password))),
            ),
        )
        code = result_code(self._expect_result("BindRes", mid))
        return -1 if code is None else code

    def search(
        self,
        base: str,
        scope: int,
        flt: Filter,
        attributes: Sequence[str] = (),
    ) -> tuple[list[Message], int]:
        """Returns (entries, result code of the final done message)."""
        mid = self.send(
            "SearchRq",
            (
                Assoc("baseObject", Base(base.encode())),
                Assoc("scope", Base(Enumerated(scope))),
                Assoc("filter", filter_to_value(flt)),
                Assoc("attributes", Seq(tuple(Base(a.encode()) for a in attributes))),
            ),
        )
        entries: list[Message] = []
        while True:
            msg = self.recv_message()
            if msg.correlation_id != mid:
                raise ConnectionError(
                    f"correlation id mismatch: sent {mid}, got {msg.correlation_id}"
                )
            if msg.shape == "SearchEntry":
                entries.append(msg)
                continue
            if msg.shape == "SearchDone":
                code = result_code(msg)
                return entries, -1 if code is None else code
            raise ConnectionError(f"unexpected {msg.shape} during search")

    def add(self, dn: str, attributes: dict[str, tuple[bytes, ...]]) -> int:
        attr_value = Seq(
            tuple(
                Assoc(name, Seq(tuple(Base(v) for v in values)))
                for name, values in attributes.items()
            )
        )
        mid = self.send(
            "AddRq", (Assoc("entry", Base(dn.encode())), Assoc("attributes", attr_value))
        )
        code = result_code(self._expect_result("AddRes", mid))
        return -1 if code is None else code

    def modify_replace(self, dn: str, attr: str, values: tuple[bytes, ...]) -> int:
        changes = Seq(
            (Assoc("replace", Assoc(attr, Seq(tuple(Base(v) for v in values)))),)
        )
        mid = self.send(
            "ModRq", (Assoc("entry", Base(dn.encode())), Assoc("changes", changes))
        )
        code = result_code(self._expect_result("ModRes", mid))
        return -1 if code is None else code

    def delete(self, dn: str) -> int:
        mid = self.send("DelRq", (Assoc("entry", Base(dn.encode())),))
        code = result_code(self._expect_result("DelRes", mid))
        return -1 if code is None else code

    def unbind(self) -> None:
        """Send the unbind and wait for the server to drop the connection,
        so the full request sequence is known-processed on return."""
        self.send("UnbindRq", ())
        try:
            while self.sock.recv(4096):
                pass
        except (ConnectionError, OSError):
            pass


def expected_subtree_matches(seed_users: int) -> int:
    """How many entries the step-5 subtree search returns: seeded users whose
    surname is the first in the cycle, plus the scratch user when its index
    lands on the same surname."""
    return sum(1 for k in range(seed_users + 1) if k % len(datastore.SURNAMES) == 0)


def expected_messages_per_endpoint(seed_users: int) -> int:
    """Total wire messages (both directions) one endpoint exchanges over the
    full workload; derived from the seeding recipe."""
    requests = 8
    responses = (
        1  # bind result
        + (seed_users + 2) + 1  # full-directory entries + done
        + 1  # add result
        + expected_subtree_matches(seed_users) + 1  # subtree entries + done
        + 1  # modify result
        + 1 + 1  # verification entry + done
        + 1  # delete result
        + 0  # unbind has no response
    )
    return requests + responses


def _entry_dns(entries: list[Message]) -> list[str]:
    out = []
    for e in entries:
        name = lookup_assoc(e, "objectName")
        if isinstance(name, Base) and isinstance(name.scalar, bytes):
            out.append(name.scalar.decode("utf-8", "replace"))
    return out


def _entry_attr(entry: Message, attr: str) -> tuple[bytes, ...]:
    attrs = lookup_assoc(entry, "attributes")
    if not isinstance(attrs, Seq):
        return ()
    for item in attrs.items:
        if (
            isinstance(item, Assoc)
            and item.label.lower() == attr.lower()
            and isinstance(item.inner, Seq)
        ):
            return tuple(
                v.scalar
                for v in item.inner.items
                if isinstance(v, Base) and isinstance(v.scalar, bytes)
            )
    return ()


def run_endpoint_workload(
    spec: WorkloadSpec, label: str, host: str, port: int, index: int
) -> EndpointReport:
    """Drive the nine steps against one endpoint and validate every response."""
    step_ms = [0.0] * 9
    client: Optional[LdapClient] = None
    started = time.perf_counter()
    base_dn = DistinguishedName.parse(spec.base_dn)
    scratch_dn = person_dn(base_dn, spec.seed_users).canonical()
    new_password = f"rotated-{index}".encode()

    def timed(step: int, fn):
        t0 = time.perf_counter()
        result = fn()
        step_ms[step - 1] = (time.perf_counter() - t0) * 1000.0
        return result

    def run() -> None:
        nonlocal client
        # (1) connect
        try:
            client = timed(1, lambda: LdapClient(host, port, spec.timeout_s))
        except OSError as exc:
            raise WorkloadFailure(1, f"connect failed: {exc}") from None
        # (2) bind as the configured administrator
        code = timed(2, lambda: client.bind(spec.admin_dn, spec.admin_password))
        if code != SUCCESS:
            raise WorkloadFailure(2, f"bind result {code}")
        # (3) retrieve the whole directory
        entries, code = timed(
            3,
            lambda: client.search(
                spec.base_dn, SearchScope.WHOLE_SUBTREE, Present("objectClass")
            ),
        )
        if code != SUCCESS:
            raise WorkloadFailure(3, f"search result {code}")
        expected = spec.seed_users + 2
        if len(entries) != expected:
            raise WorkloadFailure(3, f"entry count {len(entries)} != {expected}")
        # (4) add a scratch user
        attrs = person_attributes(spec.seed_users, index)
        code = timed(4, lambda: client.add(scratch_dn, attrs))
        if code != SUCCESS:
            raise WorkloadFailure(4, f"add result {code}")
        # (5) search one sub-tree (first surname of the cycle)
        surname = datastore.SURNAMES[0].encode()
        entries, code = timed(
            5,
            lambda: client.search(
                people_dn(base_dn).canonical(),
                SearchScope.SINGLE_LEVEL,
                Equality("sn", surname),
            ),
        )
        if code != SUCCESS:
            raise WorkloadFailure(5, f"search result {code}")
        expected = expected_subtree_matches(spec.seed_users)
        if len(entries) != expected:
            raise WorkloadFailure(5, f"entry count {len(entries)} != {expected}")
        # (6) modify the scratch user's password
        code = timed(
            6, lambda: client.modify_replace(scratch_dn, "userPassword", (new_password,))
        )
        if code != SUCCESS:
            raise WorkloadFailure(6, f"modify result {code}")
        # (7) verify the modification is visible through search
        entries, code = timed(
            7,
            lambda: client.search(
                spec.base_dn,
                SearchScope.WHOLE_SUBTREE,
                Equality("userPassword", new_password),
            ),
        )
        if code != SUCCESS:
            raise WorkloadFailure(7, f"search result {code}")
        if len(entries) != 1:
            raise WorkloadFailure(7, f"entry count {len(entries)} != 1")
        if _entry_dns(entries) != [scratch_dn]:
            raise WorkloadFailure(7, f"wrong entry {_entry_dns(entries)}")
        if _entry_attr(entries[0], "userPassword") != (new_password,):
            raise WorkloadFailure(7, "modified password not visible")
        # (8) delete the scratch user
        code = timed(8, lambda: client.delete(scratch_dn))
        if code != SUCCESS:
            raise WorkloadFailure(8, f"delete result {code}")
        # (9) unbind
        timed(9, lambda: client.unbind())

    verdict = "pass"
    try:
        run()
    except WorkloadFailure as exc:
        verdict = f"fail:step{exc.step}:{exc.reason}"
    except (socket.timeout, TimeoutError):
        step = 1 + sum(1 for ms in step_ms if ms > 0)
        verdict = f"fail:step{min(step, 9)}:timeout"
    except (ConnectionError, OSError, CodecError) as exc:
        step = 1 + sum(1 for ms in step_ms if ms > 0)
        verdict = f"fail:step{min(step, 9)}:{exc}"
    finally:
        sent = client.sent if client else 0
        received = client.received if client else 0
        if client:
            client.close()
    total_ms = (time.perf_counter() - started) * 1000.0
    return EndpointReport(
        endpoint=label,
        verdict=verdict,
        step_ms=tuple(step_ms),
        messages_sent=sent,
        messages_received=received,
        total_ms=total_ms,
    )


def run_workload(spec: WorkloadSpec) -> tuple[list[EndpointReport], Aggregate]:
    """Run the workload over every endpoint, partitioned round-robin across
    worker threads; per-endpoint failures are recorded, not raised."""
    if spec.threads < 1:
        raise ValueError("threads must be >= 1")
    targets = list(enumerate(spec.targets()))
    reports: list[Optional[EndpointReport]] = [None] * len(targets)

    def worker(thread_index: int) -> None:
        for i, (label, host, port) in targets[thread_index :: spec.threads]:
            reports[i] = run_endpoint_workload(spec, label, host, port, i)

    threads = [
        threading.Thread(target=worker, args=(t,), name=f"loadgen-{t}")
        for t in range(min(spec.threads, max(1, len(targets))))
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    done = [r for r in reports if r is not None]
    done.sort(key=lambda r: r.endpoint)
    return done, aggregate_reports(done)


def aggregate_reports(reports: list[EndpointReport]) -> Aggregate:
    if not reports:
        return Aggregate()
    totals = [r.total_ms for r in reports]
    return Aggregate(
        endpoints=len(reports),
        passed=sum(1 for r in reports if r.passed),
        failed=sum(1 for r in reports if not r.passed),
        messages_sent=sum(r.messages_sent for r in reports),
        messages_received=sum(r.messages_received for r in reports),
        median_total_ms=statistics.median(totals),
        mean_total_ms=statistics.fmean(totals),
        max_total_ms=max(totals),
        median_step_ms=tuple(
            statistics.median(r.step_ms[i] for r in reports) for i in range(9)
        ),
    )


def emit_csv(reports: list[EndpointReport], path: str) -> None:
    """One row per endpoint (sorted), then a trailing aggregate row carrying
    the median step latencies and the median total."""
    agg = aggregate_reports(reports)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in sorted(reports, key=lambda r: r.endpoint):
            writer.writerow(
                [r.endpoint, r.verdict]
                + [f"{ms:.3f}" for ms in r.step_ms]
                + [r.messages_sent, r.messages_received, f"{r.total_ms:.3f}"]
            )
        writer.writerow(
            ["aggregate", "pass" if agg.all_passed else "fail"]
            + [f"{ms:.3f}" for ms in agg.median_step_ms]
            + [agg.messages_sent, agg.messages_received, f"{agg.median_total_ms:.3f}"]
        )


# --- conformance probe ---------------------------------------------------------


@dataclass(frozen=True)
class ProbeFinding:
    name: str
    ok: bool
    detail: str


@dataclass
class ProbeReport:
    findings: list[ProbeFinding] = field(default_factory=list)

    @property
    def all_ok(self) -> bool:
        return all(f.ok for f in self.findings)


def _probe_rejected(client: LdapClient) -> tuple[bool, str]:
    """After sending an out-of-protocol frame: success means the server either
    closed the connection or answered protocolError."""
    try:
        msg = client.recv_message()
    except (ConnectionError, socket.timeout, TimeoutError, OSError) as exc:
        return True, f"connection closed ({exc})"
    code = result_code(msg)
    if code is not None and code != SUCCESS:
        return True, f"rejected with {msg.shape} result {code}"
    return False, f"server answered {msg.shape} result {code}"


def conformance_probe(host: str, port: int, timeout_s: float = 10.0) -> ProbeReport:
    """Send deliberately out-of-protocol traffic and check the server's
    violation policy engages; includes a well-formed control case."""
    report = ProbeReport()

    # Control: a well-formed anonymous bind must be accepted.
    try:
        with LdapClient(host, port, timeout_s) as client:
            code = client.bind()
            report.findings.append(
                ProbeFinding(
                    "control-bind",
                    code == SUCCESS,
                    f"bind result {code}",
                )
            )
    except (ConnectionError, OSError) as exc:
        report.findings.append(ProbeFinding("control-bind", False, str(exc)))

    # A client has no business sending a server-only shape.
    try:
        with LdapClient(host, port, timeout_s) as client:
            client.send(
                "SearchEntry",
                (
                    Assoc("objectName", Base(b"o=bogus")),
                    Assoc("attributes", Seq(())),
                ),
            )
            ok, detail = _probe_rejected(client)
            report.findings.append(ProbeFinding("client-sent-entry", ok, detail))
    except (ConnectionError, OSError) as exc:
        report.findings.append(ProbeFinding("client-sent-entry", True, str(exc)))

    # Nothing may follow an unbind on the same connection.
    try:
        with LdapClient(host, port, timeout_s) as client:
            code = client.bind()
            client.unbind()
            time.sleep(0.05)
            try:
                client.bind()
                report.findings.append(
                    ProbeFinding(
                        "frame-after-unbind", False, "server answered after unbind"
                    )
                )
            except (ConnectionError, OSError) as exc:
                report.findings.append(
                    ProbeFinding("frame-after-unbind", True, f"rejected ({exc})")
                )
    except (ConnectionError, OSError) as exc:
        report.findings.append(ProbeFinding("frame-after-unbind", True, str(exc)))

    return report


# --- command line ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loadgen", description="Workload driver for emulated service fleets."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the nine-step workload over a fleet")
    run.add_argument("--host", default="127.0.0.1")
    run.add_argument("--base-port", type=int, default=20000)
    run.add_argument("--endpoints", type=int, default=1)
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--seed-users", type=int, default=100)
    run.add_argument("--csv", help="write per-endpoint results to this file")
    run.add_argument("--timeout-ms", type=int, default=60000)
    run.add_argument("--base-dn", default="o=acme")
    run.add_argument("--admin-dn", default="cn=admin,o=acme")
    run.add_argument("--admin-password", default="secret")

    probe = sub.add_parser("probe", help="probe a server's conformance checking")
    probe.add_argument("--host", default="127.0.0.1")
    probe.add_argument("--port", type=int, required=True)
    probe.add_argument("--timeout-ms", type=int, default=10000)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "probe":
        report = conformance_probe(args.host, args.port, args.timeout_ms / 1000.0)
        for f in report.findings:
            print(f"{'ok  ' if f.ok else 'FAIL'} {f.name}: {f.detail}")
        return 0 if report.all_ok else 1

    spec = WorkloadSpec(
        host=args.host,
        base_port=args.base_port,
        endpoints=args.endpoints,
        threads=args.threads,
        timeout_s=args.timeout_ms / 1000.0,
        seed_users=args.seed_users,
        base_dn=args.base_dn,
        admin_dn=args.admin_dn,
        admin_password=args.admin_password.encode(),
    )
    reports, agg = run_workload(spec)
    if args.csv:
        emit_csv(reports, args.csv)
    for r in reports:
        if not r.passed:
            print(f"{r.endpoint}: {r.verdict}", file=sys.stderr)
    print(
        f"{agg.passed}/{agg.endpoints} pass; "
        f"median {agg.median_total_ms:.1f} ms, mean {agg.mean_total_ms:.1f} ms, "
        f"max {agg.max_total_ms:.1f} ms; "
        f"messages {agg.messages_sent} sent / {agg.messages_received} received"
    )
    return 0 if agg.all_passed else 1


if __name__ == "__main__":
    sys.exit(main())
