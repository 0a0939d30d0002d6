"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with plain ``pytest`` (the criterion lines bypass capture so they are
always visible) or ``pytest tests/test_acceptance.py -v``.
"""

import csv
import json
import os
import random
import signal
import statistics
import subprocess
import sys
import time
from pathlib import Path

import pytest

from svcemu.ber import CodecError
from svcemu.engine import FaultPolicy
from svcemu.fleet import FleetConfig, FleetThread, endpoint_id
from svcemu.ldapcodec import decode, encode
from svcemu.loadgen import (
    WorkloadSpec,
    conformance_probe,
    expected_messages_per_endpoint,
    run_workload,
)
from svcemu.protocol import (
    build_ldap_protocol,
    enabled_events,
    enumerate_traces,
    recv,
    step_alternatives,
    xmit,
)

from oracles import check_ldap_trace, oracle_message_count, random_guarded_spec, random_message

MEMORY_BUDGET_KB = 130 * 1024  # 2x the derived per-endpoint budget at 1,000 endpoints


def criterion(n: int, ok: bool, detail: str) -> None:
    from conftest import acceptance_lines

    line = f"[acceptance {n}] {'PASS' if ok else 'FAIL'}: {detail}"
    acceptance_lines.append(line)
    print(line, flush=True)


def start_emulator_cli(args: list[str]) -> subprocess.Popen:
    return subprocess.Popen(
        [sys.executable, "-m", "svcemu.cli", "serve", *args],
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
    )


def wait_ready_line(proc: subprocess.Popen) -> dict:
    line = proc.stdout.readline()
    assert line, f"emulator exited early: {proc.stderr.read()}"
    ready = json.loads(line)
    assert ready.get("event") == "ready", line
    return ready


def terminate_cleanly(proc: subprocess.Popen, timeout: float = 30.0) -> int:
    proc.send_signal(signal.SIGTERM)
    try:
        proc.communicate(timeout=timeout)
    except subprocess.TimeoutExpired:
        proc.kill()
        proc.communicate()
    return proc.returncode


def run_loadgen_cli(args: list[str], timeout: float = 600.0) -> subprocess.CompletedProcess:
    return subprocess.run(
        [sys.executable, "-m", "svcemu.loadgen", "run", *args],
        capture_output=True,
        text=True,
        timeout=timeout,
    )


# --- criterion 1: desk-sized scale ------------------------------------------------


def test_criterion_1_scale_1000_endpoints(port_alloc, tmp_path):
    base = port_alloc(1000)
    t0 = time.perf_counter()
    proc = start_emulator_cli(
        ["--endpoints", "1000", "--base-port", str(base), "--stats-interval", "3600"]
    )
    try:
        ready = wait_ready_line(proc)
        startup = time.perf_counter() - t0
        assert ready["endpoints"] == 1000
        assert startup < 30.0, f"startup took {startup:.1f}s"

        out_csv = tmp_path / "scale.csv"
        result = run_loadgen_cli(
            [
                "--base-port", str(base), "--endpoints", "1000",
                "--threads", "32", "--csv", str(out_csv),
            ]
        )
        assert result.returncode == 0, result.stderr[-2000:]
        rows = list(csv.reader(out_csv.read_text().splitlines()))
        passes = sum(1 for row in rows[1:] if row[0] != "aggregate" and row[1] == "pass")
        code = terminate_cleanly(proc)
        ok = passes == 1000 and startup < 30.0 and code == 0
        criterion(
            1, ok, f"1000 endpoints up in {startup:.1f}s; {passes}/1000 pass verdicts "
                   f"with 32 client threads; clean shutdown rc={code}"
        )
        assert ok
    finally:
        if proc.poll() is None:
            proc.kill()


@pytest.mark.skipif(
    os.environ.get("SVCEMU_EXTENDED") != "1",
    reason="extended 10k-endpoint run; set SVCEMU_EXTENDED=1 (needs ~11k fds and several minutes)",
)
def test_criterion_1_extended_scale_10000_endpoints(tmp_path):
    base = 11000  # 11000..20999: fixed range below the ephemeral floor
    proc = start_emulator_cli(
        ["--endpoints", "10000", "--base-port", str(base), "--stats-interval", "3600"]
    )
    try:
        ready = wait_ready_line(proc)
        assert ready["endpoints"] == 10000
        out_csv = tmp_path / "scale10k.csv"
        result = run_loadgen_cli(
            ["--base-port", str(base), "--endpoints", "10000",
             "--threads", "32", "--csv", str(out_csv)],
            timeout=3600,
        )
        assert result.returncode == 0, result.stderr[-2000:]
        rows = list(csv.reader(out_csv.read_text().splitlines()))
        passes = sum(1 for row in rows[1:] if row[0] != "aggregate" and row[1] == "pass")
        code = terminate_cleanly(proc, timeout=120)
        ok = passes == 10000 and code == 0
        criterion(
            1, ok,
            f"extended: 10000 endpoints, {passes}/10000 pass verdicts, shutdown rc={code}",
        )
        assert ok
    finally:
        if proc.poll() is None:
            proc.kill()


# --- criterion 2: latency shape across fleet sizes --------------------------------


def test_criterion_2_latency_invariance(port_alloc):
    medians: dict[int, float] = {}
    for size in (1, 100, 1000):
        base = port_alloc(size)
        config = FleetConfig(endpoint_count=size, base_port=base, stats_interval=3600)
        with FleetThread(config):
            totals: list[float] = []
            repeats = 15 if size == 1 else 1
            for _ in range(repeats):
                reports, agg = run_workload(
                    WorkloadSpec(base_port=base, endpoints=size, threads=1)
                )
                assert agg.all_passed, [r.verdict for r in reports if not r.passed][:3]
                totals.extend(r.total_ms for r in reports)
            medians[size] = statistics.median(totals)
    m1 = medians[1]
    ok = medians[100] <= 2 * m1 and medians[1000] <= 2 * m1
    criterion(
        2, ok,
        f"median per-endpoint workload ms at fleet 1/100/1000 = "
        f"{m1:.2f}/{medians[100]:.2f}/{medians[1000]:.2f} "
        f"(bound: 2x single-endpoint median = {2 * m1:.2f})",
    )
    assert ok


# --- criterion 3: memory budget ----------------------------------------------------


def _vm_rss_kb(pid: int) -> int:
    for line in Path(f"/proc/{pid}/status").read_text().splitlines():
        if line.startswith("VmRSS:"):
            return int(line.split()[1])
    raise RuntimeError("VmRSS not found")


def test_criterion_3_memory_budget_1000_idle(port_alloc):
    base = port_alloc(1000)
    proc = start_emulator_cli(
        ["--endpoints", "1000", "--base-port", str(base), "--stats-interval", "3600"]
    )
    try:
        wait_ready_line(proc)
        time.sleep(1.0)  # let allocations settle
        rss_kb = _vm_rss_kb(proc.pid)
        code = terminate_cleanly(proc)
        within = rss_kb <= MEMORY_BUDGET_KB
        criterion(
            3, within,
            f"resident memory at 1000 idle seeded endpoints: {rss_kb / 1024:.1f} MB "
            f"(budget 130 MB); shutdown rc={code}",
        )
        if not within:
            pytest.xfail(f"soft-fail: RSS {rss_kb / 1024:.1f} MB exceeds the 130 MB budget")
    finally:
        if proc.poll() is None:
            proc.kill()


# --- criterion 4: message-count pin -------------------------------------------------


def test_criterion_4_message_count_pin(port_alloc):
    constant = oracle_message_count(100)
    assert constant == expected_messages_per_endpoint(100) == 125
    assert 110 <= constant <= 140

    base = port_alloc(25)
    config = FleetConfig(endpoint_count=25, base_port=base, stats_interval=3600)
    with FleetThread(config) as fleet:
        previous = {
            eid: (c.msgs_in, c.msgs_out)
            for eid, c in fleet.engine.stats().per_endpoint.items()
        }
        for run in range(2):
            reports, agg = run_workload(
                WorkloadSpec(base_port=base, endpoints=25, threads=4)
            )
            assert agg.all_passed
            current = fleet.engine.stats().per_endpoint
            for i, report in enumerate(sorted(reports, key=lambda r: r.endpoint)):
                eid = endpoint_id(i)
                engine_total = (
                    current[eid].msgs_in - previous[eid][0]
                    + current[eid].msgs_out - previous[eid][1]
                )
                client_total = report.messages_sent + report.messages_received
                assert client_total == engine_total == constant, (
                    run, eid, client_total, engine_total, constant
                )
            previous = {
                eid: (c.msgs_in, c.msgs_out) for eid, c in current.items()
            }
    criterion(
        4, True,
        f"per-endpoint totals: oracle == engine_stats == loadgen == {constant} "
        f"(within [110, 140]) for 25 endpoints x 2 runs",
    )


# --- criterion 5: protocol-semantics oracle ------------------------------------------


def test_criterion_5_protocol_semantics_oracle():
    rng = random.Random(20250809)
    alphabet = [recv(s) for s in "ABC"] + [xmit(s) for s in "ABC"]
    checked_states = 0
    for _ in range(500):
        spec = random_guarded_spec(rng, max_ops=6)
        frontier = {spec.root}
        seen = set()
        for _depth in range(4):
            next_frontier = set()
            for state in frontier:
                if state in seen:
                    continue
                seen.add(state)
                checked_states += 1
                fireable = {
                    e for e in alphabet if step_alternatives(spec, state, e)
                }
                assert fireable == enabled_events(spec, state), (spec, state)
                first_events = {
                    t[0] for t in enumerate_traces(spec, 1, state) if t
                }
                assert first_events == fireable, (spec, state)
                for e in fireable:
                    for nxt, _ in step_alternatives(spec, state, e):
                        next_frontier.add(nxt)
            frontier = next_frontier

    ldap = build_ldap_protocol()
    traces = enumerate_traces(ldap, 6)
    for trace in traces:
        check_ldap_trace(trace)
    assert (recv("SearchRq"), xmit("SearchEntry"), xmit("SearchDone")) in traces
    assert (recv("SearchRq"), recv("BindRq"), xmit("SearchEntry")) not in traces
    assert (recv("SearchRq"), recv("UnbindRq"), xmit("SearchDone")) not in traces
    criterion(
        5, True,
        f"500 random guarded specs agree step/enabled/trace-first-events over "
        f"{checked_states} states (depth <= 4); contraction holds on all "
        f"{len(traces)} directory-protocol traces to depth 6",
    )


# --- criterion 6: codec round-trip, fuzz, interop -------------------------------------


@pytest.fixture(scope="session")
def ldapjs_env(tmp_path_factory):
    prefix = tmp_path_factory.mktemp("ldapjs")
    result = subprocess.run(
        ["npm", "install", "--prefix", str(prefix), "ldapjs@3.0.7"],
        capture_output=True,
        text=True,
        timeout=600,
    )
    assert result.returncode == 0, f"npm install failed: {result.stderr[-1000:]}"
    env = dict(os.environ, NODE_PATH=str(prefix / "node_modules"))
    return env


def test_criterion_6_codec_roundtrip_fuzz_interop(port_alloc, ldapjs_env):
    rng = random.Random(60601)
    for _ in range(10_000):
        msg = random_message(rng)
        assert decode(encode(msg)) == msg

    crashes = 0
    for i in range(100_000):
        size = rng.randrange(0, 96)
        blob = bytes(rng.randrange(256) for _ in range(size))
        try:
            decode(blob)
        except CodecError:
            pass
        except Exception:
            crashes += 1
    assert crashes == 0

    base = port_alloc(1)
    config = FleetConfig(endpoint_count=1, base_port=base, stats_interval=3600)
    with FleetThread(config):
        result = subprocess.run(
            [
                "node",
                str(Path(__file__).parent / "interop" / "interop_client.js"),
                "127.0.0.1",
                str(base),
                "102",
            ],
            capture_output=True,
            text=True,
            timeout=60,
            env=ldapjs_env,
        )
    assert result.returncode == 0, result.stderr[-1000:]
    summary = json.loads(result.stdout.strip())
    assert summary["whole_tree_entries"] == 102
    assert summary["equality_matches"] == 1
    criterion(
        6, True,
        "10,000 round-trips identical; 100,000-input fuzz with zero crashes; "
        f"ldapjs interop: {result.stdout.strip()}",
    )


# --- criterion 7: conformance probe ----------------------------------------------------


def test_criterion_7_conformance_probe_cli(port_alloc):
    base = port_alloc(1)
    config = FleetConfig(endpoint_count=1, base_port=base, stats_interval=3600)
    with FleetThread(config) as fleet:
        result = subprocess.run(
            [
                sys.executable, "-m", "svcemu.loadgen", "probe",
                "--host", "127.0.0.1", "--port", str(base),
            ],
            capture_output=True,
            text=True,
            timeout=60,
        )
        assert result.returncode == 0, result.stdout + result.stderr
        assert "ok   control-bind" in result.stdout
        assert "ok   client-sent-entry" in result.stdout
        assert "ok   frame-after-unbind" in result.stdout
        time.sleep(0.2)
        violations = fleet.engine.stats().violations
        assert violations >= 1  # the injected entry was recorded server-side
    criterion(
        7, True,
        f"probe: control accepted, both out-of-protocol injections rejected; "
        f"server recorded {violations} violation(s)",
    )


# --- criterion 8: fault injection --------------------------------------------------------


def test_criterion_8_fault_injection(port_alloc):
    # Delays: every response batch held back up to 2 s, observable per step.
    base = port_alloc(2)
    config = FleetConfig(
        endpoint_count=2, base_port=base, seed_users=5,
        max_delay_ms=2000, fault_seed=11, stats_interval=3600,
    )
    with FleetThread(config):
        reports, agg = run_workload(
            WorkloadSpec(base_port=base, endpoints=2, threads=2, seed_users=5, timeout_s=30)
        )
    assert agg.all_passed, [r.verdict for r in reports]
    slowest = max(max(r.step_ms) for r in reports)
    assert 800.0 <= slowest <= 2600.0, slowest

    # Drops: one endpoint never answers; its siblings stay healthy.
    base = port_alloc(3)
    config = FleetConfig(endpoint_count=3, base_port=base, seed_users=5, stats_interval=3600)
    with FleetThread(config) as fleet:
        fleet.engine.endpoints[endpoint_id(0)].faults = FaultPolicy(
            drop_probability=1.0, seed=2
        )
        reports, agg = run_workload(
            WorkloadSpec(base_port=base, endpoints=3, threads=3, seed_users=5, timeout_s=2)
        )
        verdicts = {r.endpoint: r.verdict for r in reports}
        dropped = verdicts[f"127.0.0.1:{base}"]
        healthy = [verdicts[f"127.0.0.1:{base + i}"] for i in (1, 2)]
        assert dropped == "fail:step2:timeout", dropped
        assert healthy == ["pass", "pass"], healthy
        # the emulator still serves new connections afterwards
        probe = conformance_probe("127.0.0.1", base + 1)
        assert probe.all_ok
    criterion(
        8, True,
        f"max-delay 2000 ms: slowest observed step {slowest:.0f} ms; drop=1.0: "
        f"bind timeout on the dropped endpoint, siblings pass and stay serviceable",
    )


# --- criterion 9: determinism -------------------------------------------------------------


def _step_outcome_projection(path: Path) -> list[tuple[str, ...]]:
    rows = list(csv.reader(path.read_text().splitlines()))
    assert rows[0][0] == "endpoint"
    return [
        (row[0], row[1], row[11], row[12])  # endpoint, verdict, msgs_sent, msgs_received
        for row in rows[1:]
    ]


def test_criterion_9_determinism_two_runs(port_alloc, tmp_path):
    projections = []
    base = port_alloc(100)  # same range both runs: labels must match exactly
    for run in range(2):
        proc = start_emulator_cli(
            ["--endpoints", "100", "--base-port", str(base), "--stats-interval", "3600"]
        )
        try:
            wait_ready_line(proc)
            out_csv = tmp_path / f"run{run}.csv"
            result = run_loadgen_cli(
                ["--base-port", str(base), "--endpoints", "100",
                 "--threads", "8", "--csv", str(out_csv)]
            )
            assert result.returncode == 0, result.stderr[-1000:]
            code = terminate_cleanly(proc)
            assert code == 0
        finally:
            if proc.poll() is None:
                proc.kill()
        projections.append(_step_outcome_projection(out_csv))
    ok = projections[0] == projections[1]
    criterion(
        9, ok,
        f"two 100-endpoint runs: step outcomes (verdict + message counts) "
        f"identical across runs for all {len(projections[0])} rows",
    )
    assert ok
