import json
import signal
import socket
import subprocess
import sys
import time

import pytest

from svcemu.fleet import (
    ConfigError,
    build_engine,
    config_from_dict,
    endpoint_id,
    fleet_bindings,
    load_config,
)


def write_config(tmp_path, data) -> str:
    path = tmp_path / "fleet.json"
    path.write_text(json.dumps(data))
    return str(path)


def test_minimal_config_defaults(tmp_path):
    config = load_config(write_config(tmp_path, {"endpoint_count": 10}))
    assert config.endpoint_count == 10
    assert config.base_port == 20000
    assert config.seed_users == 100
    assert config.max_delay_ms == 0 and config.drop_probability == 0.0
    assert config.violation_policy == "close"


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError) as excinfo:
        load_config(write_config(tmp_path, {"endpoint_cout": 1}))
    assert excinfo.value.field == "endpoint_cout"


def test_port_overflow_constraint(tmp_path):
    with pytest.raises(ConfigError) as excinfo:
        load_config(write_config(tmp_path, {"endpoint_count": 50000, "base_port": 20000}))
    assert excinfo.value.field == "endpoint_count"
    assert "65536" in excinfo.value.reason


def test_json_parse_error_carries_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"endpoint_count": \n 1,,}')
    with pytest.raises(ConfigError) as excinfo:
        load_config(path)
    assert "line" in str(excinfo.value)


def test_type_and_constraint_errors():
    with pytest.raises(ConfigError):
        config_from_dict({"endpoint_count": "ten"})
    with pytest.raises(ConfigError):
        config_from_dict({"endpoint_count": 0})
    with pytest.raises(ConfigError):
        config_from_dict({"drop_probability": 1.5})
    with pytest.raises(ConfigError):
        config_from_dict({"violation_policy": "shrug"})
    with pytest.raises(ConfigError):
        config_from_dict({"address_mode": "multi-ip", "endpoint_count": 2,
                          "addresses": ["127.0.0.1"]})
    with pytest.raises(ConfigError):
        config_from_dict({"protocol_file": "/does/not/exist.prot"})
    with pytest.raises(ConfigError):
        config_from_dict({"base_dn": "not a dn"})


def test_protocol_file_loaded(tmp_path):
    prot = tmp_path / "echo.prot"
    prot.write_text("Base = ?BindRq.(!BindRes.Base) + ?UnbindRq!.0 in Base")
    config = config_from_dict({"protocol_file": str(prot), "endpoint_count": 1})
    engine = build_engine(config)
    model = engine.get_model(endpoint_id(0))
    assert set(model.protocol.declarations) == {"Base"}


def test_fleet_determinism_same_config():
    config = config_from_dict({"endpoint_count": 5, "seed_users": 7})
    a = build_engine(config)
    b = build_engine(config)
    assert set(a.endpoints) == set(b.endpoints)
    for eid in a.endpoints:
        assert a.endpoints[eid].store == b.endpoints[eid].store
        assert a.endpoints[eid].protocol == b.endpoints[eid].protocol


def test_bindings_port_range_and_multi_ip():
    config = config_from_dict({"endpoint_count": 3, "base_port": 25000})
    assert [(b.address, b.port) for b in fleet_bindings(config)] == [
        ("127.0.0.1", 25000),
        ("127.0.0.1", 25001),
        ("127.0.0.1", 25002),
    ]
    config = config_from_dict(
        {
            "endpoint_count": 2,
            "base_port": 25000,
            "address_mode": "multi-ip",
            "addresses": ["127.0.0.5", "127.0.0.6"],
        }
    )
    assert [(b.address, b.port) for b in fleet_bindings(config)] == [
        ("127.0.0.5", 25000),
        ("127.0.0.6", 25000),
    ]


def test_seeds_differ_per_endpoint_index():
    engine = build_engine(config_from_dict({"endpoint_count": 2, "seed_users": 2}))
    s0 = engine.get_model(endpoint_id(0)).store
    s1 = engine.get_model(endpoint_id(1)).store
    assert set(s0.entries) == set(s1.entries)
    assert s0 != s1  # passwords perturbed by index


# --- the emulator CLI -------------------------------------------------------------


def start_emulator(args):
    return subprocess.Popen(
        [sys.executable, "-m", "svcemu.cli", "serve", *args],
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
    )


def wait_ready(proc, timeout=30.0) -> dict:
    line = proc.stdout.readline()
    assert line, proc.stderr.read()
    ready = json.loads(line)
    assert ready["event"] == "ready"
    return ready


def test_cli_config_error_exit_1(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"endpoint_count": 0}')
    proc = subprocess.run(
        [sys.executable, "-m", "svcemu.cli", "serve", "--config", str(bad)],
        capture_output=True,
        text=True,
        timeout=30,
    )
    assert proc.returncode == 1
    assert "endpoint_count" in proc.stderr


def test_cli_startup_error_exit_2(port_alloc):
    base = port_alloc(1)
    blocker = socket.socket()
    blocker.bind(("127.0.0.1", base))
    blocker.listen(1)
    try:
        proc = subprocess.run(
            [
                sys.executable,
                "-m",
                "svcemu.cli",
                "serve",
                "--endpoints",
                "1",
                "--base-port",
                str(base),
            ],
            capture_output=True,
            text=True,
            timeout=30,
        )
        assert proc.returncode == 2
        assert "address in use" in proc.stderr
    finally:
        blocker.close()


def test_cli_sigterm_clean_shutdown_with_final_stats(port_alloc, tmp_path):
    base = port_alloc(3)
    config = write_config(
        tmp_path, {"endpoint_count": 3, "base_port": base, "seed_users": 2}
    )
    proc = start_emulator(["--config", config, "--stats-interval", "0.2"])
    try:
        ready = wait_ready(proc)
        assert ready["endpoints"] == 3
        assert ready["fd_budget"] >= 3
        time.sleep(0.5)  # let a couple of periodic stats lines flow
        proc.send_signal(signal.SIGTERM)
        out, err = proc.communicate(timeout=30)
        assert proc.returncode == 0, err
        lines = [json.loads(l) for l in out.strip().splitlines() if l]
        final = lines[-1]
        assert set(final) == {"t", "endpoints", "msgs_in", "msgs_out", "violations", "open_channels"}
        assert final["endpoints"] == 3
        assert len(lines) >= 2  # at least one periodic line plus the final one
    finally:
        if proc.poll() is None:
            proc.kill()


def test_cli_flag_overrides(port_alloc, tmp_path):
    base = port_alloc(2)
    config = write_config(tmp_path, {"endpoint_count": 1, "base_port": 1, "seed_users": 2})
    proc = start_emulator(
        ["--config", config, "--endpoints", "2", "--base-port", str(base),
         "--faults", f"max-delay-ms=0,drop=0.0,seed=9", "--stats-interval", "60"]
    )
    try:
        ready = wait_ready(proc)
        assert ready["endpoints"] == 2
        assert ready["base_port"] == base
        with socket.create_connection(("127.0.0.1", base + 1), timeout=5):
            pass
        proc.send_signal(signal.SIGTERM)
        _, err = proc.communicate(timeout=30)
        assert proc.returncode == 0, err
    finally:
        if proc.poll() is None:
            proc.kill()
