import itertools
import random
import socket

import pytest

# Stay below the kernel's ephemeral range (32768+ by default) so client-side
# connections from earlier tests can never collide with our listeners.
_EPHEMERAL_FLOOR = 32768
_port_counter = itertools.count(10000 + random.Random().randrange(0, 20) * 61)


def _range_free(base: int, count: int) -> bool:
    for port in range(base, base + count):
        with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
            try:
                s.bind(("127.0.0.1", port))
            except OSError:
                return False
    return True


def _alloc(count: int) -> int:
    while True:
        base = next(_port_counter)
        if base + count >= _EPHEMERAL_FLOOR:
            raise RuntimeError("port space below the ephemeral range exhausted")
        for _ in range(count - 1):
            next(_port_counter)
        if _range_free(base, count):
            return base


@pytest.fixture
def port_alloc():
    """Allocate a contiguous loopback port range: port_alloc(n) -> base."""
    return _alloc


# One line per acceptance criterion, echoed after the test summary so the
# verdicts are visible without -s.
acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
