"""``emulator`` command-line front end.

Exit codes: 0 clean shutdown, 1 configuration error, 2 startup error.
"""

from __future__ import annotations

import argparse
import asyncio
import sys

from .fleet import ConfigError, config_from_dict, load_config, serve
from .network import FleetStartupError
from .protocol import ProtocolError


def _parse_faults(spec: str) -> dict[str, int | float]:
    """Parse ``max-delay-ms=D,drop=Q,seed=S`` (each part optional)."""
    out: dict[str, int | float] = {}
    names = {"max-delay-ms": "max_delay_ms", "drop": "drop_probability", "seed": "fault_seed"}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        key, sep, value = part.partition("=")
        if not sep or key not in names:
            raise argparse.ArgumentTypeError(
                f"bad fault spec {part!r}; expected max-delay-ms=D,drop=Q,seed=S"
            )
        try:
            out[names[key]] = float(value) if key == "drop" else int(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad fault value {value!r}") from None
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emulator",
        description="Serve a fleet of emulated service endpoints behind real TCP sockets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    srv = sub.add_parser("serve", help="start a fleet and serve until SIGTERM/SIGINT")
    srv.add_argument("--config", help="fleet config file (JSON); defaults apply if omitted")
    srv.add_argument("--endpoints", type=int, help="override endpoint_count")
    srv.add_argument("--base-port", type=int, help="override base_port")
    srv.add_argument(
        "--faults",
        type=_parse_faults,
        help="override fault policy: max-delay-ms=D,drop=Q,seed=S",
    )
    srv.add_argument("--stats-interval", type=float, help="override stats_interval seconds")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    assert args.command == "serve"
    try:
        config = load_config(args.config) if args.config else config_from_dict({})
        overrides: dict = {}
        if args.endpoints is not None:
            overrides["endpoint_count"] = args.endpoints
        if args.base_port is not None:
            overrides["base_port"] = args.base_port
        if args.stats_interval is not None:
            overrides["stats_interval"] = args.stats_interval
        if args.faults:
            overrides.update(args.faults)
        for key, value in overrides.items():
            setattr(config, key, value)
        config.validate()
    except (ConfigError, OSError) as exc:
        print(f"emulator: config error: {exc}", file=sys.stderr)
        return 1
    try:
        return asyncio.run(serve(config))
    except (FleetStartupError, ProtocolError, OSError) as exc:
        print(f"emulator: startup error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
