"""``dynapitch`` command line: scenario runner, bus scanner, packet tool, kick sweep.

Exit codes: 0 success, 1 usage or configuration error, 2 scenario failure,
3 decode failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import struct
import sys
import time
from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import field as fs
from . import harness
from . import net
from . import protocol as proto
from .bridge import BridgeConfig
from .kicker import KickerParams, launch_speed
from .kinematics import KinematicsConfigError, WheelConfig
from .servo import VirtualBus
from .tactics import Gains

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SCENARIO = 2
EXIT_DECODE = 3

CONFIG_ENV = "DYNAPITCH_CONFIG"

LOGGER = logging.getLogger("dynapitch")


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; this contract reserves 2 for scenario failures."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# Run configuration
# --------------------------------------------------------------------------

_SECTIONS = {
    "field": ("field_params", fs.FieldParams),
    "wheels": ("wheels", WheelConfig),
    "kicker": ("kicker", KickerParams),
    "bridge": ("bridge", BridgeConfig),
    "gains": ("gains", Gains),
}
_TOP_LEVEL = {"scenario", "seed", "duration", "vision_rate", "position_jitter", "heading_jitter", "ports", "out"}


def load_config(path: str | os.PathLike) -> dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - _TOP_LEVEL - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return data


def _section(cls, values: Any, name: str):
    if not isinstance(values, dict):
        raise ConfigError(f"section {name!r} must be an object")
    values = dict(values)
    if cls is WheelConfig and "wheel_angles_deg" in values:
        values["wheel_angles"] = [math.radians(a) for a in values.pop("wheel_angles_deg")]
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except (TypeError, ValueError, KinematicsConfigError) as exc:
        raise ConfigError(f"invalid {name!r}: {exc}") from exc


def scenario_config(data: dict[str, Any], duration: float | None = None) -> harness.ScenarioConfig:
    kwargs: dict[str, Any] = {}
    for key, (attr, cls) in _SECTIONS.items():
        if key in data:
            kwargs[attr] = _section(cls, data[key], key)
    for key in ("vision_rate", "position_jitter", "heading_jitter"):
        if key in data:
            kwargs[key] = data[key]
    timeout = duration if duration is not None else data.get("duration")
    if timeout is not None:
        if not isinstance(timeout, (int, float)) or timeout <= 0:
            raise ConfigError("duration must be a positive number")
        kwargs["timeout"] = float(timeout)
    try:
        return harness.ScenarioConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------


def _write_outputs(out: Path, report: harness.MetricsReport, trace: list[str]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.jsonl").write_text("".join(line + "\n" for line in trace), encoding="utf-8")
    (out / "metrics.json").write_text(json.dumps(report.to_json(), sort_keys=True) + "\n", encoding="utf-8")
    (out / "metrics.csv").write_text(harness.metrics_csv([report]), encoding="utf-8")


def _serve(seed: int, cfg: harness.ScenarioConfig, cmd_port: int, vision_port: int, trace: list[str]) -> harness.MetricsReport:
    """Run a one-robot world paced to wall time, driven by external UDP commands."""
    rng = np.random.default_rng(seed)
    x, y, th = harness.start_pose(rng, -2.0, 0.0, 0.0, cfg)
    world = fs.WorldState(fs.Ball(0.0, 0.0), [fs.Robot(0, x, y, th)])
    commands = net.CommandQueue()
    receiver = net.UdpCommandReceiver(commands, port=cmd_port).start()
    sender = net.UdpVisionSender(port=vision_port)
    sim = harness.Simulation(world, cfg, net.LoopbackTransport(commands), sender.publish)
    dt = cfg.bridge.control_dt
    ticks = int(round(cfg.timeout / dt))
    LOGGER.info("serving: commands on %s:%d, vision to port %d", *receiver.address, vision_port)
    start = time.monotonic()
    try:
        while sim.tick < ticks:
            sim.control_tick()
            delay = start + sim.tick * dt - time.monotonic()
            if delay > 0:
                time.sleep(delay)
    except KeyboardInterrupt:
        pass
    finally:
        receiver.close()
        sender.close()
    trace.extend(sim.trace)
    report = harness.MetricsReport("serve", seed, trace_hash=sim.trace_hash, success=True, sim_time=world.t)
    report.out_of_bounds = world.out_of_bounds
    return report


def cmd_simulate(args: argparse.Namespace) -> int:
    config_path = args.config or os.environ.get(CONFIG_ENV)
    try:
        data = load_config(config_path) if config_path else {}
        cfg = scenario_config(data, args.duration)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    scenario = args.scenario or data.get("scenario")
    seed = args.seed if args.seed is not None else data.get("seed", 0)
    out = Path(args.out or data.get("out", "out"))
    ports = data.get("ports", {})
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        print("config error: seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_USAGE

    trace: list[str] = []
    if args.serve:
        cmd_port = args.cmd_port or ports.get("command", net.COMMAND_PORT)
        vision_port = args.vision_port or ports.get("vision", net.VISION_PORT)
        try:
            report = _serve(seed, cfg, cmd_port, vision_port, trace)
        except OSError as exc:
            print(f"cannot open UDP endpoints: {exc}", file=sys.stderr)
            return EXIT_USAGE
    else:
        if scenario not in harness.SCENARIOS:
            print(f"unknown scenario {scenario!r}; valid scenarios: {', '.join(harness.SCENARIOS)}", file=sys.stderr)
            return EXIT_USAGE
        try:
            report = harness.run_scenario(scenario, seed, cfg, trace)
        except ValueError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        except fs.SimulationFault as exc:
            print(f"simulation fault: {exc}", file=sys.stderr)
            return EXIT_SCENARIO

    try:
        _write_outputs(out, report, trace)
    except OSError as exc:
        print(f"cannot write outputs to {out}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(harness.metrics_csv([report]), end="")
    return EXIT_SCENARIO if report.failed else EXIT_OK


# --------------------------------------------------------------------------
# scan-bus
# --------------------------------------------------------------------------


def scan_bus(n: int) -> list[tuple[int, int, int]]:
    """Broadcast PING on a fresh bus of ``n`` servos; (id, model, firmware) rows."""
    bus = VirtualBus.with_servos(range(1, n + 1))
    rows = []
    for reply in bus.transact(proto.encode_instruction(proto.ping(proto.BROADCAST_ID))):
        status = proto.decode_packet(reply)
        model, firmware = struct.unpack("<HB", status.params)
        rows.append((status.source_id, model, firmware))
    return rows


def cmd_scan_bus(args: argparse.Namespace) -> int:
    if not 1 <= args.n <= 16:
        print("n must lie in 1..16", file=sys.stderr)
        return EXIT_USAGE
    print(f"{'id':>3}  {'model':>5}  {'firmware':>8}")
    for servo_id, model, firmware in scan_bus(args.n):
        print(f"{servo_id:>3}  {model:>5}  {firmware:>8}")
    return EXIT_OK


# --------------------------------------------------------------------------
# packet
# --------------------------------------------------------------------------


def _hex(data: bytes) -> str:
    return data.hex(" ").upper()


def _describe(pkt: proto.Packet) -> str:
    if isinstance(pkt, proto.StatusPacket):
        return f"status id={pkt.source_id} error=0x{pkt.error:02X} params={_hex(pkt.params) or '-'}"
    return f"instruction id={pkt.target_id} instruction={pkt.instruction.name} params={_hex(pkt.params) or '-'}"


def cmd_packet(args: argparse.Namespace) -> int:
    if args.direction == "decode":
        if not args.hex:
            print("decode needs a hex string", file=sys.stderr)
            return EXIT_USAGE
        try:
            data = bytes.fromhex("".join(args.hex).replace(":", ""))
        except ValueError as exc:
            print(f"malformed hex: {exc}", file=sys.stderr)
            return EXIT_USAGE
        parser = proto.StreamParser()
        events = parser.feed(data) + parser.finish()
        bad = False
        for ev in events:
            if isinstance(ev, proto.PacketEvent):
                print(_describe(ev.packet))
            else:
                bad = True
                extra = f" skipped={ev.skipped}" if isinstance(ev, proto.Desync) else ""
                print(f"{ev.kind}{extra}")
        if not events:
            print("desync skipped=0")
            bad = True
        return EXIT_DECODE if bad else EXIT_OK

    if args.hex:
        print("encode takes structured options, not a hex string", file=sys.stderr)
        return EXIT_USAGE
    try:
        ins = args.instruction
        if ins == "ping":
            pkt = proto.ping(args.id)
        elif ins == "read":
            pkt = proto.read(args.id, _need(args.address, "--address"), args.length)
        else:
            value = _need(args.value, "--value")
            pkt = proto.write(args.id, _need(args.address, "--address"), value.to_bytes(args.length, "little", signed=value < 0))
        print(_hex(proto.encode_instruction(pkt)))
    except (ValueError, OverflowError) as exc:
        print(f"cannot encode: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def _need(value, flag: str):
    if value is None:
        raise ValueError(f"{flag} is required")
    return value


# --------------------------------------------------------------------------
# kick-sweep
# --------------------------------------------------------------------------


def parse_range(text: str) -> list[float]:
    """``a`` or ``start:stop:step`` (stop inclusive) or a comma list."""
    if "," in text:
        return [float(x) for x in text.split(",") if x.strip()]
    parts = text.split(":")
    if len(parts) == 1:
        return [float(parts[0])]
    if len(parts) != 3:
        raise ValueError(f"bad range {text!r}; use start:stop:step")
    start, stop, step = map(float, parts)
    if step <= 0:
        raise ValueError("step must be positive")
    n = math.floor((stop - start) / step + 1e-9) + 1
    return [start + k * step for k in range(max(0, n))]


def cmd_kick_sweep(args: argparse.Namespace) -> int:
    try:
        v_caps, etas = parse_range(args.v_cap), parse_range(args.eta)
        if not v_caps or not etas:
            raise ValueError("empty range")
        if min(v_caps) < 0:
            raise ValueError("v_cap must be nonnegative")
        params = [replace(KickerParams(), efficiency=eta) for eta in etas]
    except ValueError as exc:
        print(f"bad sweep: {exc}", file=sys.stderr)
        return EXIT_USAGE
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["v_cap", "eta", "ball_speed"])
    for v in v_caps:
        for eta, p in zip(etas, params):
            writer.writerow([repr(v), repr(eta), repr(launch_speed(v, p))])
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dynapitch", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="run a metric scenario and write trace + metrics")
    sim.add_argument("--scenario", help=f"one of: {', '.join(harness.SCENARIOS)}")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--config", help=f"JSON run config (default: ${CONFIG_ENV})")
    sim.add_argument("--out", help="output directory (default: out)")
    sim.add_argument("--duration", type=float, help="simulated-time cap in seconds")
    sim.add_argument("--serve", action="store_true", help="drive one robot from UDP commands in real time")
    sim.add_argument("--cmd-port", type=int)
    sim.add_argument("--vision-port", type=int)
    sim.set_defaults(func=cmd_simulate)

    scan = sub.add_parser("scan-bus", help="PING a virtual bus and list the servos")
    scan.add_argument("-n", type=int, default=4, help="servos on the bus (1..16)")
    scan.set_defaults(func=cmd_scan_bus)

    pk = sub.add_parser("packet", help="encode or decode a servo-bus frame")
    pk.add_argument("direction", choices=("encode", "decode"))
    pk.add_argument("hex", nargs="*", help="frame bytes as hex (decode)")
    pk.add_argument("--id", type=int, default=1)
    pk.add_argument("--instruction", choices=("ping", "read", "write"), default="ping")
    pk.add_argument("--address", type=int)
    pk.add_argument("--length", type=int, default=4, help="register size in bytes")
    pk.add_argument("--value", type=int)
    pk.set_defaults(func=cmd_packet)

    ks = sub.add_parser("kick-sweep", help="CSV of ball speed over capacitor voltage and efficiency")
    ks.add_argument("--v-cap", default="0:190:10")
    ks.add_argument("--eta", default="0.02")
    ks.set_defaults(func=cmd_kick_sweep)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
