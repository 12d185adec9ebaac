"""Terminal operator client (`greensim-cli`): connect through the gateway,
subscribe telemetry, issue commands, and replay scripted command traces.

Interactive commands:
    sub <pattern>              subscribe (wildcards + and # supported)
    unsub <pattern>            unsubscribe
    cmd base <vl> <vr>         wheel speeds, m/s
    cmd stop                   zero base and arm motion
    cmd arm <joint> <deg>      jog a joint by degrees (index 0-5 or name)
    cmd traj <q1,...,q6;...>   joint-space waypoints, radians
    cmd gripper <aperture_m>   set gripper opening
    cmd pluck <force_n>        pluck the grasped tomato
    mission <m1,m2,...>        start a pod-visiting mission
    resume | abort             mission control
    estop [clear]              engage (or clear) the emergency stop
    ping                       measure round-trip time
    quit

Every command prints its ACK status and the measured round-trip in ms.
`--porcelain` switches to stable tab-separated output for scripting.
"""

from __future__ import annotations

import argparse
import json
import socket
import sys
import threading
import time
import uuid

from . import protocol
from .protocol import Envelope
from .rover import JOINT_NAMES

AUTH_TOPIC = "/gateway/auth"
PING_TOPIC = "/sys/ping"


class CliError(Exception):
    pass


class GatewayClient:
    """Thin envelope client over the TCP framing; one reader thread resolves
    acks by correlation id and forwards telemetry to a callback."""

    def __init__(self, host: str, port: int, on_telemetry=None, timeout_s: float = 10.0):
        self.sock = socket.create_connection((host, port), timeout=timeout_s)
        self.sock.settimeout(None)
        self.timeout_s = timeout_s
        self.on_telemetry = on_telemetry or (lambda env: None)
        self._seq = 0
        self._lock = threading.Lock()
        self._waiters: dict[str, tuple[threading.Event, list]] = {}
        self._closed = False
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _next_seq(self) -> int:
        with self._lock:
            self._seq += 1
            return self._seq

    def _read_loop(self) -> None:
        try:
            while not self._closed:
                body = protocol.read_frame(self.sock)
                if body is None:
                    break
                env = protocol.decode_body(body)
                if env.kind in ("ACK", "ERR", "PONG"):
                    waiter = self._waiters.pop(env.correlation_id, None)
                    if waiter is not None:
                        waiter[1].append(env)
                        waiter[0].set()
                        continue
                self.on_telemetry(env)
        except (OSError, protocol.ProtocolError):
            pass
        finally:
            self._closed = True
            for ev, _ in self._waiters.values():
                ev.set()

    def send(self, kind: str, topic: str, payload: dict, correlation_id: str | None = None) -> str:
        cid = correlation_id or uuid.uuid4().hex
        env = Envelope(kind=kind, topic=topic, correlation_id=cid, seq=self._next_seq(),
                       ts_ms=int(time.time() * 1000), payload=payload)
        self.sock.sendall(protocol.encode(env))
        return cid

    def request(self, kind: str, topic: str, payload: dict,
                correlation_id: str | None = None) -> tuple[Envelope | None, float]:
        """Send and wait for the matching ACK/ERR/PONG; returns (reply, rtt_ms)."""
        cid = correlation_id or uuid.uuid4().hex
        event: threading.Event = threading.Event()
        box: list = []
        self._waiters[cid] = (event, box)
        t0 = time.monotonic()
        self.send(kind, topic, payload, correlation_id=cid)
        if not event.wait(self.timeout_s):
            self._waiters.pop(cid, None)
            return None, (time.monotonic() - t0) * 1000.0
        return box[0] if box else None, (time.monotonic() - t0) * 1000.0

    def close(self) -> None:
        self._closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def _parse_joint(token: str) -> int:
    if token in JOINT_NAMES:
        return JOINT_NAMES.index(token)
    j = int(token)
    if not 0 <= j <= 5:
        raise CliError(f"joint index {j} out of range 0-5")
    return j


def build_command(line: str) -> tuple[str, dict]:
    """Interactive line -> (topic, payload). Raises CliError on bad syntax."""
    parts = line.split()
    if not parts:
        raise CliError("empty command")
    if parts[0] == "cmd":
        if len(parts) < 2:
            raise CliError("cmd what?")
        sub = parts[1]
        if sub == "base":
            return "/rover/cmd_vel", {"v_left": float(parts[2]), "v_right": float(parts[3])}
        if sub == "stop":
            return "/rover/cmd_vel", {"stop": True}
        if sub == "arm":
            return "/rover/arm/cmd", {"joint": _parse_joint(parts[2]),
                                      "delta_deg": float(parts[3])}
        if sub == "traj":
            waypoints = [[float(x) for x in wp.split(",")]
                         for wp in " ".join(parts[2:]).split(";") if wp.strip()]
            return "/rover/arm/cmd", {"waypoints": waypoints}
        if sub == "gripper":
            return "/rover/gripper/cmd", {"aperture_m": float(parts[2])}
        if sub == "pluck":
            return "/rover/pluck/cmd", {"force_n": float(parts[2])}
        raise CliError(f"unknown cmd {sub!r}")
    if parts[0] == "mission":
        markers = [int(m) for m in parts[1].split(",") if m]
        return "/rover/mission/cmd", {"action": "start", "markers": markers}
    if parts[0] == "resume":
        return "/rover/mission/cmd", {"action": "resume"}
    if parts[0] == "abort":
        return "/rover/mission/cmd", {"action": "abort"}
    if parts[0] == "estop":
        action = "clear" if len(parts) > 1 and parts[1] == "clear" else "engage"
        return "/gateway/estop", {"action": action}
    raise CliError(f"unknown command {parts[0]!r}")


def _print_reply(topic: str, reply: Envelope | None, rtt_ms: float, porcelain: bool) -> str:
    if reply is None:
        status, reason = "TIMEOUT", ""
    elif reply.kind == "PONG":
        status, reason = "PONG", ""
    elif reply.kind == "ERR":
        status = "ERR"
        reason = reply.payload.get("code", "")
    else:
        status = reply.payload.get("status", "?")
        reason = reply.payload.get("reason_code", "") or ""
    if porcelain:
        line = f"ACK\t{topic}\t{status}\t{reason}\t{rtt_ms:.1f}"
    else:
        extra = f" ({reason})" if reason else ""
        line = f"[ack] {topic} -> {status}{extra}  rtt {rtt_ms:.1f} ms"
    print(line, flush=True)
    return status


def _telemetry_printer(porcelain: bool):
    def on_env(env: Envelope) -> None:
        if porcelain:
            print(f"PUB\t{env.topic}\t{json.dumps(env.payload, separators=(',', ':'))}",
                  flush=True)
        else:
            print(f"[{env.topic}] {json.dumps(env.payload)}", flush=True)
    return on_env


def authenticate(client: GatewayClient, token: str, porcelain: bool) -> dict:
    reply, rtt = client.request("AUTH", AUTH_TOPIC, {"token": token})
    if reply is None:
        raise CliError("auth timed out")
    status = reply.payload.get("status")
    if status != protocol.SUCCESS:
        raise CliError(f"auth rejected: {reply.payload.get('reason_code')}")
    if not porcelain:
        slot = reply.payload.get("slot")
        slot_txt = "none" if slot is None else f"{slot['start_ms']}..{slot['end_ms']}"
        print(f"[auth] role={reply.payload.get('role')} slot={slot_txt} rtt {rtt:.1f} ms",
              flush=True)
    return reply.payload


def replay(client: GatewayClient, script_path: str, porcelain: bool) -> tuple[str, bool]:
    """Execute a timestamped command trace; returns (report_text, all_expected)."""
    entries = []
    with open(script_path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line and not line.startswith("#"):
                entries.append(json.loads(line))
    lines = []
    all_ok = True
    start = time.monotonic()
    for i, entry in enumerate(entries):
        wait_s = entry.get("t_ms", 0) / 1000.0 - (time.monotonic() - start)
        if wait_s > 0:
            time.sleep(wait_s)
        cid = f"{i:032x}"
        reply, rtt = client.request("CMD", entry["topic"], entry["payload"],
                                    correlation_id=cid)
        status = "TIMEOUT" if reply is None else reply.payload.get("status", "?")
        reason = "" if reply is None else (reply.payload.get("reason_code") or "")
        expected = entry.get("expect")
        ok = expected is None or status == expected
        all_ok = all_ok and ok
        mark = "" if ok else f" EXPECTED {expected}"
        lines.append(f"{i} {entry['topic']} {status}{(' ' + reason) if reason else ''}{mark}")
        if porcelain:
            print(f"REPLAY\t{i}\t{entry['topic']}\t{status}\t{reason}\t{rtt:.1f}", flush=True)
    lines.append(f"ok {sum(1 for ln in lines if ' EXPECTED ' not in ln)}/{len(entries)}")
    return "\n".join(lines) + "\n", all_ok


def interactive(client: GatewayClient, porcelain: bool) -> None:
    while True:
        try:
            line = input("greensim> " if not porcelain else "").strip()
        except EOFError:
            return
        if not line:
            continue
        if line in ("quit", "exit"):
            return
        if line.startswith("sub ") or line.startswith("unsub "):
            kind = "SUB" if line.startswith("sub ") else "UNSUB"
            pattern = line.split(None, 1)[1]
            reply, rtt = client.request(kind, pattern, {})
            _print_reply(pattern, reply, rtt, porcelain)
            continue
        if line == "ping":
            reply, rtt = client.request("PING", PING_TOPIC, {})
            _print_reply(PING_TOPIC, reply, rtt, porcelain)
            continue
        try:
            topic, payload = build_command(line)
        except (CliError, ValueError, IndexError) as e:
            print(f"error: {e}", file=sys.stderr, flush=True)
            continue
        reply, rtt = client.request("CMD", topic, payload)
        _print_reply(topic, reply, rtt, porcelain)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="greensim-cli",
                                     description="operator client for the greensim gateway")
    parser.add_argument("--gateway", required=True, help="gateway TCP address host:port")
    parser.add_argument("--token", required=True)
    parser.add_argument("--script", default=None, help="replay a command trace file")
    parser.add_argument("--report", default=None, help="write the replay report here")
    parser.add_argument("--porcelain", action="store_true",
                        help="stable tab-separated output")
    parser.add_argument("--timeout", type=float, default=10.0)
    args = parser.parse_args(argv)

    host, port_s = args.gateway.rsplit(":", 1)
    client = GatewayClient(host or "127.0.0.1", int(port_s),
                           on_telemetry=_telemetry_printer(args.porcelain),
                           timeout_s=args.timeout)
    try:
        authenticate(client, args.token, args.porcelain)
        if args.script:
            report, ok = replay(client, args.script, args.porcelain)
            sys.stdout.write(report)
            if args.report:
                with open(args.report, "w", encoding="utf-8") as f:
                    f.write(report)
            return 0 if ok else 1
        interactive(client, args.porcelain)
        return 0
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    finally:
        client.close()


if __name__ == "__main__":
    sys.exit(main())
