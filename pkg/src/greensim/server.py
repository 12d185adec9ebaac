"""The `greensim` server process: loads a scenario, runs the engine loop, and
exposes the broker through the gateway on a TCP listener (length-prefixed
frames) and a WebSocket listener (one envelope per text message) that also
serves the browser console's static assets.
"""

from __future__ import annotations

import argparse
import json
import mimetypes
import os
import socket
import sys
import threading
from dataclasses import replace
from http import HTTPStatus
from pathlib import Path

from . import protocol
from .broker import Broker, FanoutQueue
from .engine import EngineConfig, SimEngine
from .gateway import Gateway, GatewayConfig
from .protocol import Envelope, ProtocolError
from .timebase import ThreadedTimeline
from .world import load_scenario

GATEWAY_CONFIG_ENV = "GREENSIM_GATEWAY_CONFIG"


class ClientConnection:
    """One remote client on either transport. Outbound envelopes pass through
    the session's latency shaper, then a two-lane queue (acks guaranteed,
    telemetry drop-oldest) drained by the transport writer."""

    _counter = 0
    _counter_lock = threading.Lock()

    def __init__(self, gateway: Gateway, transport: str):
        with ClientConnection._counter_lock:
            ClientConnection._counter += 1
            n = ClientConnection._counter
        self.conn_id = f"{transport}-{n}"
        self.gateway = gateway
        self.queue = FanoutQueue()
        self.session = None
        self._in_line = None
        self._out_line = None
        self._seq_lock = threading.Lock()
        self._out_seq = 0
        self._last_in_seq = -1

    def bind_session(self, session, delay_lines) -> None:
        self.session = session
        self._in_line, self._out_line = delay_lines

    # --- egress ---------------------------------------------------------------

    def send(self, env: Envelope) -> None:
        """Enqueue without latency shaping (pre-auth traffic)."""
        with self._seq_lock:
            self._out_seq += 1
            self.queue.put(replace(env, seq=self._out_seq))

    def send_shaped(self, env: Envelope) -> None:
        if self._out_line is None:
            self.send(env)
        else:
            self._out_line.send(lambda: self.send(env))

    # broker sink: telemetry fan-out, shaped like everything else
    def deliver(self, env: Envelope) -> None:
        self.send_shaped(env)

    # --- ingress ----------------------------------------------------------------

    def handle_inbound(self, env: Envelope) -> Envelope | None:
        """Validate per-connection sequencing, then route through the inbound
        delay line into the gateway. Returns an ERR envelope on violations."""
        if env.seq <= self._last_in_seq:
            return Envelope(kind="ERR", topic=env.topic, correlation_id=env.correlation_id,
                            seq=0, ts_ms=env.ts_ms,
                            payload={"code": "BAD_SEQ",
                                     "detail": f"seq {env.seq} <= {self._last_in_seq}"})
        self._last_in_seq = env.seq
        if self._in_line is None or env.kind == "AUTH":
            self.gateway.handle(self, env)
        else:
            self._in_line.send(lambda: self.gateway.handle(self, env))
        return None

    def close(self) -> None:
        self.queue.close()


class GreensimServer:
    def __init__(self, scenario_text: str, gateway_config: GatewayConfig, seed: int = 0,
                 mode: str = "realtime", engine_cfg: EngineConfig | None = None,
                 static_dir: str | None = None):
        self.world = load_scenario(scenario_text)
        self.broker = Broker()
        self._tele_seq = 0
        self._tele_lock = threading.Lock()
        self.engine = SimEngine(self.world, engine_cfg or EngineConfig(), seed=seed,
                                publish=self._publish_telemetry)
        self.timeline = ThreadedTimeline()
        self.gateway = Gateway(gateway_config, self.broker, self.engine, self.timeline,
                               self.world.rover_config.arm, rng_seed=seed)
        self.mode = mode
        self.static_dir = Path(static_dir) if static_dir else None
        self._tcp_sock: socket.socket | None = None
        self._ws_server = None
        self._threads: list[threading.Thread] = []
        self._engine_thread: threading.Thread | None = None
        self._stopping = threading.Event()
        self.perf_report = None
        self.tcp_address: tuple[str, int] | None = None
        self.ws_address: tuple[str, int] | None = None

    def _publish_telemetry(self, topic: str, payload: dict, ts_ms: int) -> None:
        with self._tele_lock:
            self._tele_seq += 1
            seq = self._tele_seq
        self.broker.publish(Envelope(kind="PUB", topic=topic,
                                     correlation_id=f"{seq:032x}", seq=seq,
                                     ts_ms=ts_ms, payload=payload))

    # --- TCP listener -----------------------------------------------------------

    def _start_tcp(self, host: str, port: int) -> None:
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind((host, port))
        srv.listen(16)
        self._tcp_sock = srv
        self.tcp_address = srv.getsockname()[:2]
        t = threading.Thread(target=self._accept_loop, name="tcp-accept", daemon=True)
        t.start()
        self._threads.append(t)

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                sock, _ = self._tcp_sock.accept()
            except OSError:
                return
            conn = ClientConnection(self.gateway, "tcp")
            self.gateway.attach(conn)
            self.broker.register(conn.conn_id, conn.deliver)
            threading.Thread(target=self._tcp_reader, args=(sock, conn),
                             name=f"{conn.conn_id}-r", daemon=True).start()
            threading.Thread(target=self._tcp_writer, args=(sock, conn),
                             name=f"{conn.conn_id}-w", daemon=True).start()

    def _tcp_reader(self, sock: socket.socket, conn: ClientConnection) -> None:
        try:
            while not self._stopping.is_set():
                try:
                    body = protocol.read_frame(sock)
                except ProtocolError as e:
                    conn.send(Envelope(kind="ERR", topic="/sys/protocol",
                                       correlation_id="0" * 32, seq=0, ts_ms=0,
                                       payload={"code": e.code, "detail": e.detail}))
                    break
                if body is None:
                    break
                try:
                    env = protocol.decode_body(body)
                except ProtocolError as e:
                    conn.send(Envelope(kind="ERR", topic="/sys/protocol",
                                       correlation_id="0" * 32, seq=0, ts_ms=0,
                                       payload={"code": e.code, "detail": e.detail}))
                    continue
                err = conn.handle_inbound(env)
                if err is not None:
                    conn.send(err)
        except (ConnectionError, OSError):
            pass
        finally:
            conn.close()
            self.gateway.detach(conn)
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()

    def _tcp_writer(self, sock: socket.socket, conn: ClientConnection) -> None:
        try:
            while True:
                env = conn.queue.get(timeout=0.5)
                if env is None:
                    if conn.queue.closed:
                        return
                    continue
                sock.sendall(protocol.encode(env))
        except (ConnectionError, OSError):
            conn.close()

    # --- WebSocket listener + static assets ---------------------------------------

    def _start_ws(self, host: str, port: int) -> None:
        from websockets.sync.server import serve

        def handler(ws) -> None:
            conn = ClientConnection(self.gateway, "ws")
            self.gateway.attach(conn)
            self.broker.register(conn.conn_id, conn.deliver)
            writer = threading.Thread(target=self._ws_writer, args=(ws, conn),
                                      name=f"{conn.conn_id}-w", daemon=True)
            writer.start()
            try:
                for message in ws:
                    if isinstance(message, bytes):
                        message = message.decode("utf-8", errors="replace")
                    try:
                        env = protocol.decode_body(message)
                    except ProtocolError as e:
                        conn.send(Envelope(kind="ERR", topic="/sys/protocol",
                                           correlation_id="0" * 32, seq=0, ts_ms=0,
                                           payload={"code": e.code, "detail": e.detail}))
                        continue
                    err = conn.handle_inbound(env)
                    if err is not None:
                        conn.send(err)
            except Exception:
                pass
            finally:
                conn.close()
                self.gateway.detach(conn)

        self._ws_server = serve(handler, host, port, process_request=self._process_request)
        self.ws_address = self._ws_server.socket.getsockname()[:2]
        t = threading.Thread(target=self._ws_server.serve_forever, name="ws-serve", daemon=True)
        t.start()
        self._threads.append(t)

    def _ws_writer(self, ws, conn: ClientConnection) -> None:
        try:
            while True:
                env = conn.queue.get(timeout=0.5)
                if env is None:
                    if conn.queue.closed:
                        return
                    continue
                ws.send(protocol.encode_body(env).decode("utf-8"))
        except Exception:
            conn.close()

    def _process_request(self, ws_conn, request):
        """Serve console static assets on plain HTTP paths; continue the
        WebSocket handshake on /ws."""
        from websockets.datastructures import Headers
        from websockets.http11 import Response

        path = request.path.split("?", 1)[0]
        if path == "/ws" or "Upgrade" in request.headers.get("Connection", ""):
            return None
        if self.static_dir is None:
            return Response(HTTPStatus.NOT_FOUND, "Not Found", Headers(), b"no console assets")
        rel = "index.html" if path in ("", "/") else path.lstrip("/")
        target = (self.static_dir / rel).resolve()
        if not str(target).startswith(str(self.static_dir.resolve())) or not target.is_file():
            return Response(HTTPStatus.NOT_FOUND, "Not Found", Headers(), b"not found")
        ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        body = target.read_bytes()
        headers = Headers([("Content-Type", ctype), ("Content-Length", str(len(body)))])
        return Response(HTTPStatus.OK, "OK", headers, body)

    # --- lifecycle ----------------------------------------------------------------

    def start(self, tcp_host: str = "127.0.0.1", tcp_port: int = 0,
              ws_host: str = "127.0.0.1", ws_port: int = 0,
              engine_duration_s: float | None = None) -> None:
        self._start_tcp(tcp_host, tcp_port)
        self._start_ws(ws_host, ws_port)
        self.gateway.publish_status()

        def engine_main() -> None:
            self.perf_report = self.engine.run(engine_duration_s, mode=self.mode)

        self._engine_thread = threading.Thread(target=engine_main, name="engine", daemon=True)
        self._engine_thread.start()

    def wait(self) -> None:
        if self._engine_thread is not None:
            self._engine_thread.join()

    def stop(self) -> None:
        self._stopping.set()
        self.engine.request_stop()
        if self._engine_thread is not None:
            self._engine_thread.join(timeout=5.0)
        if self._tcp_sock is not None:
            try:
                self._tcp_sock.close()
            except OSError:
                pass
        if self._ws_server is not None:
            self._ws_server.shutdown()
        self.timeline.stop()


def _parse_hostport(text: str, default_port: int = 0) -> tuple[str, int]:
    if ":" in text:
        host, port = text.rsplit(":", 1)
        return host or "127.0.0.1", int(port)
    return text, default_port


def load_gateway_config(path: str | None) -> GatewayConfig:
    if path is None:
        path = os.environ.get(GATEWAY_CONFIG_ENV)
    if path is None:
        return GatewayConfig.demo()
    with open(path, "r", encoding="utf-8") as f:
        return GatewayConfig.from_dict(json.load(f))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="greensim",
                                     description="greenhouse teleoperation simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run the simulator and serve the gateway")
    run_p.add_argument("--scenario", required=True, help="scenario JSON file")
    run_p.add_argument("--mode", choices=("realtime", "afap"), default="realtime")
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--listen", default=None, help="TCP listener addr:port")
    run_p.add_argument("--ws-listen", default=None, help="WebSocket listener addr:port")
    run_p.add_argument("--gateway-config", default=None,
                       help=f"gateway config JSON (or ${GATEWAY_CONFIG_ENV})")
    run_p.add_argument("--duration", type=float, default=None,
                       help="run time in seconds (default: until interrupted)")
    run_p.add_argument("--report", default=None, help="write the PerfReport JSON here")
    run_p.add_argument("--static-dir", default=None,
                       help="console static assets served on the WS listener")
    args = parser.parse_args(argv)

    gw_config = load_gateway_config(args.gateway_config)
    tcp_host, tcp_port = _parse_hostport(args.listen or gw_config.tcp_listen, 7600)
    ws_host, ws_port = _parse_hostport(args.ws_listen or gw_config.ws_listen, 7601)
    static_dir = args.static_dir
    if static_dir is None:
        guess = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        if guess.is_dir():
            static_dir = str(guess)

    with open(args.scenario, "r", encoding="utf-8") as f:
        scenario_text = f.read()
    server = GreensimServer(scenario_text, gw_config, seed=args.seed, mode=args.mode,
                            static_dir=static_dir)
    server.start(tcp_host, tcp_port, ws_host, ws_port, engine_duration_s=args.duration)
    print(f"greensim: tcp {server.tcp_address[0]}:{server.tcp_address[1]}  "
          f"ws {server.ws_address[0]}:{server.ws_address[1]}  mode={args.mode} seed={args.seed}",
          flush=True)
    try:
        server.wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    if server.perf_report is not None:
        print(server.perf_report.human_table())
        if args.report:
            with open(args.report, "w", encoding="utf-8") as f:
                json.dump(server.perf_report.to_dict(), f, indent=2)
            print(f"report written to {args.report}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
