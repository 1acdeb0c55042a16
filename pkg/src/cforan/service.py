"""HTTP surface for the operator console.

Endpoints (all JSON, schema tag "cforan.v1"):
  GET  /world    static topology and scenario facts
  GET  /state    latest loop snapshot (initial all-on state before loop 1)
  POST /intent   submit an operator intent; echoes the parsed objective and
                 queues it for the next loop boundary
  GET  /events   server-sent events: one `snapshot` per loop, `message` per
                 agent message, `intent` on application, final `run-end`

The simulation loop is the single writer; readers get immutable published
snapshots. Multiple event-stream subscribers are supported.
"""
from __future__ import annotations

import json
import queue
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from .grammar import IntentParseError
from .runtime import ScenarioRunner

SCHEMA = "cforan.v1"


class LiveRunner:
    """Steps a scenario in a background thread, publishing events."""

    def __init__(self, runner: ScenarioRunner, loop_delay_s: float = 0.0):
        self.runner = runner
        self.loop_delay_s = loop_delay_s
        self._lock = threading.Lock()
        self._subscribers: list[queue.Queue] = []
        self._events: list[dict] = []        # full log, replayed to late joiners
        self._latest: Optional[dict] = None
        self._msg_cursor = 0
        self._thread: Optional[threading.Thread] = None

    # -- pub/sub ----------------------------------------------------------
    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue()
        with self._lock:
            for event in self._events:
                q.put(event)
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def _publish(self, event: dict) -> None:
        with self._lock:
            self._events.append(event)
            subscribers = list(self._subscribers)
        for q in subscribers:
            q.put(event)

    # -- state ------------------------------------------------------------
    def state(self) -> dict:
        with self._lock:
            latest = self._latest
        if latest is None:
            world = self.runner.world
            latest = {
                "loop": 0,
                "rates_mbps": [0.0] * world.num_users,
                "z": [1] * world.num_orus,
                "alpha": [1.0] * world.num_users,
                "mu": [0.0] * world.num_users,
                "lam": world.oru.penalties.lam.tolist(),
                "upsilon": [0.0] * world.num_users,
                "active_count": world.num_orus,
                "active_fraction": 1.0,
                "decision": "ok",
                "memory_hit": False,
                "energy_saving": False,
            }
        return {"schema": SCHEMA, "event": "snapshot",
                "pending_intents": len(self.runner._pending),
                "finished": self.runner.finished, **latest}

    def world_info(self) -> dict:
        world = self.runner.world
        topo = getattr(world, "topology", None)
        return {
            "schema": SCHEMA,
            "scenario": self.runner.scenario.name,
            "mode": self.runner.mode,
            "num_users": world.num_users,
            "num_orus": world.num_orus,
            "total_loops": self.runner.scenario.total_loops,
            "area_side_m": self.runner.scenario.network.area_side_m,
            "oru_positions": topo.oru_positions.tolist() if topo is not None else [],
            "user_positions": topo.user_positions.tolist() if topo is not None else [],
            "r_min_mbps": world.r_min.tolist(),
        }

    def submit_intent(self, text: str) -> dict:
        objective = self.runner.submit_intent(text)
        ack = {"schema": SCHEMA, "event": "intent-ack", "accepted": True,
               "text": text, "objective": objective.as_dict()}
        self._publish(ack)
        return ack

    # -- loop thread --------------------------------------------------------
    def start(self) -> None:
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _drain_events(self) -> None:
        intents = self.runner.record.intents
        messages = self.runner.world.bus.record()
        for msg in messages[self._msg_cursor:]:
            self._publish({"schema": SCHEMA, "event": "message",
                           **msg.as_record()})
        self._msg_cursor = len(messages)
        if intents and intents[-1]["loop"] == self.runner.loop:
            self._publish({"schema": SCHEMA, "event": "intent", **intents[-1]})

    def _run(self) -> None:
        runner = self.runner
        total = runner.scenario.total_loops
        cfg = runner.scenario.agents
        while True:
            snapshot = runner.step()
            with self._lock:
                self._latest = {**snapshot, "r_min_mbps": runner.world.r_min.tolist()}
            self._drain_events()
            self._publish({"schema": SCHEMA, "event": "snapshot",
                           "r_min_mbps": runner.world.r_min.tolist(), **snapshot})
            if self.loop_delay_s:
                time.sleep(self.loop_delay_s)
            if total > 0 and runner.loop >= total:
                break
            if total == 0 and runner._episode_done() and not runner._pending:
                break
            if runner.loop >= total + cfg.loop_cap + 1000:
                break
        runner.finished = True
        self._publish({"schema": SCHEMA, "event": "run-end",
                       "loops": runner.loop})

    def join(self, timeout: Optional[float] = None) -> None:
        if self._thread is not None:
            self._thread.join(timeout)


def _make_handler(live: LiveRunner):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):                     # quiet server
            pass

        def _send_json(self, payload: dict, status: int = 200) -> None:
            body = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            if self.path == "/state":
                self._send_json(live.state())
            elif self.path == "/world":
                self._send_json(live.world_info())
            elif self.path == "/events":
                self._stream_events()
            else:
                self._send_json({"schema": SCHEMA, "error": "not found"}, 404)

        def do_POST(self):
            if self.path != "/intent":
                self._send_json({"schema": SCHEMA, "error": "not found"}, 404)
                return
            length = int(self.headers.get("Content-Length", 0))
            try:
                data = json.loads(self.rfile.read(length) or b"{}")
                text = data["text"]
            except (json.JSONDecodeError, KeyError):
                self._send_json({"schema": SCHEMA, "event": "intent-ack",
                                 "accepted": False,
                                 "error": "body must be JSON with a 'text' field"},
                                400)
                return
            try:
                ack = live.submit_intent(text)
            except (IntentParseError, ValueError) as exc:
                self._send_json({"schema": SCHEMA, "event": "intent-ack",
                                 "accepted": False, "text": text,
                                 "error": str(exc)}, 422)
                return
            self._send_json(ack)

        def _stream_events(self):
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            q = live.subscribe()
            try:
                while True:
                    try:
                        event = q.get(timeout=30.0)
                    except queue.Empty:
                        self.wfile.write(b": keep-alive\n\n")
                        self.wfile.flush()
                        continue
                    name = event.get("event", "snapshot")
                    data = json.dumps(event)
                    self.wfile.write(f"event: {name}\ndata: {data}\n\n".encode())
                    self.wfile.flush()
                    if name == "run-end":
                        break
            except (BrokenPipeError, ConnectionResetError):
                pass
            finally:
                live.unsubscribe(q)

    return Handler


class ServiceHandle:
    def __init__(self, server: ThreadingHTTPServer, live: LiveRunner):
        self.server = server
        self.live = live
        self.port = server.server_address[1]
        self._thread = threading.Thread(target=server.serve_forever, daemon=True)

    def start(self) -> "ServiceHandle":
        self._thread.start()
        self.live.start()
        return self

    def wait_finished(self, timeout: Optional[float] = None) -> None:
        self.live.join(timeout)

    def stop(self) -> None:
        self.server.shutdown()
        self.server.server_close()


def serve(runner: ScenarioRunner, host: str = "127.0.0.1", port: int = 0,
          loop_delay_s: float = 0.0) -> ServiceHandle:
    """Start the service; loops begin immediately in a background thread."""
    live = LiveRunner(runner, loop_delay_s)
    server = ThreadingHTTPServer((host, port), _make_handler(live))
    return ServiceHandle(server, live).start()
