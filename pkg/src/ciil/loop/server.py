"""Single-client TCP server speaking the NDJSON protocol."""

from __future__ import annotations

import logging
import socket
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..adapt import AdaptSample, Suitability, assess_context, make_pseudo_label
from ..emg.stream import SampleBlock
from ..errors import CiilError, ProtocolError
from ..nn import save_checkpoint
from .protocol import SeqCounter, decode_message, encode_message
from .runner import LoopConfig, Pipeline

log = logging.getLogger(__name__)


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must be host:port, got {endpoint!r}")
    return host or "127.0.0.1", int(port)


class Session:
    """State for one connected client."""

    def __init__(self, conn, handle, adapter, cfg: LoopConfig, sink=None):
        self.conn = conn
        self.handle = handle
        self.adapter = adapter
        self.cfg = cfg
        self.mode = cfg.mode
        self.sink = sink
        self.pipe = Pipeline(handle)
        self.seq = SeqCounter()
        self.write_lock = threading.Lock()
        self.context = None
        self.n_predictions = 0
        self.executor = ThreadPoolExecutor(max_workers=1) if adapter is not None else None
        self.futures = []
        self.ended = False

    def send(self, kind, payload):
        with self.write_lock:
            msg = self.seq.make(kind, payload)
            self.conn.sendall(encode_message(msg))
            if self.sink is not None:
                self.sink.write({"event_type": f"sent_{kind}", "seq": msg.seq, **payload})

    def error(self, message, field=None):
        self.send("control", {"action": "error", "message": message, "field": field})

    def handle_line(self, line: bytes):
        try:
            msg = decode_message(line)
        except ProtocolError as exc:
            self.error(str(exc), exc.field)
            return
        try:
            getattr(self, f"on_{msg.kind}", self.on_unexpected)(msg)
        except (CiilError, ValueError) as exc:
            self.error(str(exc), getattr(exc, "field", None))

    def on_unexpected(self, msg):
        self.error(f"servers do not accept {msg.kind} messages", "kind")

    def on_context(self, msg):
        p = msg.payload
        self.context = (p.get("object_id"), float(p["distance"]), frozenset(int(g) for g in p["allowed_grasps"]))

    def on_control(self, msg):
        action = msg.payload["action"]
        if action == "start_trial":
            mode = str(msg.payload["mode"]).upper()
            if mode not in ("NA", "CIIL") or (mode == "CIIL" and self.adapter is None):
                raise ProtocolError(f"mode {mode!r} unavailable", field="mode")
            self.mode = mode
        elif action == "checkpoint":
            self.drain_adaptation()
            save_checkpoint(self.handle.get(), getattr(self.adapter, "opt", None), msg.payload["path"])
        elif action in ("end_trial", "shutdown"):
            self.ended = True
        self.send("control", {"action": "ack", "message": action})

    def on_emg(self, msg):
        data = np.asarray(msg.payload["channels"], dtype=np.float64)
        block = SampleBlock(data, int(msg.payload["start_index"]))
        for start, frame, cls, probs, version in self.pipe.push(block):
            self.send("prediction", {
                "window_start": start,
                "predicted": int(cls),
                "model_version": version,
                "probs": [round(float(v), 6) for v in probs],
            })
            self.n_predictions += 1
            self.accumulate(frame, cls)
            if self.mode == "CIIL" and self.n_predictions % self.cfg.strides_per_tick == 0:
                sim_time = round(self.n_predictions * self.cfg.stride_time, 6)
                self.futures.append(self.executor.submit(self._tick, sim_time))

    def accumulate(self, frame, cls):
        if self.mode != "CIIL" or self.context is None:
            return
        oid, dist, allowed = self.context
        suit = assess_context(cls, dist, allowed, self.cfg.grasp_radius) if allowed else Suitability.NONE
        if suit != Suitability.NONE:
            self.adapter.buffer.accumulate(
                AdaptSample(frame.values, suit, make_pseudo_label(suit, cls, allowed)))

    def _tick(self, sim_time):
        report = self.adapter.step(sim_time)
        try:
            self.send("adapt_report", report.to_dict())
        except OSError:
            pass
        return report

    def drain_adaptation(self):
        for fut in self.futures:
            fut.result()
        self.futures = []

    def close(self):
        self.drain_adaptation()
        if self.executor is not None:
            self.executor.shutdown(wait=True)


def serve(endpoint, handle, adapter=None, cfg: LoopConfig | None = None, stop_event=None,
          checkpoint_path=None, sink=None, on_ready=None, accept_timeout=None) -> dict:
    """Serve one client session, then tear down.

    Returns a summary dict. ``stop_event`` ends the session early (the
    SIGTERM path); either way logs are flushed and, if ``checkpoint_path`` is
    given, the live model is checkpointed.
    """
    cfg = cfg or LoopConfig()
    stop_event = stop_event or threading.Event()
    host, port = parse_endpoint(endpoint)
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        srv.bind((host, port))
    except OSError as exc:
        srv.close()
        raise OSError(f"cannot bind {endpoint}: {exc}") from exc
    srv.listen(1)
    srv.settimeout(0.1)
    if on_ready is not None:
        on_ready(srv.getsockname())
    summary = {"predictions": 0, "clean": True, "connected": False}
    session = None
    deadline = None if accept_timeout is None else time.monotonic() + accept_timeout
    try:
        conn = None
        while not stop_event.is_set():
            if deadline is not None and time.monotonic() > deadline:
                break
            try:
                conn, _ = srv.accept()
                break
            except socket.timeout:
                continue
        if conn is not None:
            summary["connected"] = True
            conn.settimeout(0.1)
            session = Session(conn, handle, adapter, cfg, sink)
            buf = b""
            while not stop_event.is_set() and not session.ended:
                try:
                    chunk = conn.recv(65536)
                except socket.timeout:
                    continue
                except OSError:
                    break
                if not chunk:
                    break
                buf += chunk
                while b"\n" in buf:
                    line, buf = buf.split(b"\n", 1)
                    if line.strip():
                        session.handle_line(line)
                    if session.ended:
                        break
            session.close()
            summary["predictions"] = session.n_predictions
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()
    finally:
        srv.close()
        if sink is not None:
            sink.flush()
        if checkpoint_path is not None:
            save_checkpoint(handle.get(), getattr(adapter, "opt", None), checkpoint_path)
            summary["checkpoint"] = str(checkpoint_path)
    summary["stopped"] = stop_event.is_set()
    return summary
