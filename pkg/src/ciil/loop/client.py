"""Scripted client: replays a recorded stream to a running server."""

from __future__ import annotations

import socket
import threading
import time

import numpy as np

from ..emg.stream import WINDOW_STRIDE
from .protocol import SeqCounter, decode_message, encode_message


class ReplayClient:
    def __init__(self, endpoint: str, timeout: float = 10.0):
        host, _, port = endpoint.rpartition(":")
        self.sock = socket.create_connection((host or "127.0.0.1", int(port)), timeout=timeout)
        self.sock.settimeout(0.2)
        self.seq = SeqCounter()
        self.received = []
        self.recv_times = []
        self._stop = threading.Event()
        self._reader = threading.Thread(target=self._read, daemon=True)
        self._reader.start()

    def _read(self):
        buf = b""
        while not self._stop.is_set():
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                continue
            except OSError:
                break
            if not chunk:
                break
            buf += chunk
            while b"\n" in buf:
                line, buf = buf.split(b"\n", 1)
                self.received.append(decode_message(line))
                self.recv_times.append(time.perf_counter())

    def send(self, kind, payload):
        self.sock.sendall(encode_message(self.seq.make(kind, payload)))

    def send_raw(self, line: bytes):
        self.sock.sendall(line if line.endswith(b"\n") else line + b"\n")

    def predictions(self):
        return [m for m in self.received if m.kind == "prediction"]

    def wait_for(self, predicate, timeout=10.0):
        end = time.monotonic() + timeout
        while time.monotonic() < end:
            if predicate(self):
                return True
            time.sleep(0.005)
        return False

    def close(self):
        self._stop.set()
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
        self._reader.join(timeout=2.0)


def replay(endpoint: str, data: np.ndarray, block: int = WINDOW_STRIDE, realtime: bool = False,
           sample_rate: int = 2000, context=None, end_trial: bool = True) -> dict:
    """Stream ``data`` (channels x samples) in ``block``-sample messages.

    With ``realtime`` the sender paces itself to the sample clock; otherwise it
    sends as fast as the server keeps up. Returns received messages and timing.
    """
    client = ReplayClient(endpoint)
    sent_at = {}
    n = data.shape[1]
    t0 = time.perf_counter()
    try:
        if context is not None:
            client.send("context", context)
        for k, lo in enumerate(range(0, n, block)):
            chunk = data[:, lo : lo + block]
            if realtime:
                lag = t0 + lo / sample_rate - time.perf_counter()
                if lag > 0:
                    time.sleep(lag)
            sent_at[lo + chunk.shape[1]] = time.perf_counter()
            client.send("emg", {"channels": np.round(chunk, 9).tolist(), "start_index": lo})
        expected = max(0, (n - 400) // WINDOW_STRIDE + 1)
        client.wait_for(lambda c: len(c.predictions()) >= expected, timeout=30.0)
        t_done = time.perf_counter()
        if end_trial:
            client.send("control", {"action": "end_trial"})
            client.wait_for(lambda c: any(m.kind == "control" and m.payload.get("message") == "end_trial"
                                          for m in c.received), timeout=5.0)
    finally:
        client.close()
    preds = client.predictions()
    latencies = []
    times = dict(zip(map(id, client.received), client.recv_times))
    for m in preds:
        end = m.payload["window_start"] + 400
        if end in sent_at:
            latencies.append(times[id(m)] - sent_at[end])
    return {
        "messages": client.received,
        "predictions": preds,
        "elapsed": t_done - t0,
        "latencies": latencies,
    }
