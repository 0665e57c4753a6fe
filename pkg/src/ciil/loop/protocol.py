"""Newline-delimited JSON wire messages."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .. import N_CHANNELS
from ..errors import ProtocolError

# kind -> (required payload fields, optional payload fields)
SCHEMA = {
    "emg": (("channels", "start_index"), ("sample_rate",)),
    "context": (("distance", "allowed_grasps"), ("time", "object_id", "hand_pos", "intent")),
    "prediction": (("window_start", "predicted", "model_version"), ("probs", "sim_time")),
    "adapt_report": (
        ("sim_time", "n_samples", "skipped", "old_version", "new_version"),
        ("n_pos", "n_neg", "loss", "error"),
    ),
    "control": (("action",), ("mode", "duration", "seed", "path", "message", "field")),
}

CONTROL_REQUIRES = {
    "start_trial": ("mode", "duration", "seed"),
    "end_trial": (),
    "checkpoint": ("path",),
    "error": ("message",),
    "ack": (),
    "shutdown": (),
}


@dataclass
class WireMessage:
    kind: str
    seq: int
    payload: dict = field(default_factory=dict)


def _check_payload(kind, payload):
    required, optional = SCHEMA[kind]
    for name in required:
        if name not in payload:
            raise ProtocolError(f"{kind} message missing field {name!r}", field=name)
    if kind == "emg":
        ch = payload["channels"]
        if not isinstance(ch, list) or len(ch) != N_CHANNELS:
            raise ProtocolError(f"emg message needs {N_CHANNELS} channels", field="channels")
        lengths = {len(c) if isinstance(c, list) else -1 for c in ch}
        if len(lengths) != 1 or -1 in lengths:
            raise ProtocolError("emg channels must be equal-length lists", field="channels")
        for c in ch:
            for v in c:
                if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                    raise ProtocolError("emg samples must be finite numbers", field="channels")
        if not isinstance(payload["start_index"], int) or payload["start_index"] < 0:
            raise ProtocolError("start_index must be a non-negative integer", field="start_index")
    elif kind == "context":
        if not isinstance(payload["allowed_grasps"], list):
            raise ProtocolError("allowed_grasps must be a list", field="allowed_grasps")
        d = payload["distance"]
        if not isinstance(d, (int, float)) or d < 0:
            raise ProtocolError("distance must be a non-negative number", field="distance")
    elif kind == "control":
        action = payload["action"]
        if action not in CONTROL_REQUIRES:
            raise ProtocolError(f"unknown control action {action!r}", field="action")
        for name in CONTROL_REQUIRES[action]:
            if name not in payload:
                raise ProtocolError(f"control {action} missing {name!r}", field=name)
    return {k: payload[k] for k in required + optional if k in payload}


def encode_message(msg: WireMessage) -> bytes:
    if msg.kind not in SCHEMA:
        raise ProtocolError(f"unknown message kind {msg.kind!r}", field="kind")
    payload = _check_payload(msg.kind, msg.payload)
    line = json.dumps({"kind": msg.kind, "seq": msg.seq, "payload": payload}, separators=(",", ":"))
    return line.encode() + b"\n"


def decode_message(line: bytes | str) -> WireMessage:
    if isinstance(line, bytes):
        try:
            line = line.decode()
        except UnicodeDecodeError as exc:
            raise ProtocolError("message is not UTF-8", field=None) from exc
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed JSON: {exc.msg}", field=None) from exc
    if not isinstance(obj, dict):
        raise ProtocolError("message must be a JSON object", field=None)
    for name in ("kind", "seq", "payload"):
        if name not in obj:
            raise ProtocolError(f"message missing field {name!r}", field=name)
    kind = obj["kind"]
    if kind not in SCHEMA:
        raise ProtocolError(f"unknown message kind {kind!r}", field="kind")
    seq = obj["seq"]
    if not isinstance(seq, int) or isinstance(seq, bool) or seq < 0:
        raise ProtocolError("seq must be a non-negative integer", field="seq")
    if not isinstance(obj["payload"], dict):
        raise ProtocolError("payload must be an object", field="payload")
    return WireMessage(kind, seq, _check_payload(kind, obj["payload"]))


class SeqCounter:
    """Gapless per-kind sequence numbers for one connection."""

    def __init__(self):
        self._next: dict[str, int] = {}

    def make(self, kind, payload) -> WireMessage:
        seq = self._next.get(kind, 0)
        self._next[kind] = seq + 1
        return WireMessage(kind, seq, payload)
