"""Closed-loop trial driver: samples in, one prediction per stride out."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import SAMPLE_RATE
from ..adapt import AdaptSample, Suitability, assess_context, make_pseudo_label
from ..emg import FilterConfig, StreamFilter, WindowAccumulator, extract_tdpsd, push_samples
from ..emg.stream import WINDOW_LENGTH, WINDOW_STRIDE, SampleBlock
from ..errors import ConfigError, UsageError
from ..nn import predict

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LoopConfig:
    mode: str = "NA"
    stride_time: float = 0.05
    adapt_cadence: float = 2.0
    clock: str = "simulated"
    endpoint: str | None = None
    duration: float = 300.0
    grasp_radius: float = 0.10

    def __post_init__(self):
        if self.mode not in ("NA", "CIIL"):
            raise ConfigError(f"mode must be NA or CIIL, got {self.mode!r}")
        if self.clock not in ("simulated", "wall"):
            raise ConfigError(f"clock must be simulated or wall, got {self.clock!r}")
        if abs(self.stride_time * SAMPLE_RATE - WINDOW_STRIDE) > 1e-9:
            raise ConfigError(f"stride_time must equal {WINDOW_STRIDE / SAMPLE_RATE} s")
        ratio = self.adapt_cadence / self.stride_time
        if self.adapt_cadence <= 0 or abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("adapt_cadence must be a positive multiple of stride_time")

    @property
    def strides_per_tick(self) -> int:
        return int(round(self.adapt_cadence / self.stride_time))

    @property
    def n_strides(self) -> int:
        return int(round(self.duration / self.stride_time))


class Pipeline:
    """Filter -> window -> TDPSD -> predict, fed one block at a time."""

    def __init__(self, handle, filter_cfg: FilterConfig | None = None):
        self.handle = handle
        self.filter = StreamFilter(filter_cfg or FilterConfig())
        self.acc = WindowAccumulator()

    def push(self, block: SampleBlock):
        filtered = SampleBlock(self.filter.process(block.channels), block.start_index, block.sample_rate)
        out = []
        for w in push_samples(filtered, self.acc):
            frame = extract_tdpsd(w)
            model = self.handle.get()
            cls, probs = predict(model, frame.values)
            out.append((w.start_index, frame, cls, probs, model.version))
        return out


class JsonlSink:
    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w")

    def write(self, record):
        self._fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")

    def flush(self):
        self._fh.flush()

    def close(self):
        if not self._fh.closed:
            self._fh.close()


class ListSink:
    def __init__(self):
        self.records = []

    def write(self, record):
        self.records.append(record)

    def flush(self):
        pass

    def close(self):
        pass


@dataclass
class TrialLog:
    records: list = field(default_factory=list)
    n_predictions: int = 0
    adapt_ticks: int = 0
    truncated: bool = False
    versions: list = field(default_factory=list)

    def windows(self):
        return [r for r in self.records if r["event_type"] == "window"]

    def events(self):
        return [r for r in self.records if r["event_type"] != "adapt"]


def _round_probs(p):
    return [round(float(v), 6) for v in p]


def run_loop(source, handle, adapter=None, sink=None, cfg: LoopConfig | None = None,
             keep_records: bool = True) -> TrialLog:
    """Drive ``source`` for ``cfg.duration`` seconds of loop time.

    ``source.next_block()`` returns ``(SampleBlock, context)`` or ``None`` when
    exhausted; ``context`` is ``(object_id, distance, allowed)`` or ``None``.
    ``source.deliver(pred)`` closes the loop and returns scene events.
    """
    cfg = cfg or LoopConfig()
    if cfg.mode == "CIIL" and adapter is None:
        raise UsageError("CIIL mode requires an adapter")
    pipe = Pipeline(handle)
    trial = TrialLog()
    executor = ThreadPoolExecutor(max_workers=1) if (cfg.clock == "wall" and adapter) else None
    pending = []
    t_start = time.perf_counter()
    na_version = handle.version

    def emit(rec):
        if sink is not None:
            sink.write(rec)
        if keep_records:
            trial.records.append(rec)

    def finish_tick(report):
        emit({"event_type": "adapt", **report.to_dict()})

    for i in range(cfg.n_strides):
        sim_time = round((i + 1) * cfg.stride_time, 6)
        item = source.next_block()
        if item is None:
            trial.truncated = True
            emit({"event_type": "warning", "sim_time": sim_time,
                  "message": "source exhausted before trial duration"})
            log.warning("source exhausted at t=%.2f", sim_time)
            break
        block, ctx = item
        for start, frame, cls, probs, version in pipe.push(block):
            suit = Suitability.NONE
            oid, dist, allowed = ctx if ctx is not None else (None, None, frozenset())
            if ctx is not None:
                suit = assess_context(cls, dist, allowed, cfg.grasp_radius)
            events = source.deliver(cls)
            rec = {
                "event_type": "window",
                "sim_time": sim_time,
                "seq": trial.n_predictions,
                "window_start": start,
                "predicted": int(cls),
                "intent": getattr(source, "last_intent", None),
                "model_version": version,
                "suitability": suit.value,
                "object_id": oid,
                "distance": None if dist is None else round(float(dist), 6),
                "hand_pos": getattr(source, "hand_pos", None),
            }
            emit(rec)
            for ev in events:
                emit({**ev, "predicted": int(cls), "intent": rec["intent"], "model_version": version})
            trial.n_predictions += 1
            trial.versions.append(version)
            if cfg.mode == "CIIL" and suit != Suitability.NONE:
                adapter.buffer.accumulate(AdaptSample(
                    frame.values, suit, make_pseudo_label(suit, cls, allowed), sim_time))
        if cfg.mode == "NA" and handle.version != na_version:
            raise UsageError("model changed during an NA trial")
        if cfg.mode == "CIIL" and (i + 1) % cfg.strides_per_tick == 0:
            trial.adapt_ticks += 1
            if executor is None:
                finish_tick(adapter.step(sim_time))
            else:
                fut = executor.submit(adapter.step, sim_time)
                pending.append(fut)
        if cfg.clock == "wall":
            lag = t_start + (i + 1) * cfg.stride_time - time.perf_counter()
            if lag > 0:
                time.sleep(lag)
        while pending and pending[0].done():
            finish_tick(pending.pop(0).result())
    for fut in pending:
        finish_tick(fut.result())
    if executor is not None:
        executor.shutdown(wait=True)
    if sink is not None:
        sink.flush()
    return trial


class SimSource:
    """Synthetic user and scene packaged as a sample source for :func:`run_loop`."""

    def __init__(self, scene, agent, synth, stride_time=0.05, preroll=WINDOW_LENGTH - WINDOW_STRIDE):
        self.scene = scene
        self.agent = agent
        self.synth = synth
        self.dt = stride_time
        self.preroll = preroll
        self.last_intent = scene.rest_class
        self.hand_pos = [round(float(v), 6) for v in scene.hand]
        self._pending_pos = scene.hand.copy()
        self._last_pred = None

    def next_block(self):
        sc = self.scene
        if self.preroll:
            # rest samples before t=0 so the first stride already completes a window
            rest = self.synth.block(sc.rest_class, self.preroll / SAMPLE_RATE)
            self.preroll = 0
        else:
            rest = None
        intent, vel = self.agent.act(self.dt)
        pos = sc.hand + vel * self.dt
        sc.hand = pos
        self._pending_pos = pos
        self.last_intent = intent
        self.hand_pos = [round(float(v), 6) for v in pos]
        ctx = sc.context()
        block = self.synth.block(intent, self.dt)
        if rest is not None:
            block = SampleBlock(np.concatenate([rest.channels, block.channels], axis=1), rest.start_index)
        return block, ctx

    def deliver(self, predicted):
        events = self.scene.step(self.dt, self._pending_pos, predicted)
        self.agent.observe(predicted, self.last_intent)
        return [e.to_dict() for e in events]


class ArraySource:
    """Replays a recorded (channels, samples) array; no scene, no context."""

    def __init__(self, data: np.ndarray, block: int = WINDOW_STRIDE, start_index: int = 0, context=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.block = block
        self.pos = 0
        self.start = start_index
        self.context = context
        self.last_intent = None

    def next_block(self):
        if self.pos >= self.data.shape[1]:
            return None
        chunk = self.data[:, self.pos : self.pos + self.block]
        blk = SampleBlock(chunk, self.start + self.pos)
        self.pos += chunk.shape[1]
        return blk, self.context

    def deliver(self, predicted):
        return []
