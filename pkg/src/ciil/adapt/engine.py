"""Adaptation buffer and the cadence-driven retraining step."""

from __future__ import annotations

import logging
import threading
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import UsageError
from ..nn import AdamState, OptimizerConfig, forward, soft_cross_entropy
from ..nn.model import backward
from ..nn.optim import adamw_step
from .context import GRASP_RADIUS, Suitability
from .spreading import build_affinity, label_spread

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdaptConfig:
    grasp_radius: float = GRASP_RADIUS
    cadence: float = 2.0
    alpha: float = 0.2
    neg_weight: float = 0.25
    knn_k: int = 7
    spread_tol: float = 1e-6
    spread_max_iter: int = 1000
    adapt_epochs: int = 1

    def __post_init__(self):
        if not 0 <= self.alpha < 1:
            raise ValueError("alpha must be in [0, 1)")
        if self.cadence <= 0:
            raise ValueError("cadence must be positive")
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")


@dataclass
class AdaptSample:
    frame: np.ndarray
    suitability: Suitability
    pseudo_label: np.ndarray
    time: float = 0.0
    seq: int = -1

    def __post_init__(self):
        if self.suitability == Suitability.NONE:
            raise UsageError("samples outside every grasp radius are never buffered")
        p = np.asarray(self.pseudo_label, dtype=np.float64)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise UsageError("pseudo_label must be a distribution")
        self.pseudo_label = p


class AdaptBuffer:
    """Single-producer / single-consumer queue of AdaptSamples."""

    def __init__(self):
        self._items: list[AdaptSample] = []
        self._lock = threading.Lock()
        self._seq = 0

    def accumulate(self, sample: AdaptSample) -> None:
        if sample.suitability == Suitability.NONE:
            raise UsageError("suitability none is rejected upstream")
        with self._lock:
            sample.seq = self._seq
            self._seq += 1
            self._items.append(sample)

    def drain(self) -> list[AdaptSample]:
        with self._lock:
            items, self._items = self._items, []
        return items

    def __len__(self):
        with self._lock:
            return len(self._items)


@dataclass
class AdaptReport:
    sim_time: float
    n_samples: int
    n_pos: int
    n_neg: int
    loss: float | None
    old_version: int
    new_version: int
    skipped: bool
    error: str | None = None

    def to_dict(self):
        return asdict(self)


@dataclass
class Adapter:
    """Owns the optimizer state and rng used by successive adaptation steps."""

    handle: object
    buffer: AdaptBuffer = field(default_factory=AdaptBuffer)
    cfg: AdaptConfig = field(default_factory=AdaptConfig)
    opt_cfg: OptimizerConfig = field(default_factory=OptimizerConfig)
    opt: AdamState | None = None
    seed: int = 0
    reports: list = field(default_factory=list)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)

    def step(self, sim_time: float) -> AdaptReport:
        report = adapt_step(self.handle, self.buffer, self, sim_time)
        self.reports.append(report)
        return report


def _train_one_epoch(model, frames, targets, adapter):
    cfg = adapter.opt_cfg
    n = frames.shape[0]
    order = adapter.rng.permutation(n)
    total = 0.0
    for lo in range(0, n, cfg.batch_size):
        idx = order[lo : lo + cfg.batch_size]
        logits, cache = forward(model, frames[idx], mode="train", rng=adapter.rng, bn_mode="frozen")
        loss, dlogits = soft_cross_entropy(logits, targets[idx], return_grad=True)
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite adaptation loss")
        grads = backward(model, cache, dlogits)
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise FloatingPointError("non-finite gradient")
        adamw_step(model, grads, adapter.opt, cfg)
        total += loss * len(idx)
    return total / n


def adapt_step(handle, buffer: AdaptBuffer, adapter: Adapter, sim_time: float = 0.0) -> AdaptReport:
    """Drain the buffer, refine pseudo-labels, retrain, and publish a new version."""
    samples = buffer.drain()
    current = handle.get()
    n_pos = sum(s.suitability == Suitability.POSITIVE for s in samples)
    report = AdaptReport(sim_time, len(samples), n_pos, len(samples) - n_pos, None,
                         current.version, current.version, True)
    if len(samples) < 2:
        return report
    cfg = adapter.cfg
    saved_opt = adapter.opt
    try:
        S = build_affinity(samples, k=cfg.knn_k)
        labels = label_spread(S, samples, cfg)
        frames = np.stack([np.asarray(getattr(s.frame, "values", s.frame)) for s in samples]).astype(current.dtype)
        work = current.copy()
        # train against a copy so a failure leaves both model and optimizer untouched
        adapter.opt = saved_opt.copy() if saved_opt is not None else AdamState.zeros_like(work)
        loss = None
        for _ in range(cfg.adapt_epochs):
            loss = _train_one_epoch(work, frames, labels, adapter)
        work.mode = "eval"
        work.lineage = work.lineage + [{"adapt_time": round(sim_time, 6), "n": len(samples)}]
    except (FloatingPointError, ValueError, UsageError) as exc:
        log.warning("adaptation at t=%.2f failed: %s", sim_time, exc)
        adapter.opt = saved_opt
        report.error = str(exc)
        return report
    handle.publish(work)
    report.loss = float(loss)
    report.new_version = work.version
    report.skipped = False
    return report
