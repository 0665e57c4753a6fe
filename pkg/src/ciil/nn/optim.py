"""AdamW with decoupled weight decay, and the mini-batch training loop."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import UsageError
from .model import NO_DECAY, PARAM_ORDER, ModelState, backward, forward, soft_cross_entropy


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    weight_decay: float = 0.01
    epochs_offline: int = 15
    batch_size: int = 32

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, model: ModelState) -> "AdamState":
        return cls(
            0,
            {k: np.zeros_like(p) for k, p in model.params.items()},
            {k: np.zeros_like(p) for k, p in model.params.items()},
        )

    def copy(self) -> "AdamState":
        return AdamState(
            self.step,
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
        )


def adamw_step(model: ModelState, grads, opt: AdamState, cfg: OptimizerConfig) -> ModelState:
    """One in-place AdamW update; bumps ``model.version`` by one."""
    if not opt.m:
        fresh = AdamState.zeros_like(model)
        opt.m, opt.v = fresh.m, fresh.v
    for name in PARAM_ORDER:
        if opt.m[name].shape != model.params[name].shape:
            raise UsageError(f"optimizer state shape mismatch for {name}")
    opt.step += 1
    t = opt.step
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    dt = model.dtype
    for name in PARAM_ORDER:
        theta = model.params[name]
        g = grads[name]
        m = opt.m[name]
        v = opt.v[name]
        m *= cfg.beta1
        m += (1 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1 - cfg.beta2) * (g * g)
        if name not in NO_DECAY:
            theta *= dt.type(1.0 - cfg.learning_rate * cfg.weight_decay)
        theta -= (cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps_adam)).astype(dt)
    model.version += 1
    return model


@dataclass
class TrainStats:
    epoch_losses: list[float] = field(default_factory=list)
    batches: int = 0


def train_epochs(
    model: ModelState,
    frames: np.ndarray,
    targets: np.ndarray,
    epochs: int,
    cfg: OptimizerConfig | None = None,
    seed: int | np.random.Generator = 0,
    opt: AdamState | None = None,
    bn_mode: str = "batch",
) -> TrainStats:
    """Shuffled mini-batch training in place.

    ``targets`` are label distributions (N, classes). ``bn_mode='frozen'`` keeps
    the BN running statistics fixed (used during online adaptation).
    """
    cfg = cfg or OptimizerConfig()
    frames = np.asarray(frames, dtype=model.dtype)
    targets = np.asarray(targets, dtype=np.float64)
    if frames.shape[0] == 0:
        raise UsageError("empty training set")
    if targets.shape != (frames.shape[0], model.config.classes):
        raise UsageError(f"targets must be ({frames.shape[0]}, {model.config.classes})")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    opt = opt if opt is not None else AdamState.zeros_like(model)
    stats = TrainStats()
    n = frames.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            logits, cache = forward(model, frames[idx], mode="train", rng=rng, bn_mode=bn_mode)
            loss, dlogits = soft_cross_entropy(logits, targets[idx], return_grad=True)
            if not np.isfinite(loss):
                raise FloatingPointError("non-finite training loss")
            grads = backward(model, cache, dlogits)
            adamw_step(model, grads, opt, cfg)
            total += loss * len(idx)
            stats.batches += 1
        stats.epoch_losses.append(total / n)
    model.mode = "eval"
    return stats
