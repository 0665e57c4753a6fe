"""1-D convolutional gesture classifier with hand-written forward/backward.

Input frames are (6 features, 8 channels): the features are the input
channels and the convolution slides along the electrode axis.

    conv1 (32, k=5, same) -> BN -> LeakyReLU
    conv2 (32, k=3, same) -> BN -> LeakyReLU
    flatten (256) -> fc1 (256) -> dropout -> LeakyReLU -> fc2 (n_classes)
"""

from __future__ import annotations

import copy
import itertools
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import MalformedInputError, UsageError

PARAM_ORDER = (
    "conv1.weight",
    "conv1.bias",
    "bn1.weight",
    "bn1.bias",
    "conv2.weight",
    "conv2.bias",
    "bn2.weight",
    "bn2.bias",
    "fc1.weight",
    "fc1.bias",
    "fc2.weight",
    "fc2.bias",
)
BUFFER_ORDER = ("bn1.running_mean", "bn1.running_var", "bn2.running_mean", "bn2.running_var")
# excluded from weight decay
NO_DECAY = frozenset(n for n in PARAM_ORDER if n.endswith(".bias"))

_cache_ids = itertools.count()


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 6
    spatial_len: int = 8
    conv1_filters: int = 32
    conv1_kernel: int = 5
    conv2_filters: int = 32
    conv2_kernel: int = 3
    hidden: int = 256
    classes: int = 8
    dropout_p: float = 0.2
    leaky_slope: float = 0.01
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    dtype: str = "float32"

    def __post_init__(self):
        if self.conv1_kernel % 2 == 0 or self.conv2_kernel % 2 == 0:
            raise ValueError("same-padding needs odd kernels")
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout_p must be in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def flat_size(self):
        return self.conv2_filters * self.spatial_len

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        c1, c2 = self.conv1_filters, self.conv2_filters
        return {
            "conv1.weight": (c1, self.in_channels, self.conv1_kernel),
            "conv1.bias": (c1,),
            "bn1.weight": (c1,),
            "bn1.bias": (c1,),
            "conv2.weight": (c2, c1, self.conv2_kernel),
            "conv2.bias": (c2,),
            "bn2.weight": (c2,),
            "bn2.bias": (c2,),
            "fc1.weight": (self.hidden, self.flat_size),
            "fc1.bias": (self.hidden,),
            "fc2.weight": (self.classes, self.hidden),
            "fc2.bias": (self.classes,),
        }

    def buffer_shapes(self) -> dict[str, tuple[int, ...]]:
        return {
            "bn1.running_mean": (self.conv1_filters,),
            "bn1.running_var": (self.conv1_filters,),
            "bn2.running_mean": (self.conv2_filters,),
            "bn2.running_var": (self.conv2_filters,),
        }

    def to_dict(self):
        return asdict(self)


@dataclass
class ModelState:
    config: ModelConfig
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    version: int = 0
    mode: str = "eval"
    lineage: list = field(default_factory=list)
    # expanded conv matrices for eval-mode forwards, keyed by (name, version)
    _expanded: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "ModelState":
        return ModelState(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            self.version,
            self.mode,
            copy.deepcopy(self.lineage),
        )

    def astype(self, dtype: str) -> "ModelState":
        cfg = ModelConfig(**{**self.config.to_dict(), "dtype": dtype})
        return ModelState(
            cfg,
            {k: v.astype(dtype) for k, v in self.params.items()},
            {k: v.astype(dtype) for k, v in self.buffers.items()},
            self.version,
            self.mode,
            copy.deepcopy(self.lineage),
        )


def init_model(cfg: ModelConfig | None = None, seed: int = 0) -> ModelState:
    """Fan-in uniform init, bound sqrt(1/fan_in), for every conv/dense tensor."""
    cfg = cfg or ModelConfig()
    rng = np.random.default_rng(seed)
    shapes = cfg.param_shapes()
    fan_in = {
        "conv1": cfg.in_channels * cfg.conv1_kernel,
        "conv2": cfg.conv1_filters * cfg.conv2_kernel,
        "fc1": cfg.flat_size,
        "fc2": cfg.hidden,
    }
    params = {}
    for name in PARAM_ORDER:
        layer = name.split(".")[0]
        shape = shapes[name]
        if layer.startswith("bn"):
            fill = 1.0 if name.endswith("weight") else 0.0
            params[name] = np.full(shape, fill, dtype=cfg.dtype)
        else:
            bound = np.sqrt(1.0 / fan_in[layer])
            params[name] = rng.uniform(-bound, bound, size=shape).astype(cfg.dtype)
    buffers = {
        name: (np.zeros if name.endswith("mean") else np.ones)(shape, dtype=cfg.dtype)
        for name, shape in cfg.buffer_shapes().items()
    }
    return ModelState(cfg, params, buffers, version=0, mode="eval", lineage=[{"init_seed": seed}])


# ---------------------------------------------------------------- layers


def _tap_index(length, k):
    """tap[l, l'] = kernel tap linking output l to input l', or k when outside."""
    pad = k // 2
    d = np.arange(length)[None, :] - np.arange(length)[:, None] + pad
    return np.where((d >= 0) & (d < k), d, k)


_TAPS: dict[tuple[int, int], np.ndarray] = {}


def _taps(length, k):
    key = (length, k)
    if key not in _TAPS:
        _TAPS[key] = _tap_index(length, k)
    return _TAPS[key]


def _expand_conv(w, length):
    """Same-padded conv weight (Cout, Cin, k) as a dense (Cout*L, Cin*L) matrix."""
    cout, cin, k = w.shape
    w_ext = np.concatenate([w, np.zeros((cout, cin, 1), dtype=w.dtype)], axis=2)
    big = w_ext[:, :, _taps(length, k)]  # Cout, Cin, L, L'
    return big.transpose(0, 2, 1, 3).reshape(cout * length, cin * length)


def _conv_forward(x, w, bias, big=None):
    """x (B, Cin, L) -> (B, Cout, L); returns the expanded weight for backward."""
    b, cin, length = x.shape
    if big is None:
        big = _expand_conv(w, length)
    out = x.reshape(b, cin * length) @ big.T
    out = out.reshape(b, w.shape[0], length) + bias[None, :, None]
    return out, big


def _conv_backward(dout, x, w, big):
    cout, cin, k = w.shape
    b, _, length = x.shape
    d = dout.reshape(b, cout * length)
    dbig = (d.T @ x.reshape(b, cin * length)).reshape(cout, length, cin, length)
    dbig = dbig.transpose(0, 2, 1, 3)  # Cout, Cin, L, L'
    taps = _taps(length, k)
    dw = np.empty_like(w)
    for kk in range(k):
        dw[:, :, kk] = dbig[:, :, taps == kk].sum(axis=-1)
    db = dout.sum(axis=(0, 2))
    dx = (d @ big).reshape(b, cin, length)
    return dw, db, dx


def _leaky(x, slope):
    return np.where(x > 0, x, slope * x)


def _leaky_grad(x, slope, dout):
    return np.where(x > 0, dout, slope * dout)


@dataclass
class ForwardCache:
    cache_id: int
    model_version: int
    mode: str
    bn_mode: str
    store: dict


def _bn_forward(x, gamma, beta, mean_buf, var_buf, cfg, bn_mode, store, tag):
    if bn_mode == "batch":
        n = x.shape[0] * x.shape[2]
        mu = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        inv = 1.0 / np.sqrt(var + cfg.bn_eps)
        if store is not None and store.get("update_running", True):
            m = cfg.bn_momentum
            unbiased = var * n / max(n - 1, 1)
            mean_buf *= 1 - m
            mean_buf += m * mu
            var_buf *= 1 - m
            var_buf += m * unbiased
    else:
        mu, var = mean_buf, var_buf
        inv = 1.0 / np.sqrt(var + cfg.bn_eps)
    xhat = (x - mu[None, :, None]) * inv[None, :, None]
    if store is not None:
        store[tag + ".xhat"] = xhat
        store[tag + ".inv"] = inv
    return gamma[None, :, None] * xhat + beta[None, :, None]


def _bn_backward(dy, gamma, store, tag, bn_mode):
    xhat = store[tag + ".xhat"]
    inv = store[tag + ".inv"]
    dgamma = (dy * xhat).sum(axis=(0, 2))
    dbeta = dy.sum(axis=(0, 2))
    dxhat = dy * gamma[None, :, None]
    if bn_mode == "batch":
        n = dy.shape[0] * dy.shape[2]
        dx = (
            inv[None, :, None]
            / n
            * (
                n * dxhat
                - dxhat.sum(axis=(0, 2))[None, :, None]
                - xhat * (dxhat * xhat).sum(axis=(0, 2))[None, :, None]
            )
        )
    else:
        dx = dxhat * inv[None, :, None]
    return dgamma, dbeta, dx


def _as_batch(model: ModelState, frames) -> np.ndarray:
    if hasattr(frames, "values") and not isinstance(frames, np.ndarray):
        frames = [frames]
    if isinstance(frames, (list, tuple)):
        if len(frames) == 0:
            raise MalformedInputError("empty batch")
        frames = np.stack([getattr(f, "values", f) for f in frames])
    x = np.asarray(frames, dtype=model.dtype)
    cfg = model.config
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (cfg.in_channels, cfg.spatial_len):
        raise MalformedInputError(
            f"frames must be ({cfg.in_channels}, {cfg.spatial_len}), got batch shape {x.shape}"
        )
    if x.shape[0] == 0:
        raise MalformedInputError("empty batch")
    return x


def _cached(model: ModelState, layer: str, train: bool):
    # published versions are immutable, so eval forwards may reuse the expansion
    if train:
        return None
    key = (layer, model.version)
    big = model._expanded.get(key)
    if big is None:
        if len(model._expanded) > 8:
            model._expanded.clear()
        big = _expand_conv(model.params[layer + ".weight"], model.config.spatial_len)
        model._expanded[key] = big
    return big


def forward(
    model: ModelState,
    frames,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    bn_mode: str | None = None,
    dropout_mask: np.ndarray | None = None,
):
    """Returns ``(logits, cache)``.

    ``mode='train'`` enables dropout and, unless ``bn_mode='frozen'``, uses batch
    statistics and updates the running statistics in place. ``mode='eval'`` is
    deterministic and side-effect free.
    """
    if mode not in ("train", "eval"):
        raise UsageError(f"unknown mode {mode!r}")
    cfg = model.config
    p = model.params
    x = _as_batch(model, frames)
    if bn_mode is None:
        bn_mode = "batch" if mode == "train" else "frozen"
    if bn_mode not in ("batch", "frozen"):
        raise UsageError(f"unknown bn_mode {bn_mode!r}")
    train = mode == "train"
    if train and dropout_mask is None and cfg.dropout_p > 0 and rng is None:
        raise UsageError("train-mode forward needs a dropout rng")

    s: dict = {"x_shape": x.shape}
    if not train:
        s["update_running"] = False

    z1, s["big1"] = _conv_forward(x, p["conv1.weight"], p["conv1.bias"], _cached(model, "conv1", train))
    s["x"] = x
    b1 = _bn_forward(
        z1, p["bn1.weight"], p["bn1.bias"], model.buffers["bn1.running_mean"],
        model.buffers["bn1.running_var"], cfg, bn_mode, s, "bn1",
    )
    s["b1"] = b1
    a1 = _leaky(b1, cfg.leaky_slope)

    z2, s["big2"] = _conv_forward(a1, p["conv2.weight"], p["conv2.bias"], _cached(model, "conv2", train))
    s["a1"] = a1
    b2 = _bn_forward(
        z2, p["bn2.weight"], p["bn2.bias"], model.buffers["bn2.running_mean"],
        model.buffers["bn2.running_var"], cfg, bn_mode, s, "bn2",
    )
    s["b2"] = b2
    a2 = _leaky(b2, cfg.leaky_slope)

    flat = a2.reshape(a2.shape[0], -1)
    s["flat"] = flat
    h = flat @ p["fc1.weight"].T + p["fc1.bias"]
    if train and cfg.dropout_p > 0:
        if dropout_mask is None:
            keep = rng.random(h.shape) >= cfg.dropout_p
            dropout_mask = keep.astype(h.dtype) / (1.0 - cfg.dropout_p)
        hd = h * dropout_mask
    else:
        dropout_mask = None
        hd = h
    s["mask"] = dropout_mask
    s["hd"] = hd
    a3 = _leaky(hd, cfg.leaky_slope)
    s["a3"] = a3
    logits = a3 @ p["fc2.weight"].T + p["fc2.bias"]
    cache = ForwardCache(next(_cache_ids), model.version, mode, bn_mode, s)
    return logits, cache


def backward(model: ModelState, cache: ForwardCache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given dLoss/dlogits."""
    if cache.mode != "train":
        raise UsageError("backward needs a train-mode forward cache")
    if cache.model_version != model.version or cache.store.get("consumed"):
        raise UsageError("stale forward cache")
    cfg = model.config
    p = model.params
    s = cache.store
    slope = cfg.leaky_slope
    g: dict[str, np.ndarray] = {}

    dlogits = np.asarray(dlogits, dtype=model.dtype)
    g["fc2.weight"] = dlogits.T @ s["a3"]
    g["fc2.bias"] = dlogits.sum(axis=0)
    da3 = dlogits @ p["fc2.weight"]
    dhd = _leaky_grad(s["hd"], slope, da3)
    dh = dhd * s["mask"] if s["mask"] is not None else dhd
    g["fc1.weight"] = dh.T @ s["flat"]
    g["fc1.bias"] = dh.sum(axis=0)
    dflat = dh @ p["fc1.weight"]

    da2 = dflat.reshape(s["b2"].shape)
    db2 = _leaky_grad(s["b2"], slope, da2)
    g["bn2.weight"], g["bn2.bias"], dz2 = _bn_backward(db2, p["bn2.weight"], s, "bn2", cache.bn_mode)
    g["conv2.weight"], g["conv2.bias"], da1 = _conv_backward(
        dz2, s["a1"], p["conv2.weight"], s["big2"]
    )

    db1 = _leaky_grad(s["b1"], slope, da1)
    g["bn1.weight"], g["bn1.bias"], dz1 = _bn_backward(db1, p["bn1.weight"], s, "bn1", cache.bn_mode)
    g["conv1.weight"], g["conv1.bias"], _ = _conv_backward(
        dz1, s["x"], p["conv1.weight"], s["big1"]
    )
    s["consumed"] = True
    return {k: g[k].astype(model.dtype, copy=False) for k in PARAM_ORDER}


# ---------------------------------------------------------------- outputs


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def soft_cross_entropy(logits, targets, return_grad: bool = False):
    """Mean over the batch of -sum_c t_c log softmax(z)_c.

    With ``return_grad`` also returns dLoss/dlogits = (softmax - t) / B.
    """
    logits = np.atleast_2d(logits)
    t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    lsm = log_softmax(logits)
    loss = float(-(t * lsm).sum(axis=1).mean())
    if not return_grad:
        return loss
    grad = (np.exp(lsm) * t.sum(axis=1, keepdims=True) - t) / logits.shape[0]
    return loss, grad


def predict(model: ModelState, frame) -> tuple[int, np.ndarray]:
    """Eval-mode decision for one frame: (class, probabilities)."""
    logits, _ = forward(model, frame, mode="eval")
    probs = softmax(logits[0])
    return int(np.argmax(probs)), probs


def predict_batch(model: ModelState, frames, chunk: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    x = _as_batch(model, frames)
    probs = []
    for lo in range(0, x.shape[0], chunk):
        logits, _ = forward(model, x[lo : lo + chunk], mode="eval")
        probs.append(softmax(logits))
    probs = np.concatenate(probs)
    return probs.argmax(axis=1), probs
