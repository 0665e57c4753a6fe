"""Graph construction and label spreading over an adaptation batch."""

from __future__ import annotations

import numpy as np

from ..errors import UsageError
from .context import Suitability


def _frames_matrix(samples) -> np.ndarray:
    return np.stack([np.asarray(getattr(s.frame, "values", s.frame), dtype=np.float64).reshape(-1) for s in samples])


def build_affinity(samples, k: int = 7, gamma: float | None = None) -> np.ndarray:
    """Symmetrically normalized k-NN RBF affinity, ``D^-1/2 W D^-1/2``.

    Features are standardized per dimension over the batch (zero-variance
    dimensions become 0). An edge is kept when either endpoint has the other
    among its ``min(k, n-1)`` nearest neighbours.
    """
    n = len(samples)
    if n < 2:
        raise UsageError("affinity needs at least two samples")
    x = _frames_matrix(samples)
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    z = np.zeros_like(x)
    live = sd > 0
    z[:, live] = (x[:, live] - mu[live]) / sd[live]
    if gamma is None:
        gamma = 1.0 / x.shape[1]

    sq = (z * z).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * z @ z.T, 0.0)
    np.fill_diagonal(d2, 0.0)
    w = np.exp(-gamma * d2)
    np.fill_diagonal(w, 0.0)

    kk = min(k, n - 1)
    ranking = d2.copy()
    np.fill_diagonal(ranking, np.inf)
    nearest = np.argsort(ranking, axis=1, kind="stable")[:, :kk]
    keep = np.zeros((n, n), dtype=bool)
    keep[np.repeat(np.arange(n), kk), nearest.reshape(-1)] = True
    keep |= keep.T
    w = np.where(keep, w, 0.0)

    deg = w.sum(axis=1)
    inv = np.zeros(n)
    inv[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    return inv[:, None] * w * inv[None, :]


def initial_labels(samples, neg_weight: float) -> np.ndarray:
    rows = []
    for s in samples:
        weight = 1.0 if s.suitability == Suitability.POSITIVE else neg_weight
        rows.append(weight * np.asarray(s.pseudo_label, dtype=np.float64))
    return np.stack(rows)


def spread(S: np.ndarray, Y: np.ndarray, alpha: float, tol: float = 1e-6, max_iter: int = 1000):
    """Iterate ``F <- alpha S F + (1 - alpha) Y`` from ``F = Y``.

    Stops once both the step size and the fixed-point residual are below
    ``tol``. Returns ``(F, iterations, residual)``.
    """
    if S.shape != (Y.shape[0], Y.shape[0]):
        raise UsageError(f"affinity {S.shape} does not match {Y.shape[0]} labels")
    if not 0 <= alpha < 1:
        raise UsageError("alpha must be in [0, 1)")
    base = (1.0 - alpha) * Y
    F = Y.copy()
    SF = S @ F
    residual = np.abs(F - alpha * SF - base).max()
    it = 0
    while it < max_iter and residual >= tol:
        F_new = alpha * SF + base
        step = np.abs(F_new - F).max()
        F = F_new
        SF = S @ F
        residual = np.abs(F - alpha * SF - base).max()
        it += 1
        if step < tol and residual < tol:
            break
    return F, it, float(residual)


def label_spread(S: np.ndarray, samples, cfg) -> np.ndarray:
    """Refined label distribution per sample, shape (n, classes)."""
    if len(samples) != S.shape[0]:
        raise UsageError(f"{len(samples)} samples for a {S.shape[0]}-node graph")
    Y = initial_labels(samples, cfg.neg_weight)
    F, _, _ = spread(S, Y, cfg.alpha, cfg.spread_tol, cfg.spread_max_iter)
    sums = F.sum(axis=1, keepdims=True)
    out = np.empty_like(F)
    ok = sums[:, 0] > 0
    out[ok] = F[ok] / sums[ok]
    for i in np.flatnonzero(~ok):
        out[i] = samples[i].pseudo_label
    return out
