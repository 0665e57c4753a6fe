"""numpy/scipy implementations of the compiled kernels."""

import numpy as np
from scipy import signal

BACKEND = "python"


def sosfilt_inplace(sos, x, zi):
    if zi.shape != (sos.shape[0], x.shape[0], 2):
        raise ValueError("filter state shape does not match sections/channels")
    y, zf = signal.sosfilt(sos, x, axis=1, zi=zi)
    x[...] = y
    zi[...] = zf


def tdpsd_batch(windows, lam=0.1, eps=1e-10):
    x = np.asarray(windows, dtype=np.float64)
    d1 = np.diff(x, axis=-1)
    d2 = np.diff(d1, axis=-1)
    m0 = np.sqrt(np.sum(x * x, axis=-1)) ** lam / lam
    m2 = np.sqrt(np.sum(d1 * d1, axis=-1)) ** lam / lam
    m4 = np.sqrt(np.sum(d2 * d2, axis=-1)) ** lam / lam
    p2 = np.maximum(m0 - m2, eps)
    p4 = np.maximum(m0 - m4, eps)
    feats = np.stack(
        [
            np.log(np.maximum(m0, eps)),
            np.log(p2),
            np.log(p4),
            np.log(np.maximum(m0 / np.sqrt(p2 * p4), eps)),
            np.log(np.maximum(m2 / np.sqrt(np.maximum(m0 * m4, eps)), eps)),
            np.log(
                np.maximum(
                    np.sum(np.abs(d1), axis=-1)
                    / np.maximum(np.sum(np.abs(d2), axis=-1), eps),
                    eps,
                )
            ),
        ],
        axis=1,
    )
    return feats
