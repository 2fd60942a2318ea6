"""Differentiable training objectives, each returning value plus analytic
gradient: the pairwise ranking loss over ordinal pairs and the info-gain
weighted multinomial logistic loss over binned depth labels.
"""

from dataclasses import dataclass

import numpy as np

from .binning import InfoGainMatrix
from .ordinal import CLOSER, EQUAL, FARTHER


@dataclass
class LossResult:
    value: float
    gradient: np.ndarray  # same shape as the score input

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("loss value must be finite")
        if not np.all(np.isfinite(self.gradient)):
            raise ValueError("loss gradient must be finite")


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits):
    """Shift-stabilized softmax along the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def ranking_loss(scores, pairs, mean=False) -> LossResult:
    """Pairwise ranking loss over a scalar score map (larger = closer).

    Per pair with margin m = z_i - z_j the loss is log(1 + exp(-m)) for
    r = +1, log(1 + exp(m)) for r = -1, and m^2 for r = 0, summed over
    pairs (averaged when mean=True). Gradients accumulate only at the two
    pixels each pair touches; the logistic terms use the stable softplus
    form so margins up to about 1e3 are handled without overflow.
    """
    z = np.asarray(scores, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError(f"score map must be 2-D, got shape {z.shape}")
    if not pairs:
        raise ValueError("need at least one pair")
    h, w = z.shape
    grad = np.zeros_like(z)
    total = 0.0
    for pair in pairs:
        for pt in (pair.i, pair.j):
            if not (0 <= pt[0] < h and 0 <= pt[1] < w):
                raise ValueError(f"pair coordinate {pt} outside {h}x{w} map")
        m = z[pair.i] - z[pair.j]
        if pair.r == CLOSER:
            total += float(softplus(-m))
            dm = float(sigmoid(m)) - 1.0
        elif pair.r == FARTHER:
            total += float(softplus(m))
            dm = float(sigmoid(m))
        else:  # EQUAL
            total += m * m
            dm = 2.0 * m
        grad[pair.i] += dm
        grad[pair.j] -= dm
    if mean:
        k = len(pairs)
        total /= k
        grad /= k
    return LossResult(total, grad)


def infogain_loss(logits, labels, mask, gain: InfoGainMatrix) -> LossResult:
    """Info-gain weighted multinomial logistic loss over valid pixels.

    value = -(1/N) sum_{valid i} sum_D H(L_i, D) log P(D | z_i) with P the
    softmax of the pixel's logits, L_i the 1-based true label, and N the
    valid-pixel count. Gradient per pixel and channel d is
    (1/N) [(sum_D H(L_i, D)) P(d | z_i) - H(L_i, d)]; masked pixels
    contribute nothing to either.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 3:
        raise ValueError(f"logits must be (H, W, B), got shape {z.shape}")
    b = z.shape[2]
    if gain.bins != b:
        raise ValueError(f"gain matrix is {gain.bins}x{gain.bins}, logits have {b} channels")
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if labels.shape != z.shape[:2] or mask.shape != z.shape[:2]:
        raise ValueError("labels and mask must match the logit grid")
    n = int(mask.sum())
    if n == 0:
        raise ValueError("at least one valid pixel is required")
    if labels[mask].min() < 1 or labels[mask].max() > b:
        raise ValueError(f"valid labels must lie in [1, {b}]")

    grad = np.zeros_like(z)
    zx = z[mask]  # (n, B)
    shifted = zx - zx.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    h_rows = gain.weights[labels[mask] - 1]  # (n, B)
    value = -(h_rows * log_p).sum() / n
    row_sums = h_rows.sum(axis=1, keepdims=True)
    grad[mask] = (row_sums * np.exp(log_p) - h_rows) / n
    return LossResult(float(value), grad)
