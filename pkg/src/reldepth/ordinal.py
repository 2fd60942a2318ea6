"""Ordinal ground truth from disparity maps and the WHDR score.

A pair (i, j, r) relates two pixels: r = +1 when i is closer, -1 when j is
closer, 0 when the two values differ by at most an equality threshold. For
disparities, larger means closer; for depths, smaller means closer. WHDR is
the fraction of pairs whose predicted relation disagrees with the stored one,
all pair weights set to 1.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .imagery.types import DepthMap

CLOSER = 1
FARTHER = -1
EQUAL = 0


@dataclass(frozen=True)
class OrdinalPair:
    i: tuple  # (row, col)
    j: tuple  # (row, col)
    r: int

    def __post_init__(self):
        if tuple(self.i) == tuple(self.j):
            raise ValueError("pair endpoints must differ")
        if self.r not in (CLOSER, FARTHER, EQUAL):
            raise ValueError(f"relation must be -1, 0 or +1, got {self.r}")


@dataclass
class PairSampleConfig:
    count: int = 1000
    eq_threshold: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("pair count must be >= 1")
        if self.eq_threshold < 0:
            raise ValueError("equality threshold must be >= 0")


def relation_from_values(v_i, v_j, threshold, larger_is_closer):
    """Ordinal relation of two depth-orderable values.

    Returns 0 when |v_i - v_j| <= threshold, otherwise +1 if i is the closer
    point under the ordering flag and -1 if j is.
    """
    if not (np.isfinite(v_i) and np.isfinite(v_j)):
        raise ValueError("values must be finite")
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    if abs(v_i - v_j) <= threshold:
        return EQUAL
    i_closer = v_i > v_j if larger_is_closer else v_i < v_j
    return CLOSER if i_closer else FARTHER


def sample_pairs(disparity: DepthMap, cfg: PairSampleConfig):
    """Draw cfg.count ordinal pairs of distinct valid pixels, uniformly.

    Relations follow the disparity ordering (larger = closer) with the
    configured equality threshold. The same map and seed always produce the
    same list.
    """
    ys, xs = np.nonzero(disparity.mask)
    n = len(ys)
    if n < 2:
        raise ValueError("need at least 2 valid pixels to sample pairs")
    rng = np.random.default_rng(cfg.seed)
    pairs = []
    while len(pairs) < cfg.count:
        want = cfg.count - len(pairs)
        a = rng.integers(0, n, size=want)
        b = rng.integers(0, n, size=want)
        for ia, ib in zip(a, b):
            if ia == ib:
                continue
            pi = (int(ys[ia]), int(xs[ia]))
            pj = (int(ys[ib]), int(xs[ib]))
            r = relation_from_values(
                float(disparity.values[pi]), float(disparity.values[pj]),
                cfg.eq_threshold, larger_is_closer=True,
            )
            pairs.append(OrdinalPair(pi, pj, r))
            if len(pairs) == cfg.count:
                break
    return pairs


def whdr(pred: DepthMap, pairs, pred_threshold=0.0):
    """Disagreement rate of a predicted depth map against ordinal pairs.

    The prediction is read with depth ordering (smaller = closer). Every pair
    has weight 1; pairs indexing invalid or out-of-bounds pixels are an error.
    """
    if not pairs:
        raise ValueError("need at least one pair")
    h, w = pred.values.shape
    disagree = 0
    for pair in pairs:
        for pt in (pair.i, pair.j):
            if not (0 <= pt[0] < h and 0 <= pt[1] < w):
                raise ValueError(f"pair coordinate {pt} outside {h}x{w} map")
            if not pred.mask[pt]:
                raise ValueError(f"pair coordinate {pt} is invalid in the prediction")
        got = relation_from_values(
            float(pred.values[pair.i]), float(pred.values[pair.j]),
            pred_threshold, larger_is_closer=False,
        )
        if got != pair.r:
            disagree += 1
    return disagree / len(pairs)


def save_pairs_csv(pairs, path):
    """One pair per line: row_i,col_i,row_j,col_j,r (integer fields)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for p in pairs:
            writer.writerow([p.i[0], p.i[1], p.j[0], p.j[1], p.r])


def load_pairs_csv(path):
    pairs = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            ri, ci, rj, cj, r = (int(v) for v in row)
            pairs.append(OrdinalPair((ri, ci), (rj, cj), r))
    return pairs
