"""Numpy fallback for the metric kernels.

Every function here computes the same integer intermediates as the
compiled backend in ``_kernels.pyx``, so results are bit-identical across
backends: confusion counts are plain integers, AUC is a single division of
two int64 values, and box downsampling is exact rational arithmetic.
"""

from __future__ import annotations

import numpy as np


def confusion_counts(truth, pred, idx=None):
    """Return (tp, fp, tn, fn) for uint8 label arrays, optionally resampled
    through an int64 index array."""
    if idx is not None:
        truth = truth[idx]
        pred = pred[idx]
    t = truth != 0
    p = pred != 0
    tp = int(np.count_nonzero(t & p))
    fp = int(np.count_nonzero(~t & p))
    fn = int(np.count_nonzero(t & ~p))
    tn = truth.shape[0] - tp - fp - fn
    return tp, fp, tn, fn


def rank_auc(truth, score, idx=None):
    """Probability that a random positive outscores a random negative, with
    half credit for ties.  Returns nan when either class is absent.

    The rank sum over tie groups is accumulated as an integer (twice the
    midrank sum), so the result is one exact int64/int64 division.
    """
    if idx is not None:
        truth = truth[idx]
        score = score[idx]
    n = truth.shape[0]
    n_pos = int(np.count_nonzero(truth))
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    order = np.argsort(score, kind="stable")
    s = score[order]
    t = truth[order]
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]]).astype(np.int64)
    ends = np.r_[starts[1:], np.int64(n)]
    cum = np.concatenate([[0], np.cumsum(t, dtype=np.int64)])
    pos_in_run = cum[ends] - cum[starts]
    # ranks are 1-based; a run [s, e) has midrank (s + e + 1) / 2
    ranksum2 = int(np.sum(pos_in_run * (starts + ends + 1)))
    return (ranksum2 - n_pos * (n_pos + 1)) / float(2 * n_pos * n_neg)


def box_downsample(src, out_h, out_w):
    """Area-weighted (box) average of a 2D integer image onto an
    (out_h, out_w) grid, rounding half up.

    Overlap weights are integers in units of 1/out_n per axis, which makes
    the accumulated sums exact; the only division is the final rounded one.
    """
    src = np.asarray(src)
    h, w = src.shape
    if out_h > h or out_w > w or out_h < 1 or out_w < 1:
        raise ValueError("box_downsample only shrinks images")
    acc = _axis_box_sum(src.astype(np.int64), out_h, axis=0)
    acc = _axis_box_sum(acc, out_w, axis=1)
    denom = h * w
    out = (2 * acc + denom) // (2 * denom)
    return out.astype(src.dtype)


def _axis_box_sum(acc, out_n, axis):
    in_n = acc.shape[axis]
    moved = np.moveaxis(acc, axis, 0)
    shape = (out_n,) + moved.shape[1:]
    res = np.zeros(shape, dtype=np.int64)
    for j in range(out_n):
        r0 = (j * in_n) // out_n
        r1 = ((j + 1) * in_n + out_n - 1) // out_n
        for r in range(r0, r1):
            wt = min((j + 1) * in_n, (r + 1) * out_n) - max(j * in_n, r * out_n)
            if wt > 0:
                res[j] += wt * moved[r]
    return np.moveaxis(res, 0, axis)
