"""Accuracy, macro-F1, threshold selection, EER and mode purity.

Conventions: fake is the positive class; a record is predicted fake iff
``p_fake >= threshold``; a class with no support in either predictions or
truth has F1 = 0.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import StructuralError


def _arrays(labels, scores):
    y = np.asarray(labels, dtype=bool)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise StructuralError("labels and scores must be 1-D arrays of equal length")
    if y.size == 0:
        raise StructuralError("metrics need at least one record")
    if not np.all(np.isfinite(s)):
        raise StructuralError("scores must be finite")
    return y, s


def _f1(tp, fp, fn):
    den = 2 * tp + fp + fn
    return np.where(den > 0, 2 * tp / np.where(den > 0, den, 1), 0.0)


def _macro_f1_counts(tp, fp, fn, tn):
    return 0.5 * (_f1(tp, fp, fn) + _f1(tn, fn, fp))


def accuracy_f1(labels, scores, threshold: float) -> tuple[float, float]:
    """Accuracy and macro-F1 at ``threshold``."""
    y, s = _arrays(labels, scores)
    pred = s >= threshold
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    tn = int(np.sum(~pred & ~y))
    return (tp + tn) / y.size, float(_macro_f1_counts(tp, fp, fn, tn))


def candidate_thresholds(scores) -> np.ndarray:
    u = np.unique(np.asarray(scores, dtype=np.float64))
    return np.unique(np.concatenate([[0.0, 1.0], (u[:-1] + u[1:]) / 2.0]))


def threshold_sweep(labels, scores) -> tuple[np.ndarray, np.ndarray]:
    """Macro-F1 at every candidate threshold (ascending)."""
    y, s = _arrays(labels, scores)
    t = candidate_thresholds(s)
    fake = np.sort(s[y])
    real = np.sort(s[~y])
    tp = fake.size - np.searchsorted(fake, t, side="left")
    fp = real.size - np.searchsorted(real, t, side="left")
    return t, _macro_f1_counts(tp, fp, fake.size - tp, real.size - fp)


def select_threshold(labels, scores) -> tuple[float, float]:
    """Macro-F1-maximizing threshold; ties go to the smallest. Returns ``(threshold, macro_f1)``."""
    y, _ = _arrays(labels, scores)
    if y.all() or not y.any():
        raise StructuralError("threshold selection needs both classes")
    t, f1 = threshold_sweep(labels, scores)
    i = int(np.argmax(f1))
    return float(t[i]), float(f1[i])


def eer(labels, scores) -> float:
    """Equal error rate, linearly interpolated between adjacent sweep points."""
    y, s = _arrays(labels, scores)
    if y.all() or not y.any():
        raise StructuralError("EER needs both real and fake records")
    fake = np.sort(s[y])
    real = np.sort(s[~y])
    t = np.concatenate([np.unique(s), [np.inf]])
    fpr = (real.size - np.searchsorted(real, t, side="left")) / real.size
    fnr = np.searchsorted(fake, t, side="left") / fake.size
    i = int(np.argmax(fnr >= fpr))
    if fnr[i] == fpr[i]:
        return float(fpr[i])
    d0 = fpr[i - 1] - fnr[i - 1]
    d1 = fpr[i] - fnr[i]
    w = d0 / (d0 - d1)
    return float(fpr[i - 1] + w * (fpr[i] - fpr[i - 1]))


def mode_purity(clusters, modes) -> float:
    """Fraction of items whose cluster maps to their true mode under the best one-to-one matching."""
    clusters = list(clusters)
    modes = list(modes)
    if len(clusters) != len(modes):
        raise StructuralError("clusters and modes must align")
    if not clusters:
        raise StructuralError("mode purity needs at least one item")
    cl = {c: i for i, c in enumerate(sorted(set(clusters)))}
    md = {m: i for i, m in enumerate(sorted(set(modes)))}
    table = np.zeros((len(cl), len(md)), dtype=np.int64)
    for c, m in zip(clusters, modes):
        table[cl[c], md[m]] += 1
    rows, cols = linear_sum_assignment(table, maximize=True)
    return float(table[rows, cols].sum() / len(clusters))


def summarize(labels, scores, threshold: float) -> dict:
    y, s = _arrays(labels, scores)
    acc, f1 = accuracy_f1(y, s, threshold)
    both = bool(y.any() and (~y).any())
    return {"n": int(y.size), "accuracy": acc, "macro_f1": f1,
            "eer": eer(y, s) if both else float("nan")}
