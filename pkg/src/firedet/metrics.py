"""Detection metrics (rank-based AUC, thresholded accuracy), the
training-free mean-reconstruction-error baseline, and the perturbation
robustness sweep.
"""

from __future__ import annotations

import numpy as np

from . import data
from .tensorops import sigmoid

# (kind, level) grid mirroring the robustness protocol
DEFAULT_PERTURB_GRID = (
    ("jpeg", 90), ("jpeg", 70), ("jpeg", 50),
    ("gaussian_blur", 1.0), ("gaussian_blur", 2.0),
    ("gaussian_noise", 0.02), ("gaussian_noise", 0.05),
    ("center_crop", 0.9), ("center_crop", 0.7),
)


def _check_scoreset(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores/labels must be parallel 1D sequences, got "
                         f"{scores.shape} vs {labels.shape}")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 (real) or 1 (generated)")
    return scores, labels.astype(np.int64)


def _auc_from_counts(wins: int, ties: int, n_pos: int, n_neg: int) -> float:
    return (2 * wins + ties) / (2 * n_pos * n_neg)


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with half credit for ties, via a sort-based
    tie-grouped count (O(n log n))."""
    scores, labels = _check_scoreset(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    vals, inverse = np.unique(scores, return_inverse=True)
    pos_at = np.bincount(inverse[labels == 1], minlength=len(vals))
    neg_at = np.bincount(inverse[labels == 0], minlength=len(vals))
    neg_below = np.concatenate(([0], np.cumsum(neg_at)[:-1]))
    wins = int(np.sum(pos_at * neg_below))
    ties = int(np.sum(pos_at * neg_at))
    return _auc_from_counts(wins, ties, n_pos, n_neg)


def auc_pairwise(scores, labels) -> float:
    """Exhaustive over all (positive, negative) pairs; the O(P*N) oracle
    the sort-based path must match exactly."""
    scores, labels = _check_scoreset(scores, labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("AUC needs both classes present")
    wins = int(np.sum(pos[:, None] > neg[None, :]))
    ties = int(np.sum(pos[:, None] == neg[None, :]))
    return _auc_from_counts(wins, ties, len(pos), len(neg))


def acc(scores, labels, threshold: float = 0.5) -> float:
    """Fraction correct with score >= threshold predicting 'generated'."""
    scores, labels = _check_scoreset(scores, labels)
    if len(scores) == 0:
        raise ValueError("empty score set")
    pred = (scores >= threshold).astype(np.int64)
    return float(np.mean(pred == labels))


# ---------------------------------------------------------------------------
# Training-free mean-error baseline
# ---------------------------------------------------------------------------

def baseline_mean_error(image: np.ndarray, ae, mu: float = 0.0,
                        sigma: float = 1.0) -> float:
    """Score in [0,1]: sigmoid of the standardized negative mean
    reconstruction error (lower error => more likely generated)."""
    rec = ae.reconstruct_batch(image[None], cache=False)[0]
    raw = -float(np.mean(np.abs(rec - image)))
    return float(sigmoid(np.array([(raw - mu) / sigma]))[0])


def baseline_scores(images: np.ndarray, ae, batch_size: int = 16) -> np.ndarray:
    """Baseline scores for a stack of images, standardized over the set.

    The standardization + sigmoid map is strictly monotone, so rankings
    (hence AUC) match the raw negative mean errors.
    """
    raws = []
    for i in range(0, len(images), batch_size):
        batch = images[i:i + batch_size]
        rec = ae.reconstruct_batch(batch, cache=False)
        raws.append(-np.abs(rec - batch).mean(axis=(1, 2, 3)))
    raw = np.concatenate(raws).astype(np.float64)
    sigma = float(raw.std())
    mu = float(raw.mean())
    if sigma == 0.0:
        sigma = 1.0
    return sigmoid((raw - mu) / sigma)


# ---------------------------------------------------------------------------
# Perturbation sweep
# ---------------------------------------------------------------------------

def perturb_sweep(score_fn, images: np.ndarray, labels,
                  grid=DEFAULT_PERTURB_GRID, seed: int = 0) -> dict:
    """Score clean and perturbed copies of a test set.

    score_fn maps a (N,3,S,S) stack to an array of scores. Returns
    {clean_auc, clean_acc, rows: [{kind, level, auc, acc}, ...]}.
    """
    labels = np.asarray(labels)
    clean_scores = score_fn(images)
    report = {"clean_auc": auc(clean_scores, labels),
              "clean_acc": acc(clean_scores, labels),
              "rows": []}
    for kind, level in grid:
        perturbed = np.stack([
            data.perturb(images[i], kind, level, seed=seed + i)
            for i in range(len(images))])
        scores = score_fn(perturbed)
        report["rows"].append({"kind": kind, "level": level,
                               "auc": auc(scores, labels),
                               "acc": acc(scores, labels)})
    return report
