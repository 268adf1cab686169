"""Training objectives: mid-band/reconstruction alignment, mask refinement,
binary cross-entropy, and their weighted combination.

All squared-error terms are mean-reduced over elements so the balance
between terms is resolution-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensorops import ShapeError

CE_EPS = 1e-7


@dataclass
class LossWeights:
    lambda0: float = 0.2
    lambda1: float = 0.2
    lambda2: float = 0.6

    def __post_init__(self):
        for name in ("lambda0", "lambda1", "lambda2"):
            val = getattr(self, name)
            if not np.isfinite(val) or val < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {val}")


def _check_same_shape(a, b, what):
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"{what}: shape {np.shape(a)} != {np.shape(b)}")


def loss_mid_rec(x_mid: np.ndarray, delta_x: np.ndarray) -> float:
    """Mean squared difference between the extracted mid-band image and the
    reconstruction-error map. x_mid enters raw (it can be negative)."""
    _check_same_shape(x_mid, delta_x, "loss_mid_rec")
    d = x_mid.astype(np.float64) - delta_x.astype(np.float64)
    return float(np.mean(d * d))


def loss_mask(m_mid: np.ndarray, m_mid_c: np.ndarray,
              target_mid: np.ndarray, target_mid_c: np.ndarray) -> float:
    """Sum of three mean-squared terms: each mask against its preset target,
    plus the deviation of the pair from a partition of unity."""
    _check_same_shape(m_mid, target_mid, "loss_mask mid")
    _check_same_shape(m_mid_c, target_mid_c, "loss_mask mid_c")
    _check_same_shape(m_mid, m_mid_c, "loss_mask pair")
    m = m_mid.astype(np.float64)
    mc = m_mid_c.astype(np.float64)
    t1 = np.mean((m - target_mid) ** 2)
    t2 = np.mean((mc - target_mid_c) ** 2)
    t3 = np.mean((1.0 - m - mc) ** 2)
    return float(t1 + t2 + t3)


def loss_ce(y_true, y_pred) -> float:
    """Binary cross-entropy on probabilities, clamped away from {0,1}.

    Accepts scalars or arrays (mean-reduced).
    """
    y = np.asarray(y_true, dtype=np.float64)
    p = np.clip(np.asarray(y_pred, dtype=np.float64), CE_EPS, 1.0 - CE_EPS)
    _check_same_shape(y, p, "loss_ce")
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def total_loss(l_mid_rec: float, l_mask: float, l_ce: float,
               weights: LossWeights) -> float:
    """lambda0*l_mid_rec + lambda1*l_mask + lambda2*l_ce."""
    for name, val in (("l_mid_rec", l_mid_rec), ("l_mask", l_mask),
                      ("l_ce", l_ce)):
        if not np.isfinite(val):
            raise FloatingPointError(f"non-finite loss component {name}={val}")
    return float(weights.lambda0 * l_mid_rec + weights.lambda1 * l_mask
                 + weights.lambda2 * l_ce)
