"""Regression, classification, and combined loss functions with gradients.

The combined objective weights the classification loss by alpha and the
regression loss by (1 - alpha), so alpha=1 reduces exactly to the
classification loss and alpha=0 exactly to the regression loss.
"""

from __future__ import annotations

import warnings

import numpy as np

PROB_FLOOR = 1e-7


class ProbabilityClampWarning(UserWarning):
    """A true-class probability hit the numerical floor inside focal loss."""


def smooth_l1(z, z_hat, beta: float = 1.0):
    """Smooth-L1: quadratic within |residual| < beta, linear outside.

    Elementwise over array inputs; the two branches agree at the kink, and
    the gradient there takes the quadratic-branch value.
    """
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    d = np.asarray(z, dtype=np.float64) - np.asarray(z_hat, dtype=np.float64)
    ad = np.abs(d)
    out = np.where(ad < beta, 0.5 * d * d / beta, ad - 0.5 * beta)
    return float(out) if out.ndim == 0 else out

def smooth_l1_grad(z, z_hat, beta: float = 1.0):
    """d smooth_l1 / d z_hat, elementwise."""
    d = np.asarray(z, dtype=np.float64) - np.asarray(z_hat, dtype=np.float64)
    g = np.where(np.abs(d) < beta, -d / beta, -np.sign(d))
    return float(g) if g.ndim == 0 else g


def focal_loss(y: int, y_hat: np.ndarray, gamma: float = 2.0) -> float:
    """Focal loss -(1 - p_t)^gamma * ln(p_t) for a single prediction.

    ``y_hat`` is a probability vector; ``y`` indexes the true class. A zero
    true-class probability is clamped to a small floor and flagged with a
    warning rather than propagating infinities.
    """
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y_hat.ndim != 1 or not 0 <= y < y_hat.size:
        raise ValueError("y_hat must be a probability vector indexed by y")
    if np.any(y_hat < 0) or abs(float(y_hat.sum()) - 1.0) > 1e-6:
        raise ValueError("y_hat is not a probability vector")
    p_t = float(y_hat[y])
    if p_t < PROB_FLOOR:
        warnings.warn(
            f"true-class probability {p_t:.3e} clamped to {PROB_FLOOR}",
            ProbabilityClampWarning,
            stacklevel=2,
        )
        p_t = PROB_FLOOR
    return -((1.0 - p_t) ** gamma) * np.log(p_t)


def focal_loss_batch(labels: np.ndarray, probs: np.ndarray, gamma: float = 2.0) -> np.ndarray:
    """Vectorized focal loss per sample; same clamping rule as focal_loss."""
    p_t = probs[np.arange(labels.size), labels]
    if np.any(p_t < PROB_FLOOR):
        warnings.warn(
            "true-class probabilities clamped inside focal loss",
            ProbabilityClampWarning,
            stacklevel=2,
        )
        p_t = np.maximum(p_t, PROB_FLOOR)
    return -((1.0 - p_t) ** gamma) * np.log(p_t)


def focal_grad_logits(labels: np.ndarray, logits: np.ndarray, probs: np.ndarray,
                      gamma: float = 2.0) -> np.ndarray:
    """Per-sample gradient of the focal loss with respect to the logits.

    With p = softmax(logits) and p_t the true-class entry,
    dL/dp_t = gamma * (1-p_t)^(gamma-1) * ln(p_t) - (1-p_t)^gamma / p_t
    and dp_t/ds_j = p_t * (1[j=t] - p_j).
    """
    b = labels.size
    idx = np.arange(b)
    p_t = np.maximum(probs[idx, labels], PROB_FLOOR)
    one_minus = 1.0 - p_t
    dl_dpt = gamma * one_minus ** (gamma - 1.0) * np.log(p_t) - one_minus**gamma / p_t
    onehot = np.zeros_like(probs)
    onehot[idx, labels] = 1.0
    return dl_dpt[:, None] * p_t[:, None] * (onehot - probs)


def multitask_loss(y: int, y_hat: np.ndarray, z: float, z_hat: float,
                   alpha: float, gamma: float = 2.0, beta: float = 1.0) -> float:
    """alpha-weighted sum of the diagnosis and regression losses.

    Exactly equals the focal loss at alpha=1 and the smooth-L1 loss at
    alpha=0.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if alpha == 1.0:
        return focal_loss(y, y_hat, gamma)
    if alpha == 0.0:
        return float(smooth_l1(z, z_hat, beta))
    return alpha * focal_loss(y, y_hat, gamma) + (1.0 - alpha) * float(
        smooth_l1(z, z_hat, beta)
    )
