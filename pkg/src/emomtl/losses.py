"""Training objectives: masked cross-entropy, CCC loss, and their weighted sum.

All losses return (scalar, analytic gradient w.r.t. predictions). Masked
examples contribute exactly zero to both the loss value and every gradient;
statistics (means, variances, covariance) are computed over the unmasked
subset only, with population (1/n) normalization so the loss complements
the evaluation-side CCC exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .layers import softmax

CCC_EPS = 1e-8
LOG_CLAMP = 1e-12


@dataclass
class CccStats:
    """Sufficient statistics behind one CCC value (population-normalized)."""

    s_cc_hat: float
    s_c_sq: float
    s_chat_sq: float
    c_bar: float
    chat_bar: float
    n: int


@dataclass
class MtlWeights:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("multi-task weights must be nonnegative")


def ccc_stats(pred: np.ndarray, truth: np.ndarray) -> CccStats:
    n = len(pred)
    c_bar = float(np.mean(truth))
    chat_bar = float(np.mean(pred))
    return CccStats(
        s_cc_hat=float(np.mean((truth - c_bar) * (pred - chat_bar))),
        s_c_sq=float(np.mean((truth - c_bar) ** 2)),
        s_chat_sq=float(np.mean((pred - chat_bar) ** 2)),
        c_bar=c_bar,
        chat_bar=chat_bar,
        n=n,
    )


def cross_entropy(logits: np.ndarray, targets: np.ndarray, target_mask: np.ndarray):
    """Masked softmax cross-entropy, mean over unmasked rows.

    Returns (loss, grad_logits). With no unmasked rows the result is
    (0, zeros) plus a warning.
    """
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    mask = np.asarray(target_mask).astype(bool)
    B, K = logits.shape
    grad = np.zeros_like(logits)
    n = int(mask.sum())
    if n == 0:
        warnings.warn("cross_entropy: no unmasked rows", RuntimeWarning)
        return 0.0, grad
    sel = np.where(mask)[0]
    t = targets[sel].astype(int)
    if (t < 0).any() or (t >= K).any():
        raise ValueError(f"class id out of range [0,{K}): {t[(t < 0) | (t >= K)]}")
    p = softmax(logits[sel], axis=1)
    loss = float(-np.mean(np.log(np.maximum(p[np.arange(n), t], LOG_CLAMP))))
    g = p.copy()
    g[np.arange(n), t] -= 1.0
    grad[sel] = g / n
    return loss, grad


def ccc_loss(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray):
    """1 - CCC over the unmasked entries, with analytic gradient w.r.t. pred.

    Fewer than 2 unmasked entries gives (1.0, zeros) and a warning: no
    meaningful second-order statistic exists.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    m = np.asarray(mask).astype(bool)
    grad = np.zeros_like(pred, dtype=pred.dtype if pred.dtype.kind == "f" else np.float64)
    n = int(m.sum())
    if n < 2:
        warnings.warn("ccc_loss: fewer than 2 unmasked entries", RuntimeWarning)
        return 1.0, grad
    sel = np.where(m)[0]
    # statistics in float64 regardless of the training width
    p = pred[sel].astype(np.float64)
    t = truth[sel].astype(np.float64)
    st = ccc_stats(p, t)
    denom = st.s_c_sq + st.s_chat_sq + (st.c_bar - st.chat_bar) ** 2 + CCC_EPS
    loss = 1.0 - 2.0 * st.s_cc_hat / denom
    # d cov / d p_i = (t_i - t_bar)/n ; d var_p / d p_i = 2(p_i - p_bar)/n
    # d (c_bar - p_bar)^2 / d p_i = -2(c_bar - p_bar)/n
    d_cov = (t - st.c_bar) / n
    d_denom = 2.0 * (p - st.chat_bar) / n - 2.0 * (st.c_bar - st.chat_bar) / n
    g = -2.0 * (d_cov * denom - st.s_cc_hat * d_denom) / (denom * denom)
    grad[sel] = g.astype(grad.dtype)
    return float(loss), grad


def continuous_loss(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray):
    """Sum of per-attribute CCC losses over the (B, 3) valence/arousal/dominance
    columns. Returns (loss, grad) with grad shaped like pred."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    grad = np.zeros_like(pred)
    total = 0.0
    for j in range(pred.shape[1]):
        lj, gj = ccc_loss(pred[:, j], truth[:, j], mask)
        total += lj
        grad[:, j] = gj
    return total, grad


def multitask_loss(cont_terms, disc_term: float, w: MtlWeights) -> float:
    """Weighted total objective: alpha * sum(continuous CCC terms) + beta * discrete."""
    return w.alpha * float(np.sum(cont_terms)) + w.beta * float(disc_term)
