"""Differentiable building blocks with explicit forward/backward passes.

Each layer caches whatever its backward pass needs during forward.
A layer instance is single-threaded during one forward/backward pair;
distinct instances are independent.

Convention for activation derivatives at the ReLU/LeakyReLU kink (x == 0):
the positive-branch value is used. Documented tie-break, matters only on a
measure-zero set.
"""

from __future__ import annotations

import numpy as np

from . import numerics
from .numerics import Rng


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax (max-subtracted, shift-invariant)."""
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_grad(x: np.ndarray) -> np.ndarray:
    # derivative at exactly 0 taken from the positive side
    return (x >= 0).astype(x.dtype)


def leaky_relu(x: np.ndarray, slope: float = 0.01) -> np.ndarray:
    return np.where(x >= 0, x, slope * x)


def leaky_relu_grad(x: np.ndarray, slope: float = 0.01) -> np.ndarray:
    return np.where(x >= 0, 1.0, slope).astype(x.dtype)


class LinearLayer:
    """y = x W^T + b for row-vector inputs, with cached input for backward."""

    def __init__(self, rng: Rng, d_in: int, d_out: int, name: str = "linear"):
        self.name = name
        self.W = numerics.xavier_init(rng, d_out, d_in)
        self.b = numerics.zeros(d_out)
        self.grad_W = None
        self.grad_b = None
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.W.shape[1]:
            raise ValueError(
                f"{self.name}: input dim {x.shape[-1]} != expected {self.W.shape[1]}"
            )
        self._cache = x
        return x @ self.W.T + self.b

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward called before forward")
        x = self._cache
        flat_g = grad_out.reshape(-1, grad_out.shape[-1])
        flat_x = x.reshape(-1, x.shape[-1])
        self.grad_W = flat_g.T @ flat_x
        self.grad_b = flat_g.sum(axis=0)
        return grad_out @ self.W

    def params(self):
        return {f"{self.name}/W": self.W, f"{self.name}/b": self.b}

    def grads(self):
        return {f"{self.name}/W": self.grad_W, f"{self.name}/b": self.grad_b}


class ActivationLayer:
    """relu / leaky_relu / tanh with cached pre-activation."""

    def __init__(self, kind: str, slope: float = 0.01, name: str = "act"):
        if kind not in ("relu", "leaky_relu", "tanh"):
            raise ValueError(f"unknown activation {kind!r}")
        self.kind = kind
        self.slope = slope
        self.name = name
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._cache = x
        if self.kind == "relu":
            return relu(x)
        if self.kind == "leaky_relu":
            return leaky_relu(x, self.slope)
        return np.tanh(x)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward called before forward")
        x = self._cache
        if self.kind == "relu":
            return grad_out * relu_grad(x)
        if self.kind == "leaky_relu":
            return grad_out * leaky_relu_grad(x, self.slope)
        t = np.tanh(x)
        return grad_out * (1 - t * t)

    def params(self):
        return {}

    def grads(self):
        return {}


class DropoutLayer:
    """Inverted dropout: train mode scales kept units by 1/(1-rate); eval is identity."""

    def __init__(self, rate: float, name: str = "dropout"):
        if not 0 <= rate < 1:
            raise ValueError(f"dropout rate must be in [0,1), got {rate}")
        self.rate = rate
        self.name = name
        self.mode = "train"
        self._mask = None

    def forward(self, x: np.ndarray, rng: Rng | None = None) -> np.ndarray:
        if self.mode == "eval" or self.rate == 0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError(f"{self.name}: train-mode dropout needs an rng")
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return grad_out
        return grad_out * self._mask

    def params(self):
        return {}

    def grads(self):
        return {}


class SelfAttentivePooling:
    """Additive single-head attention pooling over time.

    Scores e_t = v . tanh(W_att h_t + b_att); masked frames get -inf before
    the softmax so their weight is exactly 0 and gradients stay exact.
    Output is the attention-weighted sum of frames.

    Batched: input (B, T, d), frame mask (B, T) boolean, output (B, d).
    """

    def __init__(self, rng: Rng, d: int, d_att: int, name: str = "sap"):
        self.name = name
        self.W_att = numerics.xavier_init(rng, d_att, d)
        self.b_att = numerics.zeros(d_att)
        self.v = numerics.xavier_init(rng, d_att, 1).reshape(-1)
        self.grad_W_att = None
        self.grad_b_att = None
        self.grad_v = None
        self._cache = None

    def forward(self, H: np.ndarray, frame_mask: np.ndarray) -> np.ndarray:
        squeeze = H.ndim == 2
        if squeeze:
            H = H[None]
        if frame_mask.ndim == 1:
            frame_mask = frame_mask[None]
        mask = frame_mask.astype(bool)
        if not mask.any(axis=1).all():
            raise ValueError(f"{self.name}: a sequence has zero valid frames")
        z = H @ self.W_att.T + self.b_att          # (B, T, d_att)
        tz = np.tanh(z)
        e = tz @ self.v                            # (B, T)
        e = np.where(mask, e, -np.inf)
        alpha = softmax(e, axis=1)
        alpha = np.where(mask, alpha, 0.0)
        out = np.einsum("bt,btd->bd", alpha, H)
        self._cache = (H, mask, tz, alpha, squeeze)
        return out[0] if squeeze else out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward called before forward")
        H, mask, tz, alpha, squeeze = self._cache
        if grad_out.ndim == 1:
            grad_out = grad_out[None]
        # out = sum_t alpha_t h_t
        grad_H = alpha[..., None] * grad_out[:, None, :]       # direct path
        u = np.einsum("btd,bd->bt", H, grad_out)               # d out / d alpha_t
        # softmax backward over valid frames
        s = np.sum(alpha * u, axis=1, keepdims=True)
        grad_e = alpha * (u - s)
        grad_e = np.where(mask, grad_e, 0.0)
        # e_t = v . tanh(z_t)
        grad_tz = grad_e[..., None] * self.v                   # (B, T, d_att)
        self.grad_v = np.einsum("bt,btd->d", grad_e, tz)
        grad_z = grad_tz * (1 - tz * tz)
        grad_z = np.where(mask[..., None], grad_z, 0.0)
        flat_z = grad_z.reshape(-1, grad_z.shape[-1])
        flat_H = H.reshape(-1, H.shape[-1])
        self.grad_W_att = flat_z.T @ flat_H
        self.grad_b_att = flat_z.sum(axis=0)
        grad_H = grad_H + grad_z @ self.W_att
        grad_H = np.where(mask[..., None], grad_H, 0.0)
        return grad_H[0] if squeeze else grad_H

    def params(self):
        return {
            f"{self.name}/W_att": self.W_att,
            f"{self.name}/b_att": self.b_att,
            f"{self.name}/v": self.v,
        }

    def grads(self):
        return {
            f"{self.name}/W_att": self.grad_W_att,
            f"{self.name}/b_att": self.grad_b_att,
            f"{self.name}/v": self.grad_v,
        }
