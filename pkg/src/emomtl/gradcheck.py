"""Central finite-difference verification of every analytic gradient.

All checks run in float64 (the library-wide precision switch) with inputs
sampled away from activation kinks. Each check returns rows of
(component, tensor, max relative error) so the CLI can print one row per
parameter tensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses, numerics
from .layers import ActivationLayer, LinearLayer, SelfAttentivePooling
from .models import VARIANTS, ModelDims, build
from .numerics import Rng

FD_EPS = 1e-6


@dataclass
class CheckRow:
    component: str
    tensor: str
    rel_err: float


def fd_gradient(f, x: np.ndarray, eps: float = FD_EPS) -> np.ndarray:
    """Central finite differences of scalar f at x, entry by entry."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * eps)
    return g


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0), np.abs(n).max(initial=0), 1e-8)
    return float(np.abs(a - n).max(initial=0) / denom)


def _away_from_kinks(rng: Rng, shape, margin=0.05):
    x = rng.normal(0.0, 1.0, shape).astype(np.float64)
    x[np.abs(x) < margin] += 2 * margin
    return x


def check_linear(rng: Rng) -> list:
    layer = LinearLayer(rng, 4, 3, name="linear")
    x = rng.normal(0.0, 1.0, (5, 4))
    w_out = rng.normal(0.0, 1.0, (5, 3))   # random linear functional as the scalar loss

    def loss():
        return float(np.sum(layer.forward(x) * w_out))

    loss()
    grad_x = layer.backward(w_out.copy())
    rows = [
        CheckRow("linear", "W", rel_err(layer.grad_W, fd_gradient(loss, layer.W))),
        CheckRow("linear", "b", rel_err(layer.grad_b, fd_gradient(loss, layer.b))),
        CheckRow("linear", "x", rel_err(grad_x, fd_gradient(loss, x))),
    ]
    return rows


def check_activations(rng: Rng) -> list:
    rows = []
    for kind in ("relu", "leaky_relu", "tanh"):
        act = ActivationLayer(kind)
        x = _away_from_kinks(rng, (4, 6))
        w_out = rng.normal(0.0, 1.0, (4, 6))

        def loss():
            return float(np.sum(act.forward(x) * w_out))

        loss()
        grad_x = act.backward(w_out.copy())
        rows.append(CheckRow(kind, "x", rel_err(grad_x, fd_gradient(loss, x))))
    return rows


def check_sap(rng: Rng) -> list:
    d, d_att, T = 5, 4, 6
    sap = SelfAttentivePooling(rng, d, d_att, name="sap")
    H = rng.normal(0.0, 1.0, (T, d))
    mask = np.array([True, True, True, True, False, False])
    w_out = rng.normal(0.0, 1.0, d)

    def loss():
        return float(np.dot(sap.forward(H, mask), w_out))

    loss()
    grad_H = sap.backward(w_out.copy())
    return [
        CheckRow("sap", "W_att", rel_err(sap.grad_W_att, fd_gradient(loss, sap.W_att))),
        CheckRow("sap", "b_att", rel_err(sap.grad_b_att, fd_gradient(loss, sap.b_att))),
        CheckRow("sap", "v", rel_err(sap.grad_v, fd_gradient(loss, sap.v))),
        CheckRow("sap", "H", rel_err(grad_H, fd_gradient(loss, H))),
    ]


def check_losses(rng: Rng) -> list:
    rows = []
    B, K = 7, 5
    logits = rng.normal(0.0, 2.0, (B, K))
    targets = rng.integers(0, K, B)
    mask = rng.random(B) < 0.8
    mask[:2] = True

    def ce():
        return losses.cross_entropy(logits, targets, mask)[0]

    rows.append(CheckRow("cross_entropy", "logits",
                         rel_err(losses.cross_entropy(logits, targets, mask)[1],
                                 fd_gradient(ce, logits))))

    pred = rng.normal(3.0, 1.0, B)
    truth = rng.normal(3.0, 1.0, B)

    def cl():
        return losses.ccc_loss(pred, truth, mask)[0]

    rows.append(CheckRow("ccc_loss", "pred",
                         rel_err(losses.ccc_loss(pred, truth, mask)[1],
                                 fd_gradient(cl, pred))))

    pred3 = rng.normal(3.0, 1.0, (B, 3))
    truth3 = rng.normal(3.0, 1.0, (B, 3))

    def c3():
        return losses.continuous_loss(pred3, truth3, mask)[0]

    rows.append(CheckRow("continuous_loss", "pred",
                         rel_err(losses.continuous_loss(pred3, truth3, mask)[1],
                                 fd_gradient(c3, pred3))))
    return rows


def check_model(variant: str, rng: Rng, corrupt: bool = False) -> list:
    """End-to-end finite-difference check of one variant on tiny dims."""
    dims = ModelDims(d_in=6, d_enc=5, mlp=(5, 4), d_att=3, dropout=0.0)
    model = build(variant, dims, rng)
    B, T = 3, 5
    features = _away_from_kinks(rng, (B, T, dims.d_in))
    frame_mask = np.ones((B, T), dtype=bool)
    frame_mask[1, 3:] = False
    disc = rng.integers(0, dims.n_classes, B)
    disc_mask = np.ones(B, dtype=bool)
    vad = np.abs(rng.normal(3.0, 1.0, (B, 3)))
    vad_mask = np.ones(B, dtype=bool)
    w = losses.MtlWeights(1.0, 1.0)

    def total_loss(run_backward=False):
        out = model.forward(features, frame_mask, mode="train", rng=None)
        lc, gc = (0.0, None)
        ld, gl = (0.0, None)
        if model.has_continuous:
            lc, gc = losses.continuous_loss(out.c_hat, vad, vad_mask)
        if model.has_discrete:
            ld, gl = losses.cross_entropy(out.logits, disc, disc_mask)
        if run_backward:
            model.backward(grad_logits=gl, grad_c=gc)
        return losses.multitask_loss([lc], ld, w)

    total_loss(run_backward=True)
    analytic = {k: g.copy() for k, g in model.grads().items()}
    if corrupt:
        first = sorted(analytic)[0]
        analytic[first] = analytic[first] + 1.0
    rows = []
    for name, p in sorted(model.params().items()):
        num = fd_gradient(total_loss, p)
        rows.append(CheckRow(variant, name, rel_err(analytic[name], num)))
    return rows


def run_all(seed: int = 0, variants=VARIANTS, corrupt: bool = False) -> list:
    """Full gradient suite in float64: layers, losses, all requested variants."""
    with numerics.precision("float64"):
        rng = Rng(seed)
        rows = []
        rows += check_linear(rng.spawn("linear"))
        rows += check_activations(rng.spawn("act"))
        rows += check_sap(rng.spawn("sap"))
        rows += check_losses(rng.spawn("loss"))
        for variant in variants:
            rows += check_model(variant, rng.spawn(f"model:{variant}"), corrupt=corrupt)
    return rows
