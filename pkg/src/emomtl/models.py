"""The five architecture variants assembled from layers.

Shared pluggable encoder (per-frame linear + LeakyReLU stack), per-task
branches of self-attentive pooling + MLP producing 32-dim task embeddings
E_D / E_C, and final prediction heads. Hierarchical variants concatenate
the auxiliary branch's embedding into the other head's input:

    hier_dc : c_hat from [E_D || E_C]   (discrete helps continuous)
    hier_cd : logits from [E_C || E_D]  (continuous helps discrete)

The continuous head is ReLU-activated so predictions stay nonnegative;
the discrete head emits raw logits. Concatenation order is fixed as shown
so serialized models are portable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import numerics
from .layers import ActivationLayer, DropoutLayer, LinearLayer, SelfAttentivePooling
from .numerics import Rng

VARIANTS = ("baseline_c", "baseline_d", "multitask", "hier_dc", "hier_cd")

EMOP_MAGIC = b"EMOP"
EMOP_VERSION = 1


@dataclass
class ModelDims:
    d_in: int
    d_enc: int = 64
    mlp: tuple = (64, 32)
    d_att: int = 64
    n_classes: int = 5
    n_cont: int = 3
    n_enc_layers: int = 1
    dropout: float = 0.2
    leaky_slope: float = 0.01

    def __post_init__(self):
        if self.d_in < 1 or self.d_enc < 1 or self.d_att < 1:
            raise ValueError(f"invalid dims: {self}")
        if len(self.mlp) != 2 or any(m < 1 for m in self.mlp):
            raise ValueError(f"invalid MLP dims: {self.mlp}")


@dataclass
class ForwardOutput:
    logits: np.ndarray | None = None   # (B, n_classes), absent for baseline_c
    c_hat: np.ndarray | None = None    # (B, n_cont) nonnegative, absent for baseline_d
    E_D: np.ndarray | None = None
    E_C: np.ndarray | None = None


class _Branch:
    """Self-attentive pooling followed by a two-layer MLP with dropout."""

    def __init__(self, rng: Rng, dims: ModelDims, tag: str):
        self.sap = SelfAttentivePooling(rng, dims.d_enc, dims.d_att, name=f"{tag}_sap")
        m0, m1 = dims.mlp
        self.fc0 = LinearLayer(rng, dims.d_enc, m0, name=f"{tag}_mlp0")
        self.act0 = ActivationLayer("leaky_relu", dims.leaky_slope)
        self.drop0 = DropoutLayer(dims.dropout)
        self.fc1 = LinearLayer(rng, m0, m1, name=f"{tag}_mlp1")
        self.act1 = ActivationLayer("leaky_relu", dims.leaky_slope)
        self.drop1 = DropoutLayer(dims.dropout)

    def set_mode(self, mode: str):
        self.drop0.mode = mode
        self.drop1.mode = mode

    def forward(self, H, frame_mask, rng):
        x = self.sap.forward(H, frame_mask)
        x = self.drop0.forward(self.act0.forward(self.fc0.forward(x)), rng)
        x = self.drop1.forward(self.act1.forward(self.fc1.forward(x)), rng)
        return x

    def backward(self, grad_E):
        g = self.fc1.backward(self.act1.backward(self.drop1.backward(grad_E)))
        g = self.fc0.backward(self.act0.backward(self.drop0.backward(g)))
        return self.sap.backward(g)

    def layers(self):
        return [self.sap, self.fc0, self.fc1]


class ModelState:
    """Parameters plus cached forward context for one architecture variant."""

    def __init__(self, variant: str, dims: ModelDims, rng: Rng,
                 hier_stop_gradient: bool = False):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        self.variant = variant
        self.dims = dims
        self.hier_stop_gradient = hier_stop_gradient

        self.encoder = []
        d = dims.d_in
        for i in range(dims.n_enc_layers):
            self.encoder.append(LinearLayer(rng, d, dims.d_enc, name=f"enc{i}"))
            self.encoder.append(ActivationLayer("leaky_relu", dims.leaky_slope))
            d = dims.d_enc

        m1 = dims.mlp[1]
        self.disc_branch = _Branch(rng, dims, "disc") if self.has_discrete else None
        self.cont_branch = _Branch(rng, dims, "cont") if self.has_continuous else None
        d_disc_in = 2 * m1 if variant == "hier_cd" else m1
        d_cont_in = 2 * m1 if variant == "hier_dc" else m1
        self.disc_head = (
            LinearLayer(rng, d_disc_in, dims.n_classes, name="disc_head")
            if self.has_discrete else None
        )
        self.cont_head = (
            LinearLayer(rng, d_cont_in, dims.n_cont, name="cont_head")
            if self.has_continuous else None
        )
        self.cont_act = ActivationLayer("relu") if self.has_continuous else None
        self._fwd = None

    @property
    def has_discrete(self) -> bool:
        return self.variant != "baseline_c"

    @property
    def has_continuous(self) -> bool:
        return self.variant != "baseline_d"

    def _all_layers(self):
        out = [l for l in self.encoder if isinstance(l, LinearLayer)]
        if self.disc_branch:
            out += self.disc_branch.layers()
        if self.cont_branch:
            out += self.cont_branch.layers()
        if self.disc_head:
            out.append(self.disc_head)
        if self.cont_head:
            out.append(self.cont_head)
        return out

    def params(self) -> dict:
        out = {}
        for layer in self._all_layers():
            out.update(layer.params())
        return out

    def grads(self) -> dict:
        out = {}
        for layer in self._all_layers():
            out.update(layer.grads())
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.params().values())

    def set_mode(self, mode: str):
        for br in (self.disc_branch, self.cont_branch):
            if br:
                br.set_mode(mode)

    def forward(self, features: np.ndarray, frame_mask: np.ndarray,
                mode: str = "eval", rng: Rng | None = None) -> ForwardOutput:
        """Run the variant's wiring on a padded batch (B, T, d_in) + mask (B, T)."""
        if features.ndim != 3:
            raise ValueError(f"expected (B, T, D) features, got shape {features.shape}")
        if features.shape[0] == 0:
            raise ValueError("empty batch")
        if features.shape[2] != self.dims.d_in:
            raise ValueError(
                f"feature dim {features.shape[2]} != model d_in {self.dims.d_in}"
            )
        self.set_mode(mode)
        H = features
        for layer in self.encoder:
            H = layer.forward(H)

        out = ForwardOutput()
        if self.disc_branch:
            out.E_D = self.disc_branch.forward(H, frame_mask, rng)
        if self.cont_branch:
            out.E_C = self.cont_branch.forward(H, frame_mask, rng)

        if self.variant == "hier_cd":
            disc_in = np.concatenate([out.E_C, out.E_D], axis=1)
        else:
            disc_in = out.E_D
        if self.variant == "hier_dc":
            cont_in = np.concatenate([out.E_D, out.E_C], axis=1)
        else:
            cont_in = out.E_C

        if self.disc_head:
            out.logits = self.disc_head.forward(disc_in)
        if self.cont_head:
            out.c_hat = self.cont_act.forward(self.cont_head.forward(cont_in))
        self._fwd = out
        return out

    def backward(self, grad_logits: np.ndarray | None = None,
                 grad_c: np.ndarray | None = None) -> dict:
        """Backprop loss gradients through the variant's graph.

        Absent gradients are treated as zero. In hierarchical variants the
        auxiliary embedding receives gradient through the concatenation
        unless hier_stop_gradient is set.
        """
        if self._fwd is None:
            raise RuntimeError("backward called before forward")
        out = self._fwd
        B = (out.E_D if out.E_D is not None else out.E_C).shape[0]
        m1 = self.dims.mlp[1]
        grad_ED = np.zeros((B, m1), dtype=numerics.get_dtype()) if out.E_D is not None else None
        grad_EC = np.zeros((B, m1), dtype=numerics.get_dtype()) if out.E_C is not None else None

        if self.disc_head:
            if grad_logits is None:
                grad_logits = np.zeros_like(out.logits)
            g = self.disc_head.backward(grad_logits)
            if self.variant == "hier_cd":
                if not self.hier_stop_gradient:
                    grad_EC += g[:, :m1]
                grad_ED += g[:, m1:]
            else:
                grad_ED += g

        if self.cont_head:
            if grad_c is None:
                grad_c = np.zeros_like(out.c_hat)
            g = self.cont_head.backward(self.cont_act.backward(grad_c))
            if self.variant == "hier_dc":
                if not self.hier_stop_gradient:
                    grad_ED += g[:, :m1]
                grad_EC += g[:, m1:]
            else:
                grad_EC += g

        grad_H = None
        if self.disc_branch:
            grad_H = self.disc_branch.backward(grad_ED)
        if self.cont_branch:
            gh = self.cont_branch.backward(grad_EC)
            grad_H = gh if grad_H is None else grad_H + gh
        for layer in reversed(self.encoder):
            grad_H = layer.backward(grad_H)
        return self.grads()

    def predict(self, features, frame_mask):
        """Eval-mode predictions: argmax class ids (first index wins ties) and c_hat."""
        out = self.forward(features, frame_mask, mode="eval")
        ids = np.argmax(out.logits, axis=1) if out.logits is not None else None
        return ids, out.c_hat


def build(variant: str, dims: ModelDims, rng: Rng,
          hier_stop_gradient: bool = False) -> ModelState:
    return ModelState(variant, dims, rng, hier_stop_gradient)


# --- EMOP serialization -----------------------------------------------------
#
# Binary container, little-endian: magic "EMOP", version u16, then a table
# of entries (name_len u16, utf-8 name, rank u8, dims u32[rank], f32 payload)
# read until EOF. Architecture metadata rides along as rank-0 entries under
# the reserved "meta/" prefix; the loader rebuilds the descriptor from them
# and validates every tensor shape against it.

_META_FIELDS = ("variant_id", "d_in", "d_enc", "d_att", "mlp0", "mlp1",
                "n_classes", "n_cont", "n_enc_layers", "dropout",
                "leaky_slope", "hier_stop_gradient")


def _write_entry(fh, name: str, arr: np.ndarray):
    data = np.ascontiguousarray(arr, dtype="<f4")
    nb = name.encode("utf-8")
    fh.write(struct.pack("<H", len(nb)))
    fh.write(nb)
    fh.write(struct.pack("<B", data.ndim))
    for d in data.shape:
        fh.write(struct.pack("<I", d))
    fh.write(data.tobytes())


def save_model(state: ModelState, path):
    dims = state.dims
    meta = {
        "variant_id": VARIANTS.index(state.variant),
        "d_in": dims.d_in, "d_enc": dims.d_enc, "d_att": dims.d_att,
        "mlp0": dims.mlp[0], "mlp1": dims.mlp[1],
        "n_classes": dims.n_classes, "n_cont": dims.n_cont,
        "n_enc_layers": dims.n_enc_layers, "dropout": dims.dropout,
        "leaky_slope": dims.leaky_slope,
        "hier_stop_gradient": int(state.hier_stop_gradient),
    }
    with open(path, "wb") as fh:
        fh.write(EMOP_MAGIC)
        fh.write(struct.pack("<H", EMOP_VERSION))
        for key in _META_FIELDS:
            _write_entry(fh, f"meta/{key}", np.asarray(meta[key], dtype=np.float32))
        for name, p in sorted(state.params().items()):
            _write_entry(fh, name, p)


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError(f"truncated model file: reading {what} at offset {fh.tell()}")
    return buf


def load_model(path) -> ModelState:
    tensors = {}
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != EMOP_MAGIC:
            raise ValueError(f"bad model magic {magic!r} at offset 0, expected {EMOP_MAGIC!r}")
        (version,) = struct.unpack("<H", _read_exact(fh, 2, "version"))
        if version != EMOP_VERSION:
            raise ValueError(f"unsupported model version {version}")
        while True:
            head = fh.read(2)
            if not head:
                break
            (nlen,) = struct.unpack("<H", head)
            name = _read_exact(fh, nlen, "name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, "rank"))
            shape = tuple(
                struct.unpack("<I", _read_exact(fh, 4, "dim"))[0] for _ in range(rank)
            )
            count = int(np.prod(shape)) if shape else 1
            payload = _read_exact(fh, 4 * count, f"payload of {name}")
            arr = np.frombuffer(payload, dtype="<f4").reshape(shape)
            tensors[name] = arr.astype(numerics.get_dtype())

    missing = [f"meta/{k}" for k in _META_FIELDS if f"meta/{k}" not in tensors]
    if missing:
        raise ValueError(f"model file missing metadata entries: {missing}")
    # shortest-repr decode so f32-stored values like 0.2 widen back to the
    # Python float they were written from
    meta = {
        k: float(str(np.float32(tensors.pop(f"meta/{k}").reshape(())[()])))
        for k in _META_FIELDS
    }
    dims = ModelDims(
        d_in=int(meta["d_in"]), d_enc=int(meta["d_enc"]),
        mlp=(int(meta["mlp0"]), int(meta["mlp1"])), d_att=int(meta["d_att"]),
        n_classes=int(meta["n_classes"]), n_cont=int(meta["n_cont"]),
        n_enc_layers=int(meta["n_enc_layers"]), dropout=meta["dropout"],
        leaky_slope=meta["leaky_slope"],
    )
    variant = VARIANTS[int(meta["variant_id"])]
    state = ModelState(variant, dims, Rng(0), bool(meta["hier_stop_gradient"]))
    params = state.params()
    if set(params) != set(tensors):
        raise ValueError(
            f"parameter name mismatch: extra={sorted(set(tensors) - set(params))}, "
            f"missing={sorted(set(params) - set(tensors))}"
        )
    for name, arr in tensors.items():
        if params[name].shape != arr.shape:
            raise ValueError(
                f"shape mismatch for {name}: file {arr.shape} vs model {params[name].shape}"
            )
        params[name][...] = arr
    return state
