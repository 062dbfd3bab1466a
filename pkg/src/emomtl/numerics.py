"""Dense array arithmetic, seeded RNG, and initializers.

All tensors are numpy arrays in row-major (C) order. Training runs in
float32; gradient checking switches the whole library to float64 via
``set_dtype``/``precision`` because central finite differences need the
extra precision.

Determinism: every random draw in the library flows through an ``Rng``
(PCG64 behind ``numpy.random.Generator``). The same seed produces the
same draw sequence on every platform; nothing reads ambient entropy.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_DTYPE = np.float32


def set_dtype(dtype) -> None:
    """Set the global float width ('float32' or 'float64')."""
    global _DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _DTYPE = dt.type


def get_dtype():
    return _DTYPE


@contextmanager
def precision(dtype):
    """Temporarily switch the global float width (used by gradient checks)."""
    prev = _DTYPE
    set_dtype(dtype)
    try:
        yield
    finally:
        set_dtype(prev)


def asarray(x) -> np.ndarray:
    """Coerce to a C-contiguous array in the current global dtype."""
    return np.ascontiguousarray(np.asarray(x, dtype=_DTYPE))


def zeros(*shape) -> np.ndarray:
    return np.zeros(shape, dtype=_DTYPE)


class Rng:
    """Seeded deterministic PRNG (PCG64).

    ``spawn(tag)`` derives an independent, reproducible substream from a
    string tag, so one top-level seed can drive corpus generation, init,
    shuffling and dropout without the streams interfering.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, tag: str) -> "Rng":
        # Stable hash of the tag; hash() is salted per process so avoid it.
        h = np.uint64(1469598103934665603)
        for byte in tag.encode("utf-8"):
            h = np.uint64((int(h) ^ byte) * 1099511628211 % (1 << 64))
        return Rng(self.seed ^ int(h))

    def uniform(self, low, high, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, shape).astype(_DTYPE)

    def normal(self, loc, scale, shape=None) -> np.ndarray:
        return self._gen.normal(loc, scale, shape).astype(_DTYPE)

    def integers(self, low, high, shape=None):
        return self._gen.integers(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def random(self, shape=None) -> np.ndarray:
        return self._gen.random(shape).astype(_DTYPE)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape check."""
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return (a @ b).astype(_DTYPE, copy=False)


def xavier_init(rng: Rng, rows: int, cols: int) -> np.ndarray:
    """Uniform Xavier/Glorot init in +-sqrt(6/(rows+cols))."""
    if rows < 1 or cols < 1:
        raise ValueError(f"xavier_init needs positive dims, got {rows}x{cols}")
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, (rows, cols))


def add(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"add shape mismatch: {np.shape(a)} vs {np.shape(b)}")
    return (a + b).astype(_DTYPE, copy=False)


def sub(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"sub shape mismatch: {np.shape(a)} vs {np.shape(b)}")
    return (a - b).astype(_DTYPE, copy=False)


def hadamard(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"hadamard shape mismatch: {np.shape(a)} vs {np.shape(b)}")
    return (a * b).astype(_DTYPE, copy=False)


def scale(a, s: float):
    return (a * s).astype(_DTYPE, copy=False)


def clamp(a, lo=None, hi=None):
    return np.clip(a, lo, hi).astype(_DTYPE, copy=False)
