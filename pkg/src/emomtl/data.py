"""Feature/label I/O, synthetic corpus generation, corpus mixing, batching.

EMOF feature file format, little-endian: magic "EMOF", version u16 = 1,
T u32, D u32, then T*D float32 values row-major. The minimal T=1, D=1 file
is 18 bytes.

Manifests are JSON-lines, one object per utterance:
  {"id", "path", "vad": [v,a,d] | null, "disc": 0-4 | null, "split", "corpus"}

The synthetic corpus encodes the circumplex layout: each discrete class
owns a (valence, arousal, dominance) prototype on a [1,7] scale; utterance
labels are noisy prototypes and frames are a fixed linear projection of
[vad, 1] plus frame noise. The defaults are calibrated so a least-squares
decode of vad from mean frames exceeds CCC 0.95.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics
from .numerics import Rng

EMOF_MAGIC = b"EMOF"
EMOF_VERSION = 1

MAX_FRAMES = 2000

# class prototypes (V, A, D) on the [1,7] scale; overridable in gen_synthetic
PROTOTYPES = {
    0: (4.0, 4.0, 4.0),    # neutral
    1: (2.0, 6.0, 6.0),    # angry
    2: (6.0, 6.0, 4.5),    # happy
    3: (2.0, 2.0, 2.5),    # sad
    4: (2.5, 4.5, 4.0),    # disgust
}


@dataclass
class FeatureSequence:
    utt_id: str
    frames: np.ndarray     # (T, D)


@dataclass
class EmotionLabel:
    disc: int | None = None
    vad: tuple | None = None

    def __post_init__(self):
        if self.disc is None and self.vad is None:
            raise ValueError("label must carry a discrete class or a vad triple")
        if self.vad is not None:
            if len(self.vad) != 3 or any(v < 0 for v in self.vad):
                raise ValueError(f"vad must be 3 nonnegative values, got {self.vad}")


@dataclass
class ManifestRecord:
    utt_id: str
    path: str
    label: EmotionLabel
    split: str
    corpus: str


@dataclass
class Manifest:
    records: list = field(default_factory=list)

    def __post_init__(self):
        ids = [r.utt_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate utterance ids in manifest")

    def subset(self, split: str) -> "Manifest":
        return Manifest([r for r in self.records if r.split == split])

    def __len__(self):
        return len(self.records)

    def save(self, path):
        # store feature paths relative to the manifest so corpora are movable
        base = Path(path).parent.resolve()
        with open(path, "w") as fh:
            for r in self.records:
                p = Path(r.path).resolve()
                try:
                    rel = str(p.relative_to(base))
                except ValueError:
                    rel = str(p)
                fh.write(json.dumps({
                    "id": r.utt_id,
                    "path": rel,
                    "vad": list(r.label.vad) if r.label.vad is not None else None,
                    "disc": r.label.disc,
                    "split": r.split,
                    "corpus": r.corpus,
                }) + "\n")

    @classmethod
    def load(cls, path) -> "Manifest":
        base = Path(path).parent
        records = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as e:
                    raise ValueError(f"{path}:{lineno}: bad manifest line: {e}") from e
                p = Path(obj["path"])
                if not p.is_absolute():
                    p = base / p
                records.append(ManifestRecord(
                    utt_id=obj["id"], path=str(p),
                    label=EmotionLabel(
                        disc=obj.get("disc"),
                        vad=tuple(obj["vad"]) if obj.get("vad") is not None else None,
                    ),
                    split=obj.get("split", "train"),
                    corpus=obj.get("corpus", "default"),
                ))
        return cls(records)


@dataclass
class Batch:
    features: np.ndarray    # (B, T_max, D), zero-padded
    frame_mask: np.ndarray  # (B, T_max) bool
    disc: np.ndarray        # (B,) int, -1 where absent
    disc_mask: np.ndarray   # (B,) bool
    vad: np.ndarray         # (B, 3), 0 where absent
    vad_mask: np.ndarray    # (B,) bool


def write_features(seq: FeatureSequence, path) -> None:
    frames = np.asarray(seq.frames, dtype="<f4")
    if frames.ndim != 2:
        raise ValueError(f"frames must be 2-D, got shape {frames.shape}")
    if not np.isfinite(frames).all():
        raise ValueError("refusing to write non-finite features")
    T, D = frames.shape
    with open(path, "wb") as fh:
        fh.write(EMOF_MAGIC)
        fh.write(struct.pack("<H", EMOF_VERSION))
        fh.write(struct.pack("<II", T, D))
        fh.write(np.ascontiguousarray(frames).tobytes())


def read_features(path) -> FeatureSequence:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != EMOF_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r} at offset 0, expected {EMOF_MAGIC!r}")
        hdr = fh.read(2)
        if len(hdr) != 2:
            raise ValueError(f"{path}: truncated at offset 4 reading version")
        (version,) = struct.unpack("<H", hdr)
        if version != EMOF_VERSION:
            raise ValueError(f"{path}: unsupported version {version} at offset 4")
        hdr = fh.read(8)
        if len(hdr) != 8:
            raise ValueError(f"{path}: truncated at offset 6 reading dims")
        T, D = struct.unpack("<II", hdr)
        if T > MAX_FRAMES:
            raise ValueError(f"{path}: {T} frames exceeds the {MAX_FRAMES}-frame cap")
        payload = fh.read(4 * T * D)
        if len(payload) != 4 * T * D:
            raise ValueError(f"{path}: truncated at offset {14 + len(payload)} reading payload")
    frames = np.frombuffer(payload, dtype="<f4").reshape(T, D)
    return FeatureSequence(utt_id=Path(path).stem, frames=frames.astype(numerics.get_dtype()))


def gen_synthetic(out_dir, n: int, d_in: int, seed: int,
                  sigma_label: float = 0.5, sigma_frame: float = 1.0,
                  length_range=(20, 80), split_ratios=(0.8, 0.1, 0.1),
                  corpus: str = "synth", prototypes=None,
                  attr_gains=(1.0, 1.0, 1.0)) -> Manifest:
    """Generate a synthetic dual-labeled corpus under out_dir.

    Per utterance: class k uniform over 5; vad = prototype(k) + N(0, sigma_label)
    clipped to [1,7]; T ~ Uniform[length_range] frames, each A @ [vad, 1] +
    N(0, sigma_frame), with A a fixed d_in x 4 mixing matrix drawn once from
    the seed. Deterministic: same arguments give byte-identical output.

    attr_gains scales A's valence/arousal/dominance columns. A gain below 1
    makes that attribute weakly expressed in the features while still
    correlated with the discrete class through its prototype, mimicking
    attributes that are hard to read directly from acoustics.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    protos = prototypes if prototypes is not None else PROTOTYPES
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)

    rng = Rng(seed).spawn(f"corpus:{corpus}")
    A = rng.normal(0.0, 1.0, (d_in, 4)).astype(np.float64)
    A[:, :3] *= np.asarray(attr_gains, dtype=np.float64)

    n_train = int(round(n * split_ratios[0]))
    n_valid = int(round(n * split_ratios[1]))
    splits = ["train"] * n_train + ["valid"] * n_valid + ["test"] * (n - n_train - n_valid)

    records = []
    for i in range(n):
        k = int(rng.integers(0, len(protos)))
        vad = np.asarray(protos[k], dtype=np.float64)
        vad = np.clip(vad + rng.normal(0.0, sigma_label, 3), 1.0, 7.0)
        T = int(rng.integers(length_range[0], length_range[1] + 1))
        base = A @ np.append(vad, 1.0)
        frames = base[None, :] + rng.normal(0.0, sigma_frame, (T, d_in))
        utt_id = f"{corpus}-{i:06d}"
        rel = f"features/{utt_id}.emof"
        write_features(FeatureSequence(utt_id, frames.astype(np.float32)), out_dir / rel)
        records.append(ManifestRecord(
            utt_id=utt_id, path=str(out_dir / rel),
            label=EmotionLabel(disc=k, vad=tuple(float(v) for v in vad)),
            split=splits[i], corpus=corpus,
        ))
    manifest = Manifest(records)
    manifest.save(out_dir / "manifest.jsonl")
    return manifest


@dataclass
class MixEntry:
    use_cont: bool = True
    use_disc: bool = True
    subsample_to: int | None = None


def mix_corpora(manifests: dict, recipe: dict, seed: int = 0,
                split: str = "train") -> Manifest:
    """Combine corpora with per-corpus label-visibility overrides.

    recipe maps corpus name -> MixEntry. Masking only hides labels, never
    fabricates them; records left with no visible label are dropped.
    Optional deterministic subsampling equalizes corpus sizes.
    """
    known = set(manifests)
    unknown = set(recipe) - known
    if unknown:
        raise ValueError(f"mixing recipe names unknown corpora: {sorted(unknown)}")
    out = []
    for name, manifest in sorted(manifests.items()):
        entry = recipe.get(name, MixEntry())
        records = [r for r in manifest.records if r.split == split]
        if entry.subsample_to is not None and entry.subsample_to < len(records):
            rng = Rng(seed).spawn(f"subsample:{name}")
            idx = sorted(rng.permutation(len(records))[: entry.subsample_to])
            records = [records[i] for i in idx]
        for r in records:
            disc = r.label.disc if entry.use_disc else None
            vad = r.label.vad if entry.use_cont else None
            if disc is None and vad is None:
                continue
            out.append(ManifestRecord(
                utt_id=r.utt_id, path=r.path,
                label=EmotionLabel(disc=disc, vad=vad),
                split=r.split, corpus=r.corpus,
            ))
    return Manifest(out)


def load_batch(records) -> Batch:
    """Assemble one padded, masked batch from manifest records."""
    seqs = [read_features(r.path) for r in records]
    B = len(seqs)
    T_max = max(s.frames.shape[0] for s in seqs)
    D = seqs[0].frames.shape[1]
    dtype = numerics.get_dtype()
    features = np.zeros((B, T_max, D), dtype=dtype)
    frame_mask = np.zeros((B, T_max), dtype=bool)
    disc = np.full(B, -1, dtype=int)
    disc_mask = np.zeros(B, dtype=bool)
    vad = np.zeros((B, 3), dtype=dtype)
    vad_mask = np.zeros(B, dtype=bool)
    for i, (s, r) in enumerate(zip(seqs, records)):
        t = s.frames.shape[0]
        features[i, :t] = s.frames
        frame_mask[i, :t] = True
        if r.label.disc is not None:
            disc[i] = r.label.disc
            disc_mask[i] = True
        if r.label.vad is not None:
            vad[i] = r.label.vad
            vad_mask[i] = True
    return Batch(features, frame_mask, disc, disc_mask, vad, vad_mask)


def make_batches(manifest: Manifest, batch_size: int, rng: Rng | None = None,
                 shuffle: bool = False):
    """Yield padded batches covering the manifest once; seed-deterministic."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    records = manifest.records
    order = rng.permutation(len(records)) if shuffle else np.arange(len(records))
    for start in range(0, len(records), batch_size):
        chunk = [records[i] for i in order[start:start + batch_size]]
        yield load_batch(chunk)
