"""Scikit-learn style facade over the training stack.

``SpeechEmotionRecognizer`` wraps variant construction, batching and the
training loop behind fit/predict/score and ``get_params``/``set_params``,
so the models compose with sklearn model selection utilities. X is a list
of per-utterance frame matrices (T_i x D); y is an (n, 4) array of
``[class_id, valence, arousal, dominance]`` with NaN (or class_id < 0)
marking an absent label, which is how heterogeneous corpora are expressed.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import data as data_mod
from .metrics import evaluate
from .optim import LrSchedule
from .trainer import TrainConfig, train


def _validate_sequences(X):
    if len(X) == 0:
        raise ValueError("X must contain at least one utterance")
    seqs = [np.asarray(x, dtype=np.float32) for x in X]
    d = seqs[0].shape[1] if seqs[0].ndim == 2 else None
    for i, s in enumerate(seqs):
        if s.ndim != 2:
            raise ValueError(f"X[{i}] must be a (T, D) matrix, got shape {s.shape}")
        if s.shape[1] != d:
            raise ValueError(f"X[{i}] has {s.shape[1]} feature dims, expected {d}")
        if not np.isfinite(s).all():
            raise ValueError(f"X[{i}] contains non-finite values")
    return seqs, d


def _validate_targets(y, n):
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (n, 4):
        raise ValueError(f"y must have shape ({n}, 4) "
                         f"[class_id, valence, arousal, dominance], got {y.shape}")
    return y


class SpeechEmotionRecognizer(BaseEstimator):
    """Joint discrete/continuous emotion model with an sklearn interface.

    After fit, ``predict`` returns discrete class ids (or VAD triples for
    the continuous-only baseline) and ``predict_continuous`` returns the
    (n, 3) VAD predictions where the variant has a continuous head.
    """

    def __init__(self, variant="multitask", d_enc=64, d_att=64, mlp=(64, 32),
                 alpha=1.0, beta=1.0, dropout=0.2, batch_size=32,
                 max_epochs=50, patience=5, lr_schedule="warmup_peak",
                 peak_lr=1e-3, warmup_steps=15000, hier_stop_gradient=False,
                 validation_fraction=0.1, seed=0):
        self.variant = variant
        self.d_enc = d_enc
        self.d_att = d_att
        self.mlp = mlp
        self.alpha = alpha
        self.beta = beta
        self.dropout = dropout
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.lr_schedule = lr_schedule
        self.peak_lr = peak_lr
        self.warmup_steps = warmup_steps
        self.hier_stop_gradient = hier_stop_gradient
        self.validation_fraction = validation_fraction
        self.seed = seed

    def _to_manifest(self, seqs, y, tmp: Path):
        records = []
        n_valid = max(1, int(round(len(seqs) * self.validation_fraction)))
        for i, s in enumerate(seqs):
            disc = None if not np.isfinite(y[i, 0]) or y[i, 0] < 0 else int(y[i, 0])
            vad = None if not np.isfinite(y[i, 1:]).all() else tuple(y[i, 1:])
            path = tmp / f"utt{i:06d}.emof"
            data_mod.write_features(data_mod.FeatureSequence(f"utt{i:06d}", s), path)
            records.append(data_mod.ManifestRecord(
                utt_id=f"utt{i:06d}", path=str(path),
                label=data_mod.EmotionLabel(disc=disc, vad=vad),
                split="valid" if i < n_valid else "train", corpus="fit",
            ))
        return data_mod.Manifest(records)

    def fit(self, X, y):
        seqs, d_in = _validate_sequences(X)
        y = _validate_targets(y, len(seqs))
        cfg = TrainConfig(
            variant=self.variant, d_in=d_in, d_enc=self.d_enc,
            d_att=self.d_att, mlp=tuple(self.mlp), alpha=self.alpha,
            beta=self.beta, dropout=self.dropout, batch_size=self.batch_size,
            max_epochs=self.max_epochs, patience=self.patience,
            schedule=LrSchedule(kind=self.lr_schedule, peak_lr=self.peak_lr,
                                warmup_steps=self.warmup_steps),
            seed=self.seed, hier_stop_gradient=self.hier_stop_gradient,
        )
        with tempfile.TemporaryDirectory() as tmp:
            manifest = self._to_manifest(seqs, y, Path(tmp))
            self.model_, self.train_log_ = train(
                cfg, manifest.subset("train"), manifest.subset("valid")
            )
        self.n_features_in_ = d_in
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before predict")

    def _forward_all(self, X):
        self._check_fitted()
        seqs, d_in = _validate_sequences(X)
        if d_in != self.n_features_in_:
            raise ValueError(f"X has {d_in} feature dims, model expects "
                             f"{self.n_features_in_}")
        ids_out, vad_out = [], []
        for start in range(0, len(seqs), self.batch_size):
            chunk = seqs[start:start + self.batch_size]
            T_max = max(s.shape[0] for s in chunk)
            feats = np.zeros((len(chunk), T_max, d_in), dtype=np.float32)
            mask = np.zeros((len(chunk), T_max), dtype=bool)
            for i, s in enumerate(chunk):
                feats[i, :s.shape[0]] = s
                mask[i, :s.shape[0]] = True
            ids, c_hat = self.model_.predict(feats, mask)
            ids_out.append(ids)
            vad_out.append(c_hat)
        ids = None if ids_out[0] is None else np.concatenate(ids_out)
        vad = None if vad_out[0] is None else np.concatenate(vad_out)
        return ids, vad

    def predict(self, X):
        ids, vad = self._forward_all(X)
        return ids if ids is not None else vad

    def predict_continuous(self, X):
        ids, vad = self._forward_all(X)
        if vad is None:
            raise ValueError(f"variant {self.variant!r} has no continuous head")
        return vad

    def score(self, X, y):
        """Composite validation score (mean of accuracy and mean CCC over the
        label families present in both the model and y)."""
        self._check_fitted()
        seqs, _ = _validate_sequences(X)
        y = _validate_targets(y, len(seqs))
        with tempfile.TemporaryDirectory() as tmp:
            manifest = self._to_manifest(seqs, y, Path(tmp))
            report = evaluate(
                self.model_, data_mod.make_batches(manifest, self.batch_size)
            )
        return report.validation_score()
