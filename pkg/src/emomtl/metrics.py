"""Evaluation metrics: per-attribute CCC, accuracy, macro recall/F1.

"Unweighted accuracy" is ambiguous in the emotion literature (overall
accuracy vs macro-average recall), so both are reported; plain accuracy
feeds the composite validation score. CCC here is computed over the full
split, not batch-averaged, and shares its population-normalized statistics
with the loss side so metric and 1 - loss agree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .losses import ccc_stats

DEGENERATE_TOL = 1e-12

CLASS_NAMES = ("neutral", "angry", "happy", "sad", "disgust")


def ccc(pred, truth) -> float:
    """Concordance correlation coefficient; 0 (with degenerate stats) when the
    denominator vanishes, e.g. both inputs constant."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if len(pred) < 2 or len(pred) != len(truth):
        raise ValueError(f"ccc needs two equal-length vectors of length >= 2, "
                         f"got {len(pred)} and {len(truth)}")
    st = ccc_stats(pred, truth)
    denom = st.s_c_sq + st.s_chat_sq + (st.c_bar - st.chat_bar) ** 2
    if denom < DEGENERATE_TOL:
        return 0.0
    return 2.0 * st.s_cc_hat / denom


def _check_ids(pred_ids, truth_ids, n_classes):
    pred_ids = np.asarray(pred_ids, dtype=int)
    truth_ids = np.asarray(truth_ids, dtype=int)
    if len(pred_ids) != len(truth_ids) or len(pred_ids) < 1:
        raise ValueError("prediction/truth id vectors must be equal length >= 1")
    for arr, tag in ((pred_ids, "pred"), (truth_ids, "truth")):
        bad = (arr < 0) | (arr >= n_classes)
        if bad.any():
            raise ValueError(f"{tag} class id out of range [0,{n_classes}): {arr[bad]}")
    return pred_ids, truth_ids


def accuracy(pred_ids, truth_ids) -> float:
    pred_ids, truth_ids = _check_ids(pred_ids, truth_ids, max(np.max(pred_ids), np.max(truth_ids)) + 1)
    return float(np.mean(pred_ids == truth_ids))


def confusion_matrix(pred_ids, truth_ids, n_classes: int) -> np.ndarray:
    """Counts indexed [truth, pred]; row sums equal per-class support."""
    pred_ids, truth_ids = _check_ids(pred_ids, truth_ids, n_classes)
    cm = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(cm, (truth_ids, pred_ids), 1)
    return cm


def _per_class_prf(cm: np.ndarray):
    tp = np.diag(cm).astype(float)
    support = cm.sum(axis=1).astype(float)
    predicted = cm.sum(axis=0).astype(float)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    prec = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    denom = prec + recall
    f1 = np.divide(2 * prec * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return prec, recall, f1


def macro_f1(pred_ids, truth_ids, n_classes: int) -> float:
    """Unweighted mean of per-class F1 over all classes, 0/0 -> 0 per class."""
    cm = confusion_matrix(pred_ids, truth_ids, n_classes)
    return float(np.mean(_per_class_prf(cm)[2]))


def macro_recall(pred_ids, truth_ids, n_classes: int) -> float:
    cm = confusion_matrix(pred_ids, truth_ids, n_classes)
    return float(np.mean(_per_class_prf(cm)[1]))


@dataclass
class EvalReport:
    ccc_v: float | None = None
    ccc_a: float | None = None
    ccc_d: float | None = None
    ccc_mean: float | None = None
    accuracy: float | None = None
    macro_recall: float | None = None
    macro_f1: float | None = None
    confusion: list | None = None
    n_eval: int = 0

    def validation_score(self) -> float:
        """Mean of discrete accuracy and mean CCC; the single available one
        when only one label family exists."""
        parts = [x for x in (self.accuracy, self.ccc_mean) if x is not None]
        if not parts:
            raise ValueError("report carries no metrics")
        return float(np.mean(parts))

    def to_dict(self) -> dict:
        return {
            "ccc_v": self.ccc_v, "ccc_a": self.ccc_a, "ccc_d": self.ccc_d,
            "ccc_mean": self.ccc_mean, "accuracy": self.accuracy,
            "macro_recall": self.macro_recall, "macro_f1": self.macro_f1,
            "confusion": self.confusion, "n_eval": self.n_eval,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)


def evaluate(model, batches) -> EvalReport:
    """Full-split evaluation over an iterable of Batch objects.

    Metrics are computed only over examples carrying the relevant label
    type; a family with no labeled examples is left absent (None), not 0.
    """
    pred_ids, truth_ids = [], []
    pred_vad, truth_vad = [], []
    n = 0
    for batch in batches:
        ids, c_hat = model.predict(batch.features, batch.frame_mask)
        n += batch.features.shape[0]
        if ids is not None and batch.disc_mask.any():
            sel = batch.disc_mask
            pred_ids.append(ids[sel])
            truth_ids.append(batch.disc[sel])
        if c_hat is not None and batch.vad_mask.any():
            sel = batch.vad_mask
            pred_vad.append(c_hat[sel])
            truth_vad.append(batch.vad[sel])
    if n == 0:
        raise ValueError("evaluate: empty dataset")

    report = EvalReport(n_eval=n)
    if pred_ids:
        p = np.concatenate(pred_ids)
        t = np.concatenate(truth_ids)
        k = model.dims.n_classes
        report.accuracy = accuracy(p, t)
        report.macro_recall = macro_recall(p, t, k)
        report.macro_f1 = macro_f1(p, t, k)
        report.confusion = confusion_matrix(p, t, k).tolist()
    if pred_vad:
        p = np.concatenate(pred_vad)
        t = np.concatenate(truth_vad)
        if p.shape[0] >= 2:
            report.ccc_v = ccc(p[:, 0], t[:, 0])
            report.ccc_a = ccc(p[:, 1], t[:, 1])
            report.ccc_d = ccc(p[:, 2], t[:, 2])
            report.ccc_mean = float(np.mean([report.ccc_v, report.ccc_a, report.ccc_d]))
    return report
