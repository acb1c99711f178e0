"""Parameter-free preference-based fusion of the three classifiers.

Each classifier (vision-only V, multi-modal VT, text-only T) is validated
on the exemplar features; a per-class metric score in [0, 1] becomes a
softmax weight with temperature tau_p, and the fused score is the
per-class convex combination of the three probability matrices.
"""

from dataclasses import dataclass

import numpy as np

from . import classifiers as cls
from .errors import (
    DimensionError,
    EmptyInputError,
    MissingReferenceError,
    ParameterError,
    ValidationError,
)

METRICS = ("f1", "precision", "recall", "mean")
CLASSIFIER_ORDER = ("V", "VT", "T")
DEFAULT_TAU_P = 10.0


def per_class_metric(preds, labels, num_classes, metric="f1"):
    """One-vs-rest precision/recall/F1 per class; 0/0 counts as 0.

    metric="mean" returns all ones, the placeholder that softmaxes into
    uniform fusion weights.
    """
    if metric not in METRICS:
        raise ParameterError(f"metric must be one of {METRICS}, got {metric!r}")
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.size == 0 or labels.size == 0:
        raise ValidationError("per_class_metric needs at least one sample")
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ValidationError("preds and labels must be equal-length 1-D arrays")
    for arr, what in ((preds, "pred"), (labels, "label")):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise ValidationError(f"{what} outside [0, {num_classes})")
    if metric == "mean":
        return np.ones(num_classes, dtype=np.float64)
    scores = np.zeros(num_classes, dtype=np.float64)
    for k in range(num_classes):
        tp = np.count_nonzero((preds == k) & (labels == k))
        fp = np.count_nonzero((preds == k) & (labels != k))
        fn = np.count_nonzero((preds != k) & (labels == k))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        if metric == "precision":
            scores[k] = precision
        elif metric == "recall":
            scores[k] = recall
        else:
            scores[k] = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return scores


@dataclass
class PreferenceWeights:
    """Raw per-class scores and their softmax weights, columns ordered (V, VT, T)."""

    alpha: np.ndarray
    alpha_hat: np.ndarray
    tau_p: float
    metric: str

    def __post_init__(self):
        if self.alpha.shape != self.alpha_hat.shape or self.alpha.ndim != 2 or self.alpha.shape[1] != 3:
            raise DimensionError("preference arrays must be (C, 3)")
        if ((self.alpha < 0) | (self.alpha > 1)).any():
            raise ValidationError("raw preference scores must lie in [0, 1]")
        rowsums = self.alpha_hat.sum(axis=1)
        if not np.allclose(rowsums, 1.0, atol=1e-6):
            raise ValidationError("preference weight rows must sum to 1")


def preference_weights(alpha_V, alpha_VT, alpha_T, tau_p=DEFAULT_TAU_P, metric="f1"):
    """Softmax the per-class scores of the three classifiers at temperature tau_p.

    tau_p = 0 is the uniform limit. metric="mean" pins the weights to the
    exact uniform row [1/3, 1/3, 1/3] regardless of the scores.
    """
    if tau_p < 0:
        raise ParameterError(f"tau_p must be >= 0, got {tau_p}")
    cols = [np.asarray(a, dtype=np.float64) for a in (alpha_V, alpha_VT, alpha_T)]
    n = cols[0].shape[0]
    for c in cols:
        if c.shape != (n,):
            raise DimensionError("preference score vectors must share length C")
        if c.size and (c.min() < 0 or c.max() > 1):
            raise ValidationError("preference scores must lie in [0, 1]")
    alpha = np.stack(cols, axis=1)
    if metric == "mean":
        alpha_hat = np.full((n, 3), 1.0 / 3.0)
    else:
        z = tau_p * alpha
        z -= z.max(axis=1, keepdims=True)
        alpha_hat = np.exp(z)
        alpha_hat /= alpha_hat.sum(axis=1, keepdims=True)
    return PreferenceWeights(alpha=alpha, alpha_hat=alpha_hat, tau_p=float(tau_p), metric=metric)


def fuse_predict(probs_V, probs_VT, probs_T, pw, renormalize=False):
    """Per-class weighted sum of the three probability matrices.

    Returns (scores (N, C), argmax preds (N,)). Raw rows need not sum to 1
    because weights differ per class; renormalize=True divides each row by
    its sum, which never changes the argmax.
    """
    mats = []
    for p in (probs_V, probs_VT, probs_T):
        arr = p.data if hasattr(p, "data") else np.asarray(p)
        mats.append(np.asarray(arr, dtype=np.float64))
    shape = mats[0].shape
    if any(m.shape != shape for m in mats) or len(shape) != 2:
        raise DimensionError("probability matrices must share (N, C)")
    if pw.alpha_hat.shape[0] != shape[1]:
        raise DimensionError("preference rows must match the class count")
    w = pw.alpha_hat
    scores = mats[0] * w[:, 0] + mats[1] * w[:, 1] + mats[2] * w[:, 2]
    if renormalize:
        scores = scores / scores.sum(axis=1, keepdims=True)
    preds = (
        np.argmax(scores, axis=1).astype(np.int64)
        if shape[0]
        else np.zeros(0, dtype=np.int64)
    )
    return scores, preds


_METRIC_CODES = {name: float(code) for code, name in enumerate(METRICS)}


def preferences_to_tensors(pw):
    """Flatten preference weights into archive tensors under the pref.* keys."""
    return {
        "pref.alpha": pw.alpha.astype(np.float32),
        "pref.alpha_hat": pw.alpha_hat.astype(np.float32),
        "pref.tau_p": np.array([pw.tau_p], dtype=np.float32),
        "pref.metric": np.array([_METRIC_CODES[pw.metric]], dtype=np.float32),
    }


def preferences_from_tensors(tensors):
    for key in ("pref.alpha", "pref.alpha_hat", "pref.tau_p", "pref.metric"):
        if key not in tensors:
            raise MissingReferenceError(f"archive missing {key!r}")
    code = int(tensors["pref.metric"].reshape(-1)[0])
    if not 0 <= code < len(METRICS):
        raise ValidationError(f"unknown metric code {code}")
    return PreferenceWeights(
        alpha=tensors["pref.alpha"].astype(np.float64),
        alpha_hat=tensors["pref.alpha_hat"].astype(np.float64),
        tau_p=float(tensors["pref.tau_p"].reshape(-1)[0]),
        metric=METRICS[code],
    )


@dataclass
class FusedClassifier:
    """A bank plus validated preference weights; predicts by weighted fusion."""

    bank: cls.ClassifierBank
    preferences: PreferenceWeights

    def component_probs(self, features):
        out = {}
        for which in CLASSIFIER_ORDER:
            probs, _ = cls.predict(self.bank, features, which)
            out[which] = probs.data
        return out

    def predict(self, features, renormalize=False):
        probs = self.component_probs(features)
        return fuse_predict(probs["V"], probs["VT"], probs["T"], self.preferences, renormalize)


def build_fused_classifier(bank, exemplar_features, exemplar_labels, tau_p=DEFAULT_TAU_P, metric="f1"):
    """Validate T/V/VT on the pooled exemplars and build the fused predictor.

    Requires all three weight matrices and at least one exemplar per class.
    The exemplars used here are the same ones that built the classifiers,
    which gives the validation scores an accepted optimism bias.
    """
    for which in CLASSIFIER_ORDER:
        bank.matrix(which)
    labels = np.asarray(exemplar_labels, dtype=np.int64)
    if labels.size == 0:
        raise EmptyInputError("fusion needs at least one validation exemplar")
    counts = np.bincount(labels, minlength=bank.num_classes)
    if (counts == 0).any():
        missing = int(np.flatnonzero(counts == 0)[0])
        raise MissingReferenceError(f"class {missing} contributes no exemplars; fusion unavailable")
    scores = {}
    for which in CLASSIFIER_ORDER:
        _, preds = cls.predict(bank, exemplar_features, which)
        scores[which] = per_class_metric(preds, labels, bank.num_classes, metric)
    pw = preference_weights(scores["V"], scores["VT"], scores["T"], tau_p=tau_p, metric=metric)
    return FusedClassifier(bank=bank, preferences=pw)
