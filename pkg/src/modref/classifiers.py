"""Cosine-similarity softmax classifiers over a bank of weight rows."""

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import EmptyInputError, MissingReferenceError, ParameterError
from .numerics import Tensor

DEFAULT_TAU_T = 0.01


@dataclass
class ClassifierBank:
    """Per-class weight matrices (unit-norm rows) plus the softmax temperature.

    Any subset of the text-only (w_T), vision-only (w_V) and multi-modal
    (w_VT) matrices may be present; all present ones share (C, d).
    """

    class_ids: list
    w_T: Tensor | None = None
    w_V: Tensor | None = None
    w_VT: Tensor | None = None
    tau_t: float = DEFAULT_TAU_T

    def __post_init__(self):
        if self.tau_t <= 0:
            raise ParameterError(f"tau_t must be positive, got {self.tau_t}")
        mats = [m for m in (self.w_T, self.w_V, self.w_VT) if m is not None]
        if not mats:
            raise EmptyInputError("classifier bank needs at least one weight matrix")
        shape = mats[0].shape
        for m in mats:
            if m.data.ndim != 2 or m.shape != shape:
                raise ParameterError("all weight matrices must share (C, d)")
        if len(self.class_ids) != shape[0]:
            raise ParameterError("class_ids length must match the number of rows")

    @property
    def num_classes(self):
        for m in (self.w_T, self.w_V, self.w_VT):
            if m is not None:
                return m.shape[0]
        return 0

    @property
    def d(self):
        for m in (self.w_T, self.w_V, self.w_VT):
            if m is not None:
                return m.shape[1]
        return 0

    def matrix(self, which):
        m = {"T": self.w_T, "V": self.w_V, "VT": self.w_VT}.get(which)
        if which not in ("T", "V", "VT"):
            raise MissingReferenceError(f"unknown classifier {which!r}")
        if m is None:
            raise MissingReferenceError(f"classifier {which} is not present in the bank")
        return m

    def available(self):
        return [w for w in ("T", "V", "VT") if getattr(self, f"w_{w}") is not None]


def classify(weights, features, tau_t=DEFAULT_TAU_T):
    """Softmax over temperature-scaled cosine similarities.

    weights: (C, d); features: (N, d), L2-normalized here (idempotent for
    already-unit rows). Returns a row-stochastic (N, C) Tensor; the result
    carries gradients when the weights do.
    """
    w = nm.as_tensor(weights)
    f = nm.as_tensor(features)
    if w.data.ndim != 2 or w.shape[0] == 0:
        raise EmptyInputError("classifier weight bank is empty")
    wn = nm.l2_normalize(w)
    fn = nm.l2_normalize(f)
    scores = nm.matmul(fn, nm.transpose(wn))
    return nm.softmax(scores, temperature=tau_t)


def predict(bank, features, which):
    """Class probabilities and argmax predictions for one classifier.

    Ties break toward the lowest class index. N = 0 yields empty outputs.
    """
    weights = bank.matrix(which)
    probs = classify(weights, features, bank.tau_t)
    preds = (
        np.argmax(probs.data, axis=1).astype(np.int64)
        if probs.shape[0]
        else np.zeros(0, dtype=np.int64)
    )
    return probs, preds
