"""Classifier synthesis from multi-modal references.

Builds open-vocabulary classifiers for novel categories from per-class
exemplar feature vectors and text token embeddings: a trainable visual
token generator summarizes exemplars into language-space tokens, a frozen
sequence encoder turns token sequences into unit-norm weight rows, and a
parameter-free preference module fuses the text-only, vision-only and
multi-modal classifiers by validating each on the exemplars.

Submodules import lazily so the CLI can honor MODREF_THREADS before numpy
loads its BLAS.
"""

__version__ = "0.1.0"

_LAZY = {
    "Tensor": ("modref.numerics", "Tensor"),
    "grad_check": ("modref.numerics", "grad_check"),
    "inference_mode": ("modref.numerics", "inference_mode"),
    "ModrefError": ("modref.errors", "ModrefError"),
}

__all__ = list(_LAZY) + ["__version__"]


def __getattr__(name):
    if name in _LAZY:
        import importlib

        module, attr = _LAZY[name]
        return getattr(importlib.import_module(module), attr)
    raise AttributeError(f"module 'modref' has no attribute {name!r}")
