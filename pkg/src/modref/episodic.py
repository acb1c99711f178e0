"""Episodic pre-training of the visual token generator.

Each episode samples K feature rows per class from the class pools and
splits them disjointly into M exemplars and K - M targets, with M drawn
uniformly from [ceil(K/4), floor(3K/4)] per class. The loss classifies the
episode's targets with the vision-only and multi-modal weight rows built
from the episode's exemplars and sums the two cross entropies. Only the
generator receives gradient updates; the language encoder stays frozen.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from ._kernels import active as K
from .classifiers import classify
from .encoders import build_classifier_weights, init_generator, synthesize_language_encoder
from .errors import (
    DimensionError,
    NonFiniteError,
    TrainingDivergedError,
    ValidationError,
)


@dataclass
class EpisodeSpec:
    """Shape of one episode: shots per class and classes per episode."""

    k: int = 8
    class_batch: int = 16
    strict: bool = False

    def __post_init__(self):
        self.m_low = math.ceil(self.k / 4)
        self.m_high = math.floor(3 * self.k / 4)
        if not (1 <= self.m_low <= self.m_high <= self.k - 1):
            raise ValidationError(
                f"k={self.k} leaves no valid exemplar/target split "
                f"(m range [{self.m_low}, {self.m_high}])"
            )
        if self.class_batch < 2:
            raise ValidationError("an episode needs at least 2 classes")


@dataclass
class EpisodeItem:
    exemplars: np.ndarray
    targets: np.ndarray
    text_tokens: np.ndarray
    class_id: int


@dataclass
class Episode:
    """Sampled per-class splits; the item index is the episode-local label."""

    items: list


def eligible_references(refs, spec):
    """Classes with at least K pooled rows; warns about (or rejects) the rest."""
    keep, skipped = [], []
    for ref in refs:
        if ref.exemplars is None or ref.exemplars.shape[0] < spec.k:
            skipped.append(ref.class_id)
        else:
            keep.append(ref)
    if skipped:
        if spec.strict:
            raise ValidationError(f"classes with fewer than {spec.k} samples: {skipped}")
        warnings.warn(
            f"skipping {len(skipped)} classes with fewer than {spec.k} samples",
            stacklevel=2,
        )
    return keep


def sample_episode(refs, spec, rng):
    """Draw one episode. Exemplar and target index sets are always disjoint."""
    pool = eligible_references(refs, spec)
    if len(pool) < spec.class_batch:
        raise ValidationError(
            f"need {spec.class_batch} classes with >= {spec.k} samples, have {len(pool)}"
        )
    chosen = rng.choice(len(pool), size=spec.class_batch, replace=False)
    items = []
    for idx in chosen:
        ref = pool[int(idx)]
        order = rng.permutation(ref.exemplars.shape[0])[: spec.k]
        m = int(rng.integers(spec.m_low, spec.m_high + 1))
        items.append(
            EpisodeItem(
                exemplars=ref.exemplars[order[:m]],
                targets=ref.exemplars[order[m:]],
                text_tokens=ref.text_tokens,
                class_id=ref.class_id,
            )
        )
    return Episode(items=items)


def episode_loss(gen, lang, episode, tau_t=0.1, rng=None, train_mode=True):
    """Sum of cross entropies of the vision-only and multi-modal classifiers.

    Targets pooled over the episode; labels are episode-local indices.
    """
    bank = build_classifier_weights(
        gen,
        lang,
        [
            _EpisodeRef(item.class_id, item.exemplars, item.text_tokens)
            for item in episode.items
        ],
        train_mode=train_mode,
        rng=rng,
        include=("V", "VT"),
    )
    targets = np.concatenate([item.targets for item in episode.items], axis=0)
    labels = np.concatenate(
        [np.full(item.targets.shape[0], i, dtype=np.int64) for i, item in enumerate(episode.items)]
    )
    features = nm.constant(targets)
    probs_v = classify(bank.w_V, features, tau_t)
    probs_vt = classify(bank.w_VT, features, tau_t)
    return nm.add(nm.cross_entropy(probs_v, labels), nm.cross_entropy(probs_vt, labels))


@dataclass
class _EpisodeRef:
    class_id: int
    exemplars: np.ndarray
    text_tokens: np.ndarray


@dataclass
class AdamState:
    """First/second moment buffers plus the shared step counter."""

    m: list
    v: list
    t: int = 0

    @staticmethod
    def for_params(params):
        return AdamState(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update over a parameter list, in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("params, grads and state must align")
    state.t += 1
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise DimensionError(f"gradient shape {g.shape} != param shape {p.data.shape}")
        K.adam_step(
            p.data.reshape(-1),
            np.ascontiguousarray(g.reshape(-1)),
            m.reshape(-1),
            v.reshape(-1),
            state.t,
            lr,
            beta1,
            beta2,
            eps,
        )


def cosine_lr(step, total_steps, base_lr):
    """Cosine decay from base_lr to exactly 0 at the final step."""
    if total_steps <= 1:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / (total_steps - 1)))


@dataclass
class TrainConfig:
    epochs: int = 30
    total_episodes: int | None = None
    base_lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    tau_t: float = 0.1
    p_tokens: int = 2
    num_heads: int = 1
    attn_path_dropout: float = 0.1
    channel_dropout: float = 0.1
    lang_seed: int = 1234
    lang_blocks: int = 4
    context_length: int = 77

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.base_lr <= 0:
            raise ValidationError("base_lr must be positive")


DIVERGENCE_WINDOW = 20
DIVERGENCE_FACTOR = 2.0


class DivergenceTripwire:
    """Aborts when the 20-step smoothed loss exceeds twice its initial value."""

    def __init__(self, window=DIVERGENCE_WINDOW, factor=DIVERGENCE_FACTOR):
        self.window = window
        self.factor = factor
        self.losses = []
        self.initial = None

    def update(self, loss_value, step):
        self.losses.append(loss_value)
        smoothed = float(np.mean(self.losses[-self.window:]))
        if len(self.losses) == self.window:
            self.initial = smoothed
        if self.initial is not None and smoothed > self.factor * self.initial:
            raise TrainingDivergedError(
                f"smoothed loss {smoothed:.4f} exceeds {self.factor}x its initial "
                f"value {self.initial:.4f} at step {step}"
            )


def train(refs, spec, config, lang=None, gen=None, on_step=None):
    """Run the episodic loop; deterministic for a fixed config seed.

    Returns (generator, language encoder, log rows). Each log row is a dict
    with step, epoch, lr, loss and m values. ``on_step(step, gen, row)`` is
    called after each update (checkpoint hook). Aborts with a diagnostic
    when the loss goes non-finite, and trips when the 20-step smoothed loss
    exceeds twice its initial value.
    """
    rng = np.random.default_rng(config.seed)
    pool = eligible_references(refs, spec)
    if len(pool) < spec.class_batch:
        raise ValidationError(
            f"need {spec.class_batch} classes with >= {spec.k} samples, have {len(pool)}"
        )
    d = pool[0].exemplars.shape[1]
    if lang is None:
        lang = synthesize_language_encoder(
            config.lang_seed,
            d,
            num_blocks=config.lang_blocks,
            context_length=config.context_length,
            num_heads=config.num_heads,
        )
    if gen is None:
        gen = init_generator(
            rng,
            d,
            p=config.p_tokens,
            num_heads=config.num_heads,
            attn_path_dropout=config.attn_path_dropout,
            channel_dropout=config.channel_dropout,
        )
    episodes_per_epoch = max(1, math.ceil(len(pool) / spec.class_batch))
    total = config.total_episodes or config.epochs * episodes_per_epoch
    params = gen.parameters()
    state = AdamState.for_params(params)
    log = []
    tripwire = DivergenceTripwire()
    for step in range(total):
        lr = cosine_lr(step, total, config.base_lr)
        episode = sample_episode(pool, spec, rng)
        loss = episode_loss(gen, lang, episode, tau_t=config.tau_t, rng=rng, train_mode=True)
        loss_val = float(loss.data.reshape(()))
        if not math.isfinite(loss_val):
            raise NonFiniteError(
                f"non-finite loss at step {step} (lr={lr:.3e}, "
                f"recent losses {[r['loss'] for r in log[-5:]]})"
            )
        nm.zero_grads(params)
        loss.backward()
        grads = []
        for p in params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise NonFiniteError(f"non-finite gradient at step {step}")
            grads.append(g)
        adam_step(params, grads, state, lr, config.beta1, config.beta2, config.adam_eps)
        tripwire.update(loss_val, step)
        row = {
            "step": step,
            "epoch": step // episodes_per_epoch,
            "lr": lr,
            "loss": loss_val,
            "m_values": [item.exemplars.shape[0] for item in episode.items],
        }
        log.append(row)
        if on_step is not None:
            on_step(step, gen, row)
    return gen, lang, log
