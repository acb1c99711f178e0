"""Visual token generator and the frozen language-encoder stand-in.

The generator turns a set of per-class exemplar feature vectors into P
learnable-query outputs ("vokens") that live in the language encoder's
token space. The language encoder maps any token sequence (text tokens,
vokens, or both) to a unit-norm classifier weight vector.

Architecture notes
  * Generator blocks attend with queries drawn from the full [q; e]
    sequence but keys/values restricted to the exemplar rows, and use no
    positional encodings. This makes the voken exactly invariant to
    permuting or duplicating exemplar rows.
  * The language encoder is causal, adds positional embeddings, pools the
    hidden state at the last position, projects, and L2-normalizes.
  * The language encoder is synthesized deterministically from a seed and
    never receives gradients.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .classifiers import ClassifierBank
from .errors import (
    ConfigError,
    DimensionError,
    EmptyInputError,
    MissingReferenceError,
    ParameterError,
)
from .numerics import Tensor

GENERATOR_BLOCKS = 4
DEFAULT_CONTEXT_LENGTH = 77
DEFAULT_QUERY_COUNT = 2
INIT_STD = 0.02


@dataclass
class TransformerBlockParams:
    """One pre-norm block: attention + two-layer feed-forward, residual both."""

    ln1_gain: Tensor
    ln1_bias: Tensor
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    ff_w1: Tensor
    ff_b1: Tensor
    ff_w2: Tensor
    ff_b2: Tensor

    def named(self, prefix):
        return [
            (f"{prefix}.ln1.gain", self.ln1_gain),
            (f"{prefix}.ln1.bias", self.ln1_bias),
            (f"{prefix}.attn.wq", self.wq),
            (f"{prefix}.attn.wk", self.wk),
            (f"{prefix}.attn.wv", self.wv),
            (f"{prefix}.attn.wo", self.wo),
            (f"{prefix}.ln2.gain", self.ln2_gain),
            (f"{prefix}.ln2.bias", self.ln2_bias),
            (f"{prefix}.ff.w1", self.ff_w1),
            (f"{prefix}.ff.b1", self.ff_b1),
            (f"{prefix}.ff.w2", self.ff_w2),
            (f"{prefix}.ff.b2", self.ff_b2),
        ]


@dataclass
class GeneratorParams:
    """Trainable parameters of the visual token generator."""

    queries: Tensor
    blocks: list
    num_heads: int = 1
    attn_path_dropout: float = 0.1
    channel_dropout: float = 0.1

    def __post_init__(self):
        if self.queries.data.ndim != 2 or self.queries.shape[0] < 1:
            raise ConfigError("queries must be (P, d) with P >= 1")
        if len(self.blocks) != GENERATOR_BLOCKS:
            raise ConfigError(f"generator uses exactly {GENERATOR_BLOCKS} blocks")
        d = self.queries.shape[1]
        if self.num_heads < 1 or d % self.num_heads != 0:
            raise ConfigError(f"head count {self.num_heads} does not divide width {d}")

    @property
    def p(self):
        return self.queries.shape[0]

    @property
    def d(self):
        return self.queries.shape[1]

    def named_parameters(self):
        out = [("vok.queries", self.queries)]
        for i, blk in enumerate(self.blocks):
            out.extend(blk.named(f"vok.block{i}"))
        return out

    def parameters(self):
        return [t for _, t in self.named_parameters()]


@dataclass
class LanguageEncoderParams:
    """Frozen sequence encoder: causal blocks, positions, final norm, projection."""

    blocks: list
    pos_embed: Tensor
    final_gain: Tensor
    final_bias: Tensor
    proj: Tensor
    context_length: int = DEFAULT_CONTEXT_LENGTH
    num_heads: int = 1
    seed: int | None = None

    @property
    def d(self):
        return self.proj.shape[0]

    def named_parameters(self):
        out = []
        for i, blk in enumerate(self.blocks):
            out.extend(blk.named(f"lang.block{i}"))
        out += [
            ("lang.pos", self.pos_embed),
            ("lang.final_ln.gain", self.final_gain),
            ("lang.final_ln.bias", self.final_bias),
            ("lang.proj", self.proj),
        ]
        return out


@dataclass
class Voken:
    """Generator output at the P query positions: a (P, d) token block."""

    tokens: Tensor

    def __post_init__(self):
        if self.tokens.data.ndim != 2:
            raise DimensionError("voken tokens must be (P, d)")


def _init_block(rng, d, dtype, requires_grad, std=INIT_STD):
    def w(shape):
        return Tensor(rng.normal(0.0, std, size=shape), requires_grad=requires_grad, dtype=dtype)

    def ones(shape):
        return Tensor(np.ones(shape), requires_grad=requires_grad, dtype=dtype)

    def zeros(shape):
        return Tensor(np.zeros(shape), requires_grad=requires_grad, dtype=dtype)

    hidden = 4 * d
    return TransformerBlockParams(
        ln1_gain=ones(d),
        ln1_bias=zeros(d),
        wq=w((d, d)),
        wk=w((d, d)),
        wv=w((d, d)),
        wo=w((d, d)),
        ln2_gain=ones(d),
        ln2_bias=zeros(d),
        ff_w1=w((d, hidden)),
        ff_b1=zeros(hidden),
        ff_w2=w((hidden, d)),
        ff_b2=zeros(d),
    )


def init_generator(
    rng,
    d,
    p=DEFAULT_QUERY_COUNT,
    num_heads=1,
    attn_path_dropout=0.1,
    channel_dropout=0.1,
    dtype=nm.DEFAULT_DTYPE,
):
    """Fresh trainable generator; queries and weights i.i.d. normal(0, 0.02)."""
    queries = Tensor(rng.normal(0.0, INIT_STD, size=(p, d)), requires_grad=True, dtype=dtype)
    blocks = [_init_block(rng, d, dtype, True) for _ in range(GENERATOR_BLOCKS)]
    return GeneratorParams(
        queries=queries,
        blocks=blocks,
        num_heads=num_heads,
        attn_path_dropout=attn_path_dropout,
        channel_dropout=channel_dropout,
    )


def synthesize_language_encoder(
    seed,
    d,
    num_blocks=4,
    context_length=DEFAULT_CONTEXT_LENGTH,
    num_heads=1,
    dtype=nm.DEFAULT_DTYPE,
    init_std=None,
):
    """Deterministic frozen encoder from a seed: a fixed random feature map.

    Weight std defaults to 1/sqrt(2d), which keeps the attention and
    feed-forward branches strong enough that every position (vokens
    included) measurably steers the pooled output; gains one, biases zero.
    Suitable as a stand-in when no real encoder export is available.
    """
    if num_heads < 1 or d % num_heads != 0:
        raise ConfigError(f"head count {num_heads} does not divide width {d}")
    if init_std is None:
        init_std = 1.0 / math.sqrt(2.0 * d)
    rng = np.random.default_rng(seed)
    blocks = [_init_block(rng, d, dtype, False, std=init_std) for _ in range(num_blocks)]
    pos = Tensor(rng.normal(0.0, INIT_STD, size=(context_length, d)), dtype=dtype)
    final_gain = Tensor(np.ones(d), dtype=dtype)
    final_bias = Tensor(np.zeros(d), dtype=dtype)
    proj = Tensor(rng.normal(0.0, init_std, size=(d, d)), dtype=dtype)
    return LanguageEncoderParams(
        blocks=blocks,
        pos_embed=pos,
        final_gain=final_gain,
        final_bias=final_bias,
        proj=proj,
        context_length=context_length,
        num_heads=num_heads,
        seed=seed,
    )


def _run_block(
    x,
    blk,
    num_heads,
    causal=False,
    key_range=None,
    train=False,
    rng=None,
    attn_path_p=0.0,
    channel_p=0.0,
):
    h = nm.layer_norm(x, blk.ln1_gain, blk.ln1_bias)
    hk = nm.slice_rows(h, *key_range) if key_range is not None else h
    q = nm.matmul(h, blk.wq)
    k = nm.matmul(hk, blk.wk)
    v = nm.matmul(hk, blk.wv)
    a = nm.attention(q, k, v, causal=causal, num_heads=num_heads)
    a = nm.matmul(a, blk.wo)
    if train and attn_path_p > 0.0:
        # Stochastic depth on the whole attention branch, one draw per block.
        dropped = rng.random() < attn_path_p
        scale = 0.0 if dropped else 1.0 / (1.0 - attn_path_p)
        a = nm.mul(a, nm.constant(np.asarray(scale), dtype=x.dtype))
    x = nm.add(x, a)
    h2 = nm.layer_norm(x, blk.ln2_gain, blk.ln2_bias)
    f = nm.add(nm.matmul(h2, blk.ff_w1), blk.ff_b1)
    f = nm.gelu(f)
    f = nm.add(nm.matmul(f, blk.ff_w2), blk.ff_b2)
    if train and channel_p > 0.0:
        # Channel-wise dropout: one Bernoulli per feature, shared across rows.
        d = x.shape[-1]
        keep = (rng.random(d) >= channel_p).astype(x.data.dtype)
        mask = keep / x.data.dtype.type(1.0 - channel_p)
        f = nm.mul(f, nm.constant(mask, dtype=x.dtype))
    return nm.add(x, f)


def generate_visual_tokens(gen, exemplar_features, train_mode=False, rng=None):
    """Extract P visual tokens from a set of exemplar feature rows.

    exemplar_features: (M, d) with unit-norm rows (caller contract). The
    query tokens are prepended, all blocks attend over the exemplar rows
    only, and the outputs at the P query positions are returned. Dropout
    (path and channel) is active only in train mode.
    """
    e = nm.as_tensor(exemplar_features)
    if e.data.ndim != 2 or e.shape[0] < 1:
        raise EmptyInputError("at least one exemplar feature row is required")
    if e.shape[1] != gen.d:
        raise DimensionError(f"exemplar width {e.shape[1]} != generator width {gen.d}")
    if train_mode and rng is None and (gen.attn_path_dropout > 0 or gen.channel_dropout > 0):
        raise ParameterError("train-mode token generation requires an rng")
    p = gen.p
    m = e.shape[0]
    x = nm.concat([gen.queries, e])
    for blk in gen.blocks:
        x = _run_block(
            x,
            blk,
            num_heads=gen.num_heads,
            causal=False,
            key_range=(p, p + m),
            train=train_mode,
            rng=rng,
            attn_path_p=gen.attn_path_dropout,
            channel_p=gen.channel_dropout,
        )
    return Voken(tokens=nm.slice_rows(x, 0, p))


def encode_sequence(lang, tokens):
    """Map a token sequence (L, d) to a unit-norm weight vector (d,).

    Adds positional embeddings, runs the causal blocks, applies the final
    layer norm, pools the last position, projects and L2-normalizes.
    Deterministic: the encoder is frozen and uses no dropout.
    """
    t = nm.as_tensor(tokens)
    if t.data.ndim != 2:
        raise DimensionError("encode_sequence expects (L, d) tokens")
    length = t.shape[0]
    if length == 0:
        raise EmptyInputError("cannot encode an empty sequence")
    if length > lang.context_length:
        raise DimensionError(
            f"sequence length {length} exceeds context length {lang.context_length}; truncate first"
        )
    if t.shape[1] != lang.d:
        raise DimensionError(f"token width {t.shape[1]} != encoder width {lang.d}")
    x = nm.add(t, nm.slice_rows(lang.pos_embed, 0, length))
    for blk in lang.blocks:
        x = _run_block(x, blk, num_heads=lang.num_heads, causal=True)
    x = nm.layer_norm(x, lang.final_gain, lang.final_bias)
    last = nm.slice_rows(x, length - 1, length)
    w = nm.matmul(last, lang.proj)
    w = nm.l2_normalize(w)
    return w.reshape(lang.d)


def truncate_text(text_tokens, limit):
    """Drop tokens from the tail so at most ``limit`` remain."""
    t = nm.as_tensor(text_tokens)
    if t.shape[0] <= limit:
        return t
    return nm.slice_rows(t, 0, limit)


def build_classifier_weights(
    gen,
    lang,
    refs,
    train_mode=False,
    rng=None,
    include=("T", "V", "VT"),
    tau_t=None,
):
    """Build per-class classifier weight rows from references.

    For each class: the text-only row encodes the text tokens, the
    vision-only row encodes the voken alone, and the multi-modal row
    encodes [voken; text]. When P + L exceeds the context length, text is
    truncated from its tail; vokens are always kept. Classes without
    exemplars may only contribute a text row.
    """
    refs = list(refs)
    if not refs:
        raise EmptyInputError("no class references given")
    include = tuple(include)
    for part in include:
        if part not in ("T", "V", "VT"):
            raise MissingReferenceError(f"unknown classifier part {part!r}")
    need_vision = "V" in include or "VT" in include
    if need_vision and gen is None:
        raise MissingReferenceError("vision/multi-modal weights requested without a generator")
    rows = {part: [] for part in include}
    class_ids = []
    lmax = lang.context_length
    for ref in refs:
        class_ids.append(ref.class_id)
        text = nm.constant(ref.text_tokens) if ref.text_tokens is not None else None
        if ("T" in include or "VT" in include) and text is None:
            raise MissingReferenceError(f"class {ref.class_id} has no text tokens")
        if "T" in include:
            rows["T"].append(encode_sequence(lang, truncate_text(text, lmax)))
        if need_vision:
            if ref.exemplars is None or len(ref.exemplars) == 0:
                raise MissingReferenceError(
                    f"class {ref.class_id} has no exemplars but vision weights were requested"
                )
            voken = generate_visual_tokens(
                gen, nm.constant(ref.exemplars), train_mode=train_mode, rng=rng
            )
            if "V" in include:
                rows["V"].append(encode_sequence(lang, voken.tokens))
            if "VT" in include:
                seq = nm.concat([voken.tokens, truncate_text(text, lmax - gen.p)])
                rows["VT"].append(encode_sequence(lang, seq))
    kwargs = {}
    if tau_t is not None:
        kwargs["tau_t"] = tau_t
    return ClassifierBank(
        class_ids=class_ids,
        w_T=nm.stack(rows["T"]) if "T" in include else None,
        w_V=nm.stack(rows["V"]) if "V" in include else None,
        w_VT=nm.stack(rows["VT"]) if "VT" in include else None,
        **kwargs,
    )


def _seed_to_limbs(seed):
    if not 0 <= seed < 2**64:
        raise ParameterError("seed must fit in an unsigned 64-bit integer")
    return np.array([(seed >> s) & 0xFFFF for s in (48, 32, 16, 0)], dtype=np.float32)


def _limbs_to_seed(limbs):
    parts = [int(round(float(x))) for x in np.asarray(limbs).reshape(-1)]
    if len(parts) != 4 or any(not 0 <= p <= 0xFFFF for p in parts):
        raise ParameterError("malformed seed limbs in checkpoint")
    return (parts[0] << 48) | (parts[1] << 32) | (parts[2] << 16) | parts[3]


def generator_to_tensors(gen, lang):
    """Flatten generator params plus the encoder recipe into archive tensors."""
    tensors = {name: t.data for name, t in gen.named_parameters()}
    if lang.seed is None:
        raise ParameterError("cannot checkpoint a language encoder without a synthesis seed")
    tensors["meta.p"] = np.float32(gen.p)
    tensors["meta.d"] = np.float32(gen.d)
    tensors["meta.heads"] = np.float32(gen.num_heads)
    tensors["meta.attn_path_dropout"] = np.float32(gen.attn_path_dropout)
    tensors["meta.channel_dropout"] = np.float32(gen.channel_dropout)
    tensors["meta.lang_seed"] = _seed_to_limbs(lang.seed)
    tensors["meta.lang_blocks"] = np.float32(len(lang.blocks))
    tensors["meta.lang_heads"] = np.float32(lang.num_heads)
    tensors["meta.context_length"] = np.float32(lang.context_length)
    return tensors


def generator_from_tensors(tensors):
    """Rebuild (GeneratorParams, LanguageEncoderParams) from archive tensors."""
    def fetch(name):
        if name not in tensors:
            raise MissingReferenceError(f"checkpoint missing {name!r}")
        return tensors[name]

    def meta(name):
        arr = np.asarray(fetch(name)).reshape(-1)
        return arr if arr.size > 1 else float(arr[0])

    d = int(meta("meta.d"))
    p = int(meta("meta.p"))
    heads = int(meta("meta.heads"))

    def grab(name, shape):
        arr = fetch(name)
        if tuple(arr.shape) != shape:
            raise MissingReferenceError(f"checkpoint tensor {name!r} has shape {arr.shape}, expected {shape}")
        return Tensor(arr, requires_grad=True)

    hidden = 4 * d
    blocks = []
    for i in range(GENERATOR_BLOCKS):
        pre = f"vok.block{i}"
        blocks.append(
            TransformerBlockParams(
                ln1_gain=grab(f"{pre}.ln1.gain", (d,)),
                ln1_bias=grab(f"{pre}.ln1.bias", (d,)),
                wq=grab(f"{pre}.attn.wq", (d, d)),
                wk=grab(f"{pre}.attn.wk", (d, d)),
                wv=grab(f"{pre}.attn.wv", (d, d)),
                wo=grab(f"{pre}.attn.wo", (d, d)),
                ln2_gain=grab(f"{pre}.ln2.gain", (d,)),
                ln2_bias=grab(f"{pre}.ln2.bias", (d,)),
                ff_w1=grab(f"{pre}.ff.w1", (d, hidden)),
                ff_b1=grab(f"{pre}.ff.b1", (hidden,)),
                ff_w2=grab(f"{pre}.ff.w2", (hidden, d)),
                ff_b2=grab(f"{pre}.ff.b2", (d,)),
            )
        )
    gen = GeneratorParams(
        queries=grab("vok.queries", (p, d)),
        blocks=blocks,
        num_heads=heads,
        attn_path_dropout=float(meta("meta.attn_path_dropout")),
        channel_dropout=float(meta("meta.channel_dropout")),
    )
    lang = synthesize_language_encoder(
        _limbs_to_seed(meta("meta.lang_seed")),
        d,
        num_blocks=int(meta("meta.lang_blocks")),
        context_length=int(meta("meta.context_length")),
        num_heads=int(meta("meta.lang_heads")),
    )
    return gen, lang
