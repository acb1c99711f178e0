"""Shared randomized grad-check cases for the differentiable primitives.

Each case builds float64 parameters and a deterministic scalar-valued
closure over them, so ``grad_check`` can compare reverse-mode gradients
against central differences. Used by both the per-op tests and the
acceptance sweep.
"""

import zlib

import numpy as np

from modref import numerics as nm


def _param(rng, shape, scale=1.0):
    return nm.Tensor(scale * rng.normal(size=shape), requires_grad=True, dtype=np.float64)


def _weighted_sum(t, rng):
    """Random linear functional of t, breaking symmetry in the output."""
    c = nm.constant(rng.normal(size=t.shape), dtype=np.float64)
    return nm.tsum(nm.mul(t, c))


def matmul_case(rng):
    m, k, n = rng.integers(1, 6, size=3)
    a = _param(rng, (m, k))
    b = _param(rng, (k, n))
    return lambda: _weighted_sum(nm.matmul(a, b), np.random.default_rng(0)), [a, b]


def add_mul_case(rng):
    r, d = rng.integers(2, 6, size=2)
    a = _param(rng, (r, d))
    b = _param(rng, (r, d))
    row = _param(rng, (d,))
    scalar = _param(rng, ())

    def f():
        out = nm.mul(nm.add(a, b), nm.add(nm.mul(a, row), scalar))
        return _weighted_sum(out, np.random.default_rng(1))

    return f, [a, b, row, scalar]


def concat_slice_case(rng):
    d = int(rng.integers(2, 5))
    parts = [_param(rng, (int(rng.integers(1, 4)), d)) for _ in range(3)]

    def f():
        joined = nm.concat(parts)
        total = joined.shape[0]
        piece = nm.slice_rows(joined, 1, total)
        return _weighted_sum(piece, np.random.default_rng(2))

    return f, parts


def stack_transpose_case(rng):
    d = int(rng.integers(2, 6))
    rows = [_param(rng, (d,)) for _ in range(int(rng.integers(2, 5)))]

    def f():
        m = nm.transpose(nm.stack(rows))
        return _weighted_sum(m, np.random.default_rng(3))

    return f, rows


def softmax_case(rng):
    # Moderate logit spread keeps every softmax entry (and hence every
    # gradient entry) large enough for a well-conditioned relative check.
    r, n = int(rng.integers(1, 5)), int(rng.integers(2, 7))
    x = _param(rng, (r, n), scale=1.0)
    tau = float(rng.choice([0.7, 1.0, 2.0]))
    return lambda: _weighted_sum(nm.softmax(x, temperature=tau), np.random.default_rng(4)), [x]


def layer_norm_case(rng):
    # d >= 4 and a spread floor keep rows away from the zero-variance pole,
    # where finite differences leave their trust region.
    r, d = int(rng.integers(1, 5)), int(rng.integers(4, 9))
    x = _param(rng, (r, d), scale=1.5)
    x.data[:, 0] += 2.0
    x.data[:, 1] -= 2.0
    gain = _param(rng, (d,))
    bias = _param(rng, (d,))
    return lambda: _weighted_sum(nm.layer_norm(x, gain, bias), np.random.default_rng(5)), [x, gain, bias]


def gelu_case(rng):
    # gelu'(x) crosses zero near x = -0.75; a relative check there divides
    # by ~0, so entries are kept clear of that critical point.
    r, d = int(rng.integers(1, 5)), int(rng.integers(1, 7))
    x = _param(rng, (r, d), scale=2.0)
    np.clip(x.data, -3.0, 3.0, out=x.data)  # the saturated tail also has ~0 slope
    near = np.abs(x.data + 0.7517) < 0.3
    x.data[near] += np.where(x.data[near] > -0.7517, 0.6, -0.6)
    return lambda: _weighted_sum(nm.gelu(x), np.random.default_rng(6)), [x]


def l2_normalize_case(rng):
    r, d = int(rng.integers(1, 4)), int(rng.integers(2, 6))
    data = rng.normal(size=(r, d))
    data += np.sign(data.sum(axis=1, keepdims=True)) + 0.5  # keep rows away from zero
    x = nm.Tensor(data, requires_grad=True, dtype=np.float64)
    return lambda: _weighted_sum(nm.l2_normalize(x), np.random.default_rng(7)), [x]


def cross_entropy_case(rng):
    n, c = int(rng.integers(1, 6)), int(rng.integers(2, 6))
    logits = _param(rng, (n, c), scale=2.0)
    labels = rng.integers(0, c, size=n)
    return lambda: nm.cross_entropy(nm.softmax(logits), labels), [logits]


def dropout_case(rng):
    r, d = int(rng.integers(2, 5)), int(rng.integers(2, 6))
    x = _param(rng, (r, d))
    p = float(rng.choice([0.1, 0.3, 0.5]))
    seed = int(rng.integers(0, 1000))

    def f():
        out = nm.dropout(x, p, rng=np.random.default_rng(seed), train=True)
        return _weighted_sum(out, np.random.default_rng(8))

    return f, [x]


def attention_case(rng):
    heads = int(rng.choice([1, 2]))
    dh = int(rng.integers(2, 5))
    d = heads * dh
    causal = bool(rng.integers(0, 2))
    lq = int(rng.integers(1, 5))
    lk = lq if causal else int(rng.integers(1, 5))
    q = _param(rng, (lq, d))
    k = _param(rng, (lk, d))
    v = _param(rng, (lk, d))

    def f():
        out = nm.attention(q, k, v, causal=causal, num_heads=heads)
        return _weighted_sum(out, np.random.default_rng(9))

    return f, [q, k, v]


def reductions_case(rng):
    r, d = int(rng.integers(1, 5)), int(rng.integers(1, 6))
    x = _param(rng, (r, d))
    return lambda: nm.add(nm.tsum(x), nm.tmean(nm.mul(x, x))), [x]


PRIMITIVE_CASES = {
    "matmul": matmul_case,
    "add_mul": add_mul_case,
    "concat_slice": concat_slice_case,
    "stack_transpose": stack_transpose_case,
    "softmax": softmax_case,
    "layer_norm": layer_norm_case,
    "gelu": gelu_case,
    "l2_normalize": l2_normalize_case,
    "cross_entropy": cross_entropy_case,
    "dropout": dropout_case,
    "attention": attention_case,
    "reductions": reductions_case,
}


def confusion_metrics_oracle(preds, labels, num_classes):
    """Brute-force per-class precision/recall/F1 via an explicit confusion matrix.

    Independent of fusion.per_class_metric: builds the full C x C count
    matrix first, then reads row/column sums. 0/0 counts as 0.
    """
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p, t in zip(preds, labels):
        cm[int(t), int(p)] += 1
    precision = np.zeros(num_classes)
    recall = np.zeros(num_classes)
    f1 = np.zeros(num_classes)
    for k in range(num_classes):
        tp = cm[k, k]
        predicted_k = cm[:, k].sum()
        actual_k = cm[k, :].sum()
        precision[k] = tp / predicted_k if predicted_k else 0.0
        recall[k] = tp / actual_k if actual_k else 0.0
        denom = precision[k] + recall[k]
        f1[k] = 2 * precision[k] * recall[k] / denom if denom else 0.0
    return {"precision": precision, "recall": recall, "f1": f1}


def sweep_primitive(name, n_cases=20, eps=1e-4):
    """Max relative gradient error over n randomized cases of one primitive."""
    base = zlib.crc32(name.encode()) % 100_000
    worst = 0.0
    for seed in range(n_cases):
        rng = np.random.default_rng(base + seed)
        f, params = PRIMITIVE_CASES[name](rng)
        worst = max(worst, nm.grad_check(f, params, eps=eps))
    return worst
