"""Dense tensor algebra with reverse-mode automatic differentiation.

A small tape-based engine over numpy arrays, sized for training the visual
token generator: matmul, row softmax with temperature, layer norm, multi-head
attention, gelu, dropout, cross entropy, L2 row normalization and the usual
structural ops. Each operation records its parents and a backward closure;
``Tensor.backward`` walks the graph once in reverse topological order.

Conventions
  * float32 by default; build parameters as float64 for gradient checks.
  * Gradients accumulate into ``.grad``. Callers zero gradients before each
    backward pass; a second backward without zeroing adds the same
    contribution again (standard convention, relied on nowhere internally).
  * Every operation validates that its output is finite and raises
    NonFiniteError otherwise; NaN/Inf never propagates silently.
"""

import contextlib

import numpy as np

from ._kernels import active as K
from .errors import (
    ConfigError,
    DegenerateInputError,
    DimensionError,
    NonFiniteError,
    ParameterError,
)

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def inference_mode():
    """Disable graph recording inside the block (pure evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(arr, what):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{what} produced non-finite values")


class Tensor:
    """A dense array with optional gradient tracking.

    ``data`` is always a C-contiguous float32/float64 numpy array. ``grad``
    is lazily allocated with the same shape and dtype on first accumulation.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, dtype=None, _check=True):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        # ascontiguousarray promotes 0-d to 1-d; keep scalars 0-d.
        self.data = arr if arr.ndim == 0 else np.ascontiguousarray(arr)
        if _check:
            _check_finite(self.data, "tensor construction")
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dims(self):
        return list(self.data.shape)

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accum(self, delta):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += delta

    def detach(self):
        return Tensor(self.data.copy(), requires_grad=False, _check=False)

    def backward(self):
        """Reverse sweep from a scalar output.

        Visits each reachable node exactly once (topological order) and
        accumulates into ``.grad`` of every tensor with requires_grad.
        """
        if self.data.size != 1:
            raise ParameterError("backward requires a scalar output")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # Operator sugar for the common cases.
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def constant(x, dtype=None):
    """A non-differentiable tensor (labels, masks, frozen inputs)."""
    return Tensor(x, requires_grad=False, dtype=dtype)


def _make(out_data, parents, backward_fn, what):
    _check_finite(out_data, what)
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.requires_grad = track
    out._parents = tuple(parents) if track else ()
    out._backward_fn = backward_fn if track else None
    return out


def _reduce_to(grad, shape):
    """Sum grad down to a broadcast operand's shape."""
    if grad.shape == shape:
        return grad
    if shape == ():
        return grad.sum()
    # Only trailing-axis broadcast is supported: shape == (n,) against (..., n).
    return grad.reshape(-1, shape[0]).sum(axis=0)


def _broadcast_ok(a_shape, b_shape):
    if a_shape == b_shape:
        return True
    if b_shape == ():
        return True
    return len(b_shape) == 1 and len(a_shape) >= 1 and a_shape[-1] == b_shape[0]


def add(a, b):
    """Elementwise sum. Supports equal shapes, a trailing-axis (n,) term, or a scalar."""
    a, b = as_tensor(a), as_tensor(b)
    if not (_broadcast_ok(a.shape, b.shape) or _broadcast_ok(b.shape, a.shape)):
        raise DimensionError(f"add shapes {a.shape} and {b.shape} do not align")
    out_data = a.data + b.data

    def _bw(g):
        if a.requires_grad:
            a._accum(_reduce_to(g, a.shape))
        if b.requires_grad:
            b._accum(_reduce_to(g, b.shape))

    return _make(out_data, (a, b), _bw, "add")


def mul(a, b):
    """Elementwise product with the same broadcast rules as add."""
    a, b = as_tensor(a), as_tensor(b)
    if not (_broadcast_ok(a.shape, b.shape) or _broadcast_ok(b.shape, a.shape)):
        raise DimensionError(f"mul shapes {a.shape} and {b.shape} do not align")
    out_data = a.data * b.data

    def _bw(g):
        if a.requires_grad:
            a._accum(_reduce_to(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_reduce_to(g * a.data, b.shape))

    return _make(out_data, (a, b), _bw, "mul")


def matmul(a, b):
    """Matrix product a[m,k] @ b[k,n]."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def _bw(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return _make(out_data, (a, b), _bw, "matmul")


def reshape(x, shape):
    x = as_tensor(x)
    out_data = np.ascontiguousarray(x.data.reshape(shape))

    def _bw(g):
        if x.requires_grad:
            x._accum(g.reshape(x.shape))

    return _make(out_data, (x,), _bw, "reshape")


def transpose(x):
    """2-D transpose."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError("transpose expects a 2-D tensor")
    out_data = np.ascontiguousarray(x.data.T)

    def _bw(g):
        if x.requires_grad:
            x._accum(np.ascontiguousarray(g.T))

    return _make(out_data, (x,), _bw, "transpose")


def concat(tensors, axis=0):
    """Concatenate along the first axis."""
    if axis != 0:
        raise ParameterError("concat supports axis 0 only")
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat of zero tensors")
    trailing = ts[0].shape[1:]
    for t in ts:
        if t.shape[1:] != trailing:
            raise DimensionError("concat operands disagree beyond the first axis")
    out_data = np.concatenate([t.data for t in ts], axis=0)
    offsets = np.cumsum([0] + [t.shape[0] for t in ts])

    def _bw(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t._accum(g[lo:hi])

    return _make(out_data, ts, _bw, "concat")


def stack(tensors):
    """Stack 1-D tensors of equal length into rows of a matrix."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("stack of zero tensors")
    n = ts[0].shape
    for t in ts:
        if t.data.ndim != 1 or t.shape != n:
            raise DimensionError("stack expects 1-D tensors of equal length")
    out_data = np.stack([t.data for t in ts], axis=0)

    def _bw(g):
        for i, t in enumerate(ts):
            if t.requires_grad:
                t._accum(g[i])

    return _make(out_data, ts, _bw, "stack")


def slice_rows(x, start, stop):
    """Contiguous row slice x[start:stop]."""
    x = as_tensor(x)
    if not (0 <= start <= stop <= x.shape[0]):
        raise DimensionError(f"slice [{start}:{stop}] out of range for {x.shape}")
    out_data = np.ascontiguousarray(x.data[start:stop])

    def _bw(g):
        if x.requires_grad:
            pad = np.zeros_like(x.data)
            pad[start:stop] = g
            x._accum(pad)

    return _make(out_data, (x,), _bw, "slice_rows")


def tsum(x):
    """Sum of all entries, as a scalar tensor."""
    x = as_tensor(x)
    out_data = np.asarray(x.data.sum(), dtype=x.dtype)

    def _bw(g):
        if x.requires_grad:
            x._accum(np.full_like(x.data, g))

    return _make(out_data, (x,), _bw, "sum")


def tmean(x):
    x = as_tensor(x)
    out_data = np.asarray(x.data.mean(), dtype=x.dtype)
    inv = 1.0 / x.data.size

    def _bw(g):
        if x.requires_grad:
            x._accum(np.full_like(x.data, g * inv))

    return _make(out_data, (x,), _bw, "mean")


def softmax(x, temperature=1.0, axis=-1):
    """Row softmax of x / temperature over the last axis, max-stabilized."""
    if temperature <= 0:
        raise ParameterError(f"softmax temperature must be positive, got {temperature}")
    if axis not in (-1, None):
        raise ParameterError("softmax supports the last axis only")
    x = as_tensor(x)
    n = x.shape[-1]
    x2 = x.data.reshape(-1, n)
    inv_tau = 1.0 / float(temperature)
    y2 = K.softmax_fwd(x2, inv_tau)
    out_data = y2.reshape(x.shape)

    def _bw(g):
        if x.requires_grad:
            gx = K.softmax_bwd(y2, np.ascontiguousarray(g.reshape(-1, n)), inv_tau)
            x._accum(gx.reshape(x.shape))

    return _make(out_data, (x,), _bw, "softmax")


def _common_dtype(*tensors):
    return np.result_type(*[t.data for t in tensors])


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize each row over the last axis to zero mean, unit variance, then affine."""
    if eps <= 0:
        raise ParameterError("layer_norm eps must be positive")
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm gain/bias must have shape ({d},)")
    dt = _common_dtype(x, gain, bias)
    x2 = np.ascontiguousarray(x.data.reshape(-1, d), dtype=dt)
    gain_d = np.ascontiguousarray(gain.data, dtype=dt)
    y2, xhat, inv_std = K.layer_norm_fwd(x2, gain_d, np.ascontiguousarray(bias.data, dtype=dt), eps)
    out_data = y2.reshape(x.shape)

    def _bw(g):
        g2 = np.ascontiguousarray(g.reshape(-1, d))
        gx, ggain, gbias = K.layer_norm_bwd(g2, xhat, inv_std, gain_d)
        if x.requires_grad:
            x._accum(gx.reshape(x.shape))
        if gain.requires_grad:
            gain._accum(ggain)
        if bias.requires_grad:
            bias._accum(gbias)

    return _make(out_data, (x, gain, bias), _bw, "layer_norm")


def absolute(x):
    """Elementwise |x|; subgradient 0 at the kink."""
    x = as_tensor(x)
    out_data = np.abs(x.data)

    def _bw(g):
        if x.requires_grad:
            x._accum(g * np.sign(x.data))

    return _make(out_data, (x,), _bw, "absolute")


def gelu(x):
    """Gaussian error linear unit (tanh approximation)."""
    x = as_tensor(x)
    out_data = K.gelu_fwd(x.data)

    def _bw(g):
        if x.requires_grad:
            x._accum(K.gelu_bwd(x.data, np.ascontiguousarray(g)))

    return _make(out_data, (x,), _bw, "gelu")


def dropout(x, p, rng=None, train=False):
    """Bernoulli dropout scaled by 1/(1-p) in train mode; identity in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ParameterError("train-mode dropout requires an rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype.type)
    mask = keep / x.dtype.type(1.0 - p)
    out_data = x.data * mask

    def _bw(g):
        if x.requires_grad:
            x._accum(g * mask)

    return _make(out_data, (x,), _bw, "dropout")


def l2_normalize(x):
    """Scale each row (last axis) to unit Euclidean norm."""
    x = as_tensor(x)
    d = x.shape[-1]
    x2 = x.data.reshape(-1, d)
    norms = np.sqrt((x2 * x2).sum(axis=1, keepdims=True))
    if (norms == 0.0).any():
        raise DegenerateInputError("l2_normalize given a zero row")
    y2 = x2 / norms
    out_data = y2.reshape(x.shape)

    def _bw(g):
        if x.requires_grad:
            g2 = g.reshape(-1, d)
            dot = (g2 * y2).sum(axis=1, keepdims=True)
            x._accum(((g2 - y2 * dot) / norms).reshape(x.shape))

    return _make(out_data, (x,), _bw, "l2_normalize")


LOG_CLAMP = 1e-12


def cross_entropy(probs, labels):
    """Mean negative log probability of the labeled class.

    probs: (N, C) row-stochastic; labels: int array (N,) in [0, C).
    Log input is clamped at 1e-12; clamped entries get zero gradient.
    """
    probs = as_tensor(probs)
    if probs.data.ndim != 2:
        raise DimensionError("cross_entropy expects (N, C) probabilities")
    n, c = probs.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"labels must have shape ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"label outside [0, {c})")
    picked = probs.data[np.arange(n), labels]
    clamped = np.maximum(picked, probs.dtype.type(LOG_CLAMP))
    out_data = np.asarray(-np.log(clamped).mean(), dtype=probs.dtype)

    def _bw(g):
        if probs.requires_grad:
            gp = np.zeros_like(probs.data)
            live = picked >= LOG_CLAMP
            gp[np.arange(n), labels] = np.where(live, -1.0 / (n * clamped), 0.0) * g
            probs._accum(gp)

    return _make(out_data, (probs,), _bw, "cross_entropy")


def attention(queries, keys, values, causal=False, num_heads=1):
    """Scaled dot-product attention over row sequences.

    queries: (Lq, d); keys/values: (Lk, d). Heads split d evenly. When
    causal, Lq must equal Lk and position j attends only to positions <= j.
    """
    q, k, v = as_tensor(queries), as_tensor(keys), as_tensor(values)
    if q.data.ndim != 2 or k.data.ndim != 2 or v.data.ndim != 2:
        raise DimensionError("attention expects 2-D (L, d) tensors")
    d = q.shape[1]
    if k.shape[1] != d or v.shape[1] != d:
        raise DimensionError("attention operands disagree on width")
    if k.shape[0] != v.shape[0]:
        raise DimensionError("keys and values disagree on length")
    if num_heads < 1 or d % num_heads != 0:
        raise ConfigError(f"head count {num_heads} does not divide width {d}")
    if causal and q.shape[0] != k.shape[0]:
        raise ParameterError("causal attention requires equal query/key length")
    dt = _common_dtype(q, k, v)
    qd = np.ascontiguousarray(q.data, dtype=dt)
    kd = np.ascontiguousarray(k.data, dtype=dt)
    vd = np.ascontiguousarray(v.data, dtype=dt)
    out_data, weights = K.attention_fwd(qd, kd, vd, num_heads, causal)

    def _bw(g):
        gq, gk, gv = K.attention_bwd(
            np.ascontiguousarray(g, dtype=dt), qd, kd, vd, weights, num_heads, causal
        )
        if q.requires_grad:
            q._accum(gq)
        if k.requires_grad:
            k._accum(gk)
        if v.requires_grad:
            v._accum(gv)

    return _make(out_data, (q, k, v), _bw, "attention")


def zero_grads(params):
    for p in params:
        p.zero_grad()


def grad_check(f, params, eps=1e-4, max_entries_per_param=None, rng=None):
    """Compare reverse-mode gradients of f() against central differences.

    f is a zero-argument deterministic callable returning a scalar Tensor
    whose graph reaches ``params``; params must be float64. Relative error
    uses denominator max(|a|, |n|, 1e-8). When max_entries_per_param is
    given, a random subset of coordinates per parameter is checked (rng
    required); otherwise every coordinate is. Returns the max relative
    error over all checked coordinates.
    """
    for p in params:
        if p.dtype != np.float64:
            raise ParameterError("grad_check requires float64 parameters")
        if not p.requires_grad:
            raise ParameterError("grad_check parameters must require grad")
    zero_grads(params)
    out = f()
    if out.data.size != 1:
        raise ParameterError("grad_check target must be scalar")
    out.backward()
    analytic = []
    for p in params:
        if p.grad is None:
            analytic.append(np.zeros_like(p.data))
        else:
            _check_finite(p.grad, "grad_check analytic gradient")
            analytic.append(p.grad.copy())

    def eval_scalar():
        with_value = f()
        val = float(with_value.data.reshape(()))
        if not np.isfinite(val):
            raise NonFiniteError("grad_check function value is not finite")
        return val

    max_rel = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        n_entries = flat.size
        if max_entries_per_param is not None and n_entries > max_entries_per_param:
            if rng is None:
                raise ParameterError("sampled grad_check requires an rng")
            idx = rng.choice(n_entries, size=max_entries_per_param, replace=False)
        else:
            idx = np.arange(n_entries)
        a_flat = a.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = eval_scalar()
            flat[i] = orig - eps
            f_minus = eval_scalar()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(a_flat[i]), abs(numeric), 1e-8)
            max_rel = max(max_rel, abs(a_flat[i] - numeric) / denom)
    return max_rel
