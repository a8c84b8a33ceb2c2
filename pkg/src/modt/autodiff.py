"""Reverse-mode autodiff on dense numpy arrays.

A `Tape` records operations as they execute; `backward` replays the records
in reverse, accumulating gradients additively into every tensor that requires
them. Ops run without recording when no tape is active, which is the
evaluation fast path. Broadcasting is limited to trailing-shape expansion
(bias adds) and shared 2-D weights in batched matmuls; everything else is
shape-strict on purpose.

`finite_diff_grad` is the independent central-difference oracle used to
verify every gradient rule and the full model loss.
"""

from __future__ import annotations

import threading

import numpy as np

from . import _kernels as K
from .errors import ContractViolation, ShapeError

_local = threading.local()


def _tape_stack():
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense array plus gradient slot. `is_leaf` marks user-created parameters."""

    __slots__ = ("values", "requires_grad", "grad", "is_leaf")

    def __init__(self, values, requires_grad=False, is_leaf=None):
        self.values = np.asarray(values)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.is_leaf = requires_grad if is_leaf is None else is_leaf

    @property
    def shape(self):
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def size(self):
        return self.values.size

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all arithmetic goes through the module-level ops
    def __add__(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(np.asarray(other, dtype=self.values.dtype))
        return add(self, other)

    def __sub__(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(np.asarray(other, dtype=self.values.dtype))
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Tape:
    """Ordered record of operations; topological by construction."""

    def __init__(self):
        self.records = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def record(self, out, pulls):
        # pulls: list of (input_tensor, fn(dout) -> grad contribution)
        self.records.append((out, pulls))


def _emit(out_values, pulls_if_grad):
    """Wrap an op result; record it when a tape is active and grads flow."""
    tape = active_tape()
    needs = any(t.requires_grad for t, _ in pulls_if_grad)
    out = Tensor(out_values, requires_grad=needs and tape is not None, is_leaf=False)
    if out.requires_grad:
        tape.record(out, [(t, fn) for t, fn in pulls_if_grad if t.requires_grad])
    return out


def _accumulate(t, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=t.values.dtype, copy=True)
    else:
        np.add(t.grad, g, out=t.grad)


_backward_epoch = 0


def backward(loss, retain_intermediate_grads=False):
    """Populate .grad on every requires_grad tensor reachable from `loss`.

    Gradients accumulate additively across multiple uses of a tensor. Must be
    called inside the tape that recorded `loss`.
    """
    global _backward_epoch
    _backward_epoch += 1
    tape = active_tape()
    if tape is None:
        raise ContractViolation("backward() requires an active tape")
    if loss.values.shape != ():
        raise ContractViolation(
            f"backward() needs a scalar loss, got shape {loss.values.shape}"
        )
    loss.grad = np.ones((), dtype=loss.values.dtype)
    for out, pulls in reversed(tape.records):
        dout = out.grad
        if dout is None:
            continue
        for inp, fn in pulls:
            _accumulate(inp, fn(dout))
        if not retain_intermediate_grads and not out.is_leaf and out is not loss:
            out.grad = None


def as_tensor(values, dtype=None):
    return Tensor(np.asarray(values, dtype=dtype), requires_grad=False)


def parameter(values, dtype=None):
    return Tensor(np.asarray(values, dtype=dtype), requires_grad=True, is_leaf=True)


# ---------------------------------------------------------------- arithmetic


def _sum_to_suffix(g, target_shape):
    extra = g.ndim - len(target_shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    return g


def add(a, b):
    av, bv = a.values, b.values
    if av.shape != bv.shape and bv.shape != av.shape[av.ndim - bv.ndim:]:
        raise ShapeError(f"add: shapes {av.shape} and {bv.shape} do not align")
    out = av + bv
    return _emit(out, [
        (a, lambda g: g),
        (b, lambda g: _sum_to_suffix(g, bv.shape)),
    ])


def sub(a, b):
    av, bv = a.values, b.values
    if av.shape != bv.shape and bv.shape != av.shape[av.ndim - bv.ndim:]:
        raise ShapeError(f"sub: shapes {av.shape} and {bv.shape} do not align")
    out = av - bv
    return _emit(out, [
        (a, lambda g: g),
        (b, lambda g: -_sum_to_suffix(g, bv.shape)),
    ])


def mul(a, b):
    av, bv = a.values, b.values
    if av.shape != bv.shape and bv.shape != av.shape[av.ndim - bv.ndim:]:
        raise ShapeError(f"mul: shapes {av.shape} and {bv.shape} do not align")
    out = av * bv
    return _emit(out, [
        (a, lambda g: g * bv),
        (b, lambda g: _sum_to_suffix(g * av, bv.shape)),
    ])


def scale(a, c):
    c = float(c)
    out = a.values * np.asarray(c, dtype=a.values.dtype)
    return _emit(out, [(a, lambda g: g * np.asarray(c, dtype=g.dtype))])


def matmul(a, b):
    """Matrix product. Batched leading dims must match exactly; a 2-D right
    operand is treated as a weight shared across the batch (its gradient sums
    over the batch)."""
    av, bv = a.values, b.values
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeError(f"matmul: operands must be >=2-D, got {av.shape} and {bv.shape}")
    if av.shape[-1] != bv.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree: {av.shape} vs {bv.shape}")
    if bv.ndim == 2:
        out = av @ bv

        def pull_a(g):
            return g @ bv.T

        def pull_b(g):
            k, n = bv.shape
            return av.reshape(-1, k).T @ g.reshape(-1, n)

        return _emit(out, [(a, pull_a), (b, pull_b)])
    if av.shape[:-2] != bv.shape[:-2]:
        raise ShapeError(f"matmul: batch dimensions disagree: {av.shape} vs {bv.shape}")
    out = np.matmul(av, bv)
    return _emit(out, [
        (a, lambda g: np.matmul(g, bv.swapaxes(-1, -2))),
        (b, lambda g: np.matmul(av.swapaxes(-1, -2), g)),
    ])


def transpose_last2(a):
    out = a.values.swapaxes(-1, -2)
    return _emit(out, [(a, lambda g: g.swapaxes(-1, -2))])


def swap_axes(a, ax1, ax2):
    out = a.values.swapaxes(ax1, ax2)
    return _emit(out, [(a, lambda g: g.swapaxes(ax1, ax2))])


def concat_axis1(tensors):
    """Concatenate (B, t_i, E) tensors along axis 1."""
    out = np.concatenate([t.values for t in tensors], axis=1)
    pulls = []
    start = 0
    for t in tensors:
        width = t.values.shape[1]
        pulls.append((t, (lambda s, w: lambda g: g[:, s:s + w])(start, width)))
        start += width
    return _emit(out, pulls)


def reshape(a, shape):
    shape = tuple(shape)
    old = a.values.shape
    out = np.ascontiguousarray(a.values).reshape(shape)
    return _emit(out, [(a, lambda g: np.ascontiguousarray(g).reshape(old))])


def sum_all(a):
    out = a.values.sum()
    shape = a.values.shape
    return _emit(np.asarray(out, dtype=a.values.dtype),
                 [(a, lambda g: np.broadcast_to(g, shape))])


def exp(a):
    out = np.exp(a.values)
    return _emit(out, [(a, lambda g: g * out)])


def log(a):
    out = np.log(a.values)
    av = a.values
    return _emit(out, [(a, lambda g: g / av)])


def sigmoid(a):
    v = a.values
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return _emit(out, [(a, lambda g: g * out * (1.0 - out))])


def clip(a, lo, hi):
    """Hard clamp with pass-through gradient on [lo, hi]."""
    v = a.values
    out = np.clip(v, lo, hi)
    mask = ((v >= lo) & (v <= hi)).astype(v.dtype)
    return _emit(out, [(a, lambda g: g * mask)])


def relu(a):
    v = np.ascontiguousarray(a.values)
    flat = v.reshape(-1)
    out = K.relu_fwd(flat).reshape(v.shape)
    return _emit(out, [(a, lambda g: K.relu_bwd(
        flat, np.ascontiguousarray(g).reshape(-1)).reshape(v.shape))])


def softmax_lastdim(a):
    """Row softmax over the last dimension, stabilized by max subtraction."""
    v = np.ascontiguousarray(a.values)
    d = v.shape[-1]
    y2 = K.softmax_fwd(v.reshape(-1, d))
    out = y2.reshape(v.shape)
    return _emit(out, [(a, lambda g: K.softmax_bwd(
        y2, np.ascontiguousarray(g).reshape(-1, d)).reshape(v.shape))])


def causal_softmax(a):
    """Softmax over the last dim restricted to positions j <= i; entries above
    the diagonal are exactly zero in the output."""
    v = np.ascontiguousarray(a.values)
    t = v.shape[-1]
    if v.shape[-2] != t:
        raise ShapeError(f"causal_softmax: last two dims must be square, got {v.shape}")
    y3 = K.causal_softmax_fwd(v.reshape(-1, t, t))
    out = y3.reshape(v.shape)
    return _emit(out, [(a, lambda g: K.causal_softmax_bwd(
        y3, np.ascontiguousarray(g).reshape(-1, t, t)).reshape(v.shape))])


def layer_norm(a, gain, bias, eps=1e-5):
    """Standardize over the last dimension, then affine transform."""
    v = np.ascontiguousarray(a.values)
    d = v.shape[-1]
    if gain.values.shape != (d,) or bias.values.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/bias shapes {gain.values.shape}/{bias.values.shape} "
            f"do not match feature dim {d}"
        )
    x2 = v.reshape(-1, d)
    y2, mean, rstd = K.layernorm_fwd(x2, gain.values, bias.values, float(eps))
    out = y2.reshape(v.shape)

    cache = {}

    def _bwd(g):
        # one kernel call serves all three pulls of a single backward pass;
        # the epoch in the key guards against id() reuse across passes
        key = (_backward_epoch, id(g))
        if key not in cache:
            cache.clear()
            cache[key] = K.layernorm_bwd(
                x2, gain.values, mean, rstd, np.ascontiguousarray(g).reshape(-1, d))
        return cache[key]

    return _emit(out, [
        (a, lambda g: _bwd(g)[0].reshape(v.shape)),
        (gain, lambda g: _bwd(g)[1]),
        (bias, lambda g: _bwd(g)[2]),
    ])


def dropout(a, rate, rng):
    """Inverted dropout with a mask drawn from `rng` at call time."""
    if rate <= 0.0:
        return a
    keep = 1.0 - rate
    draw_dtype = np.float32 if a.values.dtype == np.float32 else np.float64
    mask = rng.random(a.values.shape, dtype=draw_dtype)
    mask = (mask < keep).astype(a.values.dtype)
    mask /= np.asarray(keep, dtype=a.values.dtype)
    out = a.values * mask
    return _emit(out, [(a, lambda g: g * mask)])


def gather_axis1(a, idx):
    """Select positions along axis 1 of a (B, T, E) tensor."""
    idx = np.asarray(idx, dtype=np.intp)
    v = a.values
    out = v[:, idx, :]

    def pull(g):
        d = np.zeros_like(v)
        np.add.at(d, (slice(None), idx), g)
        return d

    return _emit(out, [(a, pull)])


def gather_rows(table, idx):
    """Embedding-style row lookup: table (M, E) indexed by an int array."""
    idx = np.asarray(idx, dtype=np.intp)
    v = table.values
    out = v[idx]

    def pull(g):
        d = np.zeros_like(v)
        np.add.at(d, idx, g)
        return d

    return _emit(out, [(table, pull)])


def stack_axis2(tensors):
    """Stack (B, k, E) tensors into (B, k, S, E); used for token interleaving."""
    out = np.stack([t.values for t in tensors], axis=2)
    pulls = [
        (t, (lambda i: lambda g: g[:, :, i, :])(i)) for i, t in enumerate(tensors)
    ]
    return _emit(out, pulls)


def bce_with_logits(logits, targets):
    """Elementwise binary cross-entropy from logits; numerically stable."""
    z = logits.values
    y = np.asarray(targets, dtype=z.dtype)
    if y.shape != z.shape:
        raise ShapeError(f"bce_with_logits: shapes {z.shape} and {y.shape} differ")
    out = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))

    def pull(g):
        p = np.empty_like(z)
        pos = z >= 0
        p[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        p[~pos] = ez / (1.0 + ez)
        return g * (p - y)

    return _emit(out, [(logits, pull)])


# ------------------------------------------------------------------- oracle


def finite_diff_grad(f, params, h=1e-3):
    """Central-difference gradient estimate of a scalar function.

    `params` maps names to numpy arrays that `f` reads; each coordinate is
    perturbed by h scaled with the parameter magnitude. Returns a dict of
    arrays shaped like the inputs. `f` must be deterministic.
    """
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p, dtype=np.float64)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            step = h * max(1.0, abs(float(orig)))
            flat[i] = orig + step
            fp = f(params)
            flat[i] = orig - step
            fm = f(params)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * step)
        grads[name] = g
    return grads


def relative_error(a, b, floor=1e-6):
    """Elementwise |a-b| / max(|a|, |b|, floor); used by gradient checks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom
