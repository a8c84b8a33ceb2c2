"""Pure-numpy reference implementations of the hot kernels.

Every function here has a mirror in the compiled `_core` extension with the
same signature and semantics. Shapes are canonical: 2-D (rows, features) for
softmax/layernorm, 3-D (batch, T, T) for the causally masked softmax, 1-D for
relu. The autodiff layer reshapes before calling.
"""

import numpy as np

NAME = "numpy"

_NEG_BIG = {np.dtype(np.float32): np.float32(-1e9), np.dtype(np.float64): -1e9}
_mask_cache = {}


def _causal_bias(t, dtype):
    # additive -1e9 above the diagonal; exp() underflows these to exactly 0
    key = (t, np.dtype(dtype))
    bias = _mask_cache.get(key)
    if bias is None:
        bias = np.triu(np.full((t, t), _NEG_BIG[np.dtype(dtype)], dtype=dtype), k=1)
        _mask_cache[key] = bias
    return bias


def softmax_fwd(x):
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    e /= e.sum(axis=-1, keepdims=True)
    return e


def softmax_bwd(y, dy):
    inner = (y * dy).sum(axis=-1, keepdims=True)
    return y * (dy - inner)


def causal_softmax_fwd(x):
    t = x.shape[-1]
    return softmax_fwd(x + _causal_bias(t, x.dtype))


def causal_softmax_bwd(y, dy):
    # y is exactly zero above the diagonal, so the generic rule stays causal
    return softmax_bwd(y, dy)


def layernorm_fwd(x, gain, bias, eps):
    mean = x.mean(axis=-1)
    xc = x - mean[:, None]
    var = (xc * xc).mean(axis=-1)
    rstd = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    rstd = rstd.astype(x.dtype, copy=False)
    y = xc * rstd[:, None] * gain + bias
    return y, mean, rstd


def layernorm_bwd(x, gain, mean, rstd, dy):
    xhat = (x - mean[:, None]) * rstd[:, None]
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dyg = dy * gain
    m1 = dyg.mean(axis=-1, keepdims=True)
    m2 = (dyg * xhat).mean(axis=-1, keepdims=True)
    dx = (dyg - m1 - xhat * m2) * rstd[:, None]
    return dx, dg, db


def relu_fwd(x):
    return np.maximum(x, 0)


def relu_bwd(x, dy):
    return np.where(x > 0, dy, 0).astype(x.dtype, copy=False)
