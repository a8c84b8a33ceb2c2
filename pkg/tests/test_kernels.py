"""Backend parity: the compiled kernels must agree with the numpy reference."""

import numpy as np
import pytest

from modt import _kernels as K
from modt._kernels import numpy_backend as NB

try:
    from modt._kernels import core as CC
except ImportError:
    CC = None

needs_compiled = pytest.mark.skipif(CC is None, reason="compiled kernels absent")


def test_selected_backend_reports_name():
    assert K.BACKEND in ("numpy", "compiled")


@needs_compiled
@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-6), (np.float64, 1e-12)])
def test_softmax_parity(dtype, tol):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(7, 9)).astype(dtype) * 4
    np.testing.assert_allclose(CC.softmax_fwd(x), NB.softmax_fwd(x), atol=tol)
    y = NB.softmax_fwd(x)
    dy = rng.normal(size=y.shape).astype(dtype)
    np.testing.assert_allclose(CC.softmax_bwd(y, dy), NB.softmax_bwd(y, dy),
                               atol=tol)


@needs_compiled
@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-6), (np.float64, 1e-12)])
def test_causal_softmax_parity_and_support(dtype, tol):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 6, 6)).astype(dtype) * 3
    yc = CC.causal_softmax_fwd(x)
    yn = NB.causal_softmax_fwd(x)
    np.testing.assert_allclose(yc, yn, atol=tol)
    for i in range(6):
        assert np.all(yc[:, i, i + 1:] == 0)
        assert np.all(yn[:, i, i + 1:] == 0)
    dy = rng.normal(size=x.shape).astype(dtype)
    np.testing.assert_allclose(CC.causal_softmax_bwd(yn, dy),
                               NB.causal_softmax_bwd(yn, dy), atol=tol)


@needs_compiled
@pytest.mark.parametrize("dtype,tol", [(np.float32, 2e-6), (np.float64, 1e-12)])
def test_layernorm_parity(dtype, tol):
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5, 8)).astype(dtype)
    g = rng.normal(size=8).astype(dtype)
    b = rng.normal(size=8).astype(dtype)
    yc, mc, rc = CC.layernorm_fwd(x, g, b, 1e-5)
    yn, mn, rn = NB.layernorm_fwd(x, g, b, 1e-5)
    np.testing.assert_allclose(yc, yn, atol=tol)
    np.testing.assert_allclose(mc, mn, atol=tol)
    np.testing.assert_allclose(rc, rn, atol=tol)
    dy = rng.normal(size=x.shape).astype(dtype)
    outs_c = CC.layernorm_bwd(x, g, mn, rn, dy)
    outs_n = NB.layernorm_bwd(x, g, mn, rn, dy)
    for a, b_ in zip(outs_c, outs_n):
        np.testing.assert_allclose(a, b_, atol=10 * tol)


@needs_compiled
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_relu_parity(dtype):
    rng = np.random.default_rng(3)
    x = rng.normal(size=64).astype(dtype)
    dy = rng.normal(size=64).astype(dtype)
    np.testing.assert_array_equal(CC.relu_fwd(x), NB.relu_fwd(x))
    np.testing.assert_array_equal(CC.relu_bwd(x, dy), NB.relu_bwd(x, dy))
