"""Correlation and pooling kernels: adjoint identities, implementation
agreement, tie handling, and input validation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sincfront import kernels
from sincfront.errors import InvalidParameterError, InvalidSpecError, ShapeError

IMPLS = kernels.available_impls()

SHAPES = [
    (3, 1, 4, 31, 200),
    (2, 5, 7, 5, 40),
    (4, 2, 3, 1, 9),
    (1, 1, 1, 3, 3),
    (2, 60, 60, 5, 100),    # exercises the short-kernel loop order
    (2, 1, 8, 65, 80),      # exercises the long-kernel loop order
]


def _instance(rng, shape):
    b, ci, co, k, t = shape
    x = rng.standard_normal((b, ci, t))
    w = rng.standard_normal((co, ci, k))
    up = rng.standard_normal((b, co, t - k + 1))
    return x, w, up


@pytest.mark.parametrize("impl", IMPLS)
@pytest.mark.parametrize("shape", SHAPES)
def test_forward_matches_direct_sum(rng, impl, shape):
    x, w, _ = _instance(rng, shape)
    out = kernels.corr1d_forward(x, w, impl=impl)
    b, ci, co, k, t = shape
    expected = np.zeros((b, co, t - k + 1))
    for bi in range(b):
        for o in range(co):
            for ti in range(t - k + 1):
                expected[bi, o, ti] = np.sum(x[bi, :, ti:ti + k] * w[o])
    assert np.max(np.abs(out - expected)) < 1e-10


@pytest.mark.parametrize("impl", IMPLS)
@pytest.mark.parametrize("shape", SHAPES)
def test_backward_kernels_are_adjoints(rng, impl, shape):
    """<corr(x, w), up> == <w, grad_w> == <x, grad_x> for random tensors."""
    x, w, up = _instance(rng, shape)
    out = kernels.corr1d_forward(x, w, impl=impl)
    lhs = float(np.sum(out * up))
    gw = kernels.corr1d_grad_weights(x, up, w.shape[2], impl=impl)
    gx = kernels.corr1d_grad_input(up, w, impl=impl)
    assert gw.shape == w.shape
    assert gx.shape == x.shape
    assert abs(lhs - float(np.sum(w * gw))) < 1e-8 * max(1.0, abs(lhs))
    assert abs(lhs - float(np.sum(x * gx))) < 1e-8 * max(1.0, abs(lhs))


@pytest.mark.skipif(len(IMPLS) < 2, reason="only one implementation available")
@pytest.mark.parametrize("shape", SHAPES)
def test_implementations_agree(rng, shape):
    x, w, up = _instance(rng, shape)
    k = w.shape[2]
    for op, args in [
        ("corr1d_forward", (x, w)),
        ("corr1d_grad_weights", (x, up, k)),
        ("corr1d_grad_input", (up, w)),
    ]:
        results = [getattr(kernels, op)(*args, impl=i) for i in IMPLS]
        for r in results[1:]:
            assert np.max(np.abs(r - results[0])) < 1e-10 * max(
                1.0, np.max(np.abs(results[0]))
            )


@pytest.mark.parametrize("impl", IMPLS)
def test_maxpool_forward_and_indices(impl):
    x = np.array([[[1.0, 3.0, 2.0, 5.0, 4.0, 4.0, 0.0]]])
    out, idx = kernels.maxpool1d_forward(x, 3, impl=impl)
    assert out.shape == (1, 1, 2)
    assert np.array_equal(out[0, 0], [3.0, 5.0])
    assert np.array_equal(idx[0, 0], [1, 3])


@pytest.mark.parametrize("impl", IMPLS)
def test_maxpool_tie_takes_earliest(impl):
    x = np.array([[[2.0, 2.0, 1.0, 7.0, 7.0, 7.0]]])
    out, idx = kernels.maxpool1d_forward(x, 3, impl=impl)
    assert np.array_equal(out[0, 0], [2.0, 7.0])
    assert np.array_equal(idx[0, 0], [0, 3])


@pytest.mark.parametrize("impl", IMPLS)
def test_maxpool_backward_scatters_to_argmax(rng, impl):
    x = rng.standard_normal((2, 3, 14))
    out, idx = kernels.maxpool1d_forward(x, 3, impl=impl)
    up = rng.standard_normal(out.shape)
    grad = kernels.maxpool1d_backward(idx, up, x.shape[2], impl=impl)
    assert grad.shape == x.shape
    # every upstream value lands exactly once, at its argmax position
    assert abs(grad.sum() - up.sum()) < 1e-12
    for b in range(2):
        for c in range(3):
            for t, i in enumerate(idx[b, c]):
                assert grad[b, c, i] == up[b, c, t]


@pytest.mark.parametrize("impl", IMPLS)
def test_maxpool_drops_trailing_remainder(impl):
    x = np.arange(7.0)[None, None, :]
    out, _ = kernels.maxpool1d_forward(x, 3, impl=impl)
    assert out.shape == (1, 1, 2)
    grad = kernels.maxpool1d_backward(
        np.array([[[2, 5]]], dtype=np.int64), np.ones((1, 1, 2)), 7, impl=impl
    )
    assert grad[0, 0, 6] == 0.0


def test_shape_validation():
    x = np.zeros((2, 3, 10))
    w = np.zeros((4, 3, 5))
    with pytest.raises(ShapeError):
        kernels.corr1d_forward(np.zeros((2, 10)), w)
    with pytest.raises(ShapeError):
        kernels.corr1d_forward(x, np.zeros((4, 2, 5)))   # channel mismatch
    with pytest.raises(ShapeError):
        kernels.corr1d_forward(np.zeros((2, 3, 4)), w)   # input shorter than kernel
    with pytest.raises(InvalidSpecError):
        kernels.maxpool1d_forward(x, 0)
    with pytest.raises(ShapeError):
        kernels.corr1d_grad_weights(x, np.zeros((2, 4, 7)), 5)  # inconsistent T_out


def test_unknown_impl_rejected():
    with pytest.raises(InvalidParameterError):
        kernels.corr1d_forward(np.zeros((1, 1, 5)), np.zeros((1, 1, 3)), impl="cuda")


def test_numpy_impl_always_available():
    assert "numpy" in IMPLS
    assert kernels.DEFAULT_IMPL in IMPLS


@settings(max_examples=30, deadline=None)
@given(
    b=st.integers(1, 4),
    ci=st.integers(1, 3),
    co=st.integers(1, 4),
    k=st.integers(1, 12),
    extra=st.integers(0, 20),
    data=st.data(),
)
def test_adjoint_property_randomized(b, ci, co, k, extra, data):
    seed = data.draw(st.integers(0, 2**31 - 1))
    r = np.random.default_rng(seed)
    t = k + extra
    x = r.standard_normal((b, ci, t))
    w = r.standard_normal((co, ci, k))
    up = r.standard_normal((b, co, t - k + 1))
    out = kernels.corr1d_forward(x, w)
    lhs = float(np.sum(out * up))
    gw = kernels.corr1d_grad_weights(x, up, k)
    gx = kernels.corr1d_grad_input(up, w)
    scale = max(1.0, abs(lhs))
    assert abs(lhs - float(np.sum(w * gw))) < 1e-8 * scale
    assert abs(lhs - float(np.sum(x * gx))) < 1e-8 * scale
