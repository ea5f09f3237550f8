import io
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vfalign import tensor as vt

F64 = np.float64


def rnd(rng, *shape):
    return vt.tensor(rng.standard_normal(shape), dtype=F64, requires_grad=True)


# -- matmul -----------------------------------------------------------------

def test_matmul_identity():
    b = np.arange(9.0).reshape(3, 3)
    out = vt.matmul(vt.tensor(np.eye(3), dtype=F64), vt.tensor(b, dtype=F64))
    np.testing.assert_array_equal(out.data, b)


def test_matmul_zeros():
    a = vt.zeros((2, 2), dtype=F64)
    b = vt.tensor([[5.0, 1.0], [2.0, 3.0]], dtype=F64)
    np.testing.assert_array_equal(vt.matmul(a, b).data, np.zeros((2, 2)))


def test_matmul_triple_loop_oracle():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    expect = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                expect[i, j] += a[i, k] * b[k, j]
    got = vt.matmul(vt.tensor(a, dtype=F64), vt.tensor(b, dtype=F64)).data
    np.testing.assert_array_equal(got, expect)


def test_matmul_shape_mismatch():
    with pytest.raises(vt.ShapeMismatchError):
        vt.matmul(vt.zeros((2, 3), dtype=F64), vt.zeros((2, 3), dtype=F64))


# -- masked softmax ----------------------------------------------------------

def test_masked_softmax_uniform():
    logits = vt.tensor(np.full((2, 4), 0.7), dtype=F64)
    mask = vt.zeros((2, 4), dtype=F64)
    out = vt.masked_softmax(logits, mask)
    np.testing.assert_allclose(out.data, 0.25, atol=1e-12)


def test_masked_softmax_single_keep():
    sent = vt.mask_sentinel(F64)
    mask = vt.tensor([[sent, 0.0, sent]], dtype=F64)
    out = vt.masked_softmax(vt.tensor([[3.0, -1.0, 9.0]], dtype=F64), mask)
    np.testing.assert_array_equal(out.data, [[0.0, 1.0, 0.0]])


def test_masked_softmax_exp_sum_oracle():
    logits = np.array([[1.0, 2.0, 3.0]])
    e = np.exp(logits)
    out = vt.masked_softmax(vt.tensor(logits, dtype=F64))
    np.testing.assert_allclose(out.data, e / e.sum(), atol=1e-15)


def test_masked_softmax_rows_sum_to_one():
    rng = np.random.default_rng(3)
    sent = vt.mask_sentinel(F64)
    logits = rng.standard_normal((5, 7))
    mask = np.where(rng.random((5, 7)) < 0.4, sent, 0.0)
    mask[:, 0] = 0.0  # keep at least one per row
    out = vt.masked_softmax(vt.tensor(logits, dtype=F64),
                            vt.tensor(mask, dtype=F64))
    np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(out.data[mask != 0] == 0.0)


def test_masked_softmax_degenerate_row():
    sent = vt.mask_sentinel(F64)
    mask = vt.tensor([[sent, sent]], dtype=F64)
    with pytest.raises(vt.DegenerateMaskError):
        vt.masked_softmax(vt.tensor([[1.0, 2.0]], dtype=F64), mask)


# -- layer norm ---------------------------------------------------------------

def test_layer_norm_constant_row():
    x = vt.tensor(np.full((1, 4), 3.0), dtype=F64)
    g = vt.ones((4,), dtype=F64)
    b = vt.zeros((4,), dtype=F64)
    out = vt.layer_norm(x, g, b)
    np.testing.assert_allclose(out.data, 0.0, atol=1e-6)


def test_layer_norm_two_point_row():
    out = vt.layer_norm(vt.tensor([[1.0, 3.0]], dtype=F64),
                        vt.ones((2,), dtype=F64), vt.zeros((2,), dtype=F64))
    np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-4)


def test_layer_norm_formula_oracle():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 8))
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    expect = (x - mu) / np.sqrt(var + 1e-5)
    out = vt.layer_norm(vt.tensor(x, dtype=F64), vt.ones((8,), dtype=F64),
                        vt.zeros((8,), dtype=F64))
    np.testing.assert_allclose(out.data, expect, atol=1e-12)
    assert np.all(np.abs(out.data.mean(axis=1)) < 1e-5)
    assert np.all(np.abs(out.data.var(axis=1) - 1.0) < 1e-4)


# -- convolutions -------------------------------------------------------------

def test_depthwise_identity_kernel():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((6, 3))
    k = vt.tensor(np.ones((1, 3)), dtype=F64)
    out = vt.conv1d_depthwise(vt.tensor(x, dtype=F64), k)
    np.testing.assert_array_equal(out.data, x)


def test_depthwise_constant_interior():
    x = vt.tensor(np.full((7, 2), 5.0), dtype=F64)
    k = vt.tensor(np.full((3, 2), 1.0 / 3.0), dtype=F64)
    out = vt.conv1d_depthwise(x, k)
    np.testing.assert_allclose(out.data[1:-1], 5.0, atol=1e-12)


def _depthwise_oracle(x, ker):
    t_len, c = x.shape
    k = ker.shape[0]
    pad = (k - 1) // 2
    out = np.zeros_like(x)
    for t in range(t_len):
        for ch in range(c):
            acc = 0.0
            for j in range(k):
                src = t + j - pad
                if 0 <= src < t_len:
                    acc += x[src, ch] * ker[j, ch]
            out[t, ch] = acc
    return out


def test_depthwise_sliding_window_oracle():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((5, 3))
    ker = rng.standard_normal((3, 3))
    got = vt.conv1d_depthwise(vt.tensor(x, dtype=F64),
                              vt.tensor(ker, dtype=F64)).data
    np.testing.assert_array_equal(got, _depthwise_oracle(x, ker))


def test_depthwise_brute_force_exact_small():
    rng = np.random.default_rng(5)
    for t_len in range(1, 9):
        x = rng.standard_normal((t_len, 2))
        k = min(2 * t_len + 1, 5)
        if k % 2 == 0:
            k -= 1
        ker = rng.standard_normal((k, 2))
        got = vt.conv1d_depthwise(vt.tensor(x, dtype=F64),
                                  vt.tensor(ker, dtype=F64)).data
        np.testing.assert_array_equal(got, _depthwise_oracle(x, ker))


def test_depthwise_kernel_too_large():
    with pytest.raises(vt.KernelTooLargeError):
        vt.conv1d_depthwise(vt.zeros((2, 1), dtype=F64),
                            vt.zeros((7, 1), dtype=F64))


def test_depthwise_even_kernel_rejected():
    with pytest.raises(vt.ShapeMismatchError):
        vt.conv1d_depthwise(vt.zeros((4, 1), dtype=F64),
                            vt.zeros((2, 1), dtype=F64))


def test_pointwise_identity_and_zero():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((4, 3))
    out = vt.conv1d_pointwise(vt.tensor(x, dtype=F64),
                              vt.tensor(np.eye(3), dtype=F64))
    np.testing.assert_array_equal(out.data, x)
    out = vt.conv1d_pointwise(vt.tensor(x, dtype=F64), vt.zeros((3, 2), dtype=F64))
    np.testing.assert_array_equal(out.data, np.zeros((4, 2)))


def test_pointwise_per_frame_matmul_oracle():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((5, 3))
    w = rng.standard_normal((3, 4))
    got = vt.conv1d_pointwise(vt.tensor(x, dtype=F64), vt.tensor(w, dtype=F64)).data
    # per-frame linear map, accumulated in input-channel order
    expect = np.zeros((5, 4))
    for t in range(5):
        for j in range(4):
            for k in range(3):
                expect[t, j] += x[t, k] * w[k, j]
    np.testing.assert_array_equal(got, expect)
    np.testing.assert_allclose(got, np.stack([x[t] @ w for t in range(5)]),
                               rtol=1e-14)


# -- backward ------------------------------------------------------------------

def test_backward_sum_gives_ones():
    x = vt.tensor(np.arange(6.0).reshape(2, 3), dtype=F64, requires_grad=True)
    tape = vt.backward(vt.tsum(x))
    np.testing.assert_array_equal(tape.grad(x), np.ones((2, 3)))


def test_backward_quadratic_gives_2x():
    x = vt.tensor([[1.0, -2.0], [0.5, 3.0]], dtype=F64, requires_grad=True)
    tape = vt.backward(vt.tsum(vt.mul(x, x)))
    np.testing.assert_allclose(tape.grad(x), 2.0 * x.data)


def test_backward_rejects_non_scalar():
    x = vt.tensor([[1.0, 2.0]], dtype=F64, requires_grad=True)
    with pytest.raises(ValueError):
        vt.backward(vt.mul(x, x))


def test_unused_parameter_has_zero_grad():
    x = vt.tensor([1.0, 2.0], dtype=F64, requires_grad=True)
    unused = vt.tensor([3.0], dtype=F64, requires_grad=True)
    tape = vt.backward(vt.tsum(x))
    np.testing.assert_array_equal(tape.grad(unused), np.zeros(1))


def test_reused_node_visited_once():
    # y = x + x: gradient accumulates to 2 per element, not 4
    x = vt.tensor([1.0, 1.0], dtype=F64, requires_grad=True)
    s = vt.add(x, x)
    tape = vt.backward(vt.tsum(vt.add(s, s)))
    np.testing.assert_array_equal(tape.grad(x), [4.0, 4.0])


@pytest.mark.parametrize("name", [
    "matmul", "masked_softmax", "layer_norm", "depthwise", "pointwise",
    "sigmoid", "swish", "maximum", "clamp", "log_softmax", "gather",
    "embedding", "concat", "narrow", "mean",
])
def test_finite_difference_per_op(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    if name == "matmul":
        a, b = rnd(rng, 3, 4), rnd(rng, 4, 2)
        f = lambda: vt.tsum(vt.mul(vt.matmul(a, b), vt.matmul(a, b)))
        wrt = [a, b]
    elif name == "masked_softmax":
        a = rnd(rng, 3, 5)
        sent = vt.mask_sentinel(F64)
        m = np.where(rng.random((3, 5)) < 0.3, sent, 0.0)
        m[:, 0] = 0.0
        mask = vt.tensor(m, dtype=F64)
        w = vt.tensor(rng.standard_normal((3, 5)), dtype=F64)
        f = lambda: vt.tsum(vt.mul(vt.masked_softmax(a, mask), w))
        wrt = [a]
    elif name == "layer_norm":
        a, g, b = rnd(rng, 4, 6), rnd(rng, 6), rnd(rng, 6)
        f = lambda: vt.tsum(vt.swish(vt.layer_norm(a, g, b)))
        wrt = [a, g, b]
    elif name == "depthwise":
        a, k = rnd(rng, 6, 3), rnd(rng, 5, 3)
        f = lambda: vt.tsum(vt.mul(vt.conv1d_depthwise(a, k),
                                   vt.conv1d_depthwise(a, k)))
        wrt = [a, k]
    elif name == "pointwise":
        a, w = rnd(rng, 4, 3), rnd(rng, 3, 5)
        f = lambda: vt.tsum(vt.sigmoid(vt.conv1d_pointwise(a, w)))
        wrt = [a, w]
    elif name == "sigmoid":
        a = rnd(rng, 3, 3)
        f = lambda: vt.tsum(vt.sigmoid(a))
        wrt = [a]
    elif name == "swish":
        a = rnd(rng, 3, 3)
        f = lambda: vt.tsum(vt.swish(a))
        wrt = [a]
    elif name == "maximum":
        a, b = rnd(rng, 4, 4), rnd(rng, 4, 4)
        f = lambda: vt.tsum(vt.maximum(a, b))
        wrt = [a, b]
    elif name == "clamp":
        # keep samples away from the clamp kinks, where central
        # differences straddle the non-differentiable point
        vals = rng.standard_normal((5, 2))
        vals[np.abs(np.abs(vals) - 0.5) < 0.05] = 0.0
        a = vt.tensor(vals, dtype=F64, requires_grad=True)
        f = lambda: vt.tsum(vt.clamp(a, -0.5, 0.5))
        wrt = [a]
    elif name == "log_softmax":
        a = rnd(rng, 4, 5)
        w = vt.tensor(rng.standard_normal((4, 5)), dtype=F64)
        f = lambda: vt.tsum(vt.mul(vt.log_softmax(a), w))
        wrt = [a]
    elif name == "gather":
        a = rnd(rng, 5, 4)
        idx = rng.integers(0, 4, size=5)
        f = lambda: vt.tsum(vt.gather_rows(vt.log_softmax(a), idx))
        wrt = [a]
    elif name == "embedding":
        tab = rnd(rng, 6, 3)
        ids = [0, 2, 2, 5]
        f = lambda: vt.tsum(vt.swish(vt.embedding(tab, ids)))
        wrt = [tab]
    elif name == "concat":
        a, b = rnd(rng, 2, 3), rnd(rng, 4, 3)
        f = lambda: vt.tsum(vt.sigmoid(vt.concat([a, b], axis=0)))
        wrt = [a, b]
    elif name == "narrow":
        a = rnd(rng, 3, 6)
        f = lambda: vt.tsum(vt.mul(vt.narrow(a, 1, 1, 3), vt.narrow(a, 1, 2, 3)))
        wrt = [a]
    else:
        a = rnd(rng, 3, 4)
        f = lambda: vt.tmean(vt.mul(a, a))
        wrt = [a]
    assert vt.max_grad_error(f, wrt) < 1e-4


def test_clamp_gradient_zero_outside():
    x = vt.tensor([0.0, 2.0, -2.0], dtype=F64, requires_grad=True)
    tape = vt.backward(vt.tsum(vt.clamp(x, -1.0, 1.0)))
    np.testing.assert_array_equal(tape.grad(x), [1.0, 0.0, 0.0])


def test_maximum_tie_routes_to_first():
    a = vt.tensor([1.0, 2.0], dtype=F64, requires_grad=True)
    b = vt.tensor([1.0, 0.0], dtype=F64, requires_grad=True)
    tape = vt.backward(vt.tsum(vt.maximum(a, b)))
    np.testing.assert_array_equal(tape.grad(a), [1.0, 1.0])
    np.testing.assert_array_equal(tape.grad(b), [0.0, 0.0])


def test_dropout_zero_rate_is_identity():
    x = vt.tensor([[1.0, 2.0]], dtype=F64, requires_grad=True)
    assert vt.dropout(x, 0.0, np.random.default_rng(0)) is x


def test_dropout_mask_and_scale():
    rng = np.random.default_rng(11)
    x = vt.tensor(np.ones((100, 4)), dtype=F64, requires_grad=True)
    y = vt.dropout(x, 0.5, rng)
    vals = np.unique(y.data)
    assert set(vals.tolist()) <= {0.0, 2.0}
    tape = vt.backward(vt.tsum(y))
    np.testing.assert_array_equal(tape.grad(x), y.data)


def test_tensor_immutable_and_assign():
    x = vt.tensor([1.0, 2.0], dtype=F64)
    with pytest.raises(ValueError):
        x.data[0] = 9.0
    x.assign([3.0, 4.0])
    np.testing.assert_array_equal(x.data, [3.0, 4.0])
    y = vt.add(x, x)
    with pytest.raises(ValueError):
        y.assign([0.0, 0.0])


def test_finite_forward_outputs():
    rng = np.random.default_rng(12)
    x = vt.tensor(rng.standard_normal((4, 4)) * 10, dtype=np.float32)
    mask = vt.tensor(np.where(np.eye(4), 0.0, vt.mask_sentinel(np.float32)),
                     dtype=np.float32)
    for out in (vt.masked_softmax(x, mask), vt.swish(x), vt.sigmoid(x),
                vt.layer_norm(x, vt.ones((4,)), vt.zeros((4,)))):
        assert np.all(np.isfinite(out.data))


# -- VFT1 file format ----------------------------------------------------------

def test_vft_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    arr = rng.standard_normal((3, 4, 2)).astype(np.float32)
    path = tmp_path / "t.vft"
    vt.write_vft(path, arr)
    back = vt.read_vft(path)
    np.testing.assert_array_equal(back, arr)
    assert back.dtype == np.float32


def test_vft_layout():
    arr = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    blob = vt.vft_bytes(arr)
    assert blob[:4] == b"VFT1"
    assert struct_unpack_u32(blob, 4) == 2
    assert struct_unpack_u32(blob, 8) == 2
    assert struct_unpack_u32(blob, 12) == 2
    vals = np.frombuffer(blob[16:], dtype="<f4")
    np.testing.assert_array_equal(vals, [1.0, 2.0, 3.0, 4.0])


def struct_unpack_u32(blob, off):
    import struct
    return struct.unpack_from("<I", blob, off)[0]


def test_vft_bad_magic():
    with pytest.raises(ValueError):
        vt.vft_from_stream(io.BytesIO(b"NOPE" + b"\x00" * 16))


# -- property tests -------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6))
def test_softmax_rows_sum_property(rows, cols):
    rng = np.random.default_rng(rows * 7 + cols)
    logits = vt.tensor(rng.standard_normal((rows, cols)) * 3, dtype=F64)
    out = vt.masked_softmax(logits)
    assert np.all(np.abs(out.data.sum(axis=1) - 1.0) < 1e-6)
    assert np.all(out.data >= 0)
