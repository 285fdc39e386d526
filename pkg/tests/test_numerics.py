import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shiftalign import numerics as N
from shiftalign.numerics import NonFiniteError, ShapeError, Tensor, grad_check, precision, tsr
from shiftalign.numerics.functional import conv_transpose_output_shape

from oracles import conv2d_loops, matmul_loops


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# -- conv2d -------------------------------------------------------------------


def test_conv_all_ones_is_nine():
    out = N.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
    assert out.shape == (1, 1, 1, 1)
    assert out.item() == 9.0


def test_conv_identity_kernel(rng):
    x = rng.normal(size=(2, 3, 4, 5)).astype(np.float32)
    w = np.eye(3, dtype=np.float32).reshape(3, 3, 1, 1)
    np.testing.assert_array_equal(N.conv2d(Tensor(x), Tensor(w)).data, x)


def test_conv_matches_loops(rng):
    x = rng.normal(size=(1, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    out = N.conv2d(t64(x), t64(w), t64(b))
    np.testing.assert_allclose(out.data, conv2d_loops(x, w, b), atol=1e-12)


@given(
    seed=st.integers(0, 2**16),
    stride=st.integers(1, 3),
    pad=st.integers(0, 2),
    k=st.sampled_from([1, 2, 3]),
    size=st.integers(3, 6),
)
def test_conv_matches_loops_property(seed, stride, pad, k, size):
    r = np.random.default_rng(seed)
    x = r.normal(size=(2, 2, size, size + 1))
    w = r.normal(size=(3, 2, k, k))
    out = N.conv2d(t64(x), t64(w), None, stride, pad)
    np.testing.assert_allclose(out.data, conv2d_loops(x, w, None, stride, pad), atol=1e-12)


def test_conv_shape_errors_name_axes():
    with pytest.raises(ShapeError, match="channel"):
        N.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))
    with pytest.raises(ShapeError):
        N.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))


def test_conv3d_matches_stacked_conv2d(rng):
    # a depth-1 kernel is a per-slice 2-D conv
    x = rng.normal(size=(1, 2, 3, 5, 5))
    w = rng.normal(size=(4, 2, 1, 3, 3))
    out = N.conv3d(t64(x), t64(w), None, 1, (0, 1, 1)).data
    for d in range(3):
        ref = conv2d_loops(x[:, :, d], w[:, :, 0], None, 1, 1)
        np.testing.assert_allclose(out[:, :, d], ref, atol=1e-12)


# -- conv_transpose2d ------------------------------------------------------------


def test_conv_transpose_shape_doubles():
    out = N.conv_transpose2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 2, 2))), stride=2)
    assert out.shape == (1, 1, 4, 4)
    assert conv_transpose_output_shape((2, 2), (2, 2), (2, 2), (0, 0)) == (4, 4)
    assert conv_transpose_output_shape((8, 8), (4, 4), (2, 2), (1, 1)) == (16, 16)


def test_conv_transpose_identity(rng):
    x = rng.normal(size=(1, 2, 3, 3)).astype(np.float32)
    w = np.eye(2, dtype=np.float32).reshape(2, 2, 1, 1)
    np.testing.assert_array_equal(N.conv_transpose2d(Tensor(x), Tensor(w)).data, x)


@given(seed=st.integers(0, 2**16), stride=st.integers(1, 3), pad=st.integers(0, 1), k=st.sampled_from([2, 3, 4]))
def test_conv_transpose_is_conv_vjp(seed, stride, pad, k):
    r = np.random.default_rng(seed)
    with precision(np.float64):
        x = t64(r.normal(size=(2, 3, 7, 6)), grad=True)
        w = r.normal(size=(4, 3, k, k))
        y = N.conv2d(x, t64(w), None, stride, pad)
        cot = r.normal(size=y.shape)
        y.backward(cot)
        vjp = x.grad
        tr = N.conv_transpose2d(t64(cot), t64(w), None, stride, pad).data
    # without output padding the transpose can stop short of the input extent
    h, w_ = tr.shape[2:]
    assert h <= 7 and w_ <= 6 and h >= 7 - stride and w_ >= 6 - stride
    np.testing.assert_allclose(tr, vjp[:, :, :h, :w_], atol=1e-6)


# -- pointwise ---------------------------------------------------------------------


def test_pointwise_examples():
    assert N.pointwise("sigmoid", Tensor(np.zeros(1))).item() == 0.5
    assert N.pointwise("tanh", Tensor(np.zeros(1))).item() == 0.0
    assert N.pointwise("leaky_relu", t64([-2.0]), alpha=0.2).item() == pytest.approx(-0.4, abs=1e-15)
    assert N.pointwise("relu", t64([-1.0, 2.0])).data.tolist() == [0.0, 2.0]
    assert N.pointwise("add", t64([1.0]), t64([2.0])).item() == 3.0
    assert N.pointwise("mul", t64([3.0]), 2.0).item() == 6.0
    assert N.pointwise("sub", t64([3.0]), t64([5.0])).item() == -2.0
    with pytest.raises(ValueError):
        N.pointwise("cosh", t64([1.0]))


def test_sigmoid_stable_at_extremes():
    s = N.sigmoid(Tensor(np.array([-1000.0, 1000.0], dtype=np.float32))).data
    assert s.tolist() == [0.0, 1.0]


def test_broadcast_only_scalar_or_equal():
    a = Tensor(np.ones((2, 3)))
    assert N.add(a, Tensor(np.ones(1))).shape == (2, 3)
    assert (a * 2.0).shape == (2, 3)
    with pytest.raises(ShapeError):
        N.add(a, Tensor(np.ones(3)))


# -- reductions ---------------------------------------------------------------------


def test_reduce_examples():
    assert N.reduce("mean", t64([1, 2, 3, 4])).item() == 2.5
    assert N.reduce("abs_sum", t64([-1, 1])).item() == 2.0
    assert N.reduce("sum", t64([[1, 2], [3, 4]]), axes=0).data.tolist() == [4.0, 6.0]
    with pytest.raises(ValueError):
        N.reduce("sum", t64([[1, 2]]), axes=2)


def test_sum_is_left_to_right():
    # pairwise summation would give 1.0 here; sequential order loses the ones
    vals = np.array([1e16, 1.0, 1.0, -1e16], dtype=np.float64)
    assert N.sum(t64(vals)).item() == float(((vals[0] + vals[1]) + vals[2]) + vals[3])


# -- matmul ---------------------------------------------------------------------------


def test_matmul_examples(rng):
    a = rng.normal(size=(3, 3))
    np.testing.assert_array_equal(N.matmul(t64(np.eye(3)), t64(a)).data, a)
    assert N.matmul(t64([[1, 2]]), t64([[3], [4]])).data.tolist() == [[11.0]]
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
    np.testing.assert_allclose(N.matmul(t64(a), t64(b)).data, matmul_loops(a, b), atol=1e-6)
    with pytest.raises(ShapeError):
        N.matmul(t64(a), t64(a))


def test_batched_matmul(rng):
    a, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 4, 5))
    out = N.matmul(t64(a), t64(b)).data
    for i in range(2):
        np.testing.assert_allclose(out[i], matmul_loops(a[i], b[i]), atol=1e-12)


# -- grad_check and gradients ---------------------------------------------------------


def test_grad_check_examples(rng):
    x = rng.normal(size=(3, 4))
    assert grad_check(lambda t: N.sum(N.square(t)), [x]) < 1e-6
    xi, wi = rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(2, 2, 3, 3))
    assert grad_check(lambda a, b: N.mean(N.conv2d(a, b, pad=1)), [xi, wi]) < 1e-5
    assert grad_check(lambda t: Tensor(np.array(3.0)), [x]) == 0.0


def test_grad_check_errors(rng):
    x = rng.normal(size=3)
    with pytest.raises(ValueError, match="scalar"):
        grad_check(lambda t: t * 2.0, [x])
    with pytest.raises(ValueError):
        grad_check(lambda t: N.sum(t), [x], eps=1e-2)


OP_CASES = {
    "add": (lambda a, b: N.sum(N.mul(N.add(a, b), a)), [(3, 4), (3, 4)]),
    "sub": (lambda a, b: N.sum(N.mul(N.sub(a, b), a)), [(3, 4), (3, 4)]),
    "mul": (lambda a, b: N.sum(N.mul(a, b)), [(3, 4), (3, 4)]),
    "scalar_mul": (lambda a, s: N.sum(N.mul(N.square(a), s)), [(3, 4), (1,)]),
    "sigmoid": (lambda a: N.sum(N.sigmoid(a)), [(3, 4)]),
    "tanh": (lambda a: N.sum(N.tanh(a)), [(3, 4)]),
    "relu": (lambda a: N.sum(N.mul(N.relu(a), a)), [(3, 4)]),
    "leaky_relu": (lambda a: N.sum(N.mul(N.leaky_relu(a, 0.2), a)), [(3, 4)]),
    "absolute": (lambda a: N.sum(N.absolute(a)), [(3, 4)]),
    "square": (lambda a: N.sum(N.square(a)), [(3, 4)]),
    "mean_axes": (lambda a: N.sum(N.square(N.mean(a, axes=(0, 2)))), [(2, 3, 4)]),
    "abs_sum": (lambda a: N.abs_sum(a), [(3, 4)]),
    "reshape": (lambda a: N.sum(N.square(N.reshape(a, (4, 3))) * np.arange(12.0).reshape(4, 3)), [(3, 4)]),
    "transpose": (lambda a: N.sum(N.mul(N.transpose(a, (1, 0)), Tensor(np.arange(12.0).reshape(4, 3)))), [(3, 4)]),
    "getitem": (lambda a: N.sum(N.square(a[1:, ::2])), [(3, 4)]),
    "concat": (lambda a, b: N.sum(N.square(N.concat([a, b], axis=1)) * np.arange(14.0).reshape(2, 7)), [(2, 3), (2, 4)]),
    "matmul": (lambda a, b: N.sum(N.square(N.matmul(a, b))), [(3, 4), (4, 2)]),
    "bmm": (lambda a, b: N.sum(N.square(N.matmul(a, b))), [(2, 3, 4), (2, 4, 2)]),
    "conv2d": (lambda x, w, b: N.sum(N.square(N.conv2d(x, w, b, stride=2, pad=1))), [(2, 2, 5, 6), (3, 2, 3, 3), (3,)]),
    "conv3d": (lambda x, w: N.sum(N.square(N.conv3d(x, w, None, (1, 2, 2), 1))), [(1, 2, 3, 5, 5), (2, 2, 3, 3, 3)]),
    "conv_transpose2d": (lambda x, w, b: N.sum(N.square(N.conv_transpose2d(x, w, b, stride=2, pad=1))), [(1, 2, 3, 3), (2, 3, 4, 4), (3,)]),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients(name):
    fn, shapes = OP_CASES[name]
    r = np.random.default_rng(len(name))
    inputs = [r.normal(size=s) for s in shapes]
    assert grad_check(fn, inputs) < 1e-5


# -- tape ---------------------------------------------------------------------------------


def test_tape_is_reverse_recording_order():
    with precision(np.float64):
        x = Tensor(np.ones(3), requires_grad=True)
        a = x * 2.0
        b = N.sigmoid(a)
        c = N.sum(b * a)
        tape = N.Tape.from_output(c)
        seqs = [op._seq for op in tape.ops]
        assert seqs == sorted(seqs) and len(tape) == 4


def test_gradient_accumulation_is_bitwise_repeatable(rng):
    x0 = rng.normal(size=(2, 3, 6, 6)).astype(np.float32)
    w0 = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
    grads = []
    for _ in range(2):
        x, w = Tensor(x0, requires_grad=True), Tensor(w0, requires_grad=True)
        y = N.conv2d(x, w, pad=1)
        N.sum(N.mul(y, N.tanh(y))).backward()
        grads.append((x.grad.copy(), w.grad.copy()))
    assert all(np.array_equal(a, b) for a, b in zip(grads[0], grads[1]))


def test_grad_shape_matches_data(rng):
    x = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    N.sum(N.square(x)).backward()
    assert x.grad.shape == x.shape


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_is_an_error():
    big = Tensor(np.array([3e38], dtype=np.float32))
    with pytest.raises(NonFiniteError):
        big * 10.0
    with pytest.raises(NonFiniteError):
        N.add(Tensor(np.array([np.nan])), 1.0)


def test_default_dtype_and_precision():
    assert Tensor([1.0, 2.0]).dtype == np.float32
    with precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with N.no_grad():
        y = x * 2.0
    assert not y.requires_grad


# -- TSR1 ----------------------------------------------------------------------------------


def test_tsr_golden_bytes():
    raw = tsr.encode(np.array([[1.0, 2.0]], dtype=np.float32))
    expected = (
        b"TSR1" + bytes([0, 2]) + (1).to_bytes(8, "little") + (2).to_bytes(8, "little") + np.array([1.0, 2.0], dtype="<f4").tobytes()
    )
    assert raw == expected
    assert tsr.encode(np.zeros((), dtype=np.float64)) == b"TSR1" + bytes([1, 0]) + bytes(8)


@given(
    shape=st.lists(st.integers(0, 4), min_size=0, max_size=4),
    f64=st.booleans(),
    seed=st.integers(0, 1000),
)
def test_tsr_roundtrip(shape, f64, seed):
    arr = np.random.default_rng(seed).normal(size=shape).astype(np.float64 if f64 else np.float32)
    back = tsr.decode(tsr.encode(arr))
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_tsr_rejects_garbage(tmp_path):
    with pytest.raises(tsr.TsrFormatError):
        tsr.decode(b"NOPE0000")
    with pytest.raises(tsr.TsrFormatError):
        tsr.decode(tsr.encode(np.ones(3, dtype=np.float32))[:-1])
    with pytest.raises(FileNotFoundError):
        tsr.load(tmp_path / "missing.tsr")
