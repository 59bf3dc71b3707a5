import numpy as np
import pytest

from spikelab.errors import FormatError, ValidationError
from spikelab.numerics import (conv2d, conv2d_backward, conv2d_with_cache,
                               fc_backward, fc_with_cache, finite_difference_grad,
                               fully_connected, pool2d, pool2d_backward,
                               pool2d_with_cache, read_ft32, write_ft32)
from spikelab.neurons import ATan, surrogate_value
from spikelab.rng import Rng


def test_conv_1x1_scaling_identity():
    x = np.array([[[1, 2], [3, 4]]], dtype=np.float32)
    w = np.full((1, 1, 1, 1), 2.0, dtype=np.float32)
    out = conv2d(x, w, np.zeros(1))
    assert np.array_equal(out, np.array([[[2, 4], [6, 8]]], dtype=np.float32))


def test_conv_sliding_window_sum():
    # hand oracle: 2x2 all-ones kernel over [[1,2],[3,4]] sums to 10
    x = np.array([[[1, 2], [3, 4]]], dtype=np.float32)
    w = np.ones((1, 1, 2, 2), dtype=np.float32)
    out = conv2d(x, w, np.zeros(1))
    assert out.shape == (1, 1, 1)
    assert out[0, 0, 0] == 10.0


def test_conv_zero_kernel():
    rng = Rng(1)
    x = rng.uniform(-1, 1, (2, 5, 5))
    out = conv2d(x, np.zeros((3, 2, 3, 3)), np.zeros(3), padding=1)
    assert np.all(out == 0.0)


def test_conv_shape_error_names_dims():
    with pytest.raises(ValidationError, match="channels"):
        conv2d(np.zeros((2, 4, 4)), np.zeros((1, 3, 2, 2)), np.zeros(1))
    with pytest.raises(ValidationError, match="does not fit"):
        conv2d(np.zeros((1, 2, 2)), np.zeros((1, 1, 5, 5)), np.zeros(1))


def test_conv_linearity_in_input():
    rng = Rng(2)
    x = rng.uniform(-1, 1, (3, 6, 6)).astype(np.float32)
    w = rng.uniform(-1, 1, (4, 3, 3, 3)).astype(np.float32)
    a = np.float32(2.5)
    lhs = conv2d(a * x, w, np.zeros(4), padding=1)
    rhs = a * conv2d(x, w, np.zeros(4), padding=1)
    assert np.allclose(lhs, rhs, rtol=1e-6, atol=1e-6)


def test_pool_examples():
    x = np.array([[[1, 2], [3, 4]]], dtype=np.float32)
    assert pool2d(x, 2, "avg")[0, 0, 0] == 2.5
    assert pool2d(x, 2, "max")[0, 0, 0] == 4.0
    const = np.full((2, 4, 4), 7.0, dtype=np.float32)
    assert np.all(pool2d(const, 2, "avg") == 7.0)


def test_pool_rejects_non_divisible():
    with pytest.raises(ValidationError, match="divide"):
        pool2d(np.zeros((1, 5, 4)), 2, "avg")


def test_fc_examples():
    assert np.array_equal(
        fully_connected(np.array([3.0, 4.0]), np.eye(2), np.zeros(2)),
        np.array([3, 4], dtype=np.float32))
    assert fully_connected(np.array([2.0, 3.0]), np.array([[1.0, 1.0]]),
                           np.zeros(1))[0] == 5.0
    out = fully_connected(np.array([1.0, 1.0]), np.array([[2.0, 0.0], [0.0, 3.0]]),
                          np.array([1.0, 1.0]))
    assert np.array_equal(out, np.array([3, 4], dtype=np.float32))
    with pytest.raises(ValidationError):
        fully_connected(np.zeros(3), np.zeros((2, 2)), np.zeros(2))


def test_fc_backward_identity_passes_grad_through():
    x = np.array([1.0, 2.0], dtype=np.float32)
    _, cache = fc_with_cache(x, np.eye(2, dtype=np.float32), np.zeros(2))
    g = np.array([0.5, -0.25], dtype=np.float32)
    lg = fc_backward(cache, g)
    assert np.array_equal(lg.grad_input, g)


def test_avgpool_backward_spreads_grad():
    x = np.arange(16, dtype=np.float32).reshape(1, 4, 4)
    _, cache = pool2d_with_cache(x, 2, "avg")
    g = np.ones((1, 2, 2), dtype=np.float32)
    lg = pool2d_backward(cache, g)
    assert np.allclose(lg.grad_input, 0.25)


def test_maxpool_backward_routes_to_argmax():
    x = np.array([[[1, 2], [3, 4]]], dtype=np.float32)
    _, cache = pool2d_with_cache(x, 2, "max")
    lg = pool2d_backward(cache, np.array([[[5.0]]], dtype=np.float32))
    assert np.array_equal(lg.grad_input, np.array([[[0, 0], [0, 5]]], dtype=np.float32))


def test_backward_rejects_mismatched_cache():
    _, cache = fc_with_cache(np.zeros(3), np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(ValidationError, match="match"):
        fc_backward(cache, np.zeros(5))
    _, ccache = conv2d_with_cache(np.zeros((1, 4, 4)), np.zeros((1, 1, 3, 3)),
                                  np.zeros(1))
    with pytest.raises(ValidationError, match="match"):
        conv2d_backward(ccache, np.zeros((1, 3, 3)))


def test_conv_gradients_match_finite_differences():
    # finite-difference oracle in float64 over random instances
    rng = Rng(7)
    for seed in range(4):
        r = rng.split(seed)
        x = r.uniform(-1, 1, (1, 4, 4))
        w = r.uniform(-1, 1, (2, 1, 3, 3))
        b = r.uniform(-1, 1, 2)
        gout = r.uniform(-1, 1, (2, 2, 2))
        _, cache = conv2d_with_cache(x, w, b)
        lg = conv2d_backward(cache, gout)

        def loss_wrt(arr, replace):
            def f(v):
                args = {"x": x, "w": w, "b": b}
                args[replace] = v
                return float((conv2d(args["x"], args["w"], args["b"]) * gout).sum())
            return f

        for name, analytic in (("x", lg.grad_input), ("w", lg.grad_weights),
                               ("b", lg.grad_bias)):
            ref = finite_difference_grad(loss_wrt(None, name),
                                         {"x": x, "w": w, "b": b}[name], eps=1e-4)
            denom = np.maximum(np.abs(ref), 1e-6)
            assert (np.abs(ref - analytic) / denom).max() < 1e-3


def test_gradient_soundness_100_seeds():
    # every primitive's analytic backward vs central differences
    rng = Rng(11)
    for seed in range(100):
        r = rng.split(seed)
        x = r.uniform(-1, 1, 6)
        w = r.uniform(-1, 1, (3, 6))
        b = r.uniform(-1, 1, 3)
        gout = r.uniform(-1, 1, 3)
        _, cache = fc_with_cache(x, w, b)
        lg = fc_backward(cache, gout)
        ref = finite_difference_grad(
            lambda v: float((fully_connected(v, w, b) * gout).sum()), x, eps=1e-4)
        assert np.abs(ref - lg.grad_input).max() < 1e-3 * max(1.0, np.abs(ref).max())


def test_determinism_bit_identical():
    rng = Rng(13)
    x = rng.uniform(-1, 1, (2, 8, 8)).astype(np.float32)
    w = rng.uniform(-1, 1, (4, 2, 3, 3)).astype(np.float32)
    b = rng.uniform(-1, 1, 4).astype(np.float32)
    a = conv2d(x, w, b, padding=1)
    bb = conv2d(x, w, b, padding=1)
    assert np.array_equal(a, bb)


def test_finite_difference_quadratic():
    g = finite_difference_grad(lambda v: float(v[0] ** 2), np.array([3.0]), eps=1e-3)
    assert abs(g[0] - 6.0) < 1e-5


def test_finite_difference_constant():
    g = finite_difference_grad(lambda v: 1.0, np.array([1.0, 2.0]), eps=1e-3)
    assert np.all(g == 0.0)


def test_finite_difference_atan_surrogate():
    # derivative of the ATan surrogate value at 1 is alpha/(2*(1+pi^2))
    kind = ATan(alpha=2.0)
    g = finite_difference_grad(lambda v: float(surrogate_value(v, kind)[0]),
                               np.array([1.0]), eps=1e-4)
    expected = 2.0 / (2.0 * (1.0 + np.pi ** 2))
    assert abs(g[0] - expected) < 1e-5
    assert abs(expected - 0.09200) < 5e-5


def test_finite_difference_rejects_non_finite():
    with pytest.raises(ValidationError):
        finite_difference_grad(lambda v: float("nan"), np.array([1.0]))


def test_ft32_round_trip(tmp_path):
    rng = Rng(17)
    arr = rng.normal(0, 1, (2, 3, 4)).astype(np.float32)
    path = tmp_path / "a.ft32"
    write_ft32(path, arr)
    assert np.array_equal(read_ft32(path), arr)


def test_ft32_bad_magic_names_expected(tmp_path):
    path = tmp_path / "bad.ft32"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError, match="FT32"):
        read_ft32(path)


def test_ft32_truncated_payload(tmp_path):
    path = tmp_path / "t.ft32"
    write_ft32(path, np.ones((4, 4), dtype=np.float32))
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(FormatError, match="truncated"):
        read_ft32(path)


def test_ft32_rejects_non_finite_write(tmp_path):
    with pytest.raises(ValidationError, match="non-finite"):
        write_ft32(tmp_path / "nan.ft32", np.array([np.nan], dtype=np.float32))
