import numpy as np
import pytest

from conftest import numerical_gradient, relative_error
from melharm.nn_core import (
    Adam,
    BatchNorm,
    Conv2d,
    Dense,
    Dropout,
    GlobalAvgPool,
    MaxPool2d,
    ReLU,
    StateError,
    he_uniform,
    softmax,
    softmax_cross_entropy,
)

TOL = 1e-6  # float64 central differences are far tighter than the layer contract


def check_input_gradient(layer, x, train=True, rng_seed=None):
    """Compare layer.backward's input gradient against finite differences of
    sum(forward(x) * probe)."""
    probe = np.random.default_rng(99).standard_normal(
        layer.forward(x.copy(), train=train, rng=np.random.default_rng(rng_seed)).shape
    )

    def scalar(xv):
        out = layer.forward(xv, train=train, rng=np.random.default_rng(rng_seed))
        return float((out * probe).sum())

    scalar(x)  # leave the cache populated for backward
    analytic = layer.backward(probe)
    numeric = numerical_gradient(scalar, x.copy())
    assert relative_error(analytic, numeric) < TOL


def check_param_gradients(layer, x, train=True):
    probe = np.random.default_rng(98).standard_normal(layer.forward(x, train=train).shape)
    layer.forward(x, train=train)
    layer.backward(probe)
    analytic = dict(layer.grads())
    for name, param in layer.params():
        def scalar(pv):
            saved = param.copy()
            param[...] = pv
            out = layer.forward(x, train=train)
            layer.backward(probe)  # clear cache
            param[...] = saved
            return float((out * probe).sum())

        numeric = numerical_gradient(scalar, param.copy())
        assert relative_error(analytic[name], numeric) < TOL, name


def test_he_uniform_bounds():
    w = he_uniform(np.random.default_rng(0), (1000,), fan_in=50, dtype=np.float64)
    limit = np.sqrt(6.0 / 50)
    assert np.all(np.abs(w) <= limit)
    assert np.abs(w).max() > 0.8 * limit  # actually fills the range


def test_conv2d_forward_matches_direct_loop():
    rng = np.random.default_rng(0)
    conv = Conv2d(2, 3, (2, 2), rng=rng, dtype=np.float64)
    x = rng.standard_normal((2, 2, 4, 5))
    out = conv.forward(x)
    assert out.shape == (2, 3, 3, 4)
    expected = np.zeros_like(out)
    for o in range(3):
        for i in range(3):
            for j in range(4):
                patch = x[:, :, i : i + 2, j : j + 2]
                expected[:, o, i, j] = (patch * conv.w[o]).sum(axis=(1, 2, 3)) + conv.b[o]
    np.testing.assert_allclose(out, expected, rtol=1e-12)


def test_conv2d_gradients_generic_path():
    rng = np.random.default_rng(1)
    conv = Conv2d(2, 3, (3, 2), rng=rng, dtype=np.float64)
    x = rng.standard_normal((2, 2, 5, 6))
    check_input_gradient(conv, x)
    check_param_gradients(conv, x)


def test_conv2d_gradients_full_height_path():
    # the width-1 full-height filter used by the pitch-class branches
    rng = np.random.default_rng(2)
    conv = Conv2d(1, 4, (6, 1), rng=rng, dtype=np.float64)
    x = rng.standard_normal((3, 1, 6, 7))
    check_input_gradient(conv, x)
    check_param_gradients(conv, x)


def test_conv2d_strided_gradient():
    rng = np.random.default_rng(3)
    conv = Conv2d(1, 2, (2, 2), stride=(2, 2), rng=rng, dtype=np.float64)
    x = rng.standard_normal((2, 1, 6, 6))
    check_input_gradient(conv, x)


def test_conv2d_shape_guard():
    conv = Conv2d(2, 3, (3, 3), dtype=np.float64)
    with pytest.raises(ValueError):
        conv.forward(np.zeros((1, 1, 5, 5)))
    with pytest.raises(ValueError):
        conv.forward(np.zeros((1, 2, 2, 5)))


def test_batchnorm_train_normalizes():
    rng = np.random.default_rng(4)
    bn = BatchNorm(3, dtype=np.float64)
    x = rng.standard_normal((8, 3, 4, 5)) * 3 + 1
    out = bn.forward(x, train=True)
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.std(axis=(0, 2, 3)), 1.0, atol=1e-3)


def test_batchnorm_running_stats_drive_inference():
    rng = np.random.default_rng(5)
    bn = BatchNorm(2, dtype=np.float64)
    x = rng.standard_normal((16, 2, 3, 3)) + 2.0
    for _ in range(200):
        bn.forward(x, train=True)
    out = bn.forward(x, train=False)
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-2)


def test_batchnorm_gradients():
    rng = np.random.default_rng(6)
    bn = BatchNorm(3, dtype=np.float64)
    x = rng.standard_normal((4, 3, 2, 3))
    check_input_gradient(bn, x)
    check_param_gradients(bn, x)


def test_relu_gradient():
    x = np.random.default_rng(7).standard_normal((4, 5))
    check_input_gradient(ReLU(), x)


def test_global_avg_pool_gradient():
    x = np.random.default_rng(8).standard_normal((2, 3, 4, 5))
    pool = GlobalAvgPool()
    assert pool.forward(x).shape == (2, 3)
    check_input_gradient(pool, x)


def test_maxpool_forward_and_crop():
    x = np.arange(2 * 1 * 5 * 5, dtype=np.float64).reshape(2, 1, 5, 5)
    pool = MaxPool2d(2)
    out = pool.forward(x)
    assert out.shape == (2, 1, 2, 2)
    assert out[0, 0, 0, 0] == x[0, 0, 1, 1]
    with pytest.raises(ValueError):
        MaxPool2d(4).forward(np.zeros((1, 1, 3, 3)))


def test_maxpool_gradient_with_ties():
    x = np.random.default_rng(9).standard_normal((2, 2, 4, 4))
    x[0, 0, 0, 0] = x[0, 0, 0, 1] = 5.0  # exact tie inside one window
    check_input_gradient(MaxPool2d(2), x)


def test_dropout_train_and_inference():
    rng = np.random.default_rng(10)
    drop = Dropout(0.5)
    x = np.ones((200, 50))
    out = drop.forward(x, train=True, rng=rng)
    kept = out != 0
    assert 0.4 < kept.mean() < 0.6
    np.testing.assert_allclose(out[kept], 2.0)  # inverted scaling
    # backward reuses the same mask
    dx = drop.backward(np.ones_like(x))
    np.testing.assert_array_equal(dx != 0, kept)
    # inference is the identity
    np.testing.assert_array_equal(drop.forward(x, train=False), x)
    with pytest.raises(ValueError):
        drop.forward(x, train=True)  # no rng
    with pytest.raises(ValueError):
        Dropout(1.0)


def test_dense_gradients():
    rng = np.random.default_rng(11)
    dense = Dense(5, 3, rng=rng, dtype=np.float64)
    x = rng.standard_normal((4, 5))
    check_input_gradient(dense, x)
    check_param_gradients(dense, x)


def test_backward_before_forward_raises():
    for layer in [Conv2d(1, 1, (1, 1), dtype=np.float64), BatchNorm(1), ReLU(),
                  GlobalAvgPool(), MaxPool2d(2), Dropout(0.1), Dense(2, 2)]:
        with pytest.raises(StateError):
            layer.backward(np.zeros((1, 1, 2, 2)))


def test_softmax_stability_and_rows():
    logits = np.array([[1000.0, 1000.0, 999.0, 998.0]])
    p = softmax(logits)
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p.sum(axis=-1), 1.0)
    assert p[0, 0] == p[0, 1] > p[0, 2] > p[0, 3]


def test_cross_entropy_value_and_gradient():
    logits = np.random.default_rng(12).standard_normal((6, 4))
    labels = np.array([0, 1, 2, 3, 1, 0])
    loss, grad = softmax_cross_entropy(logits, labels)
    p = softmax(logits)
    expected = -np.mean(np.log(p[np.arange(6), labels]))
    assert loss == pytest.approx(expected)

    def scalar(lv):
        return softmax_cross_entropy(lv, labels)[0]

    numeric = numerical_gradient(scalar, logits.copy())
    assert relative_error(grad, numeric) < TOL


def test_adam_matches_reference_step():
    p = np.array([1.0, -2.0])
    g = np.array([0.1, -0.3])
    opt = Adam([p], lr=0.01)
    opt.step([g])
    # after one bias-corrected step the update magnitude is ~lr
    expected = np.array([1.0, -2.0]) - 0.01 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p, expected, rtol=1e-6)


def test_adam_converges_on_quadratic():
    p = np.array([5.0, -3.0])
    opt = Adam([p], lr=0.1)
    for _ in range(500):
        opt.step([2 * p])
    np.testing.assert_allclose(p, 0.0, atol=1e-3)


def test_adam_grad_count_guard():
    opt = Adam([np.zeros(2)])
    with pytest.raises(ValueError):
        opt.step([])
