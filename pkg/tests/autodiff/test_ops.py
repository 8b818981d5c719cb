import numpy as np
import pytest

from src.autodiff import ops
from src.autodiff.gradcheck import gradcheck, gradcheck_report
from src.autodiff.tensor import Tensor, make_output
from src.utils.errors import BatchNormStateError, ShapeError, ValidationError

TOL = 1e-6


def _param(rng, *shape, name=None):
    return Tensor(rng.standard_normal(shape), requires_grad=True, name=name)


def _random_weights(rng, shape):
    """Random weights so that summed outputs carry a non-trivial gradient."""
    return rng.standard_normal(shape)


# ── convolution ──────────────────────────────────────────────────────────────


def test_conv2d_matches_direct_sum(rng):
    x = rng.standard_normal((2, 5, 4, 3))
    k = rng.standard_normal((3, 3, 3, 2))
    b = rng.standard_normal(2)
    out = ops.conv2d(Tensor(x), Tensor(k), Tensor(b)).numpy()

    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    expected = np.zeros((2, 5, 4, 2))
    for n in range(2):
        for h in range(5):
            for w in range(4):
                for kk in range(2):
                    expected[n, h, w, kk] = b[kk] + np.sum(xp[n, h : h + 3, w : w + 3, :] * k[:, :, :, kk])
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_conv2d_accepts_single_image(rng):
    out = ops.conv2d(Tensor(rng.standard_normal((4, 4, 2))), Tensor(np.zeros((3, 3, 2, 5))), Tensor(np.ones(5)))
    assert out.shape == (4, 4, 5)
    assert np.all(out.numpy() == 1.0)


def test_conv2d_channel_mismatch_raises(rng):
    with pytest.raises(ShapeError, match="channel mismatch"):
        ops.conv2d(Tensor(np.zeros((1, 4, 4, 2))), Tensor(np.zeros((3, 3, 3, 1))), Tensor(np.zeros(1)))


def test_conv2d_gradients(rng):
    x, k, b = _param(rng, 2, 4, 4, 2, name="x"), _param(rng, 3, 3, 2, 3, name="k"), _param(rng, 3, name="b")
    w = _random_weights(rng, (2, 4, 4, 3))
    assert gradcheck(lambda: ops.weighted_sum(ops.conv2d(x, k, b), w), [x, k, b]) < TOL


# ── pooling and upsampling ───────────────────────────────────────────────────


def test_maxpool2_picks_window_maximum():
    x = np.arange(16, dtype=float).reshape(1, 4, 4, 1)
    out = ops.maxpool2(Tensor(x)).numpy()
    np.testing.assert_array_equal(out[0, :, :, 0], [[5.0, 7.0], [13.0, 15.0]])


def test_maxpool2_odd_size_raises():
    with pytest.raises(ShapeError):
        ops.maxpool2(Tensor(np.zeros((1, 3, 4, 1))))


def test_maxpool2_gradients(rng):
    x = _param(rng, 2, 4, 6, 3, name="x")
    w = _random_weights(rng, (2, 2, 3, 3))
    assert gradcheck(lambda: ops.weighted_sum(ops.maxpool2(x), w), [x]) < TOL


def test_upsample2_gradients(rng):
    x = _param(rng, 1, 2, 3, 2, name="x")
    w = _random_weights(rng, (1, 4, 6, 2))
    assert ops.upsample2(x).shape == (1, 4, 6, 2)
    assert gradcheck(lambda: ops.weighted_sum(ops.upsample2(x), w), [x]) < TOL


# ── batch normalisation ──────────────────────────────────────────────────────


def test_batchnorm_train_normalizes_and_updates_running_stats(rng):
    x = 3.0 * rng.standard_normal((8, 4, 4, 2)) + 5.0
    stats = ops.RunningStats.empty(2)
    out = ops.batchnorm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), stats, mode="train").numpy()

    np.testing.assert_allclose(out.mean(axis=(0, 1, 2)), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.var(axis=(0, 1, 2)), 1.0, atol=1e-4)
    np.testing.assert_allclose(stats.mean, 0.1 * x.mean(axis=(0, 1, 2)))
    np.testing.assert_allclose(stats.var, 0.9 + 0.1 * x.var(axis=(0, 1, 2)))
    assert stats.updates == 1


def test_batchnorm_eval_before_training_raises():
    with pytest.raises(BatchNormStateError):
        ops.batchnorm(Tensor(np.zeros((2, 2, 2, 1))), Tensor(np.ones(1)), Tensor(np.zeros(1)),
                      ops.RunningStats.empty(1), mode="eval")


def test_batchnorm_unknown_mode_raises():
    with pytest.raises(ValidationError):
        ops.batchnorm(Tensor(np.zeros((2, 2, 2, 1))), Tensor(np.ones(1)), Tensor(np.zeros(1)),
                      ops.RunningStats.empty(1), mode="inference")


@pytest.mark.parametrize("mode", ["train", "eval"])
def test_batchnorm_gradients(rng, mode):
    x, gamma, beta = _param(rng, 3, 2, 2, 2, name="x"), _param(rng, 2, name="gamma"), _param(rng, 2, name="beta")
    stats = ops.RunningStats(np.array([0.3, -0.2]), np.array([1.5, 0.7]), updates=1)
    w = _random_weights(rng, (3, 2, 2, 2))
    f = lambda: ops.weighted_sum(ops.batchnorm(x, gamma, beta, stats, mode=mode), w)  # noqa: E731
    assert gradcheck(f, [x, gamma, beta], floor=1e-8) < 1e-5


# ── dense, activations and reshaping ─────────────────────────────────────────


def test_dense_gradients_batch_and_vector(rng):
    w, b = _param(rng, 5, 3, name="w"), _param(rng, 3, name="b")
    xb, xv = _param(rng, 4, 5, name="xb"), _param(rng, 5, name="xv")
    pb, pv = _random_weights(rng, (4, 3)), _random_weights(rng, (3,))
    assert gradcheck(lambda: ops.weighted_sum(ops.dense(xb, w, b), pb), [xb, w, b]) < TOL
    assert gradcheck(lambda: ops.weighted_sum(ops.dense(xv, w, b), pv), [xv, w, b]) < TOL


def test_dense_shape_mismatch_raises(rng):
    with pytest.raises(ShapeError):
        ops.dense(Tensor(np.zeros((2, 4))), Tensor(np.zeros((5, 3))), Tensor(np.zeros(3)))


def test_relu_gradients(rng):
    x = _param(rng, 6, 5, name="x")
    w = _random_weights(rng, (6, 5))
    assert gradcheck(lambda: ops.weighted_sum(ops.relu(x), w), [x]) < TOL


def test_softmax_rows_sum_to_one_and_gradients(rng):
    x = _param(rng, 4, 3, name="x")
    np.testing.assert_allclose(ops.softmax(x).numpy().sum(axis=1), 1.0)
    w = _random_weights(rng, (4, 3))
    assert gradcheck(lambda: ops.weighted_sum(ops.softmax(x), w), [x]) < TOL


def test_softmax_is_shift_invariant():
    a = ops.softmax(Tensor([[1.0, 2.0, 3.0]])).numpy()
    b = ops.softmax(Tensor([[1001.0, 1002.0, 1003.0]])).numpy()
    np.testing.assert_allclose(a, b)


def test_concat_splits_gradient_back(rng):
    a, b = _param(rng, 3, 2, name="a"), _param(rng, 3, 4, name="b")
    w = _random_weights(rng, (3, 6))
    assert ops.concat([a, b], axis=1).shape == (3, 6)
    assert gradcheck(lambda: ops.weighted_sum(ops.concat([a, b], axis=1), w), [a, b]) < TOL


def test_concat_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        ops.concat([Tensor(np.zeros((2, 2))), Tensor(np.zeros((3, 2)))], axis=1)


def test_slice_batch_gradients(rng):
    x = _param(rng, 5, 3, name="x")
    w = _random_weights(rng, (2, 3))
    assert gradcheck(lambda: ops.weighted_sum(ops.slice_batch(x, 1, 3), w), [x]) < TOL
    with pytest.raises(ShapeError):
        ops.slice_batch(x, 3, 7)


def test_flatten_keeps_batch_axis(rng):
    x = _param(rng, 2, 2, 2, 3, name="x")
    w = _random_weights(rng, (2, 12))
    assert ops.flatten(x).shape == (2, 12)
    assert gradcheck(lambda: ops.weighted_sum(ops.flatten(x), w), [x]) < TOL


# ── dropout ──────────────────────────────────────────────────────────────────


def test_dropout_is_identity_outside_training(rng):
    x = Tensor(rng.standard_normal((4, 4)))
    assert ops.dropout(x, 0.5, rng, training=False) is x
    assert ops.dropout(x, 0.0, rng, training=True) is x


def test_dropout_rate_out_of_range_raises(rng):
    with pytest.raises(ValidationError):
        ops.dropout(Tensor(np.ones(3)), 1.0, rng, training=True)


def test_dropout_gradients_with_fixed_mask(rng):
    x = _param(rng, 6, 4, name="x")
    w = _random_weights(rng, (6, 4))
    f = lambda: ops.weighted_sum(ops.dropout(x, 0.5, np.random.default_rng(3), training=True), w)  # noqa: E731
    assert gradcheck(f, [x]) < TOL


# ── losses ───────────────────────────────────────────────────────────────────


def test_l2_loss_value_and_gradients(rng):
    pred = Tensor([[1.0], [2.0], [4.0]], requires_grad=True)
    assert ops.l2_loss(pred, [0.0, 2.0, 1.0]).item() == pytest.approx((1.0 + 0.0 + 9.0) / 3)
    assert gradcheck(lambda: ops.l2_loss(pred, [0.5, 1.0, -1.0]), [pred]) < TOL


def test_mse_averages_over_pixels(rng):
    pred = _param(rng, 2, 3, 3, 1, name="pred")
    target = rng.standard_normal((2, 3, 3, 1))
    expected = np.mean((pred.numpy() - target) ** 2)
    assert ops.mse(pred, target).item() == pytest.approx(expected)
    assert gradcheck(lambda: ops.mse(pred, target), [pred]) < TOL


def test_cross_entropy_of_softmax_gradients(rng):
    logits = _param(rng, 5, 2, name="logits")
    labels = np.array([0, 1, 1, 0, 1])
    assert gradcheck(lambda: ops.cross_entropy(ops.softmax(logits), labels), [logits]) < TOL


def test_cross_entropy_floors_zero_probability():
    loss = ops.cross_entropy(Tensor([[1.0, 0.0]]), [1]).item()
    assert loss == pytest.approx(-np.log(ops.PROBABILITY_FLOOR))


def test_cross_entropy_rejects_unnormalized_rows():
    with pytest.raises(ValidationError):
        ops.cross_entropy(Tensor([[0.7, 0.7]]), [0])


# ── gradcheck sanity ─────────────────────────────────────────────────────────


def _broken_square(x: Tensor) -> Tensor:
    def backward(g):
        return (g * x.data,)  # missing factor 2

    return make_output("broken_square", x.data**2, (x,), backward)


def test_gradcheck_flags_a_wrong_backward(rng):
    """Negative control: a deliberately corrupted gradient must be caught."""
    x = _param(rng, 4, name="x")
    report = gradcheck_report(lambda: ops.weighted_sum(_broken_square(x)), [x])
    assert report.max_rel_error > 0.1
    assert report.worst_parameter == "x"
    assert report.checked == 4


def test_gradcheck_samples_max_entries(rng):
    x = _param(rng, 10, 10, name="x")
    report = gradcheck_report(lambda: ops.weighted_sum(ops.relu(x), np.ones((10, 10))), [x], max_entries=7)
    assert report.checked + report.skipped == 7
