"""Op-level forward values and gradients against the finite-difference oracle."""

import math

import numpy as np
import pytest

from helpers import check_gradients, finite_difference_grad, relative_error

from dropbench import autograd as ag
from dropbench.autograd import Tensor
from dropbench.rng import RngStream

rng = np.random.default_rng(20240817)


def weighted_sum(t, w):
    """Scalar projection so gradients are non-trivial everywhere."""
    return ag.tensor_sum(ag.mul(t, Tensor(w)))


# -- forward values -----------------------------------------------------------

def test_softmax_uniform_on_constant_row():
    out = ag.softmax(Tensor([[0.0, 0.0, 0.0]]))
    np.testing.assert_allclose(out.data, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-12)


def test_softmax_rows_sum_to_one():
    x = Tensor(rng.normal(size=(8, 11)) * 5)
    out = ag.softmax(x, axis=-1)
    np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(8), atol=1e-6)


def test_cross_entropy_uniform_prediction_is_ln2():
    loss = ag.cross_entropy(Tensor([[0.0, 0.0]]), np.array([0]))
    assert loss.item() == pytest.approx(math.log(2.0), abs=1e-12)


def test_layer_norm_constant_row_maps_to_bias():
    gain = Tensor(rng.normal(size=(6,)))
    bias = Tensor(rng.normal(size=(6,)))
    x = Tensor(np.full((3, 6), 2.5))
    out = ag.layer_norm(x, gain, bias)
    np.testing.assert_allclose(out.data, np.broadcast_to(bias.data, (3, 6)), atol=1e-12)


def test_layer_norm_standardizes_rows():
    x = Tensor(rng.normal(size=(4, 16)) * 3 + 1)
    out = ag.layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16)))
    np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.data.std(axis=-1), 1.0, atol=1e-3)


def test_causal_mask_blocks_future_positions():
    m = ag.causal_mask(4)
    scores = Tensor(rng.normal(size=(4, 4)))
    probs = ag.softmax(ag.add(scores, m), axis=-1).data
    assert np.all(probs[np.triu_indices(4, k=1)] == 0.0)
    np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-12)


def test_matmul_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        ag.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_tensor_rejects_non_finite():
    with pytest.raises(ValueError):
        Tensor([1.0, np.inf])
    with pytest.raises(ValueError):
        Tensor([np.nan])


def test_backward_requires_scalar():
    t = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        ag.mul(t, t).backward()


def test_sum_gradient_is_ones():
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    ag.tensor_sum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_unused_parameter_gets_no_gradient():
    x = Tensor(rng.normal(size=(3,)), requires_grad=True)
    unused = Tensor(rng.normal(size=(3,)), requires_grad=True)
    ag.tensor_sum(x).backward()
    assert unused.grad is None  # treated as an exact zero downstream


# -- dropout ------------------------------------------------------------------

def test_dropout_zero_rate_is_identity():
    x = Tensor(rng.normal(size=(5, 5)))
    out = ag.dropout(x, 0.0, RngStream(1), active=True)
    assert out is x


def test_dropout_inactive_is_identity():
    x = Tensor(rng.normal(size=(5, 5)))
    out = ag.dropout(x, 0.6, RngStream(1), active=False)
    assert out is x


def test_dropout_rate_validation():
    x = Tensor(np.ones(3))
    for bad in (-0.1, 1.0, 1.5):
        with pytest.raises(ValueError):
            ag.dropout(x, bad, RngStream(1), active=True)


def test_dropout_mask_reproducible():
    x = Tensor(rng.normal(size=(64,)))
    a = ag.dropout(x, 0.35, RngStream(7, 3), active=True)
    b = ag.dropout(x, 0.35, RngStream(7, 3), active=True)
    np.testing.assert_array_equal(a.data, b.data)


def test_dropout_distinct_streams_differ():
    x = Tensor(np.ones(256))
    a = ag.dropout(x, 0.5, RngStream(7, 1), active=True)
    b = ag.dropout(x, 0.5, RngStream(7, 2), active=True)
    assert not np.array_equal(a.data, b.data)


def test_dropout_unbiased_mean():
    # Monte Carlo estimate: mean over masks approximates x within 3 SEs.
    x = np.array([1.0, 2.0])
    k = 100_000
    tiled = Tensor(np.tile(x, (k, 1)))
    out = ag.dropout(tiled, 0.5, RngStream(11, 0), active=True).data
    mean = out.mean(axis=0)
    se = out.std(axis=0, ddof=1) / math.sqrt(k)
    assert np.all(np.abs(mean - x) <= 3 * se)


def test_dropout_gradient_uses_same_mask():
    x = Tensor(rng.normal(size=(40,)), requires_grad=True)
    out = ag.dropout(x, 0.4, RngStream(5, 2), active=True)
    ag.tensor_sum(out).backward()
    mask = (out.data != 0).astype(float) / 0.6
    np.testing.assert_allclose(x.grad, mask, atol=1e-12)


# -- gradients vs finite differences ------------------------------------------

def test_grad_add_broadcast():
    w = rng.normal(size=(3, 4))
    check_gradients(
        lambda a, b: weighted_sum(ag.add(a, b), w),
        [rng.normal(size=(3, 4)), rng.normal(size=(4,))],
    )


def test_grad_mul_broadcast():
    w = rng.normal(size=(3, 4))
    check_gradients(
        lambda a, b: weighted_sum(ag.mul(a, b), w),
        [rng.normal(size=(3, 4)), rng.normal(size=(1, 4))],
    )


def test_grad_matmul_2d():
    w = rng.normal(size=(3, 5))
    check_gradients(
        lambda a, b: weighted_sum(ag.matmul(a, b), w),
        [rng.normal(size=(3, 4)), rng.normal(size=(4, 5))],
    )


def test_grad_matmul_batched():
    w = rng.normal(size=(2, 3, 4, 4))
    check_gradients(
        lambda a, b: weighted_sum(ag.matmul(a, b), w),
        [rng.normal(size=(2, 3, 4, 5)), rng.normal(size=(2, 3, 5, 4))],
    )


def test_grad_reshape_transpose():
    w = rng.normal(size=(2, 2, 3, 2))
    check_gradients(
        lambda a: weighted_sum(ag.transpose(ag.reshape(a, (2, 3, 2, 2)), (0, 2, 1, 3)), w),
        [rng.normal(size=(2, 3, 4))],
    )


def test_grad_sum_and_mean():
    w = rng.normal(size=(3, 1, 5))
    check_gradients(
        lambda a: weighted_sum(ag.tensor_sum(a, axis=1, keepdims=True), w),
        [rng.normal(size=(3, 4, 5))],
    )
    w2 = rng.normal(size=(4,))
    check_gradients(
        lambda a: weighted_sum(ag.tensor_mean(a, axis=0), w2),
        [rng.normal(size=(3, 4))],
    )


def test_grad_softmax():
    w = rng.normal(size=(4, 6))
    check_gradients(
        lambda a: weighted_sum(ag.softmax(a, axis=-1), w),
        [rng.normal(size=(4, 6)) * 2],
    )


def test_grad_layer_norm():
    w = rng.normal(size=(3, 8))
    check_gradients(
        lambda x, g, b: weighted_sum(ag.layer_norm(x, g, b), w),
        [rng.normal(size=(3, 8)), rng.normal(size=(8,)), rng.normal(size=(8,))],
    )


def test_grad_gelu():
    w = rng.normal(size=(5, 7))
    check_gradients(
        lambda a: weighted_sum(ag.gelu(a), w),
        [rng.normal(size=(5, 7)) * 2],
    )


def test_grad_embedding_lookup():
    ids = rng.integers(0, 6, size=(3, 4))
    w = rng.normal(size=(3, 4, 5))
    check_gradients(
        lambda t: weighted_sum(ag.embedding_lookup(t, ids), w),
        [rng.normal(size=(6, 5))],
    )


def test_grad_cross_entropy():
    labels = np.array([0, 1, 1, 0])
    check_gradients(
        lambda a: ag.cross_entropy(a, labels),
        [rng.normal(size=(4, 2))],
    )


def test_grad_select_positions():
    pos = np.array([0, 2, 1])
    w = rng.normal(size=(3, 5))
    check_gradients(
        lambda a: weighted_sum(ag.select_positions(a, pos), w),
        [rng.normal(size=(3, 4, 5))],
    )


def test_grad_dropout_fixed_mask():
    stream = RngStream(3, 9)
    w = rng.normal(size=(6, 6))
    check_gradients(
        lambda a: weighted_sum(ag.dropout(a, 0.3, stream, active=True), w),
        [rng.normal(size=(6, 6))],
    )


def test_grad_attention_subgraph():
    """Single-head attention block: q k v projections, scaled scores,
    causal mask, softmax, weighted sum."""
    T, d = 4, 6
    w = rng.normal(size=(T, d))
    mask = ag.causal_mask(T)

    def attn(x, wq, wk, wv):
        q = ag.matmul(x, wq)
        k = ag.matmul(x, wk)
        v = ag.matmul(x, wv)
        scores = ag.matmul(q, ag.transpose(k, (1, 0))) / math.sqrt(d)
        probs = ag.softmax(ag.add(scores, mask), axis=-1)
        return weighted_sum(ag.matmul(probs, v), w)

    check_gradients(
        attn,
        [rng.normal(size=(T, d)), rng.normal(size=(d, d)),
         rng.normal(size=(d, d)), rng.normal(size=(d, d))],
    )


def test_grad_reuse_same_tensor_twice():
    # residual-style reuse: both consumers must accumulate into one grad
    w = rng.normal(size=(4, 4))

    def f(a, b):
        h = ag.matmul(a, b)
        return weighted_sum(ag.add(a, h), w)

    check_gradients(f, [rng.normal(size=(4, 4)), rng.normal(size=(4, 4))])


def test_grad_random_three_layer_net():
    """Random 3-layer MLP vs central finite differences (h=1e-5, float64)."""
    sizes = [(6, 8), (8, 8), (8, 2)]
    labels = rng.integers(0, 2, size=5)
    x0 = rng.normal(size=(5, 6))

    def net(w1, b1, w2, b2, w3, b3):
        h = ag.gelu(ag.add(ag.matmul(Tensor(x0), w1), b1))
        h = ag.gelu(ag.add(ag.matmul(h, w2), b2))
        return ag.cross_entropy(ag.add(ag.matmul(h, w3), b3), labels)

    arrays = []
    for fan_in, fan_out in sizes:
        arrays.append(rng.normal(size=(fan_in, fan_out)) * 0.5)
        arrays.append(rng.normal(size=(fan_out,)) * 0.1)
    worst = check_gradients(net, arrays)
    assert worst < 1e-4
