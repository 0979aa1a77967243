import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lifelong_nlm import autodiff as ad


def T(data, grad=False, name=None):
    return ad.Tensor(data, requires_grad=grad, name=name)


# ---------------------------------------------------------------------------
# forward examples


def test_affine_sum_weights():
    y = ad.affine(T([[1.0], [1.0]]), T([0.0]), T([2.0, 3.0]))
    assert y.data.tolist() == [5.0]


def test_affine_identity():
    y = ad.affine(T(np.eye(2)), T([0.0, 0.0]), T([0.3, 0.7]))
    assert y.data.tolist() == [0.3, 0.7]


def test_affine_hand_evaluated():
    y = ad.affine(T([[2.0, 0.0], [0.0, 2.0]]), T([1.0, 1.0]), T([1.0, 1.0]))
    assert y.data.tolist() == [3.0, 3.0]


def test_affine_shape_mismatch_names_both_shapes():
    with pytest.raises(ad.ShapeError) as err:
        ad.affine(T(np.zeros((3, 2))), T(np.zeros(2)), T(np.zeros((4, 4))))
    assert "(4, 4)" in str(err.value) and "(3, 2)" in str(err.value)


def test_sigmoid_values():
    assert ad.sigmoid(T(0.0)).item() == 0.5
    assert abs(ad.sigmoid(T(50.0)).item() - 1.0) < 1e-12
    assert abs(ad.sigmoid(T(math.log(3.0))).item() - 0.75) < 1e-12


def test_sigmoid_saturated_is_finite():
    out = ad.sigmoid(T([-1e6, 1e6, -745.0, 745.0])).data
    assert np.isfinite(out).all()


def test_reduce_examples():
    x = T([0.1, 0.9, 0.4])
    assert ad.reduce(x, 0, "max").item() == 0.9
    assert ad.reduce(x, 0, "min").item() == 0.1
    y = ad.reduce(T([[0.0, 1.0], [1.0, 0.0]]), 1, "max")
    assert y.data.tolist() == [1.0, 1.0]


def test_reduce_axis_out_of_range():
    with pytest.raises(ad.ShapeError):
        ad.reduce(T([1.0, 2.0]), 3, "max")


def test_expand_examples():
    assert ad.expand(T(0.7), 0, 3).data.tolist() == [0.7, 0.7, 0.7]
    assert ad.expand(T([1.0, 2.0]), 0, 2).data.tolist() == [[1.0, 2.0], [1.0, 2.0]]


def test_permute_examples():
    x = T([[1.0, 2.0], [3.0, 4.0]])
    assert ad.permute(x, (1, 0)).data.tolist() == [[1.0, 3.0], [2.0, 4.0]]
    assert ad.permute(x, (0, 1)).data.tolist() == x.data.tolist()
    assert ad.permute(ad.permute(x, (1, 0)), (1, 0)).data.tolist() == x.data.tolist()
    with pytest.raises(ad.ShapeError):
        ad.permute(x, (0, 0))


def test_concat_examples():
    assert ad.concat([T([1.0]), T([2.0])], 0).data.tolist() == [1.0, 2.0]
    y = ad.concat([T([[1.0], [2.0]]), T([[3.0], [4.0]])], 1)
    assert y.data.tolist() == [[1.0, 3.0], [2.0, 4.0]]
    assert ad.concat([T([5.0, 6.0])], 0).data.tolist() == [5.0, 6.0]
    with pytest.raises(ad.ShapeError):
        ad.concat([T(np.zeros((2, 2))), T(np.zeros((3, 3)))], 0)


def test_bce_examples():
    assert abs(ad.bce_loss(T([0.5]), [1.0]).item() - math.log(2.0)) < 1e-12
    assert ad.bce_loss(T([1.0 - 1e-7]), [1.0]).item() < 2e-7
    expected = -math.log(0.8)  # mean of (-ln .8, -ln .8)
    assert abs(ad.bce_loss(T([0.8, 0.2]), [1.0, 0.0]).item() - expected) < 1e-12
    with pytest.raises(ad.ShapeError):
        ad.bce_loss(T([0.5, 0.5]), [1.0])


# ---------------------------------------------------------------------------
# backward examples and the finite-difference oracle


def test_backward_sigmoid_at_zero():
    w = T(0.0, grad=True, name="w")
    grads = ad.backward(ad.sigmoid(w))
    assert abs(float(grads[w]) - 0.25) < 1e-12


def test_backward_expand_sums():
    w = T(1.3, grad=True, name="w")
    grads = ad.backward(ad.tsum(ad.expand(w, 0, 3)))
    assert float(grads[w]) == 3.0


def test_backward_rejects_non_scalar():
    w = T([1.0, 2.0], grad=True)
    with pytest.raises(ad.ShapeError):
        ad.backward(ad.scale(w, 2.0))


def test_finite_difference_square():
    w = T(3.0, grad=True)

    def f():
        return ad.mul(w, w)

    g = ad.finite_difference_gradient(f, [w])
    assert abs(float(g[w]) - 6.0) < 1e-6


def test_finite_difference_constant():
    w = T(2.0, grad=True)
    g = ad.finite_difference_gradient(lambda: T(7.0), [w])
    assert float(g[w]) == 0.0


def test_two_layer_net_matches_finite_differences():
    rng = np.random.default_rng(7)
    w1 = T(rng.normal(size=(3, 4)) * 0.5, grad=True, name="w1")
    b1 = T(rng.normal(size=4) * 0.1, grad=True, name="b1")
    w2 = T(rng.normal(size=(4, 1)) * 0.5, grad=True, name="w2")
    b2 = T(rng.normal(size=1) * 0.1, grad=True, name="b2")
    x = T(rng.normal(size=(5, 3)))
    y = rng.integers(0, 2, size=(5, 1)).astype(float)

    def f():
        h = ad.sigmoid(ad.affine(w1, b1, x))
        return ad.bce_loss(ad.sigmoid(ad.affine(w2, b2, h)), y)

    analytic = ad.backward(f())
    numeric = ad.finite_difference_gradient(f, [w1, b1, w2, b2])
    for p in (w1, b1, w2, b2):
        denom = np.maximum(np.abs(numeric[p]), 1e-3)
        assert (np.abs(analytic[p] - numeric[p]) / denom).max() < 1e-4


def _random_graph_loss(rng):
    """A random composite touching every op, returning (loss_fn, params)."""
    n = int(rng.integers(2, 4))
    c = int(rng.integers(1, 3))
    x = T(rng.uniform(0.1, 0.9, size=(n, n, c)))
    w1 = T(rng.normal(size=(c, 3)) * 0.7, grad=True, name="w1")
    b1 = T(rng.normal(size=3) * 0.2, grad=True, name="b1")
    w2 = T(rng.normal(size=(9, 2)) * 0.7, grad=True, name="w2")
    b2 = T(rng.normal(size=2) * 0.2, grad=True, name="b2")
    theta = T(rng.normal(size=(n, 6)) * 0.5, grad=True, name="theta")
    valid = rng.random((n, 6)) < 0.7
    valid[:, 0] = True
    y = rng.integers(0, 2, size=(n, n)).astype(float)
    qvals = T(rng.normal(size=(n, 6)))
    qtarget = T(rng.normal(size=n))

    def loss():
        h = ad.sigmoid(ad.affine(w1, b1, x))  # [n,n,3]
        r = ad.add(ad.reduce(h, 1, "max"), ad.reduce(h, 0, "min"))  # [n,3]
        feats = ad.concat(
            [h, ad.permute(h, (1, 0, 2)), ad.expand(r, 1, n)], axis=2
        )  # [n,n,9]
        z = ad.tanh(ad.affine(w2, b2, feats))  # [n,n,2]
        probs = ad.masked_softmax(ad.scale(theta, 1.7), valid, temperature=1.5)
        d = ad.sub(ad.tsum(ad.mul(probs, qvals), axis=1), qtarget)  # [n]
        pred = ad.sigmoid(ad.select_channel(z, 0))
        return ad.add(
            ad.bce_loss(pred, y, pos_weight=2.0),
            ad.add(
                ad.mean(ad.select_channel(z, 1)),
                ad.scale(ad.mean(ad.mul(d, d)), 0.05),
            ),
        )

    return loss, [w1, b1, w2, b2, theta]


def test_gradients_match_finite_differences_on_random_graphs():
    rng = np.random.default_rng(20240811)
    worst = 0.0
    for _ in range(100):
        loss, params = _random_graph_loss(rng)
        analytic = ad.backward(loss())
        numeric = ad.finite_difference_gradient(loss, params)
        for p in params:
            denom = np.maximum(np.abs(numeric[p]), 1e-3)
            worst = max(worst, (np.abs(analytic[p] - numeric[p]) / denom).max())
    assert worst < 1e-4


def test_determinism_same_seed_bit_identical():
    def run():
        loss, params = _random_graph_loss(np.random.default_rng(99))
        grads = ad.backward(loss())
        return float(loss().data), [grads[p].copy() for p in params]

    v1, g1 = run()
    v2, g2 = run()
    assert v1 == v2
    for a, b in zip(g1, g2):
        assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# algebraic properties


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-5, 5), min_size=1, max_size=12),
    st.integers(1, 4),
)
def test_reduce_expand_duality(values, k):
    x = T(values)
    roundtrip = ad.reduce(ad.expand(x, 0, k), 0, "max")
    assert np.array_equal(roundtrip.data, x.data)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_permute_roundtrip(seed):
    rng = np.random.default_rng(seed)
    ndim = int(rng.integers(1, 5))
    shape = tuple(rng.integers(1, 4, size=ndim))
    x = T(rng.normal(size=shape))
    order = tuple(rng.permutation(ndim))
    inverse = tuple(np.argsort(order))
    assert np.array_equal(ad.permute(ad.permute(x, order), inverse).data, x.data)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_bce_nonnegative_and_positive_on_mismatch(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 8))
    pred = rng.uniform(0.0, 1.0, size=n)
    target = rng.integers(0, 2, size=n).astype(float)
    loss = ad.bce_loss(T(pred), target).item()
    assert loss >= 0.0
    clamped = np.clip(pred, ad.PREDICTION_CLAMP, 1 - ad.PREDICTION_CLAMP)
    if not np.array_equal(clamped, target):
        assert loss > 0.0


def test_masked_softmax_properties():
    x = T(np.array([[0.0, 0.0, 3.0], [1.0, -1.0, 0.0]]))
    valid = np.array([[True, True, False], [True, True, True]])
    p = ad.masked_softmax(x, valid, temperature=1.5).data
    assert np.allclose(p.sum(axis=-1), 1.0, atol=1e-9)
    assert p[0, 2] == 0.0
    assert p[0, 0] == p[0, 1] == 0.5


# ---------------------------------------------------------------------------
# Adam


def test_adam_zero_gradient_leaves_parameters():
    p = T([1.0, -2.0], grad=True, name="p")
    state = ad.OptimizerState(learning_rate=0.1)
    ad.adam_step([p], {p: np.zeros(2)}, state)
    assert p.data.tolist() == [1.0, -2.0]
    assert state.step_count == 1


def test_adam_first_step_matches_hand_computation():
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    g = np.array([0.3, -2.0, 0.0])
    p = T([1.0, 1.0, 1.0], grad=True)
    ad.adam_step([p], {p: g.copy()}, ad.OptimizerState(learning_rate=lr))
    m_hat = (1 - b1) * g / (1 - b1)
    v_hat = (1 - b2) * g * g / (1 - b2)
    expected = 1.0 - lr * m_hat / (np.sqrt(v_hat) + eps)
    assert np.allclose(p.data, expected, atol=1e-12)
    # direction is -lr * sign(g) up to epsilon damping
    assert p.data[0] < 1.0 and p.data[1] > 1.0 and p.data[2] == 1.0


def test_adam_two_identical_steps_move_monotonically():
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    g = np.array([1.5])
    p = T([0.0], grad=True)
    state = ad.OptimizerState(learning_rate=lr)
    ad.adam_step([p], {p: g.copy()}, state)
    after_one = p.data.copy()
    ad.adam_step([p], {p: g.copy()}, state)
    after_two = p.data.copy()
    # hand-computed closed form for two identical-gradient steps
    m1 = (1 - b1) * g
    v1 = (1 - b2) * g * g
    step1 = -lr * (m1 / (1 - b1)) / (np.sqrt(v1 / (1 - b2)) + eps)
    m2 = b1 * m1 + (1 - b1) * g
    v2 = b2 * v1 + (1 - b2) * g * g
    step2 = -lr * (m2 / (1 - b1**2)) / (np.sqrt(v2 / (1 - b2**2)) + eps)
    assert np.allclose(after_one, step1, atol=1e-12)
    assert np.allclose(after_two, step1 + step2, atol=1e-12)
    assert after_two[0] < after_one[0] < 0.0


def test_adam_missing_gradient_raises():
    p = T([1.0], grad=True, name="p")
    q = T([1.0], grad=True, name="q")
    with pytest.raises(ad.AutodiffError, match="missing gradient"):
        ad.adam_step([p, q], {p: np.zeros(1)}, ad.OptimizerState(learning_rate=0.1))


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    named = {
        "kb.L0.a1.W": T(rng.normal(size=(4, 3)), grad=True),
        "kb.L0.a1.b": T(rng.normal(size=3), grad=True),
        "scalar": T(rng.normal()),
    }
    stem = str(tmp_path / "model")
    ad.save_checkpoint(stem, named)
    loaded = ad.load_checkpoint(stem)
    assert set(loaded) == set(named)
    for name, tensor in named.items():
        assert loaded[name].shape == tensor.data.shape
        assert np.array_equal(loaded[name], tensor.data)
        assert loaded[name].tobytes() == tensor.data.tobytes()
