import numpy as np
import pytest

from lifelong_nlm import autodiff as ad
from lifelong_nlm.logic import (
    Atom,
    PredicateSchema,
    Rule,
    compose_rule_eval,
    ground_valuation,
    single_type_universe,
)
from lifelong_nlm.nlm import (
    KnowledgeBase,
    LifelongModel,
    ModelError,
    NlmLayer,
    concat_groups,
    feature_counts,
    load_model,
    make_rng,
    save_model,
    stack_groups,
)


def random_graph_group(n, seed, p=0.4):
    rng = np.random.default_rng(seed)
    adj = rng.random((n, n)) < p
    adj = np.triu(adj, 1)
    adj = adj | adj.T
    red = rng.random(n) < 0.4
    u = single_type_universe("Node", n)
    facts = [("IsRed", (i,)) for i in range(n) if red[i]]
    facts += [("IsConnected", (i, j)) for i in range(n) for j in range(n) if adj[i, j]]
    schemas = [
        PredicateSchema("IsRed", 1, ("Node",)),
        PredicateSchema("IsConnected", 2, ("Node", "Node")),
    ]
    return ground_valuation(u, schemas, facts)


def test_feature_counts():
    # arity 0 sees itself plus both reductions of arity 1; arity r takes all
    # r! variable orders of [same, expanded lower, max/min of upper]
    assert feature_counts((0, 1, 1, 0)) == (2, 3, 4, 6)
    assert feature_counts((8, 9, 10, 8)) == (26, 37, 70, 108)


def test_layer_channel_mismatch():
    layer = NlmLayer((0, 2, 0, 0), (0, 1, 0, 0), make_rng(0))
    group = random_graph_group(4, 0)  # channels (0, 1, 1, 0)
    with pytest.raises(ModelError, match="channels"):
        layer.forward(group)


def test_hand_weights_soft_and():
    layer = NlmLayer((0, 2, 0, 0), (0, 1, 0, 0), make_rng(0))
    layer.weights[1].data = np.array([[10.0], [10.0]])
    layer.biases[1].data = np.array([-15.0])
    u = single_type_universe("T", 4)
    arr = np.array([[1, 1], [1, 0], [0, 1], [0, 0]], dtype=float)
    group = ground_valuation(
        u,
        [PredicateSchema("A", 1, ("T",)), PredicateSchema("B", 1, ("T",))],
        [("A", (0,)), ("A", (1,)), ("B", (0,)), ("B", (2,))],
    )
    assert np.array_equal(group.tensors[1].data, arr)
    out = layer.forward(group).tensors[1].data[:, 0]
    assert out[0] > 0.99
    assert out[1] < 0.01 and out[2] < 0.01 and out[3] < 0.01


def test_zero_weights_give_half_everywhere():
    layer = NlmLayer((0, 1, 1, 0), (4, 4, 4, 4), make_rng(1))
    for r in layer.weights:
        layer.weights[r].data = np.zeros_like(layer.weights[r].data)
        layer.biases[r].data = np.zeros_like(layer.biases[r].data)
    out = layer.forward(random_graph_group(5, 3))
    for r, t in out.tensors.items():
        assert np.all(t.data == 0.5), f"arity {r}"


def adjacent_to_red_oracle(group):
    rule = Rule(
        Atom("AdjacentToRed", ("X",)),
        (Atom("IsConnected", ("X", "Y")), Atom("IsRed", ("Y",))),
    )
    return compose_rule_eval(group, [rule], "AdjacentToRed")


def hand_built_adjacent_to_red(group):
    """Two hand-set affine stages: conjoin edge(X,Y) with Red(Y) (the
    swapped variable order of the expanded red channel), then reduce-max."""
    w = 20.0
    conj = NlmLayer((0, 1, 1, 0), (0, 0, 1, 0), make_rng(0))
    # arity-2 features: [edge, RedX | edgeT, RedY]; conjoin channels 0 and 3
    conj.weights[2].data = np.array([[w], [0.0], [0.0], [w]])
    conj.biases[2].data = np.array([-1.5 * w])
    pick = NlmLayer((0, 0, 1, 0), (0, 1, 0, 0), make_rng(0))
    pick.weights[1].data = np.array([[w], [0.0]])  # reduce-max over the last axis
    pick.biases[1].data = np.array([-0.5 * w])
    return pick.forward(conj.forward(group)).tensors[1].data[:, 0]


def test_hand_weights_reproduce_adjacent_to_red():
    for seed in range(10):
        group = random_graph_group(4 + seed % 3, 100 + seed)
        predicted = hand_built_adjacent_to_red(group)
        oracle = adjacent_to_red_oracle(group)
        assert np.abs(predicted - oracle).max() < 1e-2, f"seed {seed}"


def permute_group_arrays(group, pi):
    out = {}
    for r, t in group.tensors.items():
        arr = t.data
        for axis in range(r):
            arr = np.take(arr, pi, axis=axis)
        out[r] = arr
    return out


def test_permutation_equivariance_is_exact():
    rng = np.random.default_rng(5)
    group = random_graph_group(6, 11)
    kb = KnowledgeBase((0, 1, 1, 0), depth=2, breadth=(4, 4, 4, 4), rng=make_rng(7))
    export = kb.forward(group)
    pi = rng.permutation(6)
    permuted_inputs = permute_group_arrays(group, pi)
    pgroup = type(group)(
        group.universe,
        {r: ad.Tensor(a) for r, a in permuted_inputs.items()},
        batch_axes=0,
    )
    export_of_permuted = kb.forward(pgroup)
    permuted_export = permute_group_arrays(export, pi)
    for r in export.tensors:
        assert np.array_equal(export_of_permuted.tensors[r].data, permuted_export[r])


def test_kb_export_shapes_and_depth():
    group = random_graph_group(5, 2)
    kb1 = KnowledgeBase((0, 1, 1, 0), depth=1, breadth=(8, 8, 8, 8), rng=make_rng(3))
    out1 = kb1.forward(group)
    assert out1.channel_counts() == (8, 8, 8, 8)
    single = kb1.layers[0].forward(group)
    for r in single.tensors:
        assert np.array_equal(out1.tensors[r].data, single.tensors[r].data)
    kb2 = KnowledgeBase((0, 1, 1, 0), depth=2, breadth=(8, 8, 8, 8), rng=make_rng(3))
    assert kb2.forward(group).channel_counts() == (16, 16, 16, 16)


def test_batched_forward_matches_per_instance():
    groups = [random_graph_group(5, 40 + i) for i in range(3)]
    kb = KnowledgeBase((0, 1, 1, 0), depth=2, breadth=(4, 4, 4, 4), rng=make_rng(9))
    batched = kb.forward(stack_groups(groups))
    for i, g in enumerate(groups):
        single = kb.forward(g)
        for r in single.tensors:
            assert np.allclose(
                batched.tensors[r].data[i], single.tensors[r].data, atol=1e-12
            )


def make_model(seed=0, n=5):
    model = LifelongModel(
        (0, 1, 1, 0), seed=seed, kb_depth=2, kb_breadth=(4, 4, 4, 4)
    )
    return model, random_graph_group(n, 21)


def test_head_forward_range_and_shape():
    model, group = make_model()
    model.add_task_head("t0", target_arity=1)
    pred = model.head_forward("t0", group)
    assert pred.shape == (5,)
    assert ((pred.data > 0) & (pred.data < 1)).all()
    with pytest.raises(ModelError, match="unknown task"):
        model.head_forward("nope", group)


def test_heads_are_independent():
    model, group = make_model()
    model.add_task_head("a", 1)
    model.add_task_head("b", 2)
    before = model.head_forward("b", group).data.copy()
    for p in model.heads["a"].parameters():
        p.data = p.data + 10.0
    after = model.head_forward("b", group).data
    assert np.array_equal(before, after)


def test_add_head_leaves_kb_untouched():
    model, group = make_model()
    export_before = {r: t.data.copy() for r, t in model.kb_forward(group).tensors.items()}
    model.add_task_head("t0", 1)
    export_after = model.kb_forward(group).tensors
    for r in export_before:
        assert np.array_equal(export_before[r], export_after[r].data)
    with pytest.raises(ModelError, match="duplicate"):
        model.add_task_head("t0", 1)


def test_head_isolation_and_kb_coupling_gradients():
    model, group = make_model()
    model.add_task_head("a", 1)
    model.add_task_head("b", 1)
    labels = np.zeros(5)
    labels[0] = 1.0
    loss = ad.bce_loss(ad.sigmoid(ad.scale(model.head_forward("a", group), 1.0)), labels)
    grads = ad.backward(loss)
    for p in model.heads["b"].parameters():
        assert p not in grads  # head b is outside the loss graph entirely
    kb_grads = [np.abs(grads[p]).sum() for p in model.kb.parameters() if p in grads]
    assert sum(kb_grads) > 0


def test_reinitialize_determinism():
    m1, group = make_model(seed=11)
    m2, _ = make_model(seed=11)
    for p, q in zip(m1.parameters(), m2.parameters()):
        assert np.array_equal(p.data, q.data)
    m3, _ = make_model(seed=12)
    assert any(
        not np.array_equal(p.data, q.data)
        for p, q in zip(m1.parameters(), m3.parameters())
    )
    m1.reinitialize(11)
    for p, q in zip(m1.parameters(), m2.parameters()):
        assert np.array_equal(p.data, q.data)


def test_initial_outputs_stay_in_open_interval():
    group = random_graph_group(8, 33)
    worst_lo, worst_hi = 1.0, 0.0
    for seed in range(100):
        model = LifelongModel((0, 1, 1, 0), seed=seed, kb_depth=4)
        model.add_task_head("t", 1)
        pred = model.head_forward("t", group).data
        worst_lo = min(worst_lo, pred.min())
        worst_hi = max(worst_hi, pred.max())
    assert worst_lo > 0.01 and worst_hi < 0.99


def test_object_count_generalization():
    model, _ = make_model()
    model.add_task_head("t", 1)
    for n in (4, 9):
        pred = model.head_forward("t", random_graph_group(n, 50 + n))
        assert pred.shape == (n,)


def test_save_load_roundtrip(tmp_path):
    model, group = make_model(seed=77)
    model.add_task_head("plus", 3)
    model.add_task_head("root", 1)
    stem = str(tmp_path / "model")
    save_model(stem, model)
    loaded = load_model(stem)
    assert loaded.heads.keys() == model.heads.keys()
    for name, p in model.named_parameters().items():
        assert np.array_equal(loaded.named_parameters()[name].data, p.data)
    assert np.array_equal(
        loaded.head_forward("root", group).data, model.head_forward("root", group).data
    )


def test_concat_groups_counts():
    g = random_graph_group(4, 1)
    both = concat_groups(g, g)
    assert both.channel_counts() == (0, 2, 2, 0)
