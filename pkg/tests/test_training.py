import numpy as np
import pytest

from lifelong_nlm import autodiff as ad
from lifelong_nlm.nlm import LifelongModel
from lifelong_nlm.tasks import TARGET_ARITIES, domain_spec
from lifelong_nlm.training import (
    STREAM_DATA,
    STREAM_INIT_HEAD,
    STREAM_INIT_KB,
    MetricsLog,
    MetricsRow,
    TrainConfig,
    TrainingError,
    derive_seed,
    evaluate_all,
    prepare_data,
    replay_mix,
    run_sequence,
    task_loss,
    train_task,
    transfer_metrics,
)

TINY = dict(epochs_per_task=2, batch_size=2, n_train=4, n_test=2, kb_depth=2,
            kb_breadth=(4, 4, 4, 4), head_breadth=(4, 4, 4, 4))


def tiny_cfg(**kw):
    return TrainConfig(**{**TINY, **kw})


def graph_setup(cfg, seed=0):
    spec = domain_spec("graph")
    data = prepare_data(spec, cfg, derive_seed(seed, STREAM_DATA))
    model = LifelongModel(
        spec.base_counts, seed=derive_seed(seed, STREAM_INIT_KB, 0),
        kb_depth=cfg.kb_depth, kb_breadth=cfg.kb_breadth,
        head_breadth=cfg.head_breadth,
    )
    return spec, data, model


def test_config_validation():
    with pytest.raises(TrainingError):
        TrainConfig(mode="individual", replay=True)
    with pytest.raises(TrainingError):
        TrainConfig(mode="both")


def test_metrics_log_uniqueness_and_roundtrip(tmp_path):
    log = MetricsLog()
    row = MetricsRow(0, "graph", "lifelong", "off", 0, 0, 0, "test", 0.5, 0.75)
    log.add(row)
    with pytest.raises(TrainingError, match="duplicate"):
        log.add(row)
    log.add(MetricsRow(0, "graph", "lifelong", "off", 0, 0, 0, "train", 0.25, 1.0))
    path = tmp_path / "metrics.csv"
    log.save(path)
    text = path.read_text()
    assert text.splitlines()[0] == (
        "seed,domain,mode,replay,training_task,task,epoch,split,loss,accuracy"
    )
    assert "\r" not in text
    loaded = MetricsLog.load(path)
    assert sorted(r.key() for r in loaded.rows) == sorted(r.key() for r in log.rows)
    assert loaded.to_csv() == log.to_csv()


def test_one_epoch_decreases_training_loss():
    cfg = tiny_cfg(epochs_per_task=1, batch_size=1, n_train=1, n_test=1)
    spec, data, model = graph_setup(cfg)
    model.add_task_head("AdjacentToRed", 1, seed=derive_seed(0, STREAM_INIT_HEAD, 0))
    before = evaluate_all(model, data, ["AdjacentToRed"], split="train")
    log = MetricsLog()
    train_task(model, 0, data, cfg, 0, "graph", log)
    after = evaluate_all(model, data, ["AdjacentToRed"], split="train")
    assert after["AdjacentToRed"][0] < before["AdjacentToRed"][0]


def test_empty_training_set_rejected():
    cfg = tiny_cfg()
    spec, data, model = graph_setup(cfg)
    model.add_task_head("AdjacentToRed", 1)
    data.train_labels["AdjacentToRed"] = data.train_labels["AdjacentToRed"][:0]
    with pytest.raises(TrainingError, match="empty"):
        train_task(model, 0, data, cfg, 0, "graph", MetricsLog())


def test_task0_bit_identical_across_modes():
    spec = domain_spec("graph")
    logs = {}
    for mode in ("lifelong", "individual"):
        cfg = tiny_cfg(mode=mode, seeds=(3,), epochs_per_task=3)
        log, _ = run_sequence(spec, cfg)
        logs[mode] = [
            (r.task, r.epoch, r.split, r.loss, r.accuracy)
            for r in sorted(log.rows, key=MetricsRow.key)
            if r.training_task == 0
        ]
    assert logs["lifelong"] == logs["individual"]


def test_previous_heads_untouched_without_replay():
    cfg = tiny_cfg()
    spec, data, model = graph_setup(cfg)
    model.add_task_head("AdjacentToRed", 1)
    train_task(model, 0, data, cfg, 0, "graph", MetricsLog())
    snapshot = [p.data.copy() for p in model.heads["AdjacentToRed"].parameters()]
    kb_snapshot = [p.data.copy() for p in model.kb.parameters()]
    model.add_task_head("ExactConnectivity2", 2)
    train_task(model, 1, data, cfg, 0, "graph", MetricsLog())
    for before, p in zip(snapshot, model.heads["AdjacentToRed"].parameters()):
        assert np.array_equal(before, p.data)
    assert any(
        not np.array_equal(before, p.data)
        for before, p in zip(kb_snapshot, model.kb.parameters())
    )


def test_replay_updates_previous_heads():
    cfg = tiny_cfg(replay=True)
    spec, data, model = graph_setup(cfg)
    model.add_task_head("AdjacentToRed", 1)
    train_task(model, 0, data, cfg, 0, "graph", MetricsLog())
    snapshot = [p.data.copy() for p in model.heads["AdjacentToRed"].parameters()]
    model.add_task_head("ExactConnectivity2", 2)
    train_task(model, 1, data, cfg, 0, "graph", MetricsLog())
    assert any(
        not np.array_equal(before, p.data)
        for before, p in zip(snapshot, model.heads["AdjacentToRed"].parameters())
    )


def test_replay_mix_composition():
    cfg = tiny_cfg()
    spec, data, model = graph_setup(cfg)
    model.add_task_head("AdjacentToRed", 1)
    batch_labels = data.train_labels["AdjacentToRed"]
    loss = task_loss(model, "AdjacentToRed", data.train_group, batch_labels,
                     data.pos_weight["AdjacentToRed"])
    assert replay_mix(model, loss, data, []) is loss
    model.add_task_head("ExactConnectivity2", 2)
    loss2 = task_loss(model, "ExactConnectivity2", data.train_group,
                      data.train_labels["ExactConnectivity2"],
                      data.pos_weight["ExactConnectivity2"])
    composite = replay_mix(model, loss2, data, ["AdjacentToRed"])
    grads = ad.backward(composite)
    head0 = model.heads["AdjacentToRed"].parameters()
    assert any(p in grads and np.abs(grads[p]).sum() > 0 for p in head0)
    # with zero previous loss the composite reduces to the current loss
    assert composite.item() == pytest.approx(loss2.item() + loss.item(), rel=1e-9)


def test_evaluation_is_side_effect_free():
    cfg = tiny_cfg()
    spec, data, model = graph_setup(cfg)
    model.add_task_head("AdjacentToRed", 1)
    before = [p.data.copy() for p in model.parameters()]
    evaluate_all(model, data, ["AdjacentToRed"])
    for snap, p in zip(before, model.parameters()):
        assert np.array_equal(snap, p.data)


def test_untrained_accuracy_is_uninformative():
    cfg = tiny_cfg()
    spec, data, model = graph_setup(cfg)
    model.add_task_head("AdjacentToRed", 1)
    _, accuracy = evaluate_all(model, data, ["AdjacentToRed"])["AdjacentToRed"]
    majority = max(
        data.test_labels["AdjacentToRed"].mean(),
        1 - data.test_labels["AdjacentToRed"].mean(),
    )
    assert accuracy <= majority + 0.05
    assert accuracy >= 0.1


def test_run_sequence_deterministic():
    spec = domain_spec("graph")
    cfg = tiny_cfg(seeds=(0,), epochs_per_task=2)
    log1, _ = run_sequence(spec, cfg)
    log2, _ = run_sequence(spec, cfg)
    assert log1.to_csv() == log2.to_csv()


def test_parallel_workers_match_serial():
    spec = domain_spec("graph")
    cfg = tiny_cfg(seeds=(0, 1), epochs_per_task=2)
    serial, _ = run_sequence(spec, cfg, workers=1)
    parallel, _ = run_sequence(spec, cfg, workers=2)
    assert serial.to_csv() == parallel.to_csv()


def test_individual_mode_trains_distinct_knowledge_bases():
    spec = domain_spec("graph")
    cfg = tiny_cfg(mode="individual", seeds=(0,), epochs_per_task=2)
    _, models = run_sequence(spec, cfg)
    kb0 = [p.data for p in models["seed0_task0"].kb.parameters()]
    kb1 = [p.data for p in models["seed0_task1"].kb.parameters()]
    assert any(not np.array_equal(a, b) for a, b in zip(kb0, kb1))


# ---------------------------------------------------------------------------
# transfer metrics on synthetic logs


def synthetic_log(lifelong_curves, individual_curves=None, domain="graph"):
    """curves: {task: {training_task: [losses]}} per mode."""
    log = MetricsLog()
    for mode, curves in (("lifelong", lifelong_curves),
                         ("individual", individual_curves or {})):
        for task, phases in curves.items():
            for training_task, losses in phases.items():
                for epoch, loss in enumerate(losses):
                    log.add(MetricsRow(0, domain, mode, "off", training_task,
                                       task, epoch, "test", loss, 0.5))
    return log


def test_transfer_metrics_identical_curves_give_zero_forward():
    curves = {0: {0: [1.0, 0.5, 0.2]}}
    log = synthetic_log(curves, curves)
    entry = [e for e in transfer_metrics(log) if e["seed"] == 0 and e["task"] == 0][0]
    assert entry["forward_transfer"] == 0.0


def test_transfer_metrics_forgetting_zero_when_non_increasing():
    log = synthetic_log({0: {0: [1.0, 0.4], 1: [0.4, 0.4]}})
    entry = [e for e in transfer_metrics(log) if e["seed"] == 0 and e["task"] == 0][0]
    assert entry["forgetting"] == 0.0
    assert entry["backward_transfer"] == 0.0


def test_transfer_metrics_backward_transfer_positive_when_loss_drops():
    log = synthetic_log({0: {0: [1.0, 0.4], 1: [0.3, 0.1]}})
    entry = [e for e in transfer_metrics(log) if e["seed"] == 0 and e["task"] == 0][0]
    assert entry["backward_transfer"] == pytest.approx(0.3)
    assert entry["forgetting"] == 0.0


def test_transfer_metrics_detects_rise():
    log = synthetic_log({0: {0: [1.0, 0.4], 1: [0.9, 1.2]}})
    entry = [e for e in transfer_metrics(log) if e["seed"] == 0 and e["task"] == 0][0]
    assert entry["forgetting"] == pytest.approx(0.8)
