"""Sequential lifelong training over a domain's four targets.

The lifelong mode keeps one knowledge base across the whole task sequence
and adds a fresh head per task; the individual baseline trains a fresh
model per task.  Experience replay mixes the full stored datasets of all
previous tasks into the loss at weight 1/t.  Every source of randomness is
derived from (run seed, named stream, task index), so runs with equal
seeds produce bit-identical metrics, and the first task of a lifelong run
is bit-identical to its individual counterpart.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .logic import ValuationGroup
from .nlm import LifelongModel, stack_groups
from .tasks import TARGET_ARITIES, DomainSpec, make_dataset

STREAM_DATA = 10
STREAM_INIT_KB = 11
STREAM_INIT_HEAD = 12
STREAM_TRAIN = 13
STREAM_EVAL = 14

METRICS_HEADER = (
    "seed,domain,mode,replay,training_task,task,epoch,split,loss,accuracy"
)


class TrainingError(Exception):
    pass


def derive_seed(*key: int) -> int:
    return int(np.random.SeedSequence(list(key)).generate_state(1)[0])


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "lifelong"
    replay: bool = False
    epochs_per_task: int = 50
    batch_size: int = 4
    learning_rate: float = 0.001
    seeds: tuple[int, ...] = (0, 1, 2, 3)
    eval_every: int = 1
    n_train: int = 16
    n_test: int = 4
    kb_depth: int = 4
    kb_breadth: tuple[int, int, int, int] = (8, 8, 8, 8)
    head_breadth: tuple[int, int, int, int] = (8, 8, 8, 8)
    include_base_in_head: bool = True
    pos_weight_cap: float = 20.0

    def __post_init__(self):
        if self.mode not in ("lifelong", "individual"):
            raise TrainingError(f"unknown mode {self.mode!r}")
        if self.replay and self.mode != "lifelong":
            raise TrainingError("replay is only valid in lifelong mode")


@dataclass(frozen=True)
class MetricsRow:
    seed: int
    domain: str
    mode: str
    replay: str
    training_task: int
    task: int
    epoch: int
    split: str
    loss: float
    accuracy: float

    def key(self):
        return (self.seed, self.domain, self.mode, self.replay,
                self.training_task, self.task, self.epoch, self.split)


class MetricsLog:
    """Append-only records with a uniqueness guarantee on the row key."""

    def __init__(self):
        self.rows: list[MetricsRow] = []
        self._keys: set = set()

    def add(self, row: MetricsRow):
        if row.key() in self._keys:
            raise TrainingError(f"duplicate metrics row {row.key()}")
        self._keys.add(row.key())
        self.rows.append(row)

    def extend(self, other: "MetricsLog"):
        for row in other.rows:
            self.add(row)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(METRICS_HEADER + "\n")
        for row in sorted(self.rows, key=MetricsRow.key):
            out.write(
                f"{row.seed},{row.domain},{row.mode},{row.replay},"
                f"{row.training_task},{row.task},{row.epoch},{row.split},"
                f"{row.loss!r},{row.accuracy!r}\n"
            )
        return out.getvalue()

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv())

    @classmethod
    def load(cls, path) -> "MetricsLog":
        log = cls()
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if ",".join(header) != METRICS_HEADER:
                raise TrainingError(f"unexpected metrics header {header}")
            for rec in reader:
                log.add(MetricsRow(
                    seed=int(rec[0]), domain=rec[1], mode=rec[2], replay=rec[3],
                    training_task=int(rec[4]), task=int(rec[5]), epoch=int(rec[6]),
                    split=rec[7], loss=float(rec[8]), accuracy=float(rec[9]),
                ))
        return log


@dataclass
class PreparedData:
    """Stacked inputs and labels for one domain dataset; all targets share
    the same worlds, so one knowledge-base forward serves every task."""

    spec: DomainSpec
    train_group: ValuationGroup
    test_group: ValuationGroup
    train_labels: dict[str, np.ndarray]
    test_labels: dict[str, np.ndarray]
    pos_weight: dict[str, float]
    train_instances: list = field(repr=False, default_factory=list)
    test_instances: list = field(repr=False, default_factory=list)


def prepare_data(spec: DomainSpec, cfg: TrainConfig, data_seed: int) -> PreparedData:
    train, test = make_dataset(spec, cfg.n_train, cfg.n_test, data_seed)
    train_group = stack_groups([inst.input_group for inst in train])
    test_group = stack_groups([inst.input_group for inst in test])
    train_labels, test_labels, pos_weight = {}, {}, {}
    for target in spec.targets:
        train_labels[target] = np.stack([inst.labels[target] for inst in train])
        test_labels[target] = np.stack([inst.labels[target] for inst in test])
        pos = train_labels[target].sum()
        neg = train_labels[target].size - pos
        pos_weight[target] = float(min(neg / pos, cfg.pos_weight_cap))
    return PreparedData(spec, train_group, test_group, train_labels, test_labels,
                        pos_weight, train, test)


def group_take(group: ValuationGroup, idx) -> ValuationGroup:
    """Select worlds from a stacked group along the batch axis."""
    tensors = {r: Tensor(t.data[idx]) for r, t in group.tensors.items()}
    return ValuationGroup(group.universe, tensors, batch_axes=1)


def task_loss(model: LifelongModel, target: str, group, labels, pos_weight) -> Tensor:
    pred = model.head_forward(target, group)
    return ad.bce_loss(pred, labels, pos_weight=pos_weight)


def replay_mix(model, current_loss: Tensor, data: PreparedData, previous: list[str]):
    """current loss + (1/t) * sum of previous tasks' full-dataset losses."""
    if not previous:
        return current_loss
    export = model.kb_forward(data.train_group)
    total = None
    for target in previous:
        head = model.heads[target]
        out = head.output_group(
            export, data.train_group, only_arities={head.target_arity}
        )
        pred = ad.select_channel(out.tensors[head.target_arity], 0)
        loss = ad.bce_loss(pred, data.train_labels[target], data.pos_weight[target])
        total = loss if total is None else ad.add(total, loss)
    return ad.add(current_loss, ad.scale(total, 1.0 / len(previous)))


def _loss_and_accuracy(pred: np.ndarray, labels: np.ndarray, pos_weight: float):
    lo, hi = ad.PREDICTION_CLAMP, 1.0 - ad.PREDICTION_CLAMP
    p = np.clip(pred, lo, hi)
    loss = -(pos_weight * labels * np.log(p) + (1 - labels) * np.log(1 - p)).mean()
    accuracy = ((pred > 0.5) == (labels > 0.5)).mean()
    return float(loss), float(accuracy)


def evaluate_all(model, data: PreparedData, registered: list[str], split: str = "test"):
    """Loss and accuracy per registered task; mutates nothing."""
    group = data.test_group if split == "test" else data.train_group
    labels = data.test_labels if split == "test" else data.train_labels
    results = {}
    with ad.no_grad():
        export = model.kb_forward(group)
        for target in registered:
            head = model.heads[target]
            out = head.output_group(export, group, only_arities={head.target_arity})
            pred = out.tensors[head.target_arity]
            results[target] = _loss_and_accuracy(
                pred.data[..., 0], labels[target], data.pos_weight[target]
            )
    return results


def evaluate_on_instances(model, instances) -> dict[str, tuple[float, float]]:
    """Loss (unweighted) and accuracy per model head on an instance list;
    used by the eval subcommand on saved checkpoints."""
    group = stack_groups([inst.input_group for inst in instances])
    results = {}
    with ad.no_grad():
        export = model.kb_forward(group)
        for target, head in model.heads.items():
            if target not in instances[0].labels:
                continue
            labels = np.stack([inst.labels[target] for inst in instances])
            out = head.output_group(export, group, only_arities={head.target_arity})
            pred = out.tensors[head.target_arity].data[..., 0]
            results[target] = _loss_and_accuracy(pred, labels, pos_weight=1.0)
    return results


def train_task(model, task_index: int, data: PreparedData, cfg: TrainConfig,
               seed: int, domain: str, log: MetricsLog):
    """Train the (freshly added) head for task ``task_index`` jointly with
    the shared knowledge base; earlier heads only receive gradients when
    replay is on."""
    targets = data.spec.targets
    target = targets[task_index]
    previous = [t for t in targets[:task_index] if t in model.heads]
    if data.train_labels[target].shape[0] == 0:
        raise TrainingError("empty training set")
    candidates = model.kb.parameters() + model.heads[target].parameters()
    if cfg.replay:
        for t in previous:
            candidates += model.heads[t].parameters()
    optimizer = None
    rng = np.random.default_rng(
        np.random.PCG64(np.random.SeedSequence([seed, STREAM_TRAIN, task_index]))
    )
    n_train = data.train_labels[target].shape[0]
    registered = [t for t in targets if t in model.heads]
    replay_flag = "on" if cfg.replay else "off"
    for epoch in range(cfg.epochs_per_task):
        order = rng.permutation(n_train)
        step_losses, step_accuracies = [], []
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = group_take(data.train_group, idx)
            batch_labels = data.train_labels[target][idx]
            pred = model.head_forward(target, batch)
            loss = ad.bce_loss(pred, batch_labels, pos_weight=data.pos_weight[target])
            step_losses.append(loss.item())
            step_accuracies.append(
                float(((pred.data > 0.5) == (batch_labels > 0.5)).mean())
            )
            if cfg.replay and previous:
                loss = replay_mix(model, loss, data, previous)
            grads = ad.backward(loss)
            if optimizer is None:
                # parameters outside this task's loss graph (e.g. the last
                # layer's top-arity map when no head needs it) stay frozen
                optimizer = ad.Adam(
                    [p for p in candidates if p in grads],
                    learning_rate=cfg.learning_rate,
                )
            optimizer.step(grads)
        record_epoch = (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs_per_task - 1
        if not record_epoch:
            continue
        log.add(MetricsRow(seed, domain, cfg.mode, replay_flag, task_index,
                           task_index, epoch, "train",
                           float(np.mean(step_losses)), float(np.mean(step_accuracies))))
        test_eval = evaluate_all(model, data, registered, split="test")
        for k, t in enumerate(targets):
            if t in test_eval:
                log.add(MetricsRow(seed, domain, cfg.mode, replay_flag, task_index,
                                   k, epoch, "test", *test_eval[t]))
    return log


def run_single_seed(spec: DomainSpec, cfg: TrainConfig, seed: int):
    """Tasks in curriculum order for one seed; the unit of process-level
    parallelism.  Returns (MetricsLog, {checkpoint key -> model})."""
    log = MetricsLog()
    models = {}
    data = prepare_data(spec, cfg, derive_seed(seed, STREAM_DATA))
    if cfg.mode == "lifelong":
        model = LifelongModel(
            spec.base_counts, seed=derive_seed(seed, STREAM_INIT_KB, 0),
            kb_depth=cfg.kb_depth, kb_breadth=cfg.kb_breadth,
            head_breadth=cfg.head_breadth,
            include_base_in_head=cfg.include_base_in_head,
        )
        for t, target in enumerate(spec.targets):
            model.add_task_head(
                target, TARGET_ARITIES[target],
                seed=derive_seed(seed, STREAM_INIT_HEAD, t),
            )
            train_task(model, t, data, cfg, seed, spec.domain, log)
        models[f"seed{seed}"] = model
    else:
        for t, target in enumerate(spec.targets):
            model = LifelongModel(
                spec.base_counts, seed=derive_seed(seed, STREAM_INIT_KB, t),
                kb_depth=cfg.kb_depth, kb_breadth=cfg.kb_breadth,
                head_breadth=cfg.head_breadth,
                include_base_in_head=cfg.include_base_in_head,
            )
            model.add_task_head(
                target, TARGET_ARITIES[target],
                seed=derive_seed(seed, STREAM_INIT_HEAD, t),
            )
            train_task(model, t, data, cfg, seed, spec.domain, log)
            models[f"seed{seed}_task{t}"] = model
    return log, models


def run_sequence(spec: DomainSpec, cfg: TrainConfig, workers: int = 1):
    """Full experiment for one domain.  Seeds share no state, so with
    workers > 1 they run in parallel processes; row order in the merged log
    is normalised by MetricsLog sorting either way."""
    log = MetricsLog()
    models = {}
    if workers > 1 and len(cfg.seeds) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(run_single_seed, spec, cfg, seed) for seed in cfg.seeds
            ]
            for future in futures:
                seed_log, seed_models = future.result()
                log.extend(seed_log)
                models.update(seed_models)
    else:
        for seed in cfg.seeds:
            seed_log, seed_models = run_single_seed(spec, cfg, seed)
            log.extend(seed_log)
            models.update(seed_models)
    return log, models


# ---------------------------------------------------------------------------
# transfer and forgetting metrics


def _curve(log: MetricsLog, **filters) -> list[tuple[int, int, float]]:
    """(training_task, epoch, loss) triples of test rows matching filters."""
    rows = [
        r for r in log.rows
        if r.split == "test"
        and all(getattr(r, k) == v for k, v in filters.items())
    ]
    return sorted((r.training_task, r.epoch, r.loss) for r in rows)


def area_under_curve(values: list[float]) -> float:
    if len(values) < 2:
        return float(values[0]) if values else 0.0
    return float(values[0] + values[-1]) / 2.0 + float(sum(values[1:-1]))


def transfer_metrics(log: MetricsLog) -> list[dict]:
    """Forward transfer, forgetting, and backward transfer per
    (domain, seed, task), plus seed-mean rows (seed = -1).

    forward_transfer: individual minus lifelong AUC of the task's test-loss
    curve during its own training (positive favours lifelong).
    forgetting: worst later-phase rise above the task's best own-phase loss
    (clamped at zero).  backward_transfer: end-of-phase loss minus the best
    loss seen during later phases (positive = later tasks helped).
    """
    out = []
    domains = sorted({r.domain for r in log.rows})
    seeds = sorted({r.seed for r in log.rows})
    tasks = sorted({r.task for r in log.rows})
    for domain in domains:
        per_task_rows: dict[int, list[dict]] = {t: [] for t in tasks}
        for seed in seeds:
            for task in tasks:
                own_ll = _curve(log, domain=domain, seed=seed, task=task,
                                mode="lifelong", replay="off", training_task=task)
                own_ind = _curve(log, domain=domain, seed=seed, task=task,
                                 mode="individual", replay="off", training_task=task)
                entry = {"domain": domain, "seed": seed, "task": task,
                         "forward_transfer": None, "forgetting": None,
                         "backward_transfer": None}
                if own_ll and own_ind:
                    entry["forward_transfer"] = area_under_curve(
                        [l for _, _, l in own_ind]
                    ) - area_under_curve([l for _, _, l in own_ll])
                later = [
                    l for tt, _, l in _curve(log, domain=domain, seed=seed,
                                             task=task, mode="lifelong",
                                             replay="off")
                    if tt > task
                ]
                if own_ll:
                    own_losses = [l for _, _, l in own_ll]
                    if later:
                        entry["forgetting"] = max(0.0, max(later) - min(own_losses))
                        entry["backward_transfer"] = own_losses[-1] - min(later)
                    else:
                        entry["forgetting"] = 0.0
                if any(v is not None for k, v in entry.items()
                       if k not in ("domain", "seed", "task")):
                    out.append(entry)
                    per_task_rows[task].append(entry)
        for task in tasks:
            group = per_task_rows[task]
            if not group:
                continue
            mean_entry = {"domain": domain, "seed": -1, "task": task}
            for key in ("forward_transfer", "forgetting", "backward_transfer"):
                vals = [e[key] for e in group if e[key] is not None]
                mean_entry[key] = float(np.mean(vals)) if vals else None
            out.append(mean_entry)
    return out
