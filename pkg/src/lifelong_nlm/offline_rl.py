"""Offline actor-critic training of neural logic policies on BlocksWorld.

The critic learns an expected-SARSA target against a Polyak-averaged
target copy of the critic (and of the knowledge base it reads); the actor
is a tanh-activated head whose temperature softmax over the masked ground
actions maximises expected Q, updated once every 1/copy-rate critic
steps.  Lifelong mode shares one knowledge base across the five
goal-configuration tasks with fresh actor/critic heads per task;
individual mode trains fresh models from the same buffers.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .logic import ValuationGroup
from .nlm import KnowledgeBase, NlmLayer, concat_groups, make_rng
from .blocksworld import (
    BASE_COUNTS,
    DEFAULT_MAX_STEPS,
    BlocksState,
    GoalSpec,
    Transition,
    action_space,
    encode_state,
    is_valid,
    sample_goal,
    sample_initial_state,
    step,
    valid_action_mask,
)

RL_METRICS_HEADER = "seed,mode,training_task,task,grad_step,mean_steps,success_rate"

# seed sub-stream tags (distinct from the supervised trainer's)
S_RL_KB = 20
S_RL_ACTOR = 21
S_RL_CRITIC = 22
S_RL_TRAIN = 23
S_RL_EVAL = 24


class RlError(Exception):
    pass


@dataclass(frozen=True)
class RlConfig:
    n_blocks: int = 3
    n_tasks: int = 5
    actor_lr: float = 0.003
    critic_lr: float = 0.003
    tau: float = 0.05
    actor_period: int = 20  # one actor update per ceil(1/tau) critic steps
    temperature: float = 1.5
    gamma: float = 0.99
    batch_size: int = 32
    grad_steps: int = 10000
    actor_warmup: int = 1500  # tanh logits saturate almost irreversibly, so
    # the actor must not commit while the critic's Q ordering is transient
    eval_every: int = 1000
    eval_episodes: int = 10
    max_steps: int = DEFAULT_MAX_STEPS
    kb_depth: int = 4
    kb_breadth: tuple[int, int, int, int] = (4, 4, 4, 4)
    head_breadth: tuple[int, int, int, int] = (8, 8, 8, 8)
    seeds: tuple[int, ...] = (0, 1, 2, 3)

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise RlError("tau must be in (0, 1]")
        if self.temperature <= 0:
            raise RlError("temperature must be positive")


def head_layer(kind: str, task: int, in_counts, breadth, seed: int) -> NlmLayer:
    activation = "tanh" if kind == "actor" else "linear"
    return NlmLayer(in_counts, breadth, make_rng(seed), activation=activation,
                    name=f"{kind}.{task}")


class RlModel:
    """Shared knowledge base, per-task actor and critic heads, and lagged
    target copies of the critic path."""

    def __init__(self, cfg: RlConfig, kb_seed: int):
        self.cfg = cfg
        self.kb = KnowledgeBase(BASE_COUNTS, cfg.kb_depth, cfg.kb_breadth,
                                make_rng(kb_seed, S_RL_KB))
        self.target_kb = KnowledgeBase(BASE_COUNTS, cfg.kb_depth, cfg.kb_breadth,
                                       make_rng(kb_seed, S_RL_KB))
        self.head_in = tuple(
            e + b for e, b in zip(self.kb.export_counts(), BASE_COUNTS)
        )
        self.actors: dict[int, NlmLayer] = {}
        self.critics: dict[int, NlmLayer] = {}
        self.target_critics: dict[int, NlmLayer] = {}
        self._sync_target_kb()

    def _sync_target_kb(self):
        for p, q in zip(self.kb.parameters(), self.target_kb.parameters()):
            q.data = p.data.copy()

    def add_task(self, task: int, actor_seed: int, critic_seed: int):
        if task in self.actors:
            raise RlError(f"duplicate task {task}")
        cfg = self.cfg
        self.actors[task] = head_layer("actor", task, self.head_in,
                                       cfg.head_breadth, actor_seed)
        self.critics[task] = head_layer("critic", task, self.head_in,
                                        cfg.head_breadth, critic_seed)
        self.target_critics[task] = head_layer("critic", task, self.head_in,
                                               cfg.head_breadth, critic_seed)
        self._sync_target_kb()

    def head_output(self, head: NlmLayer, kb: KnowledgeBase, base: ValuationGroup):
        export = kb.forward(base)
        return head.forward(concat_groups(export, base), only_arities={1, 2})


def gather_action_values(group: ValuationGroup, n: int) -> Tensor:
    """[batch, 2n^2+2n] in action-index order from arity-1 channels 0/1
    (PickUp, PutDown) and arity-2 channels 0/1 (Stack, Unstack)."""
    a1, a2 = group.tensors[1], group.tensors[2]
    batch = a1.shape[0]
    pick = ad.select_channel(a1, 0)
    put = ad.select_channel(a1, 1)
    stack = ad.reshape(ad.select_channel(a2, 0), (batch, n * n))
    unstack = ad.reshape(ad.select_channel(a2, 1), (batch, n * n))
    return ad.concat([pick, put, stack, unstack], axis=1)


class EncodingCache:
    """Per-(state, goal) input arrays and per-state valid-action masks."""

    def __init__(self, n: int):
        self.n = n
        self._groups: dict = {}
        self._masks: dict = {}

    def arrays(self, state: BlocksState, goal: GoalSpec):
        key = (state.support, goal.key())
        if key not in self._groups:
            group = encode_state(state, goal)
            self._groups[key] = {r: t.data for r, t in group.tensors.items()}
        return self._groups[key]

    def mask(self, state: BlocksState) -> np.ndarray:
        if state.support not in self._masks:
            self._masks[state.support] = valid_action_mask(state)
        return self._masks[state.support]

    def stack_batch(self, pairs) -> ValuationGroup:
        from .logic import single_type_universe

        arrays = [self.arrays(s, g) for s, g in pairs]
        tensors = {
            r: Tensor(np.stack([a[r] for a in arrays]))
            for r in arrays[0]
        }
        return ValuationGroup(single_type_universe("Block", self.n), tensors,
                              batch_axes=1)


def policy_distribution(model: RlModel, task: int, base: ValuationGroup,
                        masks: np.ndarray) -> Tensor:
    """Temperature softmax over tanh actor logits; invalid actions get
    exactly zero probability."""
    out = model.head_output(model.actors[task], model.kb, base)
    logits = gather_action_values(out, model.cfg.n_blocks)
    return ad.masked_softmax(logits, masks, temperature=model.cfg.temperature)


def critic_values(model: RlModel, task: int, base: ValuationGroup,
                  target: bool = False) -> Tensor:
    kb = model.target_kb if target else model.kb
    head = model.target_critics[task] if target else model.critics[task]
    out = model.head_output(head, kb, base)
    return gather_action_values(out, model.cfg.n_blocks)


@dataclass
class Batch:
    states: ValuationGroup
    next_states: ValuationGroup
    actions_onehot: np.ndarray
    masks: np.ndarray
    next_masks: np.ndarray
    rewards: np.ndarray
    done: np.ndarray


def assemble_batch(transitions: list[Transition], cache: EncodingCache,
                   n: int) -> Batch:
    from .blocksworld import action_index

    a_count = 2 * n * n + 2 * n
    onehot = np.zeros((len(transitions), a_count))
    for i, t in enumerate(transitions):
        onehot[i, action_index(t.action, n)] = 1.0
    return Batch(
        states=cache.stack_batch([(t.state, t.goal) for t in transitions]),
        next_states=cache.stack_batch([(t.next_state, t.goal) for t in transitions]),
        actions_onehot=onehot,
        masks=np.stack([cache.mask(t.state) for t in transitions]),
        next_masks=np.stack([cache.mask(t.next_state) for t in transitions]),
        rewards=np.array([t.reward for t in transitions]),
        done=np.array([float(t.done) for t in transitions]),
    )


class BufferTensors:
    """Whole-buffer encodings stacked once; batches are row selections."""

    def __init__(self, transitions: list[Transition], cache: EncodingCache, n: int):
        from .logic import single_type_universe

        self.universe = single_type_universe("Block", n)
        full = assemble_batch(transitions, cache, n)
        self.state_arrays = {r: t.data for r, t in full.states.tensors.items()}
        self.next_arrays = {r: t.data for r, t in full.next_states.tensors.items()}
        self.actions_onehot = full.actions_onehot
        self.masks = full.masks
        self.next_masks = full.next_masks
        self.rewards = full.rewards
        self.done = full.done

    def batch(self, idx: np.ndarray) -> Batch:
        states = ValuationGroup(
            self.universe,
            {r: Tensor(a[idx]) for r, a in self.state_arrays.items()},
            batch_axes=1,
        )
        next_states = ValuationGroup(
            self.universe,
            {r: Tensor(a[idx]) for r, a in self.next_arrays.items()},
            batch_axes=1,
        )
        return Batch(
            states=states,
            next_states=next_states,
            actions_onehot=self.actions_onehot[idx],
            masks=self.masks[idx],
            next_masks=self.next_masks[idx],
            rewards=self.rewards[idx],
            done=self.done[idx],
        )


def critic_loss(model: RlModel, task: int, batch: Batch) -> Tensor:
    """Expected-SARSA TD error: y = r + gamma*(1-done)*sum_a pi(a|s')
    Q_target(s',a); squared error at the taken action.  The whole target
    side is computed without gradients, with the actor head read over the
    lagged knowledge base so one target forward serves both pi and Q."""
    cfg = model.cfg
    if batch.rewards.size == 0:
        raise RlError("empty batch")
    n = cfg.n_blocks
    with ad.no_grad():
        export = model.target_kb.forward(batch.next_states)
        inp = concat_groups(export, batch.next_states)
        logits = gather_action_values(
            model.actors[task].forward(inp, only_arities={1, 2}), n
        )
        probs = ad.masked_softmax(logits, batch.next_masks,
                                  temperature=cfg.temperature)
        q_next = gather_action_values(
            model.target_critics[task].forward(inp, only_arities={1, 2}), n
        )
        expected = (probs.data * q_next.data).sum(axis=1)
        y = batch.rewards + cfg.gamma * (1.0 - batch.done) * expected
    q = critic_values(model, task, batch.states)
    q_taken = ad.tsum(ad.mul(q, Tensor(batch.actions_onehot)), axis=1)
    delta = ad.sub(q_taken, Tensor(y))
    return ad.mean(ad.mul(delta, delta))


def actor_loss(model: RlModel, task: int, batch: Batch) -> Tensor:
    """Negated E_s[sum_a pi(a|s) Q(s,a)] with the critic frozen."""
    with ad.no_grad():
        q = critic_values(model, task, batch.states).data
    probs = policy_distribution(model, task, batch.states, batch.masks)
    expected_q = ad.tsum(ad.mul(probs, Tensor(q * batch.masks)), axis=1)
    return ad.scale(ad.mean(expected_q), -1.0)


def critic_td_step(model: RlModel, task: int, batch: Batch,
                   optimizer: ad.Adam) -> float:
    loss = critic_loss(model, task, batch)
    optimizer.step(ad.backward(loss))
    return loss.item()


def actor_step(model: RlModel, task: int, batch: Batch,
               optimizer: ad.Adam) -> float:
    loss = actor_loss(model, task, batch)
    optimizer.step(ad.backward(loss))
    return loss.item()


def polyak_update(source_params: list[Tensor], target_params: list[Tensor],
                  tau: float) -> None:
    """target <- (1 - tau) * target + tau * source, per parameter."""
    for src, dst in zip(source_params, target_params):
        if src.data.shape != dst.data.shape:
            raise RlError("parameter shape mismatch in polyak update")
        dst.data = (1.0 - tau) * dst.data + tau * src.data


def greedy_action_index(model: RlModel, task: int, state: BlocksState,
                        goal: GoalSpec, cache: EncodingCache) -> int:
    base = cache.stack_batch([(state, goal)])
    mask = cache.mask(state)
    with ad.no_grad():
        probs = policy_distribution(model, task, base, mask[None, :])
    return int(np.argmax(probs.data[0]))


def evaluate_policy(model: RlModel, task: int, episodes: int, seed: int,
                    cache: EncodingCache | None = None) -> tuple[float, float]:
    """Greedy rollouts with freshly sampled goals; parameters untouched.
    Returns (mean steps, success rate); failures count max_steps steps."""
    cfg = model.cfg
    cache = cache or EncodingCache(cfg.n_blocks)
    rng = make_rng(seed, S_RL_EVAL, task)
    space = action_space(cfg.n_blocks)
    steps_taken, successes = [], 0
    for _ in range(episodes):
        # start off-goal, matching the collection distribution
        goal = sample_goal(task, cfg.n_blocks, rng)
        state = sample_initial_state(cfg.n_blocks, rng, avoid_goal=goal)
        done = False
        for k in range(cfg.max_steps):
            idx = greedy_action_index(model, task, state, goal, cache)
            action = space[idx]
            assert is_valid(state, action), "masked action escaped the softmax"
            state, _, done = step(state, action, goal)
            if done:
                steps_taken.append(k + 1)
                successes += 1
                break
        if not done:
            steps_taken.append(cfg.max_steps)
    return float(np.mean(steps_taken)), successes / episodes


def train_rl_task(model: RlModel, task: int, buffer: list[Transition],
                  cfg: RlConfig, seed: int, mode: str, cache: EncodingCache,
                  rows: list) -> None:
    if not buffer:
        raise RlError(f"missing buffer for task {task}")
    rng = make_rng(seed, S_RL_TRAIN, task)
    critic_params = model.kb.parameters() + model.critics[task].parameters()
    actor_params = model.actors[task].parameters()
    critic_opt = actor_opt = None
    target_params = model.target_kb.parameters() + model.target_critics[task].parameters()
    source_params = model.kb.parameters() + model.critics[task].parameters()
    tensors = BufferTensors(buffer, cache, cfg.n_blocks)
    for g_step in range(1, cfg.grad_steps + 1):
        idx = rng.integers(len(buffer), size=cfg.batch_size)
        batch = tensors.batch(idx)
        if critic_opt is None:
            probe = ad.backward(critic_loss(model, task, batch))
            critic_opt = ad.Adam([p for p in critic_params if p in probe],
                                 learning_rate=cfg.critic_lr)
        critic_td_step(model, task, batch, critic_opt)
        polyak_update(source_params, target_params, cfg.tau)
        if g_step >= cfg.actor_warmup and g_step % cfg.actor_period == 0:
            if actor_opt is None:
                probe = ad.backward(actor_loss(model, task, batch))
                actor_opt = ad.Adam([p for p in actor_params if p in probe],
                                    learning_rate=cfg.actor_lr)
            actor_step(model, task, batch, actor_opt)
        if g_step % cfg.eval_every == 0 or g_step == cfg.grad_steps:
            mean_steps, success = evaluate_policy(
                model, task, cfg.eval_episodes, seed, cache
            )
            rows.append({
                "seed": seed, "mode": mode, "training_task": task, "task": task,
                "grad_step": g_step, "mean_steps": mean_steps,
                "success_rate": success,
            })


def run_rl_single_seed(cfg: RlConfig, buffers: dict[int, list[Transition]],
                       mode: str, seed: int):
    """The five-task sequence for one seed; the unit of process-level
    parallelism."""
    rows: list[dict] = []
    models = {}
    cache = EncodingCache(cfg.n_blocks)
    if mode == "lifelong":
        model = RlModel(cfg, kb_seed=derive_rl_seed(seed, 0))
        for t in range(cfg.n_tasks):
            model.add_task(t, actor_seed=derive_rl_seed(seed, 100 + t),
                           critic_seed=derive_rl_seed(seed, 200 + t))
            train_rl_task(model, t, buffers[t], cfg, seed, mode, cache, rows)
        models[f"seed{seed}"] = model
    else:
        for t in range(cfg.n_tasks):
            model = RlModel(cfg, kb_seed=derive_rl_seed(seed, t))
            model.add_task(t, actor_seed=derive_rl_seed(seed, 100 + t),
                           critic_seed=derive_rl_seed(seed, 200 + t))
            train_rl_task(model, t, buffers[t], cfg, seed, mode, cache, rows)
            models[f"seed{seed}_task{t}"] = model
    return rows, models


def run_rl_sequence(cfg: RlConfig, buffers: dict[int, list[Transition]],
                    mode: str, seeds: tuple[int, ...] | None = None,
                    workers: int = 1):
    """Train tasks 0..n_tasks-1 in order; lifelong shares the knowledge
    base, individual rebuilds the model per task.  Seeds are independent
    and may run in parallel processes.  Returns metric rows and the final
    models per seed."""
    if mode not in ("lifelong", "individual"):
        raise RlError(f"unknown mode {mode!r}")
    for t in range(cfg.n_tasks):
        if t not in buffers:
            raise RlError(f"missing buffer for task {t}")
    seed_list = tuple(seeds if seeds is not None else cfg.seeds)
    rows: list[dict] = []
    models = {}
    if workers > 1 and len(seed_list) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(run_rl_single_seed, cfg, buffers, mode, seed)
                for seed in seed_list
            ]
            for future in futures:
                seed_rows, seed_models = future.result()
                rows.extend(seed_rows)
                models.update(seed_models)
    else:
        for seed in seed_list:
            seed_rows, seed_models = run_rl_single_seed(cfg, buffers, mode, seed)
            rows.extend(seed_rows)
            models.update(seed_models)
    return rows, models


def derive_rl_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, S_RL_KB, k]).generate_state(1)[0])


def _rl_named_parameters(model: RlModel) -> dict[str, Tensor]:
    named = dict(model.kb.named_parameters())
    for task in model.actors:
        named.update(model.actors[task].named_parameters())
        named.update(model.critics[task].named_parameters())
    return named


def save_rl_model(stem: str, model: RlModel) -> None:
    cfg = model.cfg
    lines = [
        "format=1",
        "kind=rl",
        f"n_blocks={cfg.n_blocks}",
        f"kb.depth={cfg.kb_depth}",
        f"kb.breadth={','.join(map(str, cfg.kb_breadth))}",
        f"head.breadth={','.join(map(str, cfg.head_breadth))}",
        f"temperature={cfg.temperature!r}",
        f"tasks={','.join(str(t) for t in model.actors)}",
    ]
    with open(f"{stem}.arch", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    ad.save_checkpoint(stem, _rl_named_parameters(model))


def load_rl_model(stem: str, cfg: RlConfig | None = None) -> RlModel:
    with open(f"{stem}.arch", encoding="utf-8") as fh:
        entries = dict(line.strip().split("=", 1) for line in fh if line.strip())
    if entries.get("kind") != "rl":
        raise RlError(f"{stem}.arch is not an RL model descriptor")
    cfg = cfg or RlConfig(
        n_blocks=int(entries["n_blocks"]),
        kb_depth=int(entries["kb.depth"]),
        kb_breadth=tuple(int(d) for d in entries["kb.breadth"].split(",")),
        head_breadth=tuple(int(d) for d in entries["head.breadth"].split(",")),
        temperature=float(entries["temperature"]),
    )
    model = RlModel(cfg, kb_seed=0)
    for t in entries["tasks"].split(","):
        if t != "":
            model.add_task(int(t), actor_seed=0, critic_seed=0)
    params = ad.load_checkpoint(stem)
    for name, tensor in _rl_named_parameters(model).items():
        if name not in params:
            raise RlError(f"checkpoint is missing parameter {name!r}")
        tensor.data = params[name]
    model._sync_target_kb()
    for task in model.critics:
        polyak_update(model.critics[task].parameters(),
                      model.target_critics[task].parameters(), tau=1.0)
    return model


def rl_rows_to_csv(rows: list[dict]) -> str:
    out = io.StringIO()
    out.write(RL_METRICS_HEADER + "\n")
    ordered = sorted(rows, key=lambda r: (r["seed"], r["mode"], r["training_task"],
                                          r["task"], r["grad_step"]))
    for r in ordered:
        out.write(
            f"{r['seed']},{r['mode']},{r['training_task']},{r['task']},"
            f"{r['grad_step']},{r['mean_steps']!r},{r['success_rate']!r}\n"
        )
    return out.getvalue()


def save_rl_metrics(path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(rl_rows_to_csv(rows))


def load_rl_metrics(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if ",".join(header) != RL_METRICS_HEADER:
            raise RlError(f"unexpected RL metrics header {header}")
        for rec in reader:
            rows.append({
                "seed": int(rec[0]), "mode": rec[1], "training_task": int(rec[2]),
                "task": int(rec[3]), "grad_step": int(rec[4]),
                "mean_steps": float(rec[5]), "success_rate": float(rec[6]),
            })
    return rows

