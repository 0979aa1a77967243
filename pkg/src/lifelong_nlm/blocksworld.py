"""Native BlocksWorld with predicate state/action encodings.

States are immutable support vectors (table, held, or another block).
The ground action space for x blocks is indexed PickUp(b), PutDown(b),
Stack(a,b), Unstack(a,b) over all ordered pairs, 2x^2 + 2x entries in
total; diagonal Stack/Unstack entries exist as indices but never satisfy
their preconditions.  Invalid actions are no-ops that still cost the step
penalty.  Reaching the goal yields exactly +100 and ends the episode.

Goals are sampled per episode from count patterns (how many blocks are
constrained onto the table, how many stacked onto specific blocks, how
many free); the planner is breadth-first search over the reversible state
graph, with a per-goal distance table reused during dataset collection.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .logic import PredicateSchema, ground_valuation, single_type_universe

TABLE = -1
HELD = -2

STEP_PENALTY = -0.1
GOAL_REWARD = 100.0
DEFAULT_MAX_STEPS = 50

STATE_SCHEMAS = {
    0: ("HandEmpty", "HandFull"),
    1: ("OnTable", "Clear", "Holding", "GoalOnTable"),
    2: ("On", "GoalOn", "Equal"),
}


class BlocksError(Exception):
    pass


@dataclass(frozen=True)
class BlocksState:
    """support[b] is TABLE, HELD, or the block directly under b."""

    support: tuple[int, ...]

    def __post_init__(self):
        n = len(self.support)
        held = [b for b, s in enumerate(self.support) if s == HELD]
        if len(held) > 1:
            raise BlocksError("more than one block held")
        for b, s in enumerate(self.support):
            if s not in (TABLE, HELD) and not 0 <= s < n:
                raise BlocksError(f"unknown support {s} for block {b}")
            if s == b:
                raise BlocksError(f"block {b} resting on itself")
        tops = [s for s in self.support if s >= 0]
        if len(tops) != len(set(tops)):
            raise BlocksError("two blocks on one support")
        # acyclicity: walking down from any block must reach the table/hand
        for b in range(n):
            seen, cur = set(), b
            while self.support[cur] >= 0:
                if cur in seen:
                    raise BlocksError("cycle in the on-relation")
                seen.add(cur)
                cur = self.support[cur]

    @property
    def n_blocks(self) -> int:
        return len(self.support)

    @property
    def holding(self) -> int | None:
        for b, s in enumerate(self.support):
            if s == HELD:
                return b
        return None

    def on_table(self, b: int) -> bool:
        return self.support[b] == TABLE

    def clear(self, b: int) -> bool:
        return self.support[b] != HELD and b not in self.support

    def hand_empty(self) -> bool:
        return self.holding is None

    def replace(self, b: int, new_support: int) -> "BlocksState":
        support = list(self.support)
        support[b] = new_support
        return BlocksState(tuple(support))


def all_on_table(n: int) -> BlocksState:
    return BlocksState((TABLE,) * n)


@dataclass(frozen=True)
class GroundAction:
    kind: str  # PickUp | PutDown | Stack | Unstack
    args: tuple[int, ...]

    def __post_init__(self):
        arity = 1 if self.kind in ("PickUp", "PutDown") else 2
        if self.kind not in ("PickUp", "PutDown", "Stack", "Unstack"):
            raise BlocksError(f"unknown action kind {self.kind!r}")
        if len(self.args) != arity:
            raise BlocksError(f"{self.kind} takes {arity} blocks, got {self.args}")


def action_space(n: int) -> list[GroundAction]:
    """All 2n^2 + 2n ground actions in index order."""
    actions = [GroundAction("PickUp", (b,)) for b in range(n)]
    actions += [GroundAction("PutDown", (b,)) for b in range(n)]
    actions += [
        GroundAction("Stack", (a, b)) for a in range(n) for b in range(n)
    ]
    actions += [
        GroundAction("Unstack", (a, b)) for a in range(n) for b in range(n)
    ]
    return actions


def action_index(action: GroundAction, n: int) -> int:
    if action.kind == "PickUp":
        return action.args[0]
    if action.kind == "PutDown":
        return n + action.args[0]
    a, b = action.args
    base = 2 * n
    if action.kind == "Stack":
        return base + a * n + b
    return base + n * n + a * n + b


def is_valid(state: BlocksState, action: GroundAction) -> bool:
    kind, args = action.kind, action.args
    if any(not 0 <= b < state.n_blocks for b in args):
        raise BlocksError(f"unknown block id in {action}")
    if kind == "PickUp":
        (x,) = args
        return state.hand_empty() and state.clear(x) and state.on_table(x)
    if kind == "PutDown":
        (x,) = args
        return state.support[x] == HELD
    x, y = args
    if kind == "Stack":
        return state.support[x] == HELD and state.clear(y)
    # Unstack
    return state.hand_empty() and state.clear(x) and state.support[x] == y


def apply_action(state: BlocksState, action: GroundAction) -> BlocksState:
    """State after the action; invalid actions are no-ops."""
    if not is_valid(state, action):
        return state
    kind, args = action.kind, action.args
    if kind in ("PickUp", "Unstack"):
        return state.replace(args[0], HELD)
    if kind == "PutDown":
        return state.replace(args[0], TABLE)
    return state.replace(args[0], args[1])  # Stack


def valid_actions(state: BlocksState) -> list[GroundAction]:
    return [a for a in action_space(state.n_blocks) if is_valid(state, a)]


def valid_action_mask(state: BlocksState) -> np.ndarray:
    n = state.n_blocks
    mask = np.zeros(2 * n * n + 2 * n, dtype=bool)
    for a in valid_actions(state):
        mask[action_index(a, n)] = True
    return mask


# ---------------------------------------------------------------------------
# goals


@dataclass(frozen=True)
class GoalSpec:
    """Counts plus one sampled concrete target; free blocks are
    unconstrained."""

    counts: tuple[int, int, int]  # (on table, stacked, free)
    on_table: tuple[int, ...]
    on: tuple[tuple[int, int], ...]  # (upper, lower) pairs

    def satisfied(self, state: BlocksState) -> bool:
        return all(state.support[b] == TABLE for b in self.on_table) and all(
            state.support[a] == b for a, b in self.on
        )

    def key(self) -> tuple:
        return (self.on_table, self.on)


# count patterns per task index, keyed by block count; the 6-block list is
# the experiment configuration (its third task leaves extra blocks free)
GOAL_COUNTS = {
    2: [(2, 0, 0), (1, 1, 0), (2, 0, 0), (1, 1, 0), (1, 1, 0)],
    3: [(2, 0, 1), (1, 1, 1), (2, 1, 0), (3, 0, 0), (1, 2, 0)],
    4: [(3, 0, 1), (1, 2, 1), (2, 1, 1), (3, 1, 0), (1, 3, 0)],
    5: [(4, 0, 1), (2, 2, 1), (2, 1, 2), (3, 1, 1), (1, 4, 0)],
    6: [(5, 0, 1), (3, 2, 1), (2, 1, 3), (4, 1, 1), (1, 4, 1)],
}
N_TASKS = 5


def goal_counts(task_index: int, n_blocks: int) -> tuple[int, int, int]:
    if not 0 <= task_index < N_TASKS:
        raise BlocksError(f"task index {task_index} outside 0..{N_TASKS - 1}")
    if n_blocks not in GOAL_COUNTS:
        raise BlocksError(f"no goal table for {n_blocks} blocks")
    counts = GOAL_COUNTS[n_blocks][task_index]
    if sum(counts) != n_blocks:
        raise BlocksError(f"impossible counts {counts} for {n_blocks} blocks")
    return counts


def sample_goal(task_index: int, n_blocks: int, rng) -> GoalSpec:
    """Uniformly assign blocks to roles and stacked blocks onto growing
    towers rooted at constrained table blocks."""
    table_count, stacked_count, _free = goal_counts(task_index, n_blocks)
    if stacked_count > 0 and table_count == 0:
        raise BlocksError("stacked blocks need at least one table block")
    order = list(rng.permutation(n_blocks))
    table = sorted(int(b) for b in order[:table_count])
    stacked = [int(b) for b in order[table_count : table_count + stacked_count]]
    tops = list(table)
    on = []
    for b in stacked:
        support = tops[int(rng.integers(len(tops)))]
        on.append((b, support))
        tops.remove(support)
        tops.append(b)
    return GoalSpec(
        counts=(table_count, stacked_count, _free),
        on_table=tuple(table),
        on=tuple(sorted(on)),
    )


# ---------------------------------------------------------------------------
# environment step


def step(state: BlocksState, action: GroundAction, goal: GoalSpec):
    """(next state, reward, done): -0.1 per step, exactly +100 on the step
    that reaches the goal."""
    nxt = apply_action(state, action)
    if goal.satisfied(nxt):
        return nxt, GOAL_REWARD, True
    return nxt, STEP_PENALTY, False


# ---------------------------------------------------------------------------
# predicate encoding


@lru_cache(maxsize=8)
def state_schemas(n: int):
    return [
        PredicateSchema(name, r, ("Block",) * r)
        for r in sorted(STATE_SCHEMAS)
        for name in STATE_SCHEMAS[r]
    ]


def encode_state(state: BlocksState, goal: GoalSpec):
    """ValuationGroup over {HandEmpty, HandFull} / {OnTable, Clear, Holding,
    GoalOnTable} / {On, GoalOn, Equal}."""
    n = state.n_blocks
    universe = single_type_universe("Block", n)
    facts = [("HandEmpty", ()) if state.hand_empty() else ("HandFull", ())]
    for b in range(n):
        if state.on_table(b):
            facts.append(("OnTable", (b,)))
        if state.clear(b):
            facts.append(("Clear", (b,)))
        if state.support[b] == HELD:
            facts.append(("Holding", (b,)))
        elif state.support[b] >= 0:
            facts.append(("On", (b, state.support[b])))
        facts.append(("Equal", (b, b)))
    for b in goal.on_table:
        facts.append(("GoalOnTable", (b,)))
    for a, b in goal.on:
        facts.append(("GoalOn", (a, b)))
    return ground_valuation(universe, state_schemas(n), facts)


BASE_COUNTS = (2, 4, 3, 0)  # channel counts of encode_state per arity


# ---------------------------------------------------------------------------
# state enumeration and planning


def _set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        yield [[first]] + part
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1 :]


def _stack_arrangements(blocks):
    """All ways to arrange labeled blocks into ordered stacks (sets of
    lists): set partitions crossed with per-stack orderings."""
    for partition in _set_partitions(list(blocks)):
        for ordering in itertools.product(
            *(itertools.permutations(g) for g in partition)
        ):
            support = {}
            for stack in ordering:
                support[stack[0]] = TABLE
                for lower, upper in zip(stack, stack[1:]):
                    support[upper] = lower
            yield support


@lru_cache(maxsize=8)
def enumerate_states(n: int) -> tuple[BlocksState, ...]:
    """Every reachable state, by direct combinatorial construction: all
    hand-empty arrangements of n blocks plus, per held block, all
    arrangements of the rest."""
    out = []
    for arrangement in _stack_arrangements(range(n)):
        support = [TABLE] * n
        for b, s in arrangement.items():
            support[b] = s
        out.append(BlocksState(tuple(support)))
    for held in range(n):
        others = [b for b in range(n) if b != held]
        for arrangement in _stack_arrangements(others):
            support = [TABLE] * n
            for b, s in arrangement.items():
                support[b] = s
            support[held] = HELD
            out.append(BlocksState(tuple(support)))
    return tuple(sorted(out, key=lambda s: s.support))


@lru_cache(maxsize=8)
def _hand_empty_states(n: int) -> tuple[BlocksState, ...]:
    return tuple(s for s in enumerate_states(n) if s.hand_empty())


def reachable_states(n: int, start: BlocksState | None = None) -> set[BlocksState]:
    """Graph walk over step(); independent of enumerate_states."""
    start = start or all_on_table(n)
    seen = {start}
    frontier = [start]
    while frontier:
        state = frontier.pop()
        for action in valid_actions(state):
            nxt = apply_action(state, action)
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return seen


def goal_distances(n: int, goal: GoalSpec) -> dict[BlocksState, int]:
    """Exact distance-to-goal for every state: multi-source BFS from the
    goal set (valid actions are all reversible, so the graph is symmetric)."""
    dist = {}
    frontier = []
    for state in enumerate_states(n):
        if goal.satisfied(state):
            dist[state] = 0
            frontier.append(state)
    if not frontier:
        raise BlocksError("unreachable goal: no state satisfies it")
    d = 0
    while frontier:
        nxt_frontier = []
        d += 1
        for state in frontier:
            for action in valid_actions(state):
                nxt = apply_action(state, action)
                if nxt not in dist:
                    dist[nxt] = d
                    nxt_frontier.append(nxt)
        frontier = nxt_frontier
    return dist


class Planner:
    """Optimal actions from cached per-goal distance tables."""

    def __init__(self, n_blocks: int):
        self.n = n_blocks
        self._tables: dict[tuple, dict] = {}

    def distances(self, goal: GoalSpec) -> dict[BlocksState, int]:
        key = goal.key()
        if key not in self._tables:
            self._tables[key] = goal_distances(self.n, goal)
        return self._tables[key]

    def best_action(self, state: BlocksState, goal: GoalSpec) -> GroundAction:
        dist = self.distances(goal)
        best, best_d = None, dist[state]
        for action in valid_actions(state):
            nxt = apply_action(state, action)
            if dist[nxt] < best_d:
                best, best_d = action, dist[nxt]
                break  # actions are scanned in index order; first improvement
        if best is None:
            raise BlocksError("no improving action (already at the goal?)")
        return best


def bfs_plan(state: BlocksState, goal: GoalSpec) -> list[GroundAction]:
    """Shortest valid-action sequence to a goal-satisfying state, ties
    broken by action ordering."""
    if goal.satisfied(state):
        return []
    seen = {state}
    frontier = [(state, [])]
    while frontier:
        next_frontier = []
        for current, plan in frontier:
            for action in valid_actions(current):
                nxt = apply_action(current, action)
                if nxt in seen:
                    continue
                seen.add(nxt)
                nxt_plan = plan + [action]
                if goal.satisfied(nxt):
                    return nxt_plan
                next_frontier.append((nxt, nxt_plan))
        frontier = next_frontier
    raise BlocksError("unreachable goal")


def sample_initial_state(n: int, rng, avoid_goal: GoalSpec | None = None) -> BlocksState:
    """Uniform over all hand-empty configurations (exact enumeration)."""
    states = _hand_empty_states(n)
    if avoid_goal is not None:
        states = [s for s in states if not avoid_goal.satisfied(s)]
    return states[int(rng.integers(len(states)))]


# ---------------------------------------------------------------------------
# transitions and offline dataset collection


@dataclass(frozen=True)
class Transition:
    task: int
    episode: int
    step: int
    state: BlocksState
    goal: GoalSpec
    action: GroundAction
    reward: float
    next_state: BlocksState
    done: bool


def collect_dataset(task_index: int, n_blocks: int, n_transitions: int,
                    epsilon: float, seed: int,
                    max_steps: int = DEFAULT_MAX_STEPS,
                    fixed_goal: GoalSpec | None = None) -> list[Transition]:
    """Mixed planner/random-valid rollouts: with probability epsilon take a
    uniformly random valid action, otherwise the planner's first action.
    Goals are resampled per episode unless ``fixed_goal`` is given."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, task_index])))
    planner = Planner(n_blocks)
    transitions: list[Transition] = []
    episode = 0
    while len(transitions) < n_transitions:
        goal = fixed_goal or sample_goal(task_index, n_blocks, rng)
        state = sample_initial_state(n_blocks, rng, avoid_goal=goal)
        for step_idx in range(max_steps):
            choices = valid_actions(state)
            if rng.random() < epsilon:
                action = choices[int(rng.integers(len(choices)))]
            else:
                action = planner.best_action(state, goal)
            nxt, reward, done = step(state, action, goal)
            transitions.append(Transition(
                task=task_index, episode=episode, step=step_idx, state=state,
                goal=goal, action=action, reward=reward, next_state=nxt,
                done=done,
            ))
            state = nxt
            if done or len(transitions) >= n_transitions:
                break
        episode += 1
    return transitions


def _state_facts(state: BlocksState, goal: GoalSpec) -> dict:
    return {
        "on": sorted([b, s] for b, s in enumerate(state.support) if s >= 0),
        "on_table": sorted(b for b in range(state.n_blocks) if state.on_table(b)),
        "holding": state.holding,
        "goal_on": sorted(map(list, goal.on)),
        "goal_on_table": sorted(goal.on_table),
    }


def _state_from_facts(facts: dict, n: int) -> tuple[BlocksState, GoalSpec]:
    support = [TABLE] * n
    for b, s in facts["on"]:
        support[b] = s
    if facts["holding"] is not None:
        support[facts["holding"]] = HELD
    goal = GoalSpec(
        counts=(len(facts["goal_on_table"]), len(facts["goal_on"]),
                n - len(facts["goal_on_table"]) - len(facts["goal_on"])),
        on_table=tuple(facts["goal_on_table"]),
        on=tuple(tuple(p) for p in facts["goal_on"]),
    )
    return BlocksState(tuple(support)), goal


def save_buffer(path, transitions: list[Transition], n_blocks: int) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        header = {"format": 1, "kind": "blocksworld-buffer", "n_blocks": n_blocks}
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for t in transitions:
            record = {
                "task": t.task,
                "episode": t.episode,
                "step": t.step,
                "state_facts": _state_facts(t.state, t.goal),
                "action_kind": t.action.kind,
                "action_args": list(t.action.args),
                "reward": t.reward,
                "next_state_facts": _state_facts(t.next_state, t.goal),
                "done": t.done,
            }
            fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")


def load_buffer(path) -> tuple[list[Transition], int]:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != 1 or header.get("kind") != "blocksworld-buffer":
            raise BlocksError(f"not a buffer file: {path}")
        n = header["n_blocks"]
        transitions = []
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            state, goal = _state_from_facts(rec["state_facts"], n)
            next_state, _ = _state_from_facts(rec["next_state_facts"], n)
            transitions.append(Transition(
                task=rec["task"], episode=rec["episode"], step=rec["step"],
                state=state, goal=goal,
                action=GroundAction(rec["action_kind"], tuple(rec["action_args"])),
                reward=rec["reward"], next_state=next_state, done=rec["done"],
            ))
    return transitions, n
