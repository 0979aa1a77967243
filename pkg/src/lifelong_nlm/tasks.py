"""Generators and exact oracles for the supervised domains.

Three domains, each with a fixed four-target curriculum:

  arithmetic  Zero/Succ inputs; Plus, Times, Division, NoRemainder.
  tree        IsParent input; IsRoot, HasOddEdges, HasEvenEdges, IsAncestor.
  graph       IsConnected/IsRed inputs; AdjacentToRed, ExactConnectivity2,
              ExactConnectivity2Red, ExactConnectivity2MultipleRed.

Labels come from exact integer arithmetic or BFS, never from the model.
Division is floor division with divisor >= 1; divisor-zero groundings are
false.  Tree path parity uses the unique undirected path, with both parity
predicates false on the diagonal.  IsAncestor is strict (X != Y).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .logic import (
    PredicateSchema,
    ValuationGroup,
    append_builtin_equality,
    ground_valuation,
    instance_record,
    parse_instance_record,
    single_type_universe,
)

ARITH_TARGETS = ("Plus", "Times", "Division", "NoRemainder")
TREE_TARGETS = ("IsRoot", "HasOddEdges", "HasEvenEdges", "IsAncestor")
GRAPH_TARGETS = (
    "AdjacentToRed",
    "ExactConnectivity2",
    "ExactConnectivity2Red",
    "ExactConnectivity2MultipleRed",
)

TARGET_ARITIES = {
    "Plus": 3,
    "Times": 3,
    "Division": 3,
    "NoRemainder": 2,
    "IsRoot": 1,
    "HasOddEdges": 2,
    "HasEvenEdges": 2,
    "IsAncestor": 2,
    "AdjacentToRed": 1,
    "ExactConnectivity2": 2,
    "ExactConnectivity2Red": 1,
    "ExactConnectivity2MultipleRed": 1,
}

DESK_PARAMS = {
    "arithmetic": {"range_max": 19},
    "tree": {"n_nodes": 15, "min_children": 2, "max_children": 3},
    "graph": {"n_nodes": 12, "p_min": 0.10, "p_max": 0.35, "p_red": 0.3},
}
PAPER_PARAMS = {
    "arithmetic": {"range_max": 79},
    "tree": {"n_nodes": 40, "min_children": 2, "max_children": 3},
    "graph": {"n_nodes": 30, "p_min": 0.01, "p_max": 0.10, "p_red": 0.3},
}


class TaskError(Exception):
    pass


@dataclass(frozen=True)
class DomainSpec:
    domain: str
    params: tuple[tuple[str, float], ...]

    @property
    def targets(self) -> tuple[str, ...]:
        return {
            "arithmetic": ARITH_TARGETS,
            "tree": TREE_TARGETS,
            "graph": GRAPH_TARGETS,
        }[self.domain]

    @property
    def kwargs(self) -> dict:
        return dict(self.params)

    @property
    def base_counts(self) -> tuple[int, int, int, int]:
        # builtin Equal is appended for tree and graph
        return {
            "arithmetic": (0, 1, 1, 0),
            "tree": (0, 0, 2, 0),
            "graph": (0, 1, 2, 0),
        }[self.domain]


def domain_spec(domain: str, paper_scale: bool = False, **overrides) -> DomainSpec:
    if domain not in DESK_PARAMS:
        raise TaskError(f"unknown domain {domain!r}")
    params = dict(PAPER_PARAMS[domain] if paper_scale else DESK_PARAMS[domain])
    for key, value in overrides.items():
        if key not in params:
            raise TaskError(f"unknown parameter {key!r} for domain {domain!r}")
        params[key] = value
    return DomainSpec(domain, tuple(sorted(params.items())))


@dataclass
class TaskInstance:
    """One generated world: ground inputs plus exact labels per target."""

    domain: str
    universe: object
    schemas: list
    facts: list
    labels: dict[str, np.ndarray]
    seed: int
    input_group: ValuationGroup = field(repr=False, default=None)

    def __post_init__(self):
        if self.input_group is None:
            group = ground_valuation(self.universe, self.schemas, self.facts)
            if self.domain in ("tree", "graph"):
                group = append_builtin_equality(group)
            self.input_group = group

    def to_record(self) -> str:
        return instance_record(
            self.universe, self.schemas, self.facts, self.labels, self.seed, self.domain
        )


def instance_from_record(line: str) -> TaskInstance:
    rec = parse_instance_record(line)
    return TaskInstance(
        domain=rec["domain"],
        universe=rec["universe"],
        schemas=rec["schemas"],
        facts=rec["facts"],
        labels=rec["labels"],
        seed=rec["seed"],
    )


def save_instances(path, instances) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in instances:
            fh.write(inst.to_record() + "\n")


def load_instances(path) -> list[TaskInstance]:
    with open(path, encoding="utf-8") as fh:
        return [instance_from_record(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# arithmetic


def gen_arithmetic(range_max: int, seed: int) -> TaskInstance:
    if range_max < 2:
        raise TaskError("range_max must be >= 2")
    n = range_max + 1
    universe = single_type_universe("Number", n)
    schemas = [
        PredicateSchema("Zero", 1, ("Number",)),
        PredicateSchema("Succ", 2, ("Number", "Number")),
    ]
    facts = [("Zero", (0,))] + [("Succ", (k, k + 1)) for k in range(n - 1)]
    i, j, k = np.indices((n, n, n))
    divisor = np.maximum(j, 1)
    labels = {
        "Plus": (i + j == k).astype(float),
        "Times": (i * j == k).astype(float),
        "Division": ((j >= 1) & (i // divisor == k)).astype(float),
        "NoRemainder": ((j[:, :, 0] >= 1) & (i[:, :, 0] % divisor[:, :, 0] == 0)).astype(float),
    }
    return TaskInstance("arithmetic", universe, schemas, facts, labels, seed)


# ---------------------------------------------------------------------------
# tree


def gen_tree(n_nodes: int, min_children: int, max_children: int, seed: int) -> TaskInstance:
    if n_nodes < 2:
        raise TaskError("n_nodes must be >= 2")
    if not 1 <= min_children <= max_children:
        raise TaskError(f"infeasible child bounds [{min_children}, {max_children}]")
    rng = np.random.default_rng(seed)
    parent = np.full(n_nodes, -1)
    frontier = deque([0])
    next_id = 1
    while next_id < n_nodes:
        node = frontier.popleft()
        k = min(int(rng.integers(min_children, max_children + 1)), n_nodes - next_id)
        for _ in range(k):
            parent[next_id] = node
            frontier.append(next_id)
            next_id += 1
    universe = single_type_universe("Node", n_nodes)
    schemas = [PredicateSchema("IsParent", 2, ("Node", "Node"))]
    facts = [("IsParent", (int(parent[c]), c)) for c in range(1, n_nodes)]
    labels = tree_labels(parent)
    return TaskInstance("tree", universe, schemas, facts, labels, seed)


def tree_labels(parent: np.ndarray) -> dict[str, np.ndarray]:
    """Exact targets for a rooted tree given per-node parent ids (-1 = root)."""
    n = len(parent)
    adj = np.zeros((n, n), dtype=bool)
    is_parent = np.zeros((n, n), dtype=bool)
    for c in range(n):
        if parent[c] >= 0:
            adj[parent[c], c] = adj[c, parent[c]] = True
            is_parent[parent[c], c] = True
    dist = _bfs_distances(adj)
    off_diag = ~np.eye(n, dtype=bool)
    ancestor = is_parent.copy()
    for mid in range(n):
        ancestor |= ancestor[:, mid : mid + 1] & ancestor[mid : mid + 1, :]
    return {
        "IsRoot": (~is_parent.any(axis=0)).astype(float),
        "HasOddEdges": ((dist % 2 == 1) & off_diag).astype(float),
        "HasEvenEdges": ((dist % 2 == 0) & off_diag).astype(float),
        "IsAncestor": ancestor.astype(float),
    }


def _bfs_distances(adj: np.ndarray) -> np.ndarray:
    n = adj.shape[0]
    dist = np.full((n, n), n + 1)
    for start in range(n):
        dist[start, start] = 0
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v in np.flatnonzero(adj[u]):
                if dist[start, v] > dist[start, u] + 1:
                    dist[start, v] = dist[start, u] + 1
                    queue.append(v)
    return dist


# ---------------------------------------------------------------------------
# graph


def gen_graph(n_nodes: int, p_min: float, p_max: float, p_red: float, seed: int) -> TaskInstance:
    if not 0 <= p_min <= p_max <= 1:
        raise TaskError(f"invalid edge probability range [{p_min}, {p_max}]")
    rng = np.random.default_rng(seed)
    p = rng.uniform(p_min, p_max)
    upper = np.triu(rng.random((n_nodes, n_nodes)) < p, 1)
    adj = upper | upper.T
    red = rng.random(n_nodes) < p_red
    universe = single_type_universe("Node", n_nodes)
    schemas = [
        PredicateSchema("IsRed", 1, ("Node",)),
        PredicateSchema("IsConnected", 2, ("Node", "Node")),
    ]
    facts = [("IsRed", (int(i),)) for i in np.flatnonzero(red)]
    facts += [
        ("IsConnected", (i, j))
        for i in range(n_nodes)
        for j in range(n_nodes)
        if adj[i, j]
    ]
    labels = graph_labels(adj, red)
    return TaskInstance("graph", universe, schemas, facts, labels, seed)


def graph_labels(adj: np.ndarray, red: np.ndarray) -> dict[str, np.ndarray]:
    """Exact targets for an undirected graph via BFS shortest-path distances."""
    dist = _bfs_distances(adj)
    at_two = dist == 2
    return {
        "AdjacentToRed": (adj & red[None, :]).any(axis=1).astype(float),
        "ExactConnectivity2": at_two.astype(float),
        "ExactConnectivity2Red": (at_two & red[None, :]).any(axis=1).astype(float),
        "ExactConnectivity2MultipleRed": (
            (at_two & red[None, :]).sum(axis=1) >= 2
        ).astype(float),
    }


# ---------------------------------------------------------------------------
# datasets


def generate_instance(spec: DomainSpec, seed: int) -> TaskInstance:
    kw = spec.kwargs
    if spec.domain == "arithmetic":
        return gen_arithmetic(int(kw["range_max"]), seed)
    if spec.domain == "tree":
        return gen_tree(
            int(kw["n_nodes"]), int(kw["min_children"]), int(kw["max_children"]), seed
        )
    if spec.domain == "graph":
        return gen_graph(
            int(kw["n_nodes"]), kw["p_min"], kw["p_max"], kw["p_red"], seed
        )
    raise TaskError(f"unknown domain {spec.domain!r}")


def _instance_seed(root: int, attempt: int, index: int) -> int:
    return int(np.random.SeedSequence([root, attempt, index]).generate_state(1)[0])


def _balanced(instances, targets) -> bool:
    for target in targets:
        total = sum(inst.labels[target].sum() for inst in instances)
        size = sum(inst.labels[target].size for inst in instances)
        if total == 0 or total == size:
            return False
    return True


def make_dataset(spec: DomainSpec, n_train: int, n_test: int, seed: int):
    """Deterministic disjoint-seed train/test instance lists.  The train set
    is regenerated with the next seed while any target lacks a positive or
    negative grounding."""
    if n_train < 1 or n_test < 1:
        raise TaskError("n_train and n_test must be >= 1")
    for attempt in range(1000):
        seeds = [_instance_seed(seed, attempt, i) for i in range(n_train + n_test)]
        instances = [generate_instance(spec, s) for s in seeds]
        train, test = instances[:n_train], instances[n_train:]
        if _balanced(train, spec.targets):
            return train, test
    raise TaskError(f"could not balance a {spec.domain} training set from seed {seed}")
