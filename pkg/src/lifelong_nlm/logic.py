"""Typed object universes, predicate schemas, and valuation tensors.

A valuation group carries one dense tensor per arity r in 0..3 with shape
[n, ... r times ..., n, c_r]; ground inputs are exactly {0,1}-valued, soft
truth values live in [0,1].  The module also provides a hard-logic
forward-chaining evaluator over conjunctive rules, used throughout the
test suite as an independent oracle, plus the line-delimited instance
record format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor

MAX_ARITY = 3
EQUALITY_NAME = "Equal"


class LogicError(Exception):
    pass


@dataclass(frozen=True)
class ObjectUniverse:
    """A finite object set partitioned into named, nonempty, disjoint types."""

    types: tuple[str, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.types) != len(set(self.types)):
            raise LogicError(f"duplicate type names in {self.types}")
        if len(self.types) != len(self.counts) or not self.types:
            raise LogicError("types and counts must be parallel and nonempty")
        if any(c < 1 for c in self.counts):
            raise LogicError("every type must have at least one object")

    @property
    def n_objects(self) -> int:
        return sum(self.counts)

    def count(self, type_name: str) -> int:
        return self.counts[self.types.index(type_name)]


def single_type_universe(type_name: str, n: int) -> ObjectUniverse:
    return ObjectUniverse(types=(type_name,), counts=(n,))


@dataclass(frozen=True)
class PredicateSchema:
    name: str
    arity: int
    arg_types: tuple[str, ...]

    def __post_init__(self):
        if not 0 <= self.arity <= MAX_ARITY:
            raise LogicError(f"arity {self.arity} outside supported range 0..3")
        if len(self.arg_types) != self.arity:
            raise LogicError(f"{self.name}: {len(self.arg_types)} types for arity {self.arity}")

    def validate_against(self, universe: ObjectUniverse):
        for t in self.arg_types:
            if t not in universe.types:
                raise LogicError(f"{self.name}: unknown type {t!r}")


class ValuationGroup:
    """Per-arity truth-value tensors over all groundings of a predicate list.

    ``tensors`` maps arity -> Tensor of shape [*batch, n ... n, c]; ``names``
    maps arity -> channel names and is optional for model-internal groups.
    ``batch_axes`` is 0 for a single world or 1 for a stacked batch of worlds.
    """

    def __init__(self, universe, tensors, names=None, batch_axes: int = 0, validate=False):
        self.universe = universe
        self.tensors: dict[int, Tensor] = dict(tensors)
        self.names: dict[int, tuple[str, ...]] = {
            r: tuple(v) for r, v in (names or {}).items()
        }
        self.batch_axes = batch_axes
        n = universe.n_objects
        for r, t in self.tensors.items():
            if not 0 <= r <= MAX_ARITY:
                raise LogicError(f"arity {r} outside supported range 0..3")
            expected_ndim = batch_axes + r + 1
            if t.ndim != expected_ndim or t.shape[batch_axes : batch_axes + r] != (n,) * r:
                raise LogicError(f"arity-{r} tensor has shape {t.shape}, n={n}")
            if r in self.names and len(self.names[r]) != t.shape[-1]:
                raise LogicError(
                    f"arity-{r}: {len(self.names[r])} names for {t.shape[-1]} channels"
                )
            if validate:
                d = t.data
                if d.size and (d.min() < 0.0 or d.max() > 1.0):
                    raise LogicError(f"arity-{r} values outside [0,1]")

    @property
    def n_objects(self) -> int:
        return self.universe.n_objects

    def channel_counts(self) -> tuple[int, int, int, int]:
        return tuple(
            self.tensors[r].shape[-1] if r in self.tensors else 0
            for r in range(MAX_ARITY + 1)
        )

    def channel(self, name: str) -> tuple[int, int]:
        for r, names in self.names.items():
            if name in names:
                return r, names.index(name)
        raise LogicError(f"unknown channel {name!r}")

    def array(self, name: str) -> np.ndarray:
        r, i = self.channel(name)
        return self.tensors[r].data[..., i]


def ground_valuation(universe, schemas, facts) -> ValuationGroup:
    """Build a {0,1} valuation from ground atoms.

    ``schemas`` declares the channel layout; ``facts`` is a list of
    (predicate name, object index tuple).  Duplicate facts are rejected.
    """
    n = universe.n_objects
    by_name: dict[str, PredicateSchema] = {}
    for s in schemas:
        s.validate_against(universe)
        if s.name in by_name:
            raise LogicError(f"duplicate schema {s.name!r}")
        by_name[s.name] = s
    arities = sorted({s.arity for s in schemas})
    names = {r: tuple(s.name for s in schemas if s.arity == r) for r in arities}
    arrays = {r: np.zeros((n,) * r + (len(names[r]),)) for r in arities}
    seen = set()
    for name, objs in facts:
        if name not in by_name:
            raise LogicError(f"fact for unknown predicate {name!r}")
        s = by_name[name]
        objs = tuple(objs)
        if len(objs) != s.arity:
            raise LogicError(f"{name} expects {s.arity} objects, got {objs}")
        if any(not 0 <= o < n for o in objs):
            raise LogicError(f"object index out of range in {name}{objs}")
        if (name, objs) in seen:
            raise LogicError(f"duplicate fact {name}{objs}")
        seen.add((name, objs))
        arrays[s.arity][objs + (names[s.arity].index(name),)] = 1.0
    tensors = {r: Tensor(a) for r, a in arrays.items()}
    return ValuationGroup(universe, tensors, names, validate=True)


def append_builtin_equality(group: ValuationGroup) -> ValuationGroup:
    """Append an identity-matrix channel Equal(X, Y); rejects doubles."""
    n = group.n_objects
    names2 = group.names.get(2, ())
    if EQUALITY_NAME in names2:
        raise LogicError("duplicate builtin Equal channel")
    eye = np.eye(n)[..., None]
    tensors = dict(group.tensors)
    if 2 in tensors:
        tensors[2] = Tensor(np.concatenate([tensors[2].data, eye], axis=-1))
    else:
        tensors[2] = Tensor(eye)
    names = dict(group.names)
    names[2] = tuple(names2) + (EQUALITY_NAME,)
    return ValuationGroup(group.universe, tensors, names)


# ---------------------------------------------------------------------------
# hard-logic forward chaining (test oracle)


@dataclass(frozen=True)
class Atom:
    predicate: str
    variables: tuple[str, ...]
    negated: bool = False


@dataclass(frozen=True)
class Rule:
    """head <- conjunction of body atoms; body-only variables are
    existentially quantified."""

    head: Atom
    body: tuple[Atom, ...]

    def __post_init__(self):
        if self.head.negated:
            raise LogicError("rule head cannot be negated")
        if len(set(self.head.variables)) != len(self.head.variables):
            raise LogicError("repeated variables in rule head are unsupported")


def _rule_vars(rule: Rule) -> list[str]:
    ordered = list(rule.head.variables)
    for atom in rule.body:
        for v in atom.variables:
            if v not in ordered:
                ordered.append(v)
    return ordered


def _eval_rule(rule: Rule, facts: dict[str, np.ndarray], n: int) -> np.ndarray:
    variables = _rule_vars(rule)
    grids = np.indices((n,) * len(variables), sparse=True)
    pos = {v: i for i, v in enumerate(variables)}
    value = np.ones((n,) * len(variables), dtype=bool)
    for atom in rule.body:
        if atom.predicate not in facts:
            raise LogicError(f"unknown channel {atom.predicate!r}")
        arr = facts[atom.predicate]
        picked = arr[tuple(grids[pos[v]] for v in atom.variables)] if atom.variables else arr
        picked = np.broadcast_to(picked, value.shape)
        value = value & (~picked if atom.negated else picked)
    extra_axes = tuple(range(len(rule.head.variables), len(variables)))
    if extra_axes:
        value = value.any(axis=extra_axes)
    return value


def forward_chain(group: ValuationGroup, rules) -> dict[str, np.ndarray]:
    """Iterate the immediate-consequence operator to a fixed point.

    Conjunction is min, existential quantification is max over the extra
    variables, negation is complement against the previous iteration; the
    fixed point must arrive within n * (number of channels) passes.
    """
    n = group.n_objects
    inputs: dict[str, np.ndarray] = {}
    for r, names in group.names.items():
        for i, name in enumerate(names):
            inputs[name] = group.tensors[r].data[..., i].astype(bool)
    heads = {rule.head.predicate for rule in rules}
    arity_of = {}
    for rule in rules:
        a = len(rule.head.variables)
        if arity_of.setdefault(rule.head.predicate, a) != a:
            raise LogicError(f"conflicting arities for {rule.head.predicate!r}")
    derived = {h: np.zeros((n,) * arity_of[h], dtype=bool) for h in heads}
    limit = n * (len(inputs) + len(heads))
    for _ in range(limit):
        facts = {**inputs, **derived}
        new = {h: np.zeros_like(derived[h]) for h in heads}
        for rule in rules:
            new[rule.head.predicate] |= _eval_rule(rule, facts, n)
        if all(np.array_equal(new[h], derived[h]) for h in heads):
            return {k: v.astype(float) for k, v in facts.items()}
        derived = new
    raise LogicError(f"no fixed point within {limit} iterations")


def compose_rule_eval(group: ValuationGroup, rules, target: str) -> np.ndarray:
    """Exact {0,1} consequences of ``target`` under the rule program."""
    facts = forward_chain(group, rules)
    if target not in facts:
        raise LogicError(f"unknown channel {target!r}")
    return facts[target]


# ---------------------------------------------------------------------------
# instance records (line-delimited JSON)


def instance_record(universe, schemas, facts, labels, seed, domain) -> str:
    """One-line JSON record: universe, facts per schema, labels per target."""
    fact_lists: dict[str, list] = {s.name: [] for s in schemas}
    for name, objs in facts:
        fact_lists[name].append([int(o) for o in objs])
    for v in fact_lists.values():
        v.sort()
    record = {
        "format": 1,
        "domain": domain,
        "seed": int(seed),
        "universe": {"types": list(universe.types), "counts": list(universe.counts)},
        "schemas": {
            s.name: {"arity": s.arity, "arg_types": list(s.arg_types)} for s in schemas
        },
        "facts": fact_lists,
        "labels": {
            name: {
                "arity": arr.ndim,
                "ones": sorted(map(list, np.argwhere(arr > 0.5).tolist())),
            }
            for name, arr in labels.items()
        },
    }
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def parse_instance_record(line: str):
    record = json.loads(line)
    if record.get("format") != 1:
        raise LogicError(f"unsupported instance format {record.get('format')!r}")
    universe = ObjectUniverse(
        types=tuple(record["universe"]["types"]),
        counts=tuple(record["universe"]["counts"]),
    )
    schemas = [
        PredicateSchema(name, spec["arity"], tuple(spec["arg_types"]))
        for name, spec in sorted(record["schemas"].items())
    ]
    facts = [
        (name, tuple(objs))
        for name, tuples in sorted(record["facts"].items())
        for objs in tuples
    ]
    n = universe.n_objects
    labels = {}
    for name, spec in record["labels"].items():
        arr = np.zeros((n,) * spec["arity"])
        for objs in spec["ones"]:
            arr[tuple(objs)] = 1.0
        labels[name] = arr
    return {
        "domain": record["domain"],
        "seed": record["seed"],
        "universe": universe,
        "schemas": schemas,
        "facts": facts,
        "labels": labels,
    }
