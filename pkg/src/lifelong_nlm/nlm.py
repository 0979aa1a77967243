"""Compositional neural logic model.

An NlmLayer maps a valuation group to a fresh one per arity: it gathers
the same-arity channels, the one-axis expansion of the lower arity, and
max/min reductions of the higher arity, takes every variable order of
that assembled block, then applies a per-arity affine map and an
activation.  A KnowledgeBase chains
layers, re-feeding the base predicates to every layer, and exports the
concatenation of every layer's output so downstream heads can compose
rules of any intermediate depth.  Task heads are single layers with
disjoint parameters; one shared knowledge base serves all of them.

Parameter shapes depend only on channel counts, never on the number of
objects, so a trained model runs unchanged on worlds of any size.
"""

from __future__ import annotations

import itertools

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .logic import MAX_ARITY, ValuationGroup

PERMS = {r: list(itertools.permutations(range(r))) for r in range(MAX_ARITY + 1)}
ACTIVATIONS = ("sigmoid", "tanh", "linear")

# seed sub-stream tags
_KB_STREAM = 0
_HEAD_STREAM = 1


class ModelError(Exception):
    pass


def make_rng(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(key))))


def xavier_uniform(rng, fan_in: int, fan_out: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


def feature_counts(in_counts) -> tuple[int, int, int, int]:
    """Assembled feature width per output arity for given input channels.

    Per arity r the layer gathers the same-arity channels, the lower arity
    expanded along a new last object axis, and max/min reductions of the
    higher arity, then takes all r! variable orders of that block."""
    c = list(in_counts) + [0]
    out = []
    for r in range(MAX_ARITY + 1):
        gathered = c[r]
        if r >= 1:
            gathered += c[r - 1]
        if r <= MAX_ARITY - 1:
            gathered += 2 * c[r + 1]
        out.append(len(PERMS[r]) * gathered)
    return tuple(out)


class NlmLayer:
    """One logic layer: per-arity feature assembly + affine + activation."""

    def __init__(self, in_counts, out_counts, rng, activation="sigmoid", name="layer"):
        if len(in_counts) != 4 or len(out_counts) != 4:
            raise ModelError("channel counts must cover arities 0..3")
        if activation not in ACTIVATIONS:
            raise ModelError(f"unknown activation {activation!r}")
        self.in_counts = tuple(int(c) for c in in_counts)
        self.out_counts = tuple(int(c) for c in out_counts)
        self.activation = activation
        self.name = name
        self.features = feature_counts(self.in_counts)
        self.weights: dict[int, Tensor] = {}
        self.biases: dict[int, Tensor] = {}
        self.reinitialize(rng)

    def reinitialize(self, rng):
        for r in range(MAX_ARITY + 1):
            o = self.out_counts[r]
            if o == 0:
                continue
            f = self.features[r]
            self.weights[r] = ad.parameter(
                xavier_uniform(rng, f, o), name=f"{self.name}.a{r}.W"
            )
            self.biases[r] = ad.parameter(np.zeros(o), name=f"{self.name}.a{r}.b")

    def parameters(self) -> list[Tensor]:
        out = []
        for r in range(MAX_ARITY + 1):
            if r in self.weights:
                out += [self.weights[r], self.biases[r]]
        return out

    def named_parameters(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.parameters()}

    def forward(self, group: ValuationGroup, only_arities=None) -> ValuationGroup:
        """Forward pass; ``only_arities`` restricts which output arities are
        materialised (terminal layers never need the rest)."""
        if group.channel_counts() != self.in_counts:
            raise ModelError(
                f"{self.name}: input channels {group.channel_counts()} do not match "
                f"declared {self.in_counts}"
            )
        b = group.batch_axes
        n = group.n_objects
        ref = next(iter(group.tensors.values()))
        batch_shape = ref.shape[:b]
        out_tensors = {}
        for r in range(MAX_ARITY + 1):
            if self.out_counts[r] == 0:
                continue
            if only_arities is not None and r not in only_arities:
                continue
            gathered = []
            if self.in_counts[r] > 0:
                gathered.append(group.tensors[r])
            if r >= 1 and self.in_counts[r - 1] > 0:
                gathered.append(ad.expand(group.tensors[r - 1], b + r - 1, n))
            if r <= MAX_ARITY - 1 and self.in_counts[r + 1] > 0:
                upper = group.tensors[r + 1]
                gathered.append(ad.reduce(upper, b + r, "max"))
                gathered.append(ad.reduce(upper, b + r, "min"))
            if gathered:
                block = (
                    gathered[0] if len(gathered) == 1
                    else ad.concat(gathered, axis=b + r)
                )
                if r >= 2:
                    variants = []
                    for sigma in PERMS[r]:
                        if sigma == tuple(range(r)):
                            variants.append(block)
                        else:
                            order = (
                                tuple(range(b))
                                + tuple(b + i for i in sigma)
                                + (b + r,)
                            )
                            variants.append(ad.permute(block, order))
                    x = ad.concat(variants, axis=b + r)
                else:
                    x = block
            else:
                x = Tensor(np.zeros(batch_shape + (n,) * r + (0,)))
            y = ad.affine(self.weights[r], self.biases[r], x)
            if self.activation == "sigmoid":
                y = ad.sigmoid(y)
            elif self.activation == "tanh":
                y = ad.tanh(y)
            out_tensors[r] = y
        return ValuationGroup(group.universe, out_tensors, batch_axes=b)


def concat_groups(a: ValuationGroup, b: ValuationGroup) -> ValuationGroup:
    """Channel-wise concatenation of two groups over the same universe."""
    if a.universe != b.universe or a.batch_axes != b.batch_axes:
        raise ModelError("groups are not over the same worlds")
    tensors = {}
    for r in range(MAX_ARITY + 1):
        ta, tb = a.tensors.get(r), b.tensors.get(r)
        if ta is not None and tb is not None:
            tensors[r] = ad.concat([ta, tb], axis=a.batch_axes + r)
        elif ta is not None:
            tensors[r] = ta
        elif tb is not None:
            tensors[r] = tb
    return ValuationGroup(a.universe, tensors, batch_axes=a.batch_axes)


def stack_groups(groups: list[ValuationGroup]) -> ValuationGroup:
    """Stack single-world groups into one batched group (batch_axes=1)."""
    first = groups[0]
    if any(g.universe != first.universe or g.batch_axes != 0 for g in groups):
        raise ModelError("stack_groups needs unbatched groups over one universe")
    tensors = {
        r: Tensor(np.stack([g.tensors[r].data for g in groups], axis=0))
        for r in first.tensors
    }
    return ValuationGroup(first.universe, tensors, batch_axes=1)


class KnowledgeBase:
    """A chain of L layers; every layer sees the base predicates plus the
    previous layer's output, and the export concatenates all L outputs."""

    def __init__(self, base_counts, depth, breadth, rng, name="kb"):
        self.base_counts = tuple(int(c) for c in base_counts)
        self.breadth = tuple(int(c) for c in breadth)
        self.depth = int(depth)
        self.name = name
        self.layers = []
        for i in range(self.depth):
            in_counts = (
                self.base_counts
                if i == 0
                else tuple(b + o for b, o in zip(self.base_counts, self.breadth))
            )
            self.layers.append(
                NlmLayer(in_counts, self.breadth, rng, name=f"{name}.L{i}")
            )

    def export_counts(self) -> tuple[int, int, int, int]:
        return tuple(self.depth * b for b in self.breadth)

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def named_parameters(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.parameters()}

    def reinitialize(self, rng):
        for layer in self.layers:
            layer.reinitialize(rng)

    def forward(self, base: ValuationGroup) -> ValuationGroup:
        if base.channel_counts() != self.base_counts:
            raise ModelError(
                f"base channels {base.channel_counts()} do not match {self.base_counts}"
            )
        outputs = []
        prev = None
        for layer in self.layers:
            inp = base if prev is None else concat_groups(base, prev)
            prev = layer.forward(inp)
            outputs.append(prev)
        export = outputs[0]
        for out in outputs[1:]:
            export = concat_groups(export, out)
        return export


class TaskHead:
    """One task-specific layer over the knowledge-base export (optionally
    concatenated with the base predicates); prediction is channel 0 of the
    target arity."""

    def __init__(self, task_id, target_arity, in_counts, breadth, rng,
                 include_base=True, activation="sigmoid"):
        if not 0 <= target_arity <= MAX_ARITY:
            raise ModelError(f"target arity {target_arity} outside 0..3")
        if breadth[target_arity] < 1:
            raise ModelError("head breadth must cover the target arity")
        self.task_id = task_id
        self.target_arity = int(target_arity)
        self.include_base = include_base
        self.layer = NlmLayer(
            in_counts, breadth, rng, activation=activation, name=f"head.{task_id}"
        )

    def forward(self, export: ValuationGroup, base: ValuationGroup) -> Tensor:
        group = self.output_group(export, base, only_arities={self.target_arity})
        return ad.select_channel(group.tensors[self.target_arity], 0)

    def output_group(self, export, base, only_arities=None) -> ValuationGroup:
        inp = concat_groups(export, base) if self.include_base else export
        return self.layer.forward(inp, only_arities=only_arities)

    def parameters(self) -> list[Tensor]:
        return self.layer.parameters()


class LifelongModel:
    """One shared knowledge base plus an append-only registry of task heads."""

    def __init__(self, base_counts, seed, kb_depth=4, kb_breadth=(8, 8, 8, 8),
                 head_breadth=(8, 8, 8, 8), include_base_in_head=True):
        self.base_counts = tuple(int(c) for c in base_counts)
        self.seed = int(seed)
        self.kb_breadth = tuple(kb_breadth)
        self.head_breadth = tuple(head_breadth)
        self.include_base_in_head = include_base_in_head
        self.kb = KnowledgeBase(
            base_counts, kb_depth, kb_breadth, make_rng(seed, _KB_STREAM)
        )
        self.heads: dict[str, TaskHead] = {}

    def head_input_counts(self) -> tuple[int, int, int, int]:
        export = self.kb.export_counts()
        if self.include_base_in_head:
            return tuple(e + b for e, b in zip(export, self.base_counts))
        return export

    def add_task_head(self, task_id: str, target_arity: int, seed: int | None = None):
        if task_id in self.heads:
            raise ModelError(f"duplicate task id {task_id!r}")
        if seed is None:
            rng = make_rng(self.seed, _HEAD_STREAM, len(self.heads))
        else:
            rng = make_rng(seed)
        self.heads[task_id] = TaskHead(
            task_id,
            target_arity,
            self.head_input_counts(),
            self.head_breadth,
            rng,
            include_base=self.include_base_in_head,
        )
        return self.heads[task_id]

    def kb_forward(self, base: ValuationGroup) -> ValuationGroup:
        return self.kb.forward(base)

    def head_forward(self, task_id: str, base: ValuationGroup) -> Tensor:
        if task_id not in self.heads:
            raise ModelError(f"unknown task id {task_id!r}")
        return self.heads[task_id].forward(self.kb.forward(base), base)

    def parameters(self) -> list[Tensor]:
        out = self.kb.parameters()
        for task_id in self.heads:
            out += self.heads[task_id].parameters()
        return out

    def named_parameters(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.parameters()}

    def reinitialize(self, seed: int):
        self.seed = int(seed)
        self.kb.reinitialize(make_rng(seed, _KB_STREAM))
        for i, head in enumerate(self.heads.values()):
            head.layer.reinitialize(make_rng(seed, _HEAD_STREAM, i))


# ---------------------------------------------------------------------------
# persistence: architecture descriptor + parameter checkpoint


def save_model(stem: str, model: LifelongModel) -> None:
    lines = [
        "format=1",
        f"seed={model.seed}",
        f"base.counts={','.join(map(str, model.base_counts))}",
        f"kb.depth={model.kb.depth}",
        f"kb.breadth={','.join(map(str, model.kb_breadth))}",
        f"head.breadth={','.join(map(str, model.head_breadth))}",
        f"include_base={int(model.include_base_in_head)}",
        f"heads={','.join(model.heads)}",
    ]
    for task_id, head in model.heads.items():
        lines.append(f"head.{task_id}.arity={head.target_arity}")
    with open(f"{stem}.arch", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    ad.save_checkpoint(stem, model.named_parameters())


def load_model(stem: str) -> LifelongModel:
    with open(f"{stem}.arch", encoding="utf-8") as fh:
        entries = dict(line.strip().split("=", 1) for line in fh if line.strip())

    def ints(key):
        return tuple(int(d) for d in entries[key].split(","))

    model = LifelongModel(
        base_counts=ints("base.counts"),
        seed=int(entries["seed"]),
        kb_depth=int(entries["kb.depth"]),
        kb_breadth=ints("kb.breadth"),
        head_breadth=ints("head.breadth"),
        include_base_in_head=bool(int(entries["include_base"])),
    )
    head_ids = [h for h in entries["heads"].split(",") if h]
    for task_id in head_ids:
        model.add_task_head(task_id, int(entries[f"head.{task_id}.arity"]))
    params = ad.load_checkpoint(stem)
    for name, tensor in model.named_parameters().items():
        if name not in params:
            raise ModelError(f"checkpoint is missing parameter {name!r}")
        if params[name].shape != tensor.data.shape:
            raise ModelError(f"checkpoint shape mismatch for {name!r}")
        tensor.data = params[name]
    return model
