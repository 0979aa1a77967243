"""Dense float64 tensors with reverse-mode automatic differentiation.

The operation set is deliberately small: affine maps, pointwise
activations, axis reductions with extremum gradient routing, axis
insertion, axis permutation, concatenation, a clamped weighted binary
cross-entropy, and a masked temperature softmax.  That is everything the
neural logic layers and the offline actor-critic need.  There is no
general broadcasting and no GPU path; every operation materialises a new
array, and all arithmetic is float64.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

PREDICTION_CLAMP = 1e-7


class AutodiffError(Exception):
    pass


class ShapeError(AutodiffError):
    pass


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (evaluation fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense float64 array plus edges into the computation graph.

    Forward values are immutable once created; only the optimizer
    reassigns ``data`` on parameter tensors between training steps.
    Tensors hash by identity, so gradient maps key on the tensor object.
    """

    __slots__ = ("data", "requires_grad", "name", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    # pickling detaches: graph edges hold closures and never cross processes
    def __getstate__(self):
        return (self.data, self.requires_grad, self.name)

    def __setstate__(self, state):
        self.data, self.requires_grad, self.name = state
        self._parents = ()
        self._grad_fn = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"


def parameter(data, name: str) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], grad_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._grad_fn = grad_fn
    return out


# ---------------------------------------------------------------------------
# forward operations


def affine(weights: Tensor, bias: Tensor, x: Tensor) -> Tensor:
    """y[..., j] = sum_i x[..., i] * W[i, j] + b[j]."""
    if weights.ndim != 2 or bias.shape != (weights.shape[1],):
        raise ShapeError(
            f"affine: weights {weights.shape} and bias {bias.shape} are inconsistent"
        )
    if x.ndim < 1 or x.shape[-1] != weights.shape[0]:
        raise ShapeError(
            f"affine: input shape {x.shape} does not match weights {weights.shape}"
        )
    data = np.matmul(x.data, weights.data) + bias.data

    def grad_fn(g):
        lead = int(np.prod(x.shape[:-1], dtype=np.int64))
        g2 = g.reshape(lead, weights.shape[1])
        x2 = x.data.reshape(lead, weights.shape[0])
        gw = x2.T @ g2
        gb = g2.sum(axis=0)
        gx = np.matmul(g, weights.data.T)
        return gw, gb, gx

    return _result(data, (weights, bias, x), grad_fn)


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)  # overflow-safe 1/(1+exp(-x))

    def grad_fn(g):
        return (g * out * (1.0 - out),)

    return _result(out, (x,), grad_fn)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def grad_fn(g):
        return (g * (1.0 - out * out),)

    return _result(out, (x,), grad_fn)


def _check_axis(x: Tensor, axis: int, extra: int = 0) -> int:
    n = x.ndim + extra
    if not -n <= axis < n:
        raise ShapeError(f"axis {axis} out of range for shape {x.shape}")
    return axis % n


def reduce(x: Tensor, axis: int, mode: str) -> Tensor:
    """Drop ``axis`` taking the max or min; gradient routes to the
    arg-extremum element, ties broken by lowest index."""
    if mode not in ("max", "min"):
        raise ValueError(f"reduce mode must be 'max' or 'min', got {mode!r}")
    axis = _check_axis(x, axis)
    data = x.data.max(axis=axis) if mode == "max" else x.data.min(axis=axis)

    def grad_fn(g):
        # argmax/argmin return the lowest index on ties
        idx = x.data.argmax(axis=axis) if mode == "max" else x.data.argmin(axis=axis)
        gx = np.zeros_like(x.data)
        np.put_along_axis(
            gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis
        )
        return (gx,)

    return _result(data, (x,), grad_fn)


def expand(x: Tensor, axis: int, size: int) -> Tensor:
    """Insert a new axis of length ``size``; all slices equal ``x``."""
    if size < 1:
        raise ValueError(f"expand size must be >= 1, got {size}")
    axis = _check_axis(x, axis, extra=1)
    shape = x.shape[:axis] + (size,) + x.shape[axis:]
    data = np.broadcast_to(np.expand_dims(x.data, axis), shape)

    def grad_fn(g):
        return (g.sum(axis=axis),)

    return _result(data, (x,), grad_fn)


def permute(x: Tensor, order: tuple[int, ...]) -> Tensor:
    order = tuple(order)
    if sorted(order) != list(range(x.ndim)):
        raise ShapeError(f"{order} is not a permutation of axes for shape {x.shape}")
    data = np.transpose(x.data, order)
    inverse = tuple(np.argsort(order))

    def grad_fn(g):
        return (np.transpose(g, inverse),)

    return _result(data, (x,), grad_fn)


def concat(xs: list[Tensor], axis: int) -> Tensor:
    if not xs:
        raise ShapeError("concat of an empty list")
    axis = _check_axis(xs[0], axis)
    base = xs[0].shape
    ndim = len(base)
    for t in xs[1:]:
        s = t.shape
        ok = len(s) == ndim
        if ok:
            for i in range(ndim):
                if i != axis and s[i] != base[i]:
                    ok = False
                    break
        if not ok:
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in xs]}")
    data = np.concatenate([t.data for t in xs], axis=axis)
    offsets = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _result(data, tuple(xs), grad_fn)


def select_channel(x: Tensor, index: int) -> Tensor:
    """Pick one entry of the last axis, dropping it."""
    if not 0 <= index < x.shape[-1]:
        raise ShapeError(f"channel {index} out of range for shape {x.shape}")
    data = x.data[..., index]

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[..., index] = g
        return (gx,)

    return _result(data, (x,), grad_fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(int(d) for d in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.data.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    data = x.data.reshape(shape)

    def grad_fn(g):
        return (g.reshape(x.shape),)

    return _result(data, (x,), grad_fn)


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(x.data * c, (x,), lambda g: (g * c,))


def tsum(x: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        data = np.asarray(x.data.sum())

        def grad_fn(g):
            return (np.full_like(x.data, float(g)),)

    else:
        ax = _check_axis(x, axis)
        data = x.data.sum(axis=ax)

        def grad_fn(g):
            return (np.broadcast_to(np.expand_dims(g, ax), x.shape).copy(),)

    return _result(data, (x,), grad_fn)


def mean(x: Tensor) -> Tensor:
    size = x.data.size
    data = np.asarray(x.data.mean())

    def grad_fn(g):
        return (np.full_like(x.data, float(g) / size),)

    return _result(data, (x,), grad_fn)


def bce_loss(pred: Tensor, target, pos_weight: float = 1.0) -> Tensor:
    """Mean of -[w*y*log(p) + (1-y)*log(1-p)] with p clamped to
    [1e-7, 1 - 1e-7]; gradient is zero at clamped entries."""
    y = target.data if isinstance(target, Tensor) else np.asarray(target, float)
    if pred.shape != y.shape:
        raise ShapeError(f"bce_loss: shapes {pred.shape} and {y.shape} differ")
    w = float(pos_weight)
    lo, hi = PREDICTION_CLAMP, 1.0 - PREDICTION_CLAMP
    p = np.clip(pred.data, lo, hi)
    terms = w * y * np.log(p) + (1.0 - y) * np.log(1.0 - p)
    data = np.asarray(-terms.mean())
    size = y.size

    def grad_fn(g):
        inside = (pred.data > lo) & (pred.data < hi)
        gp = -(w * y / p - (1.0 - y) / (1.0 - p)) * (float(g) / size)
        return (np.where(inside, gp, 0.0),)

    return _result(data, (pred,), grad_fn)


def masked_softmax(x: Tensor, valid, temperature: float = 1.0) -> Tensor:
    """Temperature softmax over the last axis; entries where ``valid`` is
    False get probability exactly zero and receive zero gradient."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    v = np.asarray(valid, dtype=bool)
    if v.shape != x.shape:
        raise ShapeError(f"masked_softmax: mask {v.shape} does not match {x.shape}")
    if not v.any(axis=-1).all():
        raise ValueError("masked_softmax: a row has no valid entry")
    t = float(temperature)
    z = np.where(v, x.data / t, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(v, np.exp(z), 0.0)
    out = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        inner = (out * g).sum(axis=-1, keepdims=True)
        return (out * (g - inner) / t,)

    return _result(out, (x,), grad_fn)


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Exact reverse-mode gradients of a scalar loss for every tensor with
    requires_grad=True reachable from it.  Each graph node is visited once."""
    if loss.shape != ():
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    by_id: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None or node._grad_fn is None:
            continue
        parent_grads = node._grad_fn(g)
        for p, pg in zip(node._parents, parent_grads):
            if not p.requires_grad or pg is None:
                continue
            key = id(p)
            by_id[key] = p
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg

    return {
        by_id[k]: v
        for k, v in grads.items()
        if by_id[k]._grad_fn is None and by_id[k].requires_grad
    }


def finite_difference_gradient(f, params: list[Tensor], h: float = 1e-5):
    """Central-difference gradients of a scalar tensor function, used as the
    independent oracle for backward()."""
    grads = {}
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = float(f().data)
            flat[i] = orig - h
            lo = float(f().data)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * h)
        grads[p] = g
    return grads


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    """Adam accumulators; moment arrays are parallel to the parameter list."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)


def adam_step(
    params: list[Tensor], grads: dict[Tensor, np.ndarray], state: OptimizerState
) -> OptimizerState:
    """One Adam update with bias correction; mutates params and state."""
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for i, p in enumerate(params):
        if p not in grads:
            raise AutodiffError(f"missing gradient for parameter {p.name or i!r}")
        g = grads[p]
        if g.shape != p.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match parameter {p.data.shape}"
            )
        m = state.first_moment[i] = b1 * state.first_moment[i] + (1 - b1) * g
        v = state.second_moment[i] = b2 * state.second_moment[i] + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p.data = p.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return state


class Adam:
    """Convenience wrapper binding a parameter list to an OptimizerState."""

    def __init__(self, params: list[Tensor], learning_rate: float, **kwargs):
        self.params = list(params)
        self.state = OptimizerState(learning_rate=learning_rate, **kwargs)

    def step(self, grads: dict[Tensor, np.ndarray]):
        adam_step(self.params, grads, self.state)


# ---------------------------------------------------------------------------
# checkpoints: plain-text manifest + little-endian float64 blob


def save_checkpoint(stem: str, named: dict[str, Tensor]) -> None:
    lines = ["format=1", "dtype=float64", "endian=little", f"count={len(named)}"]
    blob = bytearray()
    for name, tensor in named.items():
        arr = np.asarray(tensor.data, dtype="<f8")
        shape = ",".join(str(d) for d in arr.shape)
        lines.append(f"param.{name}.shape={shape}")
        lines.append(f"param.{name}.offset={len(blob)}")
        blob.extend(arr.tobytes())
    with open(f"{stem}.manifest", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(f"{stem}.blob", "wb") as fh:
        fh.write(bytes(blob))


def load_checkpoint(stem: str) -> dict[str, np.ndarray]:
    with open(f"{stem}.manifest", encoding="utf-8") as fh:
        entries = dict(
            line.strip().split("=", 1) for line in fh if line.strip()
        )
    blob = np.fromfile(f"{stem}.blob", dtype="<f8")
    out: dict[str, np.ndarray] = {}
    names = []
    for key in entries:
        if key.startswith("param.") and key.endswith(".shape"):
            names.append(key[len("param.") : -len(".shape")])
    for name in names:
        shape_txt = entries[f"param.{name}.shape"]
        shape = tuple(int(d) for d in shape_txt.split(",") if d != "")
        offset = int(entries[f"param.{name}.offset"]) // 8
        size = int(np.prod(shape)) if shape else 1
        out[name] = blob[offset : offset + size].reshape(shape).astype(np.float64)
    return out
