"""Reverse-mode automatic differentiation over dense numpy tensors, plus Adam.

A ``CompGraph`` is an append-only list of primitive-op records over integer
node ids. Leaves are bound at evaluation time, so one graph can be re-evaluated
at different points (used by the finite-difference checks). Evaluation and
backprop are pure: same inputs give bit-identical outputs, and gradient
accumulation over fan-out always follows the fixed record order.

Tests run at float64; training graphs use float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Primitive op kinds. "mul" (broadcasting elementwise product) and "reshape"
# are required to express the Gaussian log-density and the weight-slab
# decoder; everything else is the minimal audited set.
OP_KINDS = (
    "leaf", "const",
    "matmul", "add", "badd", "mul", "tanh", "exp", "log", "square",
    "sum", "mean", "slice", "concat", "clip", "minimum", "maximum", "reshape",
)


@dataclass
class OpRecord:
    kind: str
    inputs: tuple[int, ...]
    out: int
    attrs: dict = field(default_factory=dict)


class CompGraph:
    """Topologically ordered computation graph; node ids are dense ints."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.records: list[OpRecord] = []
        self.leaf_ids: list[int] = []

    def _emit(self, kind, inputs, attrs=None) -> int:
        out = len(self.records)
        for i in inputs:
            if not (0 <= i < out):
                raise ValueError(f"op {kind}: input id {i} does not precede node {out}")
        self.records.append(OpRecord(kind, tuple(inputs), out, attrs or {}))
        return out

    # -- sources ----------------------------------------------------------
    def leaf(self, name: str | None = None) -> int:
        out = self._emit("leaf", (), {"name": name})
        self.leaf_ids.append(out)
        return out

    def const(self, value) -> int:
        arr = np.asarray(value, dtype=self.dtype)
        return self._emit("const", (), {"value": arr})

    # -- primitives --------------------------------------------------------
    def matmul(self, a: int, b: int) -> int:
        return self._emit("matmul", (a, b))

    def add(self, a: int, b: int) -> int:
        return self._emit("add", (a, b))

    def badd(self, a: int, b: int) -> int:
        """Broadcasting add; gradients reduce over broadcast axes."""
        return self._emit("badd", (a, b))

    def mul(self, a: int, b: int) -> int:
        """Broadcasting elementwise product."""
        return self._emit("mul", (a, b))

    def tanh(self, a: int) -> int:
        return self._emit("tanh", (a,))

    def exp(self, a: int) -> int:
        return self._emit("exp", (a,))

    def log(self, a: int) -> int:
        return self._emit("log", (a,))

    def square(self, a: int) -> int:
        return self._emit("square", (a,))

    def sum(self, a: int, axis: int | None = None) -> int:
        return self._emit("sum", (a,), {"axis": axis})

    def mean(self, a: int, axis: int | None = None) -> int:
        return self._emit("mean", (a,), {"axis": axis})

    def slice(self, a: int, starts: tuple[int, ...], stops: tuple[int, ...]) -> int:
        return self._emit("slice", (a,), {"starts": tuple(starts), "stops": tuple(stops)})

    def concat(self, parts: list[int], axis: int = 0) -> int:
        return self._emit("concat", tuple(parts), {"axis": axis})

    def clip(self, a: int, lo: float, hi: float) -> int:
        """Clip to [lo, hi]; gradient passes through at the boundaries."""
        return self._emit("clip", (a,), {"lo": float(lo), "hi": float(hi)})

    def minimum(self, a: int, b: int) -> int:
        """Elementwise min; at ties the gradient flows to the first argument."""
        return self._emit("minimum", (a, b))

    def maximum(self, a: int, b: int) -> int:
        return self._emit("maximum", (a, b))

    def reshape(self, a: int, shape: tuple[int, ...]) -> int:
        return self._emit("reshape", (a,), {"shape": tuple(shape)})

    # -- sugar (emits primitive records only) -------------------------------
    def neg(self, a: int) -> int:
        return self.mul(a, self.const(-1.0))

    def sub(self, a: int, b: int) -> int:
        return self.add(a, self.neg(b))

    def scale(self, a: int, c: float) -> int:
        return self.mul(a, self.const(c))

    def add_const(self, a: int, c) -> int:
        return self.badd(a, self.const(c))

    def sigmoid(self, a: int) -> int:
        # sigmoid(x) = 0.5 * tanh(x / 2) + 0.5
        return self.add_const(self.scale(self.tanh(self.scale(a, 0.5)), 0.5), 0.5)


def _shape_err(idx: int, rec: OpRecord, msg: str) -> ValueError:
    return ValueError(f"op record {idx} ({rec.kind}): {msg}")


def forward(graph: CompGraph, inputs: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
    """Evaluate every node. ``inputs`` binds leaf ids to arrays."""
    values: dict[int, np.ndarray] = {}
    for idx, rec in enumerate(graph.records):
        if rec.kind == "leaf":
            if rec.out not in inputs:
                name = rec.attrs.get("name")
                raise ValueError(f"leaf node {rec.out} ({name!r}) not bound")
            values[rec.out] = np.asarray(inputs[rec.out])
            continue
        if rec.kind == "const":
            values[rec.out] = rec.attrs["value"]
            continue
        x = [values[i] for i in rec.inputs]
        if rec.kind == "matmul":
            if x[0].ndim != 2 or x[1].ndim != 2 or x[0].shape[1] != x[1].shape[0]:
                raise _shape_err(idx, rec, f"incompatible shapes {x[0].shape} @ {x[1].shape}")
            values[rec.out] = x[0] @ x[1]
        elif rec.kind == "add":
            if x[0].shape != x[1].shape:
                raise _shape_err(idx, rec, f"shape mismatch {x[0].shape} vs {x[1].shape}")
            values[rec.out] = x[0] + x[1]
        elif rec.kind == "badd":
            try:
                values[rec.out] = x[0] + x[1]
            except ValueError:
                raise _shape_err(idx, rec, f"not broadcastable {x[0].shape} vs {x[1].shape}")
        elif rec.kind == "mul":
            try:
                values[rec.out] = x[0] * x[1]
            except ValueError:
                raise _shape_err(idx, rec, f"not broadcastable {x[0].shape} vs {x[1].shape}")
        elif rec.kind == "tanh":
            values[rec.out] = np.tanh(x[0])
        elif rec.kind == "exp":
            values[rec.out] = np.exp(x[0])
        elif rec.kind == "log":
            values[rec.out] = np.log(x[0])
        elif rec.kind == "square":
            values[rec.out] = x[0] * x[0]
        elif rec.kind == "sum":
            values[rec.out] = np.sum(x[0], axis=rec.attrs["axis"])
        elif rec.kind == "mean":
            values[rec.out] = np.mean(x[0], axis=rec.attrs["axis"])
        elif rec.kind == "slice":
            starts, stops = rec.attrs["starts"], rec.attrs["stops"]
            if len(starts) != x[0].ndim:
                raise _shape_err(idx, rec, f"slice rank {len(starts)} vs array rank {x[0].ndim}")
            sl = tuple(slice(s, e) for s, e in zip(starts, stops))
            values[rec.out] = x[0][sl]
        elif rec.kind == "concat":
            try:
                values[rec.out] = np.concatenate(x, axis=rec.attrs["axis"])
            except ValueError as exc:
                raise _shape_err(idx, rec, str(exc))
        elif rec.kind == "clip":
            values[rec.out] = np.clip(x[0], rec.attrs["lo"], rec.attrs["hi"])
        elif rec.kind == "minimum":
            if x[0].shape != x[1].shape:
                raise _shape_err(idx, rec, f"shape mismatch {x[0].shape} vs {x[1].shape}")
            values[rec.out] = np.minimum(x[0], x[1])
        elif rec.kind == "maximum":
            if x[0].shape != x[1].shape:
                raise _shape_err(idx, rec, f"shape mismatch {x[0].shape} vs {x[1].shape}")
            values[rec.out] = np.maximum(x[0], x[1])
        elif rec.kind == "reshape":
            try:
                values[rec.out] = x[0].reshape(rec.attrs["shape"])
            except ValueError:
                raise _shape_err(idx, rec, f"cannot reshape {x[0].shape} to {rec.attrs['shape']}")
        else:
            raise _shape_err(idx, rec, "unknown op kind")
    return values


def _reduce_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def backward(graph: CompGraph, loss_node: int,
             values: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
    """Gradient of the scalar at ``loss_node`` w.r.t. every leaf.

    ``values`` is a full forward() result for this graph. Accumulation over
    fan-out happens in reverse record order, which fixes the floating-point
    reduction order.
    """
    loss_val = values[loss_node]
    if np.asarray(loss_val).size != 1:
        raise ValueError(f"loss node {loss_node} is not scalar (shape {np.shape(loss_val)})")

    grads: dict[int, np.ndarray] = {loss_node: np.ones_like(np.asarray(loss_val))}
    owned: set[int] = set()

    def acc(node: int, g: np.ndarray) -> None:
        # First contribution is borrowed; the second allocates a sum we own,
        # after which further fan-out accumulates in place.
        if node not in grads:
            grads[node] = g
        elif node in owned:
            grads[node] += g
        else:
            grads[node] = grads[node] + g
            owned.add(node)

    for rec in reversed(graph.records[: loss_node + 1]):
        if rec.out not in grads or rec.kind in ("leaf", "const"):
            continue
        g = grads[rec.out]
        x = [values[i] for i in rec.inputs]
        if rec.kind == "matmul":
            acc(rec.inputs[0], g @ x[1].T)
            acc(rec.inputs[1], x[0].T @ g)
        elif rec.kind == "add":
            acc(rec.inputs[0], g)
            acc(rec.inputs[1], g)
        elif rec.kind == "badd":
            acc(rec.inputs[0], _reduce_to_shape(g, x[0].shape))
            acc(rec.inputs[1], _reduce_to_shape(g, x[1].shape))
        elif rec.kind == "mul":
            acc(rec.inputs[0], _reduce_to_shape(g * x[1], x[0].shape))
            acc(rec.inputs[1], _reduce_to_shape(g * x[0], x[1].shape))
        elif rec.kind == "tanh":
            y = values[rec.out]
            acc(rec.inputs[0], g * (1.0 - y * y))
        elif rec.kind == "exp":
            acc(rec.inputs[0], g * values[rec.out])
        elif rec.kind == "log":
            acc(rec.inputs[0], g / x[0])
        elif rec.kind == "square":
            acc(rec.inputs[0], g * (2.0 * x[0]))
        elif rec.kind == "sum":
            ax = rec.attrs["axis"]
            if ax is None:
                acc(rec.inputs[0], np.broadcast_to(g, x[0].shape).copy())
            else:
                acc(rec.inputs[0], np.broadcast_to(np.expand_dims(g, ax), x[0].shape).copy())
        elif rec.kind == "mean":
            ax = rec.attrs["axis"]
            if ax is None:
                n = x[0].size
                acc(rec.inputs[0], np.broadcast_to(g / n, x[0].shape).copy())
            else:
                n = x[0].shape[ax]
                acc(rec.inputs[0], np.broadcast_to(np.expand_dims(g / n, ax), x[0].shape).copy())
        elif rec.kind == "slice":
            starts, stops = rec.attrs["starts"], rec.attrs["stops"]
            gx = np.zeros_like(x[0])
            gx[tuple(slice(s, e) for s, e in zip(starts, stops))] = g
            acc(rec.inputs[0], gx)
        elif rec.kind == "concat":
            ax = rec.attrs["axis"]
            off = 0
            for node, part in zip(rec.inputs, x):
                n = part.shape[ax]
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(off, off + n)
                acc(node, g[tuple(sl)].copy())
                off += n
        elif rec.kind == "clip":
            lo, hi = rec.attrs["lo"], rec.attrs["hi"]
            mask = (x[0] >= lo) & (x[0] <= hi)
            acc(rec.inputs[0], g * mask)
        elif rec.kind == "minimum":
            take_a = x[0] <= x[1]
            acc(rec.inputs[0], g * take_a)
            acc(rec.inputs[1], g * ~take_a)
        elif rec.kind == "maximum":
            take_a = x[0] >= x[1]
            acc(rec.inputs[0], g * take_a)
            acc(rec.inputs[1], g * ~take_a)
        elif rec.kind == "reshape":
            acc(rec.inputs[0], g.reshape(x[0].shape))

    out = {}
    for lid in graph.leaf_ids:
        if lid in grads:
            out[lid] = grads[lid]
        else:
            out[lid] = np.zeros_like(values[lid])
    return out


def grad_check(build, point: np.ndarray, step: float = 1e-6) -> float:
    """Compare backward() against central differences, componentwise.

    ``build(graph, x_node) -> loss_node`` constructs a scalar-valued graph of
    one input. Returns the worst relative error, with denominator
    max(1, |analytic|). Results near clip/min kinks are unreliable and it is
    the caller's job to probe away from them.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    point = np.asarray(point, dtype=np.float64)
    g = CompGraph(np.float64)
    x = g.leaf("x")
    loss = build(g, x)
    values = forward(g, {x: point})
    analytic = backward(g, loss, values)[x]

    def f(p):
        v = forward(g, {x: p})[loss]
        return float(np.asarray(v).reshape(()))

    worst = 0.0
    flat = point.ravel()
    for i in range(flat.size):
        lo = point.copy().ravel()
        hi = point.copy().ravel()
        lo[i] -= step
        hi[i] += step
        num = (f(hi.reshape(point.shape)) - f(lo.reshape(point.shape))) / (2.0 * step)
        ana = float(analytic.ravel()[i])
        if not (np.isfinite(num) and np.isfinite(ana)):
            raise ValueError(f"non-finite value in grad check at component {i}")
        err = abs(ana - num) / max(1.0, abs(ana))
        worst = max(worst, err)
    return worst


@dataclass
class AdamState:
    """Adam moments and hyperparameters for one flat parameter array."""

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    _s1: np.ndarray | None = None
    _s2: np.ndarray | None = None

    def ensure(self, params: np.ndarray) -> None:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        if self.m.shape != params.shape:
            raise ValueError(f"Adam state shape {self.m.shape} vs params {params.shape}")
        if self._s1 is None or self._s1.shape != params.shape:
            self._s1 = np.empty_like(params)
            self._s2 = np.empty_like(params)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> np.ndarray:
    """One bias-corrected Adam update; moments mutate in place.

    Works with two scratch buffers so the multi-million-parameter update does
    not allocate; params must share the moments' dtype.
    """
    if params.shape != grads.shape:
        raise ValueError(f"params shape {params.shape} vs grads shape {grads.shape}")
    if not np.all(np.isfinite(grads)):
        raise ValueError("non-finite gradient passed to adam_step")
    state.ensure(params)
    state.step += 1
    t = state.step
    grads = grads.astype(params.dtype, copy=False)
    s1, s2 = state._s1, state._s2

    state.m *= state.beta1
    np.multiply(grads, 1.0 - state.beta1, out=s1)
    state.m += s1
    state.v *= state.beta2
    np.multiply(grads, grads, out=s1)
    s1 *= 1.0 - state.beta2
    state.v += s1

    np.divide(state.m, 1.0 - state.beta1 ** t, out=s1)  # m-hat
    np.divide(state.v, 1.0 - state.beta2 ** t, out=s2)  # v-hat
    np.sqrt(s2, out=s2)
    s2 += state.eps
    np.divide(s1, s2, out=s1)
    s1 *= state.lr
    params -= s1
    return params
