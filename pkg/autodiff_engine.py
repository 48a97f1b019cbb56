#!/usr/bin/env python3
"""
Reverse-Mode Automatic Differentiation Engine
Dense float64 tensors, an explicit recording tape and a reverse pass that is
just large enough for the dual-head calibration network and its losses
"""

import contextvars
import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, softmax

from lab_errors import ContractViolation, DomainError

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-12
BATCHNORM_EPS = 1e-5
BATCHNORM_MOMENTUM = 0.9
DROPOUT_RATE = 0.1


class OpKind(Enum):
    """Operations the tape knows how to differentiate"""
    MATMUL = "matmul"
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    MUL_SCALAR = "mul-scalar"
    ADD_SCALAR = "add-scalar"
    RELU = "relu"
    SIGMOID = "sigmoid"
    SOFTMAX_ROWS = "softmax-rows"
    LOG = "log"
    CLAMP_MIN = "clamp-min"
    SQUARE = "square"
    SQRT = "sqrt"
    MEAN = "mean"
    SUM = "sum"
    CONCAT_ROWS = "concat-rows"
    BATCHNORM = "batchnorm"
    DROPOUT = "dropout"


class Mode(Enum):
    """Forward mode; only dropout and batchnorm look at it"""
    TRAIN = "train"
    EVAL = "eval"


@dataclass(frozen=True, eq=False)
class Tensor:
    """Immutable dense float64 array, optionally bound to a node of a tape"""
    data: np.ndarray
    node_id: Optional[int] = None
    tape_key: Optional[int] = None

    def __post_init__(self):
        array = np.array(self.data, dtype=np.float64)
        array.setflags(write=False)
        object.__setattr__(self, "data", array)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Writable copy of the payload"""
        return np.array(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)}, node={self.node_id})"


@dataclass
class Node:
    """One tape entry: a leaf or an op applied to earlier nodes"""
    node_id: int
    op: Optional[OpKind]
    inputs: Tuple[int, ...]
    output: Tensor
    mode: Mode = Mode.EVAL
    attrs: Dict[str, Any] = field(default_factory=dict)
    saved: Dict[str, Any] = field(default_factory=dict)
    name: Optional[str] = None
    trainable: bool = False


_active_tape: contextvars.ContextVar = contextvars.ContextVar("active_tape", default=None)
_tape_keys = itertools.count(1)


def current_tape() -> Optional["Tape"]:
    """The tape ops are currently recorded on, if any"""
    return _active_tape.get()


class Tape:
    """
    Ordered record of a computation

    Used as a context manager; while active, every `apply` call appends a node.
    Nodes are appended in execution order so inputs always precede consumers.
    """

    def __init__(self):
        self.key = next(_tape_keys)
        self.nodes: List[Node] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, node_id: int) -> Node:
        return self.nodes[node_id]

    def leaf(self, array: Any, name: Optional[str] = None, trainable: bool = True) -> Tensor:
        """Register an input array; trainable leaves receive gradients"""
        node_id = len(self.nodes)
        tensor = Tensor(array, node_id=node_id, tape_key=self.key)
        self.nodes.append(Node(node_id, None, (), tensor, name=name, trainable=trainable))
        return tensor

    def owns(self, tensor: Tensor) -> bool:
        return tensor.tape_key == self.key and tensor.node_id is not None

    def ensure(self, tensor: Tensor) -> int:
        """Node id of a tensor, recording foreign tensors as constant leaves"""
        if self.owns(tensor):
            return tensor.node_id
        return self.leaf(tensor.data, trainable=False).node_id

    def record(self, op: OpKind, input_ids: Sequence[int], output: np.ndarray, mode: Mode,
               attrs: Dict[str, Any], saved: Dict[str, Any]) -> Tensor:
        node_id = len(self.nodes)
        tensor = Tensor(output, node_id=node_id, tape_key=self.key)
        self.nodes.append(Node(node_id, op, tuple(input_ids), tensor, mode, dict(attrs), saved))
        return tensor

    def trainable_leaves(self) -> List[Node]:
        return [n for n in self.nodes if n.op is None and n.trainable]

    def replay(self) -> List[np.ndarray]:
        """Recompute every node from the stored leaves, reusing saved dropout masks"""
        outputs: List[np.ndarray] = []
        for node in self.nodes:
            if node.op is None:
                outputs.append(node.output.data)
                continue
            xs = [outputs[i] for i in node.inputs]
            out, _ = _forward(node.op, xs, node.mode, None, node.attrs, node.saved)
            outputs.append(out)
        return outputs


class GradientMap(Mapping[int, Tensor]):
    """Reverse-pass result: trainable leaf id -> gradient of the same shape"""

    def __init__(self, grads: Dict[int, Tensor], names: Dict[int, Optional[str]]):
        self._grads = grads
        self._names = names

    def __getitem__(self, node_id: int) -> Tensor:
        return self._grads[node_id]

    def __iter__(self) -> Iterator[int]:
        return iter(self._grads)

    def __len__(self) -> int:
        return len(self._grads)

    def by_name(self) -> Dict[str, np.ndarray]:
        """Gradients keyed by leaf name (unnamed leaves are skipped)"""
        return {self._names[i]: g.numpy() for i, g in self._grads.items() if self._names.get(i)}


# ---------------------------------------------------------------------------
# Forward / backward rules
# ---------------------------------------------------------------------------

def _violation(op: OpKind, shapes: Sequence[Tuple[int, ...]], detail: str) -> ContractViolation:
    return ContractViolation(f"{op.value}: {detail}; got shapes {[list(s) for s in shapes]}")


def _check_shapes(op: OpKind, xs: Sequence[np.ndarray], attrs: Dict[str, Any]):
    shapes = [x.shape for x in xs]
    arity = {OpKind.MATMUL: 2, OpKind.ADD: 2, OpKind.SUB: 2, OpKind.MUL: 2, OpKind.BATCHNORM: 3}
    expected = arity.get(op, None if op is OpKind.CONCAT_ROWS else 1)
    if expected is not None and len(xs) != expected:
        raise _violation(op, shapes, f"expects {expected} inputs")
    if op is OpKind.MATMUL:
        a, b = shapes
        if len(a) != 2 or len(b) != 2 or a[1] != b[0]:
            raise _violation(op, shapes, "inner dimensions must agree on 2-D operands")
    elif op is OpKind.ADD:
        a, b = shapes
        row_bias = len(a) == 2 and (b == (a[1],) or b == (1, a[1]))
        if a != b and not row_bias:
            raise _violation(op, shapes, "shapes must match or second operand must be a row bias")
    elif op in (OpKind.SUB, OpKind.MUL):
        if shapes[0] != shapes[1]:
            raise _violation(op, shapes, "shapes must match exactly")
    elif op is OpKind.SOFTMAX_ROWS:
        if len(shapes[0]) != 2:
            raise _violation(op, shapes, "expects a 2-D input")
    elif op is OpKind.CONCAT_ROWS:
        if not xs or any(len(s) != 2 for s in shapes) or len({s[1] for s in shapes}) != 1:
            raise _violation(op, shapes, "expects 2-D inputs with equal column counts")
    elif op is OpKind.BATCHNORM:
        x, gamma, beta = shapes
        if len(x) != 2 or gamma != (x[1],) or beta != (x[1],):
            raise _violation(op, shapes, "expects x [n,m], gamma [m], beta [m]")
        if attrs.get("running_mean") is None or attrs.get("running_var") is None:
            raise _violation(op, shapes, "running statistics are required")
    elif op in (OpKind.MUL_SCALAR, OpKind.ADD_SCALAR, OpKind.CLAMP_MIN):
        key = "floor" if op is OpKind.CLAMP_MIN else "scalar"
        if key not in attrs:
            raise _violation(op, shapes, f"attribute {key!r} is required")


def _forward(op: OpKind, xs: List[np.ndarray], mode: Mode, rng: Optional[np.random.Generator],
             attrs: Dict[str, Any], saved: Dict[str, Any]) -> Tuple[np.ndarray, Dict[str, Any]]:
    saved = dict(saved)
    if op is OpKind.MATMUL:
        return xs[0] @ xs[1], saved
    if op is OpKind.ADD:
        a, b = xs
        return a + (b.reshape(1, -1) if b.shape != a.shape else b), saved
    if op is OpKind.SUB:
        return xs[0] - xs[1], saved
    if op is OpKind.MUL:
        return xs[0] * xs[1], saved
    if op is OpKind.MUL_SCALAR:
        return xs[0] * float(attrs["scalar"]), saved
    if op is OpKind.ADD_SCALAR:
        return xs[0] + float(attrs["scalar"]), saved
    if op is OpKind.RELU:
        return np.maximum(xs[0], 0.0), saved
    if op is OpKind.SIGMOID:
        return expit(xs[0]), saved
    if op is OpKind.SOFTMAX_ROWS:
        return softmax(xs[0], axis=1), saved
    if op is OpKind.LOG:
        if np.any(xs[0] <= 0.0):
            raise DomainError(f"log: input must be strictly positive (min {xs[0].min():.3g}); clamp first")
        return np.log(xs[0]), saved
    if op is OpKind.CLAMP_MIN:
        return np.maximum(xs[0], float(attrs["floor"])), saved
    if op is OpKind.SQUARE:
        return xs[0] * xs[0], saved
    if op is OpKind.SQRT:
        if np.any(xs[0] < -1e-12):
            raise DomainError(f"sqrt: input must be nonnegative (min {xs[0].min():.3g})")
        return np.sqrt(np.maximum(xs[0], 0.0)), saved
    if op is OpKind.MEAN:
        return np.array(xs[0].mean()), saved
    if op is OpKind.SUM:
        return np.array(xs[0].sum()), saved
    if op is OpKind.CONCAT_ROWS:
        return np.vstack(xs), saved
    if op is OpKind.BATCHNORM:
        return _batchnorm_forward(xs, mode, attrs, saved)
    if op is OpKind.DROPOUT:
        if mode is Mode.EVAL:
            return xs[0], saved
        if "mask" not in saved:
            if rng is None:
                raise ContractViolation("dropout: train mode needs a random generator")
            p = float(attrs.get("p", DROPOUT_RATE))
            saved["mask"] = (rng.random(xs[0].shape) >= p) / (1.0 - p)
        return xs[0] * saved["mask"], saved
    raise ContractViolation(f"unsupported op {op}")


def _batchnorm_forward(xs, mode, attrs, saved):
    x, gamma, beta = xs
    eps = float(attrs.get("eps", BATCHNORM_EPS))
    if mode is Mode.TRAIN:
        n = x.shape[0]
        if n < 2:
            raise ContractViolation(f"batchnorm: train mode needs at least 2 rows, got {n}")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        saved["batch_mean"] = mean
        saved["batch_var_unbiased"] = var * n / (n - 1)
    else:
        mean = np.asarray(attrs["running_mean"], dtype=np.float64)
        var = np.asarray(attrs["running_var"], dtype=np.float64)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    saved["xhat"] = xhat
    saved["inv_std"] = inv_std
    return gamma * xhat + beta, saved


def _backward(node: Node, g: np.ndarray, xs: List[np.ndarray]) -> List[np.ndarray]:
    op, out, saved = node.op, node.output.data, node.saved
    if op is OpKind.MATMUL:
        return [g @ xs[1].T, xs[0].T @ g]
    if op is OpKind.ADD:
        a, b = xs
        gb = g if b.shape == a.shape else g.sum(axis=0).reshape(b.shape)
        return [g, gb]
    if op is OpKind.SUB:
        return [g, -g]
    if op is OpKind.MUL:
        return [g * xs[1], g * xs[0]]
    if op is OpKind.MUL_SCALAR:
        return [g * float(node.attrs["scalar"])]
    if op is OpKind.ADD_SCALAR:
        return [g]
    if op is OpKind.RELU:
        return [g * (xs[0] > 0.0)]
    if op is OpKind.SIGMOID:
        return [g * out * (1.0 - out)]
    if op is OpKind.SOFTMAX_ROWS:
        return [out * (g - (g * out).sum(axis=1, keepdims=True))]
    if op is OpKind.LOG:
        return [g / xs[0]]
    if op is OpKind.CLAMP_MIN:
        return [g * (xs[0] > float(node.attrs["floor"]))]
    if op is OpKind.SQUARE:
        return [g * 2.0 * xs[0]]
    if op is OpKind.SQRT:
        safe = np.where(out > 0.0, out, 1.0)
        return [np.where(out > 0.0, g * 0.5 / safe, 0.0)]
    if op is OpKind.MEAN:
        return [np.full(xs[0].shape, float(g) / xs[0].size)]
    if op is OpKind.SUM:
        return [np.full(xs[0].shape, float(g))]
    if op is OpKind.CONCAT_ROWS:
        grads, start = [], 0
        for x in xs:
            grads.append(g[start:start + x.shape[0]])
            start += x.shape[0]
        return grads
    if op is OpKind.BATCHNORM:
        x, gamma, _ = xs
        xhat, inv_std = saved["xhat"], saved["inv_std"]
        dgamma = (g * xhat).sum(axis=0)
        dbeta = g.sum(axis=0)
        dxhat = g * gamma
        if node.mode is Mode.TRAIN:
            n = x.shape[0]
            dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dx = dxhat * inv_std
        return [dx, dgamma, dbeta]
    if op is OpKind.DROPOUT:
        if node.mode is Mode.EVAL:
            return [g]
        return [g * saved["mask"]]
    raise ContractViolation(f"unsupported op {op}")


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------

def apply(op: OpKind, inputs: Sequence[Tensor], mode: Mode = Mode.EVAL,
          rng: Optional[np.random.Generator] = None, **attrs) -> Tensor:
    """
    Run one op and record it on the active tape

    Args:
        op: operation kind
        inputs: operand tensors
        mode: train or eval (dropout/batchnorm only)
        rng: generator for dropout masks
        **attrs: op attributes (scalar, floor, p, running_mean, running_var, eps)

    Returns:
        Output tensor; bound to the active tape when one is open
    """
    xs = [t.data for t in inputs]
    _check_shapes(op, xs, attrs)
    out, saved = _forward(op, xs, mode, rng, attrs, {})
    tape = current_tape()
    if tape is None:
        return Tensor(out)
    ids = [tape.ensure(t) for t in inputs]
    return tape.record(op, ids, out, mode, attrs, saved)


def backward(scalar_output: Tensor) -> GradientMap:
    """Gradients of a one-element tensor with respect to every trainable leaf"""
    tape = current_tape()
    if tape is None or not tape.owns(scalar_output):
        raise ContractViolation("backward: output is not recorded on the active tape")
    if scalar_output.size != 1:
        raise ContractViolation(f"backward: output must have one element, got shape {list(scalar_output.shape)}")

    grads: Dict[int, np.ndarray] = {scalar_output.node_id: np.ones_like(scalar_output.data)}
    for node in reversed(tape.nodes[:scalar_output.node_id + 1]):
        g = grads.get(node.node_id)
        if g is None or node.op is None:
            continue
        xs = [tape.nodes[i].output.data for i in node.inputs]
        for input_id, input_grad in zip(node.inputs, _backward(node, g, xs)):
            input_grad = np.asarray(input_grad, dtype=np.float64).reshape(tape.nodes[input_id].output.shape)
            previous = grads.get(input_id)
            grads[input_id] = input_grad if previous is None else previous + input_grad

    result: Dict[int, Tensor] = {}
    names: Dict[int, Optional[str]] = {}
    for leaf in tape.trainable_leaves():
        g = grads.get(leaf.node_id)
        result[leaf.node_id] = Tensor(np.zeros(leaf.output.shape) if g is None else g)
        names[leaf.node_id] = leaf.name
    return GradientMap(result, names)


def grad_check(function: Callable[[List[Tensor]], Tensor], point: Sequence[Tensor], eps: float = 1e-6) -> float:
    """
    Compare the reverse pass against central differences

    `function` receives one tensor per entry of `point` and must build a scalar;
    any randomness it uses has to be seeded inside it so repeated calls agree.

    Returns:
        max |a - b| / max(|a|, |b|, 1e-8) over every component
    """
    if not 0.0 < eps <= 1e-3:
        raise ContractViolation(f"grad_check: eps must lie in (0, 1e-3], got {eps}")

    base = [np.array(p.data, dtype=np.float64) for p in point]
    with Tape() as tape:
        leaves = [tape.leaf(b, name=f"x{i}") for i, b in enumerate(base)]
        output = function(leaves)
        analytic = backward(output)

    def evaluate(arrays: List[np.ndarray]) -> float:
        with Tape() as scratch:
            return function([scratch.leaf(a, name=f"x{i}") for i, a in enumerate(arrays)]).item()

    worst = 0.0
    for i, b in enumerate(base):
        grad = analytic[leaves[i].node_id].data
        for index in np.ndindex(b.shape):
            plus = [a.copy() for a in base]
            minus = [a.copy() for a in base]
            plus[i][index] += eps
            minus[i][index] -= eps
            numeric = (evaluate(plus) - evaluate(minus)) / (2.0 * eps)
            a = float(grad[index])
            error = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, error)
    logger.debug(f"grad_check over {sum(b.size for b in base)} components: max rel error {worst:.3e}")
    return worst


# Thin wrappers so model and loss code reads like math

def matmul(a: Tensor, b: Tensor) -> Tensor:
    return apply(OpKind.MATMUL, [a, b])


def add(a: Tensor, b: Tensor) -> Tensor:
    return apply(OpKind.ADD, [a, b])


def sub(a: Tensor, b: Tensor) -> Tensor:
    return apply(OpKind.SUB, [a, b])


def mul(a: Tensor, b: Tensor) -> Tensor:
    return apply(OpKind.MUL, [a, b])


def mul_scalar(a: Tensor, scalar: float) -> Tensor:
    return apply(OpKind.MUL_SCALAR, [a], scalar=scalar)


def add_scalar(a: Tensor, scalar: float) -> Tensor:
    return apply(OpKind.ADD_SCALAR, [a], scalar=scalar)


def relu(a: Tensor) -> Tensor:
    return apply(OpKind.RELU, [a])


def sigmoid(a: Tensor) -> Tensor:
    return apply(OpKind.SIGMOID, [a])


def softmax_rows(a: Tensor) -> Tensor:
    return apply(OpKind.SOFTMAX_ROWS, [a])


def safe_log(a: Tensor, floor: float = LOG_FLOOR) -> Tensor:
    """log(max(a, floor)); the clamp keeps cross-entropy finite"""
    return apply(OpKind.LOG, [apply(OpKind.CLAMP_MIN, [a], floor=floor)])


def square(a: Tensor) -> Tensor:
    return apply(OpKind.SQUARE, [a])


def sqrt(a: Tensor) -> Tensor:
    return apply(OpKind.SQRT, [a])


def mean(a: Tensor) -> Tensor:
    return apply(OpKind.MEAN, [a])


def sum_all(a: Tensor) -> Tensor:
    return apply(OpKind.SUM, [a])


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    return apply(OpKind.CONCAT_ROWS, list(parts))


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
              mode: Mode, eps: float = BATCHNORM_EPS) -> Tensor:
    return apply(OpKind.BATCHNORM, [x, gamma, beta], mode=mode,
                 running_mean=running_mean, running_var=running_var, eps=eps)


def dropout(x: Tensor, p: float, mode: Mode, rng: Optional[np.random.Generator]) -> Tensor:
    return apply(OpKind.DROPOUT, [x], mode=mode, rng=rng, p=p)
