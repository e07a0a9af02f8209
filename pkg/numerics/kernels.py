"""
Kernel set for the tape.

Every kernel is pure: a shape check, a forward rule returning (output, cache)
and a backward rule returning one gradient per operand (None for operands that
take no gradient). `kernel_eval` wires them to the tape.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from errors import ContractViolation, NumericDomainError
from numerics.tensor import Tensor, _freeze, constant

logger = logging.getLogger(__name__)

RMS_EPS = 1e-5
SKEW_TOLERANCE = 1e-6
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class Kernel:
    arity: int
    check: Callable
    forward: Callable
    backward: Callable


def _mismatch(op, shapes, detail):
    return ContractViolation(f"{op}: {detail}", op=op, shapes=[list(s) for s in shapes])


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op, shapes, attrs):
    try:
        np.broadcast_shapes(*shapes)
    except ValueError:
        raise _mismatch(op, shapes, "operands do not broadcast")


def _check_unary(op, shapes, attrs):
    pass


# ---------- ARITHMETIC ----------

def _add_forward(inputs, attrs):
    return inputs[0] + inputs[1], {}


def _add_backward(grad, node):
    a, b = node.inputs
    return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)


def _sub_forward(inputs, attrs):
    return inputs[0] - inputs[1], {}


def _sub_backward(grad, node):
    a, b = node.inputs
    return _unbroadcast(grad, a.shape), -_unbroadcast(grad, b.shape)


def _mul_forward(inputs, attrs):
    return inputs[0] * inputs[1], {}


def _mul_backward(grad, node):
    a, b = node.inputs
    return _unbroadcast(grad * b, a.shape), _unbroadcast(grad * a, b.shape)


def _scale_check(op, shapes, attrs):
    if "factor" not in attrs:
        raise _mismatch(op, shapes, "missing 'factor'")


def _scale_forward(inputs, attrs):
    a = inputs[0]
    return a * a.dtype.type(attrs["factor"]), {}


def _scale_backward(grad, node):
    return (grad * grad.dtype.type(node.attrs["factor"]),)


def _matmul_check(op, shapes, attrs):
    a, b = shapes
    if len(a) < 2 or len(b) < 2 or a[-1] != b[-2]:
        raise _mismatch(op, shapes, "inner dimensions do not conform")
    try:
        np.broadcast_shapes(a[:-2], b[:-2])
    except ValueError:
        raise _mismatch(op, shapes, "batch dimensions do not broadcast")


def _matmul_forward(inputs, attrs):
    return np.matmul(inputs[0], inputs[1]), {}


def _matmul_backward(grad, node):
    a, b = node.inputs
    grad_a = np.matmul(grad, np.swapaxes(b, -1, -2))
    grad_b = np.matmul(np.swapaxes(a, -1, -2), grad)
    return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)


# ---------- ACTIVATIONS ----------

def _softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _softmax_forward(inputs, attrs):
    return _softmax(inputs[0]), {}


def _softmax_backward(grad, node):
    s = node.output
    return (s * (grad - (grad * s).sum(axis=-1, keepdims=True)),)


def _gelu_forward(inputs, attrs):
    x = inputs[0]
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    return 0.5 * x * (1.0 + t), {"tanh": t}


def _gelu_backward(grad, node):
    x = node.inputs[0]
    t = node.cache["tanh"]
    d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
    local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * d_inner
    return (grad * local,)


def _sigmoid_forward(inputs, attrs):
    x = inputs[0]
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out, {}


def _sigmoid_backward(grad, node):
    s = node.output
    return (grad * s * (1.0 - s),)


# ---------- NORMALIZATION ----------

def _rms_check(op, shapes, attrs):
    if len(shapes) == 2 and shapes[1] != (shapes[0][-1],):
        raise _mismatch(op, shapes, "gain must be a vector over the last axis")


def _rms_forward(inputs, attrs):
    x = inputs[0]
    eps = attrs.get("eps", RMS_EPS)
    inv = 1.0 / np.sqrt((x * x).mean(axis=-1, keepdims=True) + x.dtype.type(eps))
    normed = x * inv
    out = normed * inputs[1] if len(inputs) == 2 else normed
    return out, {"inv": inv, "normed": normed}


def _rms_backward(grad, node):
    inv, normed = node.cache["inv"], node.cache["normed"]
    if len(node.inputs) == 2:
        gain = node.inputs[1]
        d_normed = grad * gain
        grad_gain = (grad * normed).reshape(-1, gain.shape[0]).sum(axis=0)
    else:
        d_normed = grad
        grad_gain = None
    grad_x = inv * (d_normed - normed * (d_normed * normed).mean(axis=-1, keepdims=True))
    return (grad_x,) if grad_gain is None else (grad_x, grad_gain)


# ---------- INDEXING ----------

def _gather_check(op, shapes, attrs):
    ids = np.asarray(attrs.get("ids"))
    if len(shapes[0]) != 2:
        raise _mismatch(op, shapes, "table must be 2-d")
    if ids.dtype.kind not in "iu":
        raise _mismatch(op, shapes, "ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= shapes[0][0]):
        raise ContractViolation(f"{op}: token id out of vocabulary", op=op,
                                vocab=shapes[0][0], max_id=int(ids.max()), min_id=int(ids.min()))


def _gather_forward(inputs, attrs):
    return inputs[0][np.asarray(attrs["ids"])], {}


def _gather_backward(grad, node):
    table = node.inputs[0]
    ids = np.asarray(node.attrs["ids"]).reshape(-1)
    grad_table = np.zeros_like(table)
    np.add.at(grad_table, ids, grad.reshape(-1, table.shape[1]))
    return (grad_table,)


def _take_check(op, shapes, attrs):
    axis = attrs.get("axis", -1)
    index = np.asarray(attrs.get("index"))
    extent = shapes[0][axis]
    if index.size and (index.min() < -extent or index.max() >= extent):
        raise _mismatch(op, shapes, f"index out of range for axis {axis}")


def _take_forward(inputs, attrs):
    return np.take(inputs[0], np.asarray(attrs["index"]), axis=attrs.get("axis", -1)), {}


def _take_backward(grad, node):
    a = node.inputs[0]
    axis = node.attrs.get("axis", -1) % a.ndim
    index = np.asarray(node.attrs["index"])
    grad_a = np.zeros_like(a)
    moved = np.moveaxis(grad_a, axis, 0)
    np.add.at(moved, index, np.moveaxis(grad, axis, 0))
    return (grad_a,)


def _positions_check(op, shapes, attrs):
    x = shapes[0]
    positions = np.asarray(attrs.get("positions"))
    if len(x) != 3 or positions.shape != (x[0],):
        raise _mismatch(op, shapes, "need B×T×d input and B positions")
    if positions.min() < 0 or positions.max() >= x[1]:
        raise _mismatch(op, shapes, "position out of range")
    if len(shapes) == 2 and shapes[1] != (x[0], x[2]):
        raise _mismatch(op, shapes, "rows must be B×d")


def _select_forward(inputs, attrs):
    x = inputs[0]
    return x[np.arange(x.shape[0]), np.asarray(attrs["positions"])], {}


def _select_backward(grad, node):
    x = node.inputs[0]
    grad_x = np.zeros_like(x)
    grad_x[np.arange(x.shape[0]), np.asarray(node.attrs["positions"])] = grad
    return (grad_x,)


def _splice_forward(inputs, attrs):
    x, rows = inputs
    out = np.array(x, dtype=np.result_type(x, rows))
    out[np.arange(x.shape[0]), np.asarray(attrs["positions"])] = rows
    return out, {}


def _splice_backward(grad, node):
    x = node.inputs[0]
    rows_index = (np.arange(x.shape[0]), np.asarray(node.attrs["positions"]))
    grad_rows = grad[rows_index].copy()
    grad_x = grad.copy()
    grad_x[rows_index] = 0
    return grad_x, grad_rows


# ---------- LAYOUT ----------

def _reshape_check(op, shapes, attrs):
    target = tuple(attrs.get("shape", ()))
    known = [n for n in target if n != -1]
    if target.count(-1) > 1 or (target.count(-1) == 0 and math.prod(target) != math.prod(shapes[0])):
        raise _mismatch(op, shapes, f"cannot reshape to {target}")
    if target.count(-1) == 1 and (math.prod(known) == 0 or math.prod(shapes[0]) % math.prod(known)):
        raise _mismatch(op, shapes, f"cannot reshape to {target}")


def _reshape_forward(inputs, attrs):
    return inputs[0].reshape(attrs["shape"]).copy(), {}


def _reshape_backward(grad, node):
    return (grad.reshape(node.inputs[0].shape),)


def _transpose_check(op, shapes, attrs):
    axes = tuple(attrs.get("axes", ()))
    if sorted(axes) != list(range(len(shapes[0]))):
        raise _mismatch(op, shapes, f"bad axes {axes}")


def _transpose_forward(inputs, attrs):
    return np.ascontiguousarray(np.transpose(inputs[0], attrs["axes"])), {}


def _transpose_backward(grad, node):
    return (np.transpose(grad, np.argsort(node.attrs["axes"])),)


# ---------- LOSS ----------

def _ce_check(op, shapes, attrs):
    logits, targets = shapes
    if len(logits) != 2 or logits != targets:
        raise _mismatch(op, shapes, "need B×C logits and B×C one-hot targets")


def _ce_forward(inputs, attrs):
    logits, targets = inputs
    ones = targets == 1
    if not (np.all(ones | (targets == 0)) and np.all(ones.sum(axis=1) == 1)):
        raise ContractViolation("cross_entropy: targets are not one-hot rows", op="cross_entropy")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = -(log_probs * targets).sum() / logits.shape[0]
    return np.asarray([loss], dtype=logits.dtype), {"probs": np.exp(log_probs)}


def _ce_backward(grad, node):
    logits, targets = node.inputs
    scale = grad.reshape(()) / logits.shape[0]
    return (node.cache["probs"] - targets) * scale, None


# ---------- ROTATIONS ----------

def _skew_check(op, shapes, attrs):
    d = attrs.get("d")
    if d is None or shapes[0] != (d * (d - 1) // 2,):
        raise _mismatch(op, shapes, f"need a d(d-1)/2 vector for d={d}")


def _skew_forward(inputs, attrs):
    d = attrs["d"]
    upper = np.zeros((d, d), dtype=inputs[0].dtype)
    upper[np.triu_indices(d, k=1)] = inputs[0]
    return upper - upper.T, {}


def _skew_backward(grad, node):
    iu = np.triu_indices(node.attrs["d"], k=1)
    return (grad[iu] - grad.T[iu],)


def _cayley_check(op, shapes, attrs):
    s = shapes[0]
    if len(s) != 2 or s[0] != s[1]:
        raise _mismatch(op, shapes, "need a square matrix")


def _cayley_forward(inputs, attrs):
    s = inputs[0]
    if np.max(np.abs(s + s.T), initial=0.0) > SKEW_TOLERANCE:
        raise ContractViolation("cayley: input is not skew-symmetric", op="cayley")
    a = np.eye(s.shape[0], dtype=s.dtype) + s
    try:
        a_inv = np.linalg.inv(a)
    except np.linalg.LinAlgError:
        raise NumericDomainError("cayley: I + S is singular", op="cayley")
    return 2.0 * a_inv - np.eye(s.shape[0], dtype=s.dtype), {"a_inv": a_inv}


def _cayley_backward(grad, node):
    a_inv_t = node.cache["a_inv"].T
    return (-2.0 * a_inv_t @ grad @ a_inv_t,)


KERNELS = {
    "add": Kernel(2, _check_broadcast, _add_forward, _add_backward),
    "sub": Kernel(2, _check_broadcast, _sub_forward, _sub_backward),
    "mul": Kernel(2, _check_broadcast, _mul_forward, _mul_backward),
    "scale": Kernel(1, _scale_check, _scale_forward, _scale_backward),
    "matmul": Kernel(2, _matmul_check, _matmul_forward, _matmul_backward),
    "row_softmax": Kernel(1, _check_unary, _softmax_forward, _softmax_backward),
    "gelu": Kernel(1, _check_unary, _gelu_forward, _gelu_backward),
    "sigmoid": Kernel(1, _check_unary, _sigmoid_forward, _sigmoid_backward),
    "rms_normalize": Kernel((1, 2), _rms_check, _rms_forward, _rms_backward),
    "embedding_gather": Kernel(1, _gather_check, _gather_forward, _gather_backward),
    "take": Kernel(1, _take_check, _take_forward, _take_backward),
    "select_positions": Kernel(1, _positions_check, _select_forward, _select_backward),
    "splice": Kernel(2, _positions_check, _splice_forward, _splice_backward),
    "reshape": Kernel(1, _reshape_check, _reshape_forward, _reshape_backward),
    "transpose": Kernel(1, _transpose_check, _transpose_forward, _transpose_backward),
    "cross_entropy": Kernel(2, _ce_check, _ce_forward, _ce_backward),
    "skew_from_upper": Kernel(1, _skew_check, _skew_forward, _skew_backward),
    "cayley": Kernel(1, _cayley_check, _cayley_forward, _cayley_backward),
}


def kernel_eval(op, *operands, **attrs):
    """
    Evaluate one kernel; records a TapeNode when any operand is taped.

    :raises ContractViolation: unknown op, wrong arity, shape mismatch, or operands from two tapes.
    :raises NumericDomainError: the result contains NaN or Inf.
    """
    kernel = KERNELS.get(op)
    if kernel is None:
        raise ContractViolation(f"unknown kernel '{op}'", op=op)
    arity = kernel.arity if isinstance(kernel.arity, tuple) else (kernel.arity,)
    if len(operands) not in arity:
        raise ContractViolation(f"{op}: expected {arity} operands, got {len(operands)}", op=op)

    tensors = [operand if isinstance(operand, Tensor) else constant(operand) for operand in operands]
    tapes = {id(t.tape): t.tape for t in tensors if t.taped}
    if len(tapes) > 1:
        raise ContractViolation(f"{op}: operands come from different tapes", op=op)

    shapes = [t.shape for t in tensors]
    kernel.check(op, shapes, attrs)

    inputs = tuple(t.data for t in tensors)
    output, cache = kernel.forward(inputs, attrs)
    output = np.asarray(output)
    if not np.all(np.isfinite(output)):
        raise NumericDomainError(f"{op}: non-finite result", op=op, shapes=[list(s) for s in shapes])

    if not tapes:
        return Tensor(output)
    tape = next(iter(tapes.values()))
    node = tape.record(op, tuple(t.node if t.taped else None for t in tensors),
                       inputs, _freeze(output), dict(attrs), cache)
    return Tensor(output, tape, node)
