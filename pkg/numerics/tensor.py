import logging
from dataclasses import dataclass, field

import numpy as np

from errors import ContractViolation, NumericDomainError

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float32


def _freeze(array):
    array.flags.writeable = False
    return array


def _as_float_array(value, copy=True):
    array = np.array(value, copy=copy)
    if array.dtype not in (np.float32, np.float64):
        array = array.astype(DEFAULT_DTYPE)
    if not np.all(np.isfinite(array)):
        raise NumericDomainError("non-finite value in tensor input", shape=array.shape)
    return array


class Tensor:
    """
    Immutable n-d float array, optionally bound to a Tape node.

    float32 is the working precision; float64 tensors are accepted so the
    finite-difference oracle can run a graph without single-precision noise.
    """

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape=None, node=None):
        self.data = _freeze(data)
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def taped(self):
        return self.tape is not None

    def numpy(self):
        return self.data

    def __repr__(self):
        where = f"node={self.node}" if self.taped else "constant"
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, {where})"


def constant(value):
    """Wrap a value as an untaped tensor; gradients never flow into it."""
    if isinstance(value, Tensor):
        return value
    return Tensor(_as_float_array(value))


@dataclass
class TapeNode:
    op: str
    operands: tuple           # node index per operand, None for constants
    inputs: tuple             # operand arrays as seen by the forward rule
    output: np.ndarray
    attrs: dict = field(default_factory=dict)
    cache: dict = field(default_factory=dict)
    name: str = None
    trainable: bool = False


class Tape:
    """
    Single-writer record of kernel evaluations; nodes are appended in evaluation
    order, so operands always precede their consumers.
    """

    def __init__(self):
        self.nodes = []
        self.leaves = {}

    def leaf(self, array, name, trainable=True):
        if name in self.leaves:
            raise ContractViolation(f"duplicate leaf name '{name}'", leaf=name)
        data = _as_float_array(array)
        node = TapeNode(op="leaf", operands=(), inputs=(), output=data, name=name, trainable=trainable)
        self.nodes.append(node)
        tensor = Tensor(data, self, len(self.nodes) - 1)
        self.leaves[name] = tensor
        return tensor

    def record(self, op, operands, inputs, output, attrs, cache):
        self.nodes.append(TapeNode(op=op, operands=operands, inputs=inputs, output=output,
                                   attrs=attrs, cache=cache))
        return len(self.nodes) - 1

    def __len__(self):
        return len(self.nodes)


def backward(tape, loss):
    """
    Reverse-mode sweep from a scalar loss.

    :return: {leaf name: gradient array} for every trainable leaf (zeros when the
             loss does not depend on it).
    """
    from numerics.kernels import KERNELS

    if not isinstance(loss, Tensor) or loss.tape is not tape:
        raise ContractViolation("loss is not a node of this tape")
    if loss.data.size != 1:
        raise ContractViolation("backward needs a scalar loss", shape=loss.shape)

    grads = [None] * (loss.node + 1)
    grads[loss.node] = np.ones_like(loss.data)

    for index in range(loss.node, -1, -1):
        grad = grads[index]
        node = tape.nodes[index]
        if grad is None or node.op == "leaf":
            continue
        operand_grads = KERNELS[node.op].backward(grad, node)
        for operand, operand_grad in zip(node.operands, operand_grads):
            if operand is None or operand_grad is None:
                continue
            if grads[operand] is None:
                grads[operand] = operand_grad
            else:
                grads[operand] = grads[operand] + operand_grad

    result = {}
    for name, tensor in tape.leaves.items():
        if not tape.nodes[tensor.node].trainable:
            continue
        grad = grads[tensor.node] if tensor.node < len(grads) else None
        result[name] = np.zeros_like(tensor.data) if grad is None else grad.astype(tensor.dtype, copy=False)
    return result
