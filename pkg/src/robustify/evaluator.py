"""Reference forward pass for the supported ONNX operator subset."""

from __future__ import annotations

import numpy as np

from .confidence import confidence
from .gadget import eval_circuit
from .onnx_model import ModelError, ModelGraph

SUPPORTED_OPS = ("Gemm", "MatMul", "Add", "Relu", "Flatten")

__all__ = ["SUPPORTED_OPS", "confidence", "eval_circuit", "forward", "UnsupportedOpError"]


class UnsupportedOpError(ModelError):
    pass


def _gemm(node, a, b, c=None):
    alpha = float(node.attrs.get("alpha", 1.0))
    beta = float(node.attrs.get("beta", 1.0))
    if node.attrs.get("transA", 0):
        a = a.T
    if node.attrs.get("transB", 0):
        b = b.T
    y = alpha * (a @ b)
    if c is not None:
        y = y + beta * c
    return y


def _flatten(node, x):
    axis = int(node.attrs.get("axis", 1))
    if axis < 0:
        axis += x.ndim
    lead = int(np.prod(x.shape[:axis])) if axis else 1
    return x.reshape(lead, -1)


def forward(g: ModelGraph, x) -> np.ndarray:
    """Evaluate the graph in float64.

    ``x`` is one flat input vector or a batch ``(n, n_inputs)``; it is
    reshaped to the declared input shape.  Returns ``(m,)`` or ``(n, m)``.
    """
    bad = sorted({n.op_type for n in g.nodes if n.op_type not in SUPPORTED_OPS})
    if bad:
        raise UnsupportedOpError(f"unsupported operator(s) for evaluation: {', '.join(bad)}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = x.reshape(-1, g.n_inputs)
    feat = g.input.feature_shape
    shape = list(g.input.shape)
    if len(shape) > len(feat):
        x = x.reshape([x.shape[0], *feat])
    elif x.shape[0] != 1:
        raise ModelError("model input has no batch dimension; evaluate one vector at a time")
    else:
        x = x.reshape(feat)

    env: dict[str, np.ndarray] = {k: v.astype(np.float64) for k, v in g.initializers.items()}
    env[g.input.name] = x
    for node in g.nodes:
        args = [env[i] if i else None for i in node.inputs]
        op = node.op_type
        if op == "Gemm":
            out = _gemm(node, *args)
        elif op == "MatMul":
            out = args[0] @ args[1]
        elif op == "Add":
            out = args[0] + args[1]
        elif op == "Relu":
            out = np.maximum(args[0], 0.0)
        else:
            out = _flatten(node, args[0])
        env[node.outputs[0]] = out
    y = env[g.output.name].reshape(-1, g.n_outputs)
    return y[0] if single else y


def predict(g: ModelGraph, x) -> np.ndarray | int:
    y = forward(g, x)
    return int(np.argmax(y)) if y.ndim == 1 else np.argmax(y, axis=1)


def composed(g: ModelGraph, circuit, x):
    """``eval_circuit(circuit, forward(g, x))``."""
    return eval_circuit(circuit, forward(g, x))
