"""Minimal ONNX graph model: load, save, and append a compiled circuit.

Protobuf decoding and encoding is delegated to the ``onnx`` package; the
in-memory :class:`ModelGraph` keeps just enough structure for surgery and
for the evaluator's operator subset.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
import onnx
from onnx import helper, numpy_helper

from .gadget import CircuitIR

OUTPUT_NAME = "Y_prop"
MIN_OPSET = 13
# IR 8 covers opset 13..18 and is readable by older runtimes and verifiers
DEFAULT_IR_VERSION = 8


class ModelError(ValueError):
    pass


@dataclass
class Node:
    op_type: str
    inputs: list[str]
    outputs: list[str]
    name: str = ""
    attrs: dict[str, Any] = field(default_factory=dict)
    domain: str = ""


@dataclass
class ValueInfo:
    name: str
    shape: list[int | str | None]
    elem_type: int = onnx.TensorProto.FLOAT

    @property
    def feature_shape(self) -> list[int]:
        """Shape without a leading batch dimension (symbolic or 1)."""
        dims = list(self.shape)
        if len(dims) > 1 and (not isinstance(dims[0], int) or dims[0] == 1):
            dims = dims[1:]
        if any(not isinstance(d, int) for d in dims):
            raise ModelError(f"{self.name}: non-batch dimensions must be static, got {self.shape}")
        return dims

    @property
    def size(self) -> int:
        return int(np.prod(self.feature_shape)) if self.feature_shape else 1


@dataclass
class ModelGraph:
    nodes: list[Node]
    initializers: dict[str, np.ndarray]
    inputs: list[ValueInfo]
    outputs: list[ValueInfo]
    opset: int = MIN_OPSET
    name: str = "graph"
    ir_version: int | None = None
    extra_opsets: dict[str, int] = field(default_factory=dict)

    @property
    def input(self) -> ValueInfo:
        return self.inputs[0]

    @property
    def output(self) -> ValueInfo:
        return self.outputs[0]

    @property
    def n_inputs(self) -> int:
        return self.input.size

    @property
    def n_outputs(self) -> int:
        return self.output.size

    def tensor_names(self) -> set[str]:
        names = set(self.initializers)
        names.update(v.name for v in self.inputs)
        names.update(v.name for v in self.outputs)
        for n in self.nodes:
            names.update(n.inputs)
            names.update(n.outputs)
            if n.name:
                names.add(n.name)
        names.discard("")
        return names

    def op_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for n in self.nodes:
            out[n.op_type] = out.get(n.op_type, 0) + 1
        return out


def _dims(vi: onnx.ValueInfoProto) -> list[int | str | None] | None:
    tt = vi.type.tensor_type
    if not tt.HasField("shape"):
        return None
    dims: list[int | str | None] = []
    for d in tt.shape.dim:
        if d.HasField("dim_value"):
            dims.append(int(d.dim_value))
        elif d.HasField("dim_param"):
            dims.append(d.dim_param)
        else:
            dims.append(None)
    return dims


def from_proto(model: onnx.ModelProto) -> ModelGraph:
    g = model.graph
    inits = {t.name: numpy_helper.to_array(t) for t in g.initializer}
    missing = [o.name for o in g.output if _dims(o) is None]
    if missing:
        try:
            inferred = onnx.shape_inference.infer_shapes(model)
        except Exception as exc:  # noqa: BLE001 - onnx raises a zoo of types
            raise ModelError(f"shape inference failed: {exc}") from exc
        shapes = {o.name: _dims(o) for o in inferred.graph.output}
        if any(shapes.get(n) is None for n in missing):
            raise ModelError(f"graph output(s) without shape information: {missing}")
    else:
        shapes = {}

    def vinfo(vi):
        return ValueInfo(vi.name, shapes.get(vi.name) or _dims(vi) or [],
                         vi.type.tensor_type.elem_type)

    nodes = [Node(n.op_type, list(n.input), list(n.output), n.name,
                  {a.name: helper.get_attribute_value(a) for a in n.attribute}, n.domain)
             for n in g.node]
    opset, extra = MIN_OPSET, {}
    for o in model.opset_import:
        if o.domain in ("", "ai.onnx"):
            opset = int(o.version)
        else:
            extra[o.domain] = int(o.version)
    graph_inputs = [vinfo(v) for v in g.input if v.name not in inits]
    return ModelGraph(nodes, inits, graph_inputs, [vinfo(v) for v in g.output], opset,
                      g.name or "graph", model.ir_version, extra)


def load_model(data: bytes) -> ModelGraph:
    if not data:
        raise ModelError("empty model file")
    try:
        proto = onnx.load_from_string(data)
    except Exception as exc:  # noqa: BLE001
        raise ModelError(f"malformed ONNX model: {exc}") from exc
    if not proto.graph.output:
        raise ModelError("model has no graph outputs")
    return from_proto(proto)


def load_model_file(path) -> ModelGraph:
    with open(path, "rb") as fh:
        return load_model(fh.read())


def to_proto(g: ModelGraph) -> onnx.ModelProto:
    def vi(v: ValueInfo):
        return helper.make_tensor_value_info(v.name, v.elem_type, v.shape)

    nodes = [helper.make_node(n.op_type, n.inputs, n.outputs, name=n.name or None,
                              domain=n.domain or None, **n.attrs) for n in g.nodes]
    inits = [numpy_helper.from_array(arr, name) for name, arr in g.initializers.items()]
    graph = helper.make_graph(nodes, g.name, [vi(v) for v in g.inputs],
                              [vi(v) for v in g.outputs], initializer=inits)
    opsets = [helper.make_opsetid("", g.opset)]
    opsets += [helper.make_opsetid(d, v) for d, v in sorted(g.extra_opsets.items())]
    model = helper.make_model(graph, opset_imports=opsets, producer_name="robustify")
    model.ir_version = g.ir_version or DEFAULT_IR_VERSION
    return model


def save_model(g: ModelGraph) -> bytes:
    return to_proto(g).SerializeToString()


def save_model_file(g: ModelGraph, path) -> None:
    with open(path, "wb") as fh:
        fh.write(save_model(g))


def check_model(g: ModelGraph) -> None:
    """Structural validation with the reference ONNX checker and strict shape inference."""
    proto = to_proto(g)
    onnx.checker.check_model(proto, full_check=True)


def _fresh(taken: set[str], base: str) -> str:
    name, i = base, 1
    while name in taken:
        name = f"{base}_{i}"
        i += 1
    taken.add(name)
    return name


def append_circuit(g: ModelGraph, c: CircuitIR, output_name: str = OUTPUT_NAME) -> ModelGraph:
    """Attach ``c`` after the first graph output; the new scalar output replaces it.

    Each stage becomes a ``Gemm`` (``transA=0, transB=0``, weights as
    float32 initializers) followed by ``Relu``; the last ``Gemm`` writes
    ``Y_prop`` with shape ``[batch, 1]``.  Existing nodes keep their names,
    fresh names are suffixed on collision.
    """
    out = g.output
    if out.size != c.m:
        raise ModelError(f"model has {out.size} outputs but the circuit expects {c.m}")
    taken = g.tensor_names()
    nodes = list(g.nodes)
    inits = dict(g.initializers)
    batch = out.shape[0] if len(out.shape) == 2 else 1

    cur = out.name
    if len(out.shape) != 2:
        flat = _fresh(taken, "prop_flat")
        nodes.append(Node("Flatten", [cur], [flat], _fresh(taken, "prop_flatten"),
                          {"axis": 0 if len(out.shape) <= 1 else 1}))
        cur = flat

    final = output_name if output_name not in taken else _fresh(taken, output_name)
    taken.add(final)
    for s, layer in enumerate(c.layers):
        last = s == len(c.layers) - 1
        w = _fresh(taken, f"prop_W{s}")
        b = _fresh(taken, f"prop_B{s}")
        inits[w] = np.ascontiguousarray(layer.weight.T, dtype=np.float32)
        inits[b] = layer.bias.astype(np.float32)
        gemm_out = final if last else _fresh(taken, f"prop_z{s}")
        nodes.append(Node("Gemm", [cur, w, b], [gemm_out], _fresh(taken, f"prop_gemm{s}"),
                          {"alpha": 1.0, "beta": 1.0, "transA": 0, "transB": 0}))
        cur = gemm_out
        if not last:
            act = _fresh(taken, f"prop_a{s}")
            nodes.append(Node("Relu", [cur], [act], _fresh(taken, f"prop_relu{s}")))
            cur = act

    return ModelGraph(nodes, inits, list(g.inputs), [ValueInfo(final, [batch, 1])],
                      max(g.opset, MIN_OPSET), g.name,
                      max(g.ir_version or DEFAULT_IR_VERSION, 7),  # opset 13 needs IR >= 7
                      dict(g.extra_opsets))


def build_mlp(weights: list[np.ndarray], biases: list[np.ndarray], batch: int | str = 1,
              name: str = "mlp") -> ModelGraph:
    """Fully connected ReLU network ``Gemm -> Relu -> ... -> Gemm`` (weights as ``(out, in)``)."""
    nodes, inits = [], {}
    cur = "input"
    for i, (W, B) in enumerate(zip(weights, biases)):
        inits[f"W{i}"] = np.asarray(W, dtype=np.float32)
        inits[f"B{i}"] = np.asarray(B, dtype=np.float32)
        z = f"z{i}" if i < len(weights) - 1 else "output"
        nodes.append(Node("Gemm", [cur, f"W{i}", f"B{i}"], [z], f"gemm{i}", {"transB": 1}))
        cur = z
        if i < len(weights) - 1:
            nodes.append(Node("Relu", [z], [f"a{i}"], f"relu{i}"))
            cur = f"a{i}"
    n_in = np.asarray(weights[0]).shape[1]
    n_out = np.asarray(weights[-1]).shape[0]
    return ModelGraph(nodes, inits, [ValueInfo("input", [batch, n_in])],
                      [ValueInfo("output", [batch, n_out])], MIN_OPSET, name)


def random_mlp(sizes: list[int], rng: np.random.Generator, batch: int | str = 1) -> ModelGraph:
    ws = [rng.normal(0, 1 / np.sqrt(a), size=(b, a)) for a, b in zip(sizes[:-1], sizes[1:])]
    bs = [rng.normal(0, 0.1, size=b) for b in sizes[1:]]
    return build_mlp(ws, bs, batch)
