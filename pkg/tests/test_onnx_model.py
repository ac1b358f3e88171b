import numpy as np
import onnx
import pytest
from onnx import helper

from robustify.confidence import build_relaxed_negation
from robustify.evaluator import forward
from robustify.formula import And, Or, atom
from robustify.gadget import compile_formula, compile_gadget, eval_circuit
from robustify.onnx_model import (
    OUTPUT_NAME, ModelError, ModelGraph, Node, ValueInfo, append_circuit, build_mlp, check_model,
    from_proto, load_model, random_mlp, save_model, to_proto,
)

ort = pytest.importorskip("onnxruntime")


def run_ort(g: ModelGraph, x: np.ndarray) -> np.ndarray:
    sess = ort.InferenceSession(save_model(g), providers=["CPUExecutionProvider"])
    return sess.run(None, {g.input.name: x.astype(np.float32)})[0]


def test_roundtrip_bitwise_initializers():
    g = random_mlp([12, 8, 5], np.random.default_rng(0), batch="N")
    h = load_model(save_model(g))
    assert set(h.initializers) == set(g.initializers)
    for k, v in g.initializers.items():
        assert h.initializers[k].dtype == v.dtype
        assert h.initializers[k].tobytes() == v.tobytes()
    x = np.random.default_rng(1).normal(size=(7, 12))
    assert np.array_equal(forward(g, x), forward(h, x))


def test_append_structure_and_checker():
    rng = np.random.default_rng(2)
    g = random_mlp([6, 4, 3], rng, batch="N")
    f = Or([And([atom({0: 1, 1: -1}), atom({2: 1})]), atom({1: 1}, -0.5)])
    c = compile_gadget(f, 0.1, 3)
    h = append_circuit(g, c)
    check_model(h)
    assert [o.name for o in h.outputs] == [OUTPUT_NAME]
    assert h.outputs[0].shape == ["N", 1]
    new = h.nodes[len(g.nodes):]
    assert [n.op_type for n in new] == ["Gemm", "Relu", "Gemm", "Relu", "Gemm"]
    for n in new:
        if n.op_type == "Gemm":
            assert n.attrs == {"alpha": 1.0, "beta": 1.0, "transA": 0, "transB": 0}
            assert g.initializers.get(n.inputs[1]) is None
            assert h.initializers[n.inputs[1]].dtype == np.float32
    # the original output tensor stays computable
    assert any("output" in n.outputs for n in h.nodes)
    assert h.opset >= 13


def test_append_composition_against_onnxruntime():
    rng = np.random.default_rng(3)
    g = random_mlp([10, 16, 4], rng, batch="N")
    f = build_relaxed_negation(4, 1, 0.7)
    c = compile_gadget(f, 0.05, 4)
    h = append_circuit(g, c)
    x = rng.uniform(-1, 1, size=(200, 10))
    y_ref = eval_circuit(c, forward(g, x))
    y_ours = forward(h, x)[:, 0]
    y_ort = run_ort(h, x)[:, 0]
    assert np.max(np.abs(y_ours - y_ref)) < 1e-6
    assert np.max(np.abs(y_ort - y_ref)) < 1e-4


def test_fast_path_append():
    rng = np.random.default_rng(4)
    g = random_mlp([5, 3], rng, batch=1)
    f = Or([atom({0: 1, 1: -1}, 0, "<"), atom({2: 1, 1: -1}, 0, "<")])
    c = compile_formula(f, 3)
    h = append_circuit(g, c)
    check_model(h)
    x = rng.normal(size=5)
    assert abs(forward(h, x)[0] - eval_circuit(c, forward(g, x))) < 1e-6


def test_name_collisions_get_suffixes():
    rng = np.random.default_rng(5)
    g = random_mlp([3, 2], rng)
    g.initializers["prop_W0"] = np.zeros(1, dtype=np.float32)
    g.nodes[0].name = "prop_gemm0"
    c = compile_gadget(And([atom({0: 1}), atom({1: 1})]), 0.1, 2)
    h = append_circuit(g, c)
    names = [n.name for n in h.nodes]
    assert len(names) == len(set(names))
    assert "prop_W0_1" in h.initializers
    check_model(h)


def test_arity_mismatch():
    g = random_mlp([3, 2], np.random.default_rng(6))
    with pytest.raises(ModelError):
        append_circuit(g, compile_gadget(And([atom({0: 1}), atom({2: 1})]), 0.1, 3))


def test_rank3_output_gets_flatten():
    W = np.eye(4, dtype=np.float32)
    nodes = [Node("MatMul", ["x", "W"], ["z"]), Node("Relu", ["z"], ["out"])]
    g = ModelGraph(nodes, {"W": W}, [ValueInfo("x", [1, 1, 4])], [ValueInfo("out", [1, 1, 4])])
    c = compile_gadget(And([atom({0: 1}), atom({3: 1}, -1.0)]), 0.1, 4)
    h = append_circuit(g, c)
    assert h.nodes[2].op_type == "Flatten"
    check_model(h)
    x = np.array([-1.0, 2.0, 3.0, 0.5])
    assert abs(forward(h, x)[0] - eval_circuit(c, np.maximum(x, 0))) < 1e-6


def test_load_errors():
    with pytest.raises(ModelError):
        load_model(b"")
    with pytest.raises(ModelError):
        load_model(b"\x00\x01garbage-bytes")


def test_missing_output_shape_is_inferred():
    g = random_mlp([4, 3], np.random.default_rng(7))
    proto = to_proto(g)
    out = proto.graph.output[0]
    out.type.tensor_type.ClearField("shape")
    h = from_proto(proto)
    assert h.n_outputs == 3


def test_build_mlp_matches_numpy():
    rng = np.random.default_rng(8)
    W0, b0 = rng.normal(size=(5, 3)), rng.normal(size=5)
    W1, b1 = rng.normal(size=(2, 5)), rng.normal(size=2)
    g = build_mlp([W0, W1], [b0, b1])
    x = rng.normal(size=3)
    W0f, b0f, W1f, b1f = (a.astype(np.float32).astype(np.float64) for a in (W0, b0, W1, b1))
    want = W1f @ np.maximum(W0f @ x + b0f, 0) + b1f
    assert np.max(np.abs(forward(g, x) - want)) < 1e-12
    onnx.checker.check_model(to_proto(g))
