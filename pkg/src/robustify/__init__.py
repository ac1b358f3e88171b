"""Encode robustness properties as appended ReLU layers with a single-output query."""

from .confidence import (
    ConfidenceBounds, SeedContext, build_relaxed_negation, build_smooth_negation,
    build_strong_negation, delta_relaxed, delta_strong, deltas_smooth,
)
from .formula import (
    FALSE, TRUE, And, Atom, LinearExpr, Not, Or, atom, classify, eval_formula, negate,
    normalize_nnf, substitute_margin,
)
from .gadget import CircuitIR, QuerySpec, compile_fast_path, compile_formula, compile_gadget, \
    eval_circuit
from .onnx_model import ModelGraph, append_circuit, load_model, load_model_file, save_model, \
    save_model_file
from .evaluator import forward
from .pipeline import RobustnessSpec, compile_property
from .topk import TopKContext, build_affinity_negation, build_topk_negation, \
    build_topk_relaxed_negation
from .vnnlib import InputBox, VerificationQuery, emit_vnnlib, parse_vnnlib

__version__ = "0.1.0"
