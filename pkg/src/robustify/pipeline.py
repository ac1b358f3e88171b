"""Robustness specs: JSON ingestion and the compile pipeline.

A spec names a property kind, its thresholds and a seed (input vector and
box radius, or logits).  :func:`compile_property` turns it into a negated
post-condition, a circuit, an appended model and a VNNLIB query.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import confidence as conf
from .evaluator import UnsupportedOpError, forward
from .formula import FALSE, TRUE, Atom, Formula, LinearExpr, LT, Or, Shape, atoms, classify, \
    flatten
from .gadget import DEFAULT_ETA, MIN_ETA, CircuitIR, Mode, compile_formula, expected_error_margin
from .onnx_model import ModelError, ModelGraph, append_circuit
from .topk import TRIVIALLY_VIOLATED, TieError, TopKContext, build_affinity_negation, \
    build_topk_negation, build_topk_relaxed_negation, filter_affinity_pairs
from .vnnlib import InputBox, VerificationQuery, emit_vnnlib, parse_vnnlib

KINDS = ("standard", "relaxed", "strong", "smooth", "topk", "topk_relaxed",
         "topk_affinity", "raw_vnnlib")

_REQUIRED = {
    "relaxed": ("tau",),
    "strong": ("tau1", "tau2"),
    "smooth": ("tau",),
    "topk": ("k",),
    "topk_relaxed": ("K",),
    "topk_affinity": ("K", "affinity_sets"),
    "raw_vnnlib": ("vnnlib",),
}


class SpecError(ValueError):
    pass


def f32(x: float) -> float:
    """Nearest float32 value, as stored in the appended model."""
    return float(np.float32(x))


@dataclass
class RobustnessSpec:
    kind: str
    tau: float | None = None
    tau1: float | None = None
    tau2: float | None = None
    delta: float | None = None
    k: int | None = None
    K: int | None = None
    affinity_sets: list[list[int]] | None = None
    seed_input: list[float] | None = None
    epsilon: float | None = None
    clip: tuple[float, float] | None = None
    input_lower: list[float] | None = None
    input_upper: list[float] | None = None
    seed_logits: list[float] | None = None
    seed_class: int | None = None
    seed_confidence: float | None = None
    eta: float | None = None
    vnnlib: str | None = None
    name: str | None = None

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | None = None) -> "RobustnessSpec":
        if not isinstance(d, dict):
            raise SpecError("spec must be a JSON object")
        kind = d.get("kind")
        if kind not in KINDS:
            raise SpecError(f"unknown kind {kind!r}; expected one of {', '.join(KINDS)}")
        known = set(cls.__dataclass_fields__)
        extra = sorted(set(d) - known)
        if extra:
            raise SpecError(f"unknown spec field(s): {', '.join(extra)}")
        missing = [f for f in _REQUIRED.get(kind, ()) if d.get(f) is None]
        if kind == "relaxed" and d.get("delta") is not None:
            missing = []
        if missing:
            raise SpecError(f"kind {kind!r} requires field(s): {', '.join(missing)}")
        spec = cls(**d)
        if spec.clip is not None:
            spec.clip = tuple(float(v) for v in spec.clip)
            if len(spec.clip) != 2 or spec.clip[0] > spec.clip[1]:
                raise SpecError("clip must be [low, high] with low <= high")
        if kind == "raw_vnnlib" and base_dir and not spec.vnnlib.lstrip().startswith("("):
            spec.vnnlib = os.path.join(base_dir, spec.vnnlib)
        if spec.epsilon is not None and spec.epsilon < 0:
            raise SpecError("epsilon must be non-negative")
        if spec.eta is not None and spec.eta < MIN_ETA:
            raise SpecError(f"eta must be at least {MIN_ETA}")
        return spec

    @classmethod
    def from_json(cls, text: str, base_dir: str | None = None) -> "RobustnessSpec":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecError(f"spec is not valid JSON: {exc}") from exc
        return cls.from_dict(d, base_dir)

    @classmethod
    def from_file(cls, path) -> "RobustnessSpec":
        with open(path) as fh:
            return cls.from_json(fh.read(), os.path.dirname(os.path.abspath(path)))

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass
class CompiledProperty:
    spec: RobustnessSpec
    m: int
    formula: Formula
    circuit: CircuitIR
    box: InputBox | None
    seed_class: int | None = None
    seed_logits: np.ndarray | None = None
    seed_confidence: float | None = None
    bounds: conf.ConfidenceBounds | None = None
    flags: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def error_margin(self) -> float | None:
        if self.circuit.mode is Mode.FAST_PATH_EXACT:
            return 0.0
        return expected_error_margin(self.formula, self.circuit.eta)

    def query(self) -> VerificationQuery:
        if self.box is None:
            raise SpecError("no input box: give seed_input and epsilon, or input_lower/upper")
        return VerificationQuery(self.box, self.formula, self.m,
                                 {"kind": self.spec.kind})

    def vnnlib_text(self) -> str:
        return emit_vnnlib(self.query(), self.circuit.query,
                           comment=f"robustify {self.spec.kind}")

    def metadata(self) -> dict:
        cls = self.circuit.formula_class
        meta = {
            "kind": self.spec.kind,
            "name": self.spec.name,
            "m": self.m,
            "seed_class": self.seed_class,
            "seed_confidence": self.seed_confidence,
            "thresholds": {k: getattr(self.spec, k) for k in ("tau", "tau1", "tau2", "k", "K")
                           if getattr(self.spec, k) is not None},
            "eta": self.circuit.eta,
            "formula": cls.to_dict(),
            "n_atoms": len(atoms(self.formula)),
            "strictness": self.circuit.strictness.value,
            "mode": self.circuit.mode.value,
            "circuit": self.circuit.to_dict(),
            "error_margin": self.error_margin,
            "bounds": self.bounds.to_dict() if self.bounds else None,
            "flags": dict(self.flags),
            "guarantees": guarantee_sentences(self),
        }
        meta.update(self.details)
        if self.box is not None:
            meta["input_box"] = {"n_inputs": int(self.box.lower.size),
                                 "lower_min": float(self.box.lower.min()),
                                 "upper_max": float(self.box.upper.max())}
        return meta


def _seed_logits(spec: RobustnessSpec, model: ModelGraph | None):
    if spec.seed_logits is not None:
        return np.asarray(spec.seed_logits, dtype=float)
    if model is not None and spec.seed_input is not None:
        try:
            return forward(model, np.asarray(spec.seed_input, dtype=float))
        except UnsupportedOpError as exc:
            raise SpecError(f"cannot evaluate the seed on this model ({exc}); "
                            "give seed_logits in the spec") from exc
    return None


def _box(spec: RobustnessSpec, model: ModelGraph | None) -> InputBox | None:
    if spec.input_lower is not None or spec.input_upper is not None:
        if spec.input_lower is None or spec.input_upper is None:
            raise SpecError("input_lower and input_upper must be given together")
        return InputBox(np.asarray(spec.input_lower, float), np.asarray(spec.input_upper, float))
    if spec.seed_input is None:
        return None
    if spec.epsilon is None:
        raise SpecError("seed_input needs epsilon")
    x = np.asarray(spec.seed_input, dtype=float).ravel()
    if model is not None and x.size != model.n_inputs:
        raise SpecError(f"seed_input has {x.size} values, model expects {model.n_inputs}")
    return InputBox.around(x, spec.epsilon, spec.clip)


def _standard_negation(m: int, t: int) -> Formula:
    # some rival strictly overtakes the seed class
    return flatten(Or(Atom(LinearExpr.build({t: 1.0, i: -1.0}), LT)
                      for i in range(m) if i != t))


def compile_property(spec: RobustnessSpec, model: ModelGraph | None = None,
                     eta: float | None = None, m: int | None = None) -> CompiledProperty:
    """Build formula, bounds and circuit for ``spec``.

    Margins are rounded to float32 before the formula is built, so the
    recorded thresholds are the ones the stored network actually enforces.
    """
    eta = eta if eta is not None else (spec.eta if spec.eta is not None else DEFAULT_ETA)
    flags = {"trivially_violated": False, "trivially_satisfied": False,
             "infeasible_approximation": False}
    details: dict[str, Any] = {}
    bounds = None

    if spec.kind == "raw_vnnlib":
        text = spec.vnnlib
        if not text.lstrip().startswith("("):
            with open(text) as fh:
                text = fh.read()
        box, f = parse_vnnlib(text)
        if model is not None:
            m = model.n_outputs
            if box.lower.size != model.n_inputs:
                raise SpecError(f"VNNLIB declares {box.lower.size} inputs, "
                                f"model has {model.n_inputs}")
        m = m or max(1 + max((a.expr.max_index for a in atoms(f)), default=0), 1)
        c = compile_formula(f, m, eta)
        return CompiledProperty(spec, m, f, c, box, flags=flags)

    y = _seed_logits(spec, model)
    if model is not None:
        m = model.n_outputs
    elif y is not None:
        m = y.size
    if m is None:
        raise SpecError("cannot determine the number of classes: give a model or seed_logits")
    if y is not None and y.size != m:
        raise SpecError(f"seed logits have {y.size} entries, model has {m} outputs")
    t = spec.seed_class
    if y is not None:
        top = int(np.argmax(y))
        if t is not None and t != top:
            raise SpecError(f"seed_class {t} is not the seed's predicted class {top}")
        t = top
    if t is None and spec.kind in ("standard", "relaxed", "strong", "smooth"):
        raise SpecError("seed class unknown: give seed_logits, seed_input with a model, "
                        "or seed_class")
    C = conf.confidence(y, t) if y is not None else spec.seed_confidence
    box = _box(spec, model)

    try:
        if spec.kind == "standard":
            f = _standard_negation(m, t)
        elif spec.kind == "relaxed":
            d = spec.delta if spec.delta is not None else conf.delta_relaxed(spec.tau)
            d = f32(d)
            bounds = conf.relaxed_bounds(d, m)
            f = conf.build_relaxed_negation(m, t, d)
            details["delta"] = d
        elif spec.kind == "strong":
            if C is None:
                raise SpecError("strong robustness needs the seed confidence")
            d = f32(conf.delta_strong(spec.tau2, m))
            bounds = conf.strong_bounds(d, m)
            details["delta"] = d
            if C < spec.tau1:
                # the premise fails at the seed, so the property holds vacuously
                flags["trivially_satisfied"] = True
                f = FALSE
            else:
                f = conf.build_strong_negation(m, t, d)
        elif spec.kind == "smooth":
            if C is None:
                raise SpecError("smoothness needs the seed confidence")
            ds = conf.deltas_smooth(C, spec.tau, m)
            d1, d2 = f32(ds.delta1), f32(ds.delta2)
            bounds = conf.smooth_bounds(d1, d2, m)
            flags["infeasible_approximation"] = not d2 < d1
            f = conf.build_smooth_negation(m, t, d1, d2)
            details["delta1"], details["delta2"] = d1, d2
        else:
            if y is None:
                raise SpecError("top-k properties need the seed logits")
            ctx = TopKContext(y, spec.K or spec.k or 1, spec.affinity_sets)
            if spec.kind == "topk":
                if not 1 <= spec.k < m:
                    raise SpecError(f"k must satisfy 1 <= k < m={m}")
                f = build_topk_negation(ctx, spec.k)
            elif spec.kind == "topk_relaxed":
                f = build_topk_relaxed_negation(ctx)
            else:
                pairs = filter_affinity_pairs(ctx)
                details["affinity_pairs"] = [[k, sorted(s)] for k, s in pairs]
                g = build_affinity_negation(ctx)
                if g is TRIVIALLY_VIOLATED:
                    flags["trivially_violated"] = True
                    f = TRUE
                else:
                    f = g
    except (conf.ThresholdError, TieError, ValueError) as exc:
        if isinstance(exc, SpecError):
            raise
        raise SpecError(str(exc)) from exc

    c = compile_formula(f, m, eta)
    return CompiledProperty(spec, m, f, c, box, t,
                            None if y is None else y, C, bounds, flags, details)


def guarantee_sentences(p: CompiledProperty) -> list[str]:
    """Plain statements of what a verifier verdict on this query means."""
    c = p.circuit
    out = []
    q = c.query
    out.append(f"Verifier proves Y_prop {q.verify_rel} {q.threshold!r} over the input box "
               f"(asserted counterexample region: Y_prop {q.assert_rel} {q.threshold!r}).")
    if p.flags.get("trivially_violated"):
        out.append("No affinity pair applies at the seed: the property is violated at the "
                   "seed itself, so any verifier returns a counterexample immediately.")
    if p.flags.get("trivially_satisfied"):
        out.append("Seed confidence is below tau1: the premise fails and the property holds "
                   "vacuously; the query has no counterexample.")
    if p.flags.get("infeasible_approximation"):
        out.append("delta2 >= delta1: the margin band is empty, so the encoded property "
                   "cannot be proven; counterexamples are artifacts of the approximation.")
    b = p.bounds
    kind = p.spec.kind
    if kind == "standard":
        out.append(f"UNSAT: every input in the box is classified as class {p.seed_class} "
                   "(ties count as misclassification).")
    elif kind == "relaxed":
        out.append(f"UNSAT: no input in the box is misclassified with confidence above "
                   f"{b.guaranteed_safe_threshold:.6g}%.")
        out.append(f"SAT: every exact counterexample is misclassified with confidence at "
                   f"least {b.counterexample_floor:.6g}%.")
    elif kind == "strong":
        out.append(f"UNSAT: every input in the box is classified as class {p.seed_class} with "
                   f"confidence above {b.guaranteed_safe_threshold:.6g}%.")
        out.append(f"SAT: an exact counterexample is misclassified or has confidence at most "
                   f"{b.counterexample_floor:.6g}%.")
    elif kind == "smooth":
        lo, hi = b.guaranteed_safe_threshold
        clo, chi = b.counterexample_bounds
        out.append(f"UNSAT: class-{p.seed_class} confidence stays in ({lo:.6g}%, {hi:.6g}%) "
                   "over the box.")
        out.append(f"SAT: an exact counterexample has confidence at least {clo:.6g}% or at "
                   f"most {chi:.6g}%.")
    elif kind == "topk":
        out.append(f"UNSAT: the top-{p.spec.k} class set is unchanged over the box.")
    elif kind == "topk_relaxed":
        out.append(f"UNSAT: for every input some k <= {p.spec.K} keeps the seed's top-k set.")
    elif kind == "topk_affinity":
        out.append("UNSAT: for every input some applicable (k, affinity set) pair keeps the "
                   "top-k set inside the affinity set.")
    if c.mode is Mode.FAST_PATH_EXACT:
        out.append("Encoding is exact: the appended query is equivalent to the post-condition.")
    elif p.error_margin is not None:
        out.append(f"Encoding is approximate: a counterexample satisfies the negated "
                   f"post-condition with every atom relaxed by at most {p.error_margin!r} "
                   f"(2 * eta); an UNSAT verdict is exact.")
    else:
        out.append("Encoding is approximate and the formula is deeper than DNF/CNF: UNSAT is "
                   "exact, counterexamples carry no slack bound.")
    return out


def append_property(model: ModelGraph, p: CompiledProperty) -> ModelGraph:
    if model.n_outputs != p.m:
        raise ModelError(f"model has {model.n_outputs} outputs, property expects {p.m}")
    return append_circuit(model, p.circuit)


def shape_label(f: Formula) -> str:
    return classify(f).shape.value


__all__ = ["KINDS", "RobustnessSpec", "CompiledProperty", "SpecError", "compile_property",
           "append_property", "guarantee_sentences", "Shape"]
