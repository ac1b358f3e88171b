"""``robustify`` command line: compile, validate, eval, info, batch."""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import confidence as conf
from . import validation as val
from .evaluator import forward
from .formula import Atom, FormulaError, Shape, atoms, classify
from .gadget import DEFAULT_ETA, fast_path_kind
from .onnx_model import ModelError, load_model_file, save_model_file
from .pipeline import RobustnessSpec, SpecError, append_property, compile_property
from .vnnlib import VnnlibError, parse_vnnlib

EXIT_OK, EXIT_SPEC, EXIT_MODEL, EXIT_INFEASIBLE = 0, 2, 3, 4

MODEL_FILE = "model.onnx"
VNNLIB_FILE = "property.vnnlib"
META_FILE = "metadata.json"


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind, self.message = code, kind, message

    def to_json(self) -> str:
        return json.dumps({"error": self.kind, "message": self.message, "exit_code": self.code},
                          sort_keys=True)


def _classify_error(exc: Exception) -> CliError:
    if isinstance(exc, CliError):
        return exc
    if isinstance(exc, ModelError):
        return CliError(EXIT_MODEL, "model_error", str(exc))
    if isinstance(exc, (SpecError, VnnlibError, FormulaError, conf.ThresholdError)):
        return CliError(EXIT_SPEC, "spec_error", str(exc))
    if isinstance(exc, (FileNotFoundError, IsADirectoryError, PermissionError)):
        return CliError(EXIT_SPEC, "io_error", str(exc))
    if isinstance(exc, ValueError):
        return CliError(EXIT_SPEC, "spec_error", str(exc))
    raise exc


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _load_model(path):
    try:
        return load_model_file(path)
    except FileNotFoundError as exc:
        raise CliError(EXIT_MODEL, "model_error", f"model not found: {path}") from exc


# -- compile -----------------------------------------------------------------------

def compile_to_dir(model_path: str, spec_path: str, out_dir: str, eta: float | None = None,
                   strict: bool = False) -> dict:
    """The whole pipeline; returns the metadata written to ``out_dir``."""
    model = _load_model(model_path)
    spec = RobustnessSpec.from_file(spec_path)
    prop = compile_property(spec, model, eta)
    if prop.box is None:
        raise SpecError("spec gives no input box (seed_input + epsilon or input_lower/upper)")
    if prop.box.n != model.n_inputs:
        raise SpecError(f"input box has {prop.box.n} entries, model expects {model.n_inputs}")
    appended = append_property(model, prop)
    meta = prop.metadata()
    meta["outputs"] = {"model": MODEL_FILE, "vnnlib": VNNLIB_FILE, "metadata": META_FILE}
    os.makedirs(out_dir, exist_ok=True)
    save_model_file(appended, os.path.join(out_dir, MODEL_FILE))
    with open(os.path.join(out_dir, VNNLIB_FILE), "w") as fh:
        fh.write(prop.vnnlib_text())
    with open(os.path.join(out_dir, META_FILE), "w") as fh:
        fh.write(_dump(meta))
    if strict and meta["flags"]["infeasible_approximation"]:
        raise CliError(EXIT_INFEASIBLE, "infeasible_approximation",
                       "delta2 >= delta1: the smoothness band is empty (outputs were written)")
    return meta


def cmd_compile(args) -> int:
    meta = compile_to_dir(args.model, args.property, args.out, args.eta, args.strict)
    q = meta["circuit"]["query"]
    print(f"{meta['kind']}: {meta['formula']['shape']} formula, {meta['n_atoms']} atoms, "
          f"{meta['mode']}, assert {q['assert']}")
    for flag, on in sorted(meta["flags"].items()):
        if on:
            print(f"warning: {flag}", file=sys.stderr)
    return EXIT_OK


# -- validate ----------------------------------------------------------------------

def _report_out(reports, as_json: bool) -> int:
    if as_json:
        print(_dump([r.to_dict() for r in reports]), end="")
    else:
        for r in reports:
            print(r)
            for w in r.witnesses[:3]:
                print(f"  witness: {w}")
    return EXIT_OK if all(r.passed for r in reports) else 1


def cmd_validate(args) -> int:
    seed = val.default_seed(args.seed)
    reports = []
    if args.claims:
        smooth = None
        if args.smooth:
            C, t = (float(v) for v in args.smooth.split(","))
            smooth = (C, t)
        reports.append(val.validate_confidence_claims(
            args.m, args.tau, args.samples, seed, tau2=args.tau2, smooth=smooth))
    if args.topk is not None:
        reports.append(val.validate_topk(args.m, args.topk, args.samples, seed, K=args.K))
    f, m = None, None
    if args.vnnlib:
        with open(args.vnnlib) as fh:
            _, f = parse_vnnlib(fh.read())
    elif args.property:
        spec = RobustnessSpec.from_file(args.property)
        model = _load_model(args.model) if args.model else None
        prop = compile_property(spec, model, args.eta)
        f, m = prop.formula, prop.m
    if f is not None:
        m = m or max(1 + max((a.expr.max_index for a in atoms(f)), default=0), 1)
        eta = args.eta or DEFAULT_ETA
        if isinstance(f, Atom) or fast_path_kind(f) is not None:
            rng = np.random.default_rng(seed)
            pts = val.stratified_points(f, m, args.samples, rng, eta)
            if fast_path_kind(f) is not None:
                reports.append(val.validate_fast_path(f, pts))
            if isinstance(f, Atom):
                reports.append(val.validate_atomic_exactness(f, eta, pts))
        if not isinstance(f, Atom):
            reports.append(val.validate_soundness(f, eta, args.samples, seed, m=m))
            if classify(f).shape is not Shape.GENERAL:
                reports.append(val.validate_error_bound(f, eta, args.samples, seed, m=m))
    if not reports:
        raise CliError(EXIT_SPEC, "usage_error",
                       "nothing to validate: give --claims, --topk, --vnnlib or -p")
    return _report_out(reports, args.json)


# -- eval / info ---------------------------------------------------------------------

def _read_vector(path: str) -> np.ndarray:
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = [float(t) for t in text.replace(",", " ").split()]
    if isinstance(data, dict):
        data = data.get("input", data.get("seed_input", data.get("x")))
    return np.asarray(data, dtype=float)


def cmd_eval(args) -> int:
    model = _load_model(args.model)
    try:
        x = _read_vector(args.input)
    except (ValueError, TypeError) as exc:
        raise CliError(EXIT_SPEC, "input_error", f"cannot read input vector: {exc}") from exc
    if x.size % model.n_inputs:
        raise CliError(EXIT_SPEC, "input_error",
                       f"input has {x.size} values, model expects {model.n_inputs}")
    y = forward(model, x.reshape(-1, model.n_inputs))
    out = [{"logits": row.tolist(), "argmax": int(np.argmax(row)),
            "confidence": conf.confidence(row).tolist()} for row in y]
    print(_dump(out[0] if x.ndim == 1 else out), end="")
    return EXIT_OK


def _formula_summary(f, m=None) -> dict:
    cls = classify(f)
    kids = [] if isinstance(f, Atom) else list(f.children)
    if cls.shape is Shape.PURE_DISJ:
        kids = [f]
    return {"formula": cls.to_dict(), "n_atoms": len(atoms(f)),
            "clauses": len(kids) or 1,
            "clause_sizes": [len(atoms(k)) for k in kids] or [1]}


def cmd_info(args) -> int:
    path = args.path
    if path.endswith(".onnx"):
        g = _load_model(path)
        info = {"inputs": [{"name": v.name, "shape": v.shape} for v in g.inputs],
                "outputs": [{"name": v.name, "shape": v.shape} for v in g.outputs],
                "n_inputs": g.n_inputs, "m": g.n_outputs, "opset": g.opset,
                "ops": g.op_counts()}
        lines = [f"model: {g.n_inputs} inputs -> {g.n_outputs} outputs, opset {g.opset}",
                 "ops: " + ", ".join(f"{k} x{v}" for k, v in sorted(info['ops'].items()))]
    elif path.endswith(".vnnlib"):
        with open(path) as fh:
            box, f = parse_vnnlib(fh.read())
        info = {"n_inputs": box.n, **_formula_summary(f)}
        lines = [f"vnnlib: {box.n} inputs, {info['formula']['shape']} formula, "
                 f"{info['n_atoms']} atoms in {info['clauses']} clause(s)"]
    else:
        spec = RobustnessSpec.from_file(path)
        model = _load_model(args.model) if args.model else None
        prop = compile_property(spec, model)
        info = {"kind": spec.kind, "m": prop.m, **_formula_summary(prop.formula),
                "flags": prop.flags, "mode": prop.circuit.mode.value}
        f = prop.formula
        if isinstance(f, Atom) or fast_path_kind(f) is None:
            desc = f"{info['formula']['shape']} formula"
        else:
            desc = "disjunctive" if fast_path_kind(f) == "disj" else "conjunctive"
        lines = [f"{spec.kind}: m={prop.m}, {info['n_atoms']} {desc} atoms, "
                 f"{info['clauses']} clause(s), {info['mode']}"]
    if args.json:
        print(_dump(info), end="")
    else:
        print("\n".join(lines))
    return EXIT_OK


# -- batch -------------------------------------------------------------------------------

def _batch_one(job, eta, strict) -> dict:
    try:
        meta = compile_to_dir(job["model"], job["property"], job["out"], eta, strict)
        return {"out": job["out"], "exit_code": EXIT_OK, "kind": meta["kind"]}
    except Exception as exc:  # noqa: BLE001 - reported per job
        err = _classify_error(exc)
        return {"out": job.get("out"), "exit_code": err.code, "error": err.kind,
                "message": err.message}


def cmd_batch(args) -> int:
    with open(args.jobs_file) as fh:
        jobs = json.load(fh)
    base = os.path.dirname(os.path.abspath(args.jobs_file))
    for j in jobs:
        for key in ("model", "property", "out"):
            if key not in j:
                raise CliError(EXIT_SPEC, "spec_error", f"batch job missing {key!r}: {j}")
            j[key] = os.path.join(base, j[key])
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as ex:
        results = list(ex.map(lambda j: _batch_one(j, args.eta, args.strict), jobs))
    print(_dump(results), end="")
    return max((r["exit_code"] for r in results), default=EXIT_OK)


# -- entry ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robustify",
                                description="Compile robustness properties into appended "
                                            "ReLU layers plus a single-output VNNLIB query.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", help="append a property circuit to a model")
    c.add_argument("-m", "--model", required=True)
    c.add_argument("-p", "--property", required=True, help="robustness spec JSON")
    c.add_argument("-o", "--out", required=True, help="output directory")
    c.add_argument("--eta", type=float, default=None)
    c.add_argument("--strict", action="store_true",
                   help="exit 4 when the approximation is infeasible")
    c.set_defaults(func=cmd_compile)

    v = sub.add_parser("validate", help="run sampling validators")
    v.add_argument("--claims", action="store_true", help="confidence margin claims")
    v.add_argument("--m", type=int, default=10)
    v.add_argument("--tau", type=float, default=80.0)
    v.add_argument("--tau2", type=float, default=None)
    v.add_argument("--smooth", default=None, help="C,tau")
    v.add_argument("--topk", type=int, default=None, help="top-k equivalence for this k")
    v.add_argument("--K", type=int, default=None)
    v.add_argument("--vnnlib", default=None, help="formula from a VNNLIB file")
    v.add_argument("-p", "--property", default=None, help="formula from a spec")
    v.add_argument("-m", "--model", default=None)
    v.add_argument("--eta", type=float, default=None)
    v.add_argument("--samples", type=int, default=10_000)
    v.add_argument("--seed", type=int, default=None, help="defaults to $ROBUSTIFY_SEED or 0")
    v.add_argument("--json", action="store_true")
    v.set_defaults(func=cmd_validate)

    e = sub.add_parser("eval", help="logits, argmax and confidence for an input")
    e.add_argument("-m", "--model", required=True)
    e.add_argument("-x", "--input", required=True, help="JSON list or whitespace floats")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("info", help="summarize a model, VNNLIB file or spec")
    i.add_argument("path")
    i.add_argument("-m", "--model", default=None, help="model for spec seeds")
    i.add_argument("--json", action="store_true")
    i.set_defaults(func=cmd_info)

    b = sub.add_parser("batch", help="compile many (model, spec) pairs")
    b.add_argument("jobs_file", help='JSON list of {"model", "property", "out"}')
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--eta", type=float, default=None)
    b.add_argument("--strict", action="store_true")
    b.set_defaults(func=cmd_batch)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001
        err = _classify_error(exc)
        print(err.to_json(), file=sys.stderr)
        return err.code


if __name__ == "__main__":
    sys.exit(main())
