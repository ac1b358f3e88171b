"""VNNLIB subset: parse input boxes and output constraints, emit simplified queries.

Supported grammar::

    file    := (command)*
    command := (declare-const X_i Real) | (declare-const Y_i Real) | (assert term)
    term    := (and term+) | (or term+) | (not term) | (rel lin lin)
    rel     := <= | >= | < | >
    lin     := number | var | (+ lin+) | (- lin) | (- lin lin+) | (* number var)

``;`` starts a comment.  Assertions mentioning only one ``X`` variable are
read as box bounds; assertions over ``Y`` variables form the output
formula (conjoined).  Mixing ``X`` and ``Y`` in one assertion is rejected.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .formula import (
    GE, GT, LE, LT, And, Atom, Formula, LinearExpr, Not, Or, atoms, canonical_atom,
    normalize_nnf,
)
from .gadget import QuerySpec


class VnnlibError(ValueError):
    pass


@dataclass
class InputBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float).ravel()
        self.upper = np.asarray(self.upper, dtype=float).ravel()
        if self.lower.shape != self.upper.shape:
            raise VnnlibError("lower and upper bounds differ in length")
        if np.any(self.lower > self.upper):
            i = int(np.argmax(self.lower > self.upper))
            raise VnnlibError(f"empty box: X_{i} has lower {self.lower[i]} > upper {self.upper[i]}")

    @property
    def n(self) -> int:
        return self.lower.size

    @classmethod
    def around(cls, center, eps: float, clip: tuple[float, float] | None = None) -> "InputBox":
        c = np.asarray(center, dtype=float).ravel()
        lo, hi = c - eps, c + eps
        if clip is not None:
            lo, hi = np.clip(lo, *clip), np.clip(hi, *clip)
        return cls(lo, hi)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.n))

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


@dataclass
class VerificationQuery:
    box: InputBox
    formula: Formula | None
    n_outputs: int
    metadata: dict = field(default_factory=dict)


# -- reading ------------------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(;[^\n]*)|(\()|(\))|([^\s()]+))")
_VAR = re.compile(r"^([XY])_(\d+)$")


def tokenize(text: str) -> Iterator[str]:
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            if text[pos:].strip():
                raise VnnlibError(f"cannot tokenize near {text[pos:pos + 20]!r}")
            break
        pos = m.end()
        if m.group(1):
            continue
        yield m.group(2) or m.group(3) or m.group(4)


def parse_sexprs(text: str) -> list:
    stack: list[list] = [[]]
    for tok in tokenize(text):
        if tok == "(":
            stack.append([])
        elif tok == ")":
            if len(stack) == 1:
                raise VnnlibError("unbalanced ')'")
            done = stack.pop()
            stack[-1].append(done)
        else:
            stack[-1].append(tok)
    if len(stack) != 1:
        raise VnnlibError("unbalanced '(' (truncated file?)")
    return stack[0]


def _number(tok) -> float | None:
    if isinstance(tok, str):
        try:
            return float(tok)
        except ValueError:
            return None
    return None


class _Reader:
    def __init__(self):
        self.declared: dict[str, int] = {}

    def var(self, tok: str) -> tuple[str, int]:
        m = _VAR.match(tok)
        if not m or tok not in self.declared:
            raise VnnlibError(f"undeclared variable {tok!r}")
        return m.group(1), int(m.group(2))

    def lin(self, t) -> tuple[dict[tuple[str, int], float], float]:
        """Linear term as ({(kind, index): coeff}, constant)."""
        if isinstance(t, str):
            v = _number(t)
            if v is not None:
                return {}, v
            return {self.var(t): 1.0}, 0.0
        if not t:
            raise VnnlibError("empty term")
        head, args = t[0], t[1:]
        if head == "+":
            return self._sum([self.lin(a) for a in args])
        if head == "-":
            parts = [self.lin(a) for a in args]
            if len(parts) == 1:
                return self._scale(parts[0], -1.0)
            return self._sum([parts[0]] + [self._scale(p, -1.0) for p in parts[1:]])
        if head == "*":
            parts = [self.lin(a) for a in args]
            const = 1.0
            linear = None
            for p in parts:
                if p[0]:
                    if linear is not None:
                        raise VnnlibError("nonlinear term: product of two variables")
                    linear = p
                else:
                    const *= p[1]
            return self._scale(linear, const) if linear else ({}, const)
        raise VnnlibError(f"unsupported operator {head!r} in linear term")

    @staticmethod
    def _sum(parts):
        acc: dict = {}
        c = 0.0
        for coeffs, k in parts:
            for key, v in coeffs.items():
                acc[key] = acc.get(key, 0.0) + v
            c += k
        return acc, c

    @staticmethod
    def _scale(p, k):
        return {key: v * k for key, v in p[0].items()}, p[1] * k

    def term(self, t) -> tuple[Formula, set[str]]:
        if not isinstance(t, list) or not t:
            raise VnnlibError(f"expected a constraint, got {t!r}")
        head, args = t[0], t[1:]
        if head in ("and", "or"):
            if not args:
                raise VnnlibError(f"empty ({head})")
            kids, kinds = [], set()
            for a in args:
                k, s = self.term(a)
                kids.append(k)
                kinds |= s
            return (And(kids) if head == "and" else Or(kids)), kinds
        if head == "not":
            if len(args) != 1:
                raise VnnlibError("(not) takes one argument")
            k, s = self.term(args[0])
            return Not(k), s
        if head in (LE, GE, LT, GT):
            if len(args) < 2:
                raise VnnlibError(f"({head}) needs two operands")
            parts = [self.lin(a) for a in args]
            chain = []
            kinds: set[str] = set()
            for lhs, rhs in zip(parts, parts[1:]):
                coeffs, c = self._sum([lhs, self._scale(rhs, -1.0)])
                kinds |= {kind for kind, _ in coeffs if coeffs[(kind, _)] != 0.0}
                chain.append((coeffs, c))
            return self._atoms(head, chain, kinds), kinds
        raise VnnlibError(f"unsupported operator {head!r}")

    @staticmethod
    def _atoms(rel, chain, kinds) -> Formula:
        out = []
        for coeffs, c in chain:
            out.append(_RawAtom(coeffs, c, rel))
        return out[0] if len(out) == 1 else And(out)


@dataclass(frozen=True)
class _RawAtom:
    """Atom over mixed X/Y variables, before being split into box and formula."""

    coeffs: dict
    const: float
    rel: str

    def __hash__(self):
        return id(self)


def _to_output_formula(f) -> Formula:
    if isinstance(f, _RawAtom):
        return Atom(LinearExpr.build({i: v for (_, i), v in f.coeffs.items()}, f.const), f.rel)
    if isinstance(f, Not):
        return Not(_to_output_formula(f.child))
    cls = And if isinstance(f, And) else Or
    return cls(_to_output_formula(c) for c in f.children)


def _box_bounds(f, lower: dict, upper: dict) -> None:
    """Fold an X-only assertion (an atom or a conjunction of atoms) into the box."""
    if isinstance(f, And):
        for c in f.children:
            _box_bounds(c, lower, upper)
        return
    if not isinstance(f, _RawAtom):
        raise VnnlibError("input constraints must be a conjunction of variable bounds")
    live = {k: v for k, v in f.coeffs.items() if v != 0.0}
    if len(live) != 1:
        raise VnnlibError("input constraints must bound a single variable")
    (_, i), a = next(iter(live.items()))
    # a * x + c rel 0
    bound = -f.const / a
    rel = f.rel if a > 0 else {LE: GE, GE: LE, LT: GT, GT: LT}[f.rel]
    if rel in (LE, LT):
        upper[i] = min(upper.get(i, np.inf), bound)
    else:
        lower[i] = max(lower.get(i, -np.inf), bound)


def parse_vnnlib(text: str) -> tuple[InputBox, Formula]:
    """Return the input box and the asserted output formula (normalized)."""
    reader = _Reader()
    lower: dict[int, float] = {}
    upper: dict[int, float] = {}
    outputs = []
    for cmd in parse_sexprs(text):
        if not isinstance(cmd, list) or not cmd:
            raise VnnlibError(f"unexpected token {cmd!r} at top level")
        head = cmd[0]
        if head == "declare-const":
            if len(cmd) != 3 or cmd[2] != "Real" or not _VAR.match(cmd[1]):
                raise VnnlibError(f"bad declaration {cmd!r}")
            reader.declared[cmd[1]] = 1
        elif head == "assert":
            if len(cmd) != 2:
                raise VnnlibError("assert takes exactly one term")
            term, kinds = reader.term(cmd[1])
            if kinds == {"X"}:
                _box_bounds(term, lower, upper)
            elif kinds == {"Y"} or not kinds:
                outputs.append(term)
            else:
                raise VnnlibError("input variables are not allowed inside output constraints")
        elif head in ("check-sat", "get-model", "set-logic", "set-info", "exit"):
            continue
        else:
            raise VnnlibError(f"unsupported command {head!r}")
    xs = sorted(int(_VAR.match(v).group(2)) for v in reader.declared if v.startswith("X"))
    if not outputs:
        raise VnnlibError("no output assertion: the file states no property")
    n = len(xs)
    if xs != list(range(n)):
        raise VnnlibError("input variables must be X_0 .. X_{n-1}")
    missing = [i for i in range(n) if i not in lower or i not in upper]
    if missing:
        raise VnnlibError(f"unbounded input variable(s): {', '.join(f'X_{i}' for i in missing)}")
    box = InputBox([lower[i] for i in range(n)], [upper[i] for i in range(n)])
    raw = outputs[0] if len(outputs) == 1 else And(outputs)
    return box, normalize_nnf(_to_output_formula(raw))


def read_query(text: str) -> VerificationQuery:
    box, f = parse_vnnlib(text)
    ys = [int(m.group(1)) for m in re.finditer(r"declare-const\s+Y_(\d+)\s", text)]
    n_out = max(ys) + 1 if ys else 1 + max((a.expr.max_index for a in atoms(f)), default=0)
    return VerificationQuery(box, f, n_out)


# -- writing ---------------------------------------------------------------------------

def fmt_num(x: float) -> str:
    """Shortest decimal that round-trips, never in exponent notation."""
    x = float(x)
    if x == 0:
        return "0.0"
    return np.format_float_positional(x, unique=True, trim="0")


def _fmt_expr(e: LinearExpr, var: str) -> str:
    terms = []
    for i, c in e.coeffs:
        terms.append(f"{var}_{i}" if c == 1.0 else f"(* {fmt_num(c)} {var}_{i})")
    if e.bias != 0.0 or not terms:
        terms.append(fmt_num(e.bias))
    return terms[0] if len(terms) == 1 else "(+ " + " ".join(terms) + ")"


def format_formula(f: Formula, var: str = "Y") -> str:
    if isinstance(f, Atom):
        a = canonical_atom(f)
        return f"({a.rel} {_fmt_expr(a.expr, var)} 0.0)"
    if isinstance(f, Not):
        return f"(not {format_formula(f.child, var)})"
    op = "and" if isinstance(f, And) else "or"
    return f"({op} " + " ".join(format_formula(c, var) for c in f.children) + ")"


def _header(box: InputBox, n_out: int, comment: str | None) -> list[str]:
    lines = []
    if comment:
        lines += [f"; {line}" for line in comment.splitlines()]
        lines.append("")
    lines += [f"(declare-const X_{i} Real)" for i in range(box.n)]
    lines.append("")
    lines += [f"(declare-const Y_{i} Real)" for i in range(n_out)]
    lines.append("")
    for i in range(box.n):
        lines.append(f"(assert (<= X_{i} {fmt_num(box.upper[i])}))")
        lines.append(f"(assert (>= X_{i} {fmt_num(box.lower[i])}))")
    lines.append("")
    return lines


def emit_vnnlib(query: VerificationQuery, query_spec: QuerySpec | None = None,
                comment: str | None = None) -> str:
    """Serialize a query.

    With ``query_spec`` the output is the simplified single-output property
    for an appended network (``Y_0`` compared against the threshold);
    otherwise the full formula over ``Y_0 .. Y_{m-1}`` is written.
    """
    if query_spec is not None:
        lines = _header(query.box, 1, comment)
        lines.append(f"(assert ({query_spec.assert_rel} Y_0 {fmt_num(query_spec.threshold)}))")
    else:
        if query.formula is None:
            raise VnnlibError("query has no formula")
        lines = _header(query.box, query.n_outputs, comment)
        f = query.formula
        parts = list(f.children) if isinstance(f, And) else [f]
        lines += [f"(assert {format_formula(p)})" for p in parts]
    return "\n".join(lines) + "\n"
