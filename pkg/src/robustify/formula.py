"""Post-condition formulas over network outputs.

A formula is a Boolean combination of linear constraints over the logits
``y_0 .. y_{m-1}``.  After :func:`normalize_nnf` every atom is stored as
``expr <= 0`` or ``expr < 0``, negation is gone, And/Or alternate along
every path and every connective has at least two children.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

LE = "<="
LT = "<"
GE = ">="
GT = ">"
RELATIONS = (LE, LT, GE, GT)


class FormulaError(ValueError):
    """Raised for formulas outside the supported grammar."""


@dataclass(frozen=True)
class LinearExpr:
    """``sum(c_i * y_i) + bias`` with coefficients stored as sorted pairs."""

    coeffs: tuple[tuple[int, float], ...] = ()
    bias: float = 0.0

    @classmethod
    def build(cls, coeffs: Mapping[int, float] | Iterable[tuple[int, float]] = (),
              bias: float = 0.0) -> "LinearExpr":
        items = coeffs.items() if isinstance(coeffs, Mapping) else coeffs
        acc: dict[int, float] = {}
        for idx, c in items:
            idx = int(idx)
            if idx < 0:
                raise FormulaError(f"negative output index {idx}")
            acc[idx] = acc.get(idx, 0.0) + float(c)
        pairs = tuple(sorted((i, c) for i, c in acc.items() if c != 0.0))
        return cls(pairs, float(bias))

    @classmethod
    def var(cls, idx: int, coeff: float = 1.0) -> "LinearExpr":
        return cls.build({idx: coeff})

    @property
    def is_constant(self) -> bool:
        return not self.coeffs

    @property
    def max_index(self) -> int:
        return max((i for i, _ in self.coeffs), default=-1)

    def as_dict(self) -> dict[int, float]:
        return dict(self.coeffs)

    def dense(self, m: int) -> np.ndarray:
        row = np.zeros(m)
        for i, c in self.coeffs:
            if i >= m:
                raise FormulaError(f"y_{i} out of range for arity {m}")
            row[i] = c
        return row

    def __neg__(self) -> "LinearExpr":
        return LinearExpr(tuple((i, -c) for i, c in self.coeffs), -self.bias)

    def __add__(self, other: "LinearExpr | float") -> "LinearExpr":
        if isinstance(other, LinearExpr):
            return LinearExpr.build(list(self.coeffs) + list(other.coeffs),
                                    self.bias + other.bias)
        return LinearExpr(self.coeffs, self.bias + float(other))

    def __sub__(self, other: "LinearExpr | float") -> "LinearExpr":
        if isinstance(other, LinearExpr):
            return self + (-other)
        return LinearExpr(self.coeffs, self.bias - float(other))

    def scale(self, k: float) -> "LinearExpr":
        return LinearExpr.build([(i, k * c) for i, c in self.coeffs], k * self.bias)

    def value(self, points: np.ndarray) -> np.ndarray | float:
        """Evaluate at a point ``(m,)`` or a batch ``(n, m)``."""
        points = np.asarray(points, dtype=float)
        out = self.bias
        for i, c in self.coeffs:
            out = out + c * points[..., i]
        if np.ndim(out) == 0 and points.ndim == 2:
            out = np.full(points.shape[0], float(out))
        return out

    def __str__(self) -> str:
        parts = []
        for i, c in self.coeffs:
            if c == 1.0:
                parts.append(f"y{i}")
            elif c == -1.0:
                parts.append(f"-y{i}")
            else:
                parts.append(f"{c:g}*y{i}")
        if self.bias or not parts:
            parts.append(f"{self.bias:g}")
        return " + ".join(parts).replace("+ -", "- ")


@dataclass(frozen=True)
class Atom:
    expr: LinearExpr
    rel: str = LE

    def __post_init__(self):
        if self.rel not in RELATIONS:
            raise FormulaError(f"unknown relation {self.rel!r}")

    @property
    def strict(self) -> bool:
        return self.rel in (LT, GT)

    def __str__(self) -> str:
        return f"({self.expr} {self.rel} 0)"


@dataclass(frozen=True)
class And:
    children: tuple["Formula", ...]

    def __init__(self, children: Iterable["Formula"]):
        object.__setattr__(self, "children", tuple(children))
        if not self.children:
            raise FormulaError("And needs at least one child")

    def __str__(self) -> str:
        return "(" + " & ".join(map(str, self.children)) + ")"


@dataclass(frozen=True)
class Or:
    children: tuple["Formula", ...]

    def __init__(self, children: Iterable["Formula"]):
        object.__setattr__(self, "children", tuple(children))
        if not self.children:
            raise FormulaError("Or needs at least one child")

    def __str__(self) -> str:
        return "(" + " | ".join(map(str, self.children)) + ")"


@dataclass(frozen=True)
class Not:
    """Negation; only legal directly above an atom."""

    child: "Formula"

    def __str__(self) -> str:
        return f"!{self.child}"


Formula = Union[Atom, And, Or, Not]

TRUE = Atom(LinearExpr((), 0.0), LE)
FALSE = Atom(LinearExpr((), 1.0), LE)


def atom(coeffs: Mapping[int, float], bias: float = 0.0, rel: str = LE) -> Atom:
    """Shorthand: ``atom({0: 1, 2: -1}, 0.5, "<=")`` is ``y0 - y2 + 0.5 <= 0``."""
    return Atom(LinearExpr.build(coeffs, bias), rel)


# -- normalization ----------------------------------------------------------

def canonical_atom(a: Atom) -> Atom:
    """Rewrite ``>=``/``>`` atoms into ``<=``/``<`` form by negating the expression."""
    if a.rel == GE:
        return Atom(-a.expr, LE)
    if a.rel == GT:
        return Atom(-a.expr, LT)
    return a


def negate_atom(a: Atom) -> Atom:
    flipped = {LE: GT, LT: GE, GE: LT, GT: LE}[a.rel]
    return canonical_atom(Atom(a.expr, flipped))


def _const_value(a: Atom) -> bool:
    b = a.expr.bias
    return {LE: b <= 0, LT: b < 0, GE: b >= 0, GT: b > 0}[a.rel]


def _push_negations(f: Formula) -> Formula:
    if isinstance(f, Not):
        inner = f.child
        while isinstance(inner, Not) and isinstance(inner.child, Not):
            inner = inner.child.child
        if isinstance(inner, Not):
            return _push_negations(inner.child)
        if not isinstance(inner, Atom):
            raise FormulaError("negation is only allowed directly above a linear constraint")
        return negate_atom(inner)
    if isinstance(f, Atom):
        return canonical_atom(f)
    if isinstance(f, And):
        return And(_push_negations(c) for c in f.children)
    if isinstance(f, Or):
        return Or(_push_negations(c) for c in f.children)
    raise FormulaError(f"not a formula node: {f!r}")


def flatten(f: Formula) -> Formula:
    """Merge nested same-operator nodes, collapse 1-child nodes, fold constants.

    Constant atoms fold to :data:`TRUE` / :data:`FALSE`; those two only ever
    survive as the whole formula.
    """
    if isinstance(f, Not):
        raise FormulaError("flatten expects a negation-free formula")
    if isinstance(f, Atom):
        a = canonical_atom(f)
        if a.expr.is_constant:
            return TRUE if _const_value(a) else FALSE
        return a
    is_and = isinstance(f, And)
    absorbing, neutral = (FALSE, TRUE) if is_and else (TRUE, FALSE)
    kids: list[Formula] = []
    for c in f.children:
        c = flatten(c)
        if c == absorbing:
            return absorbing
        if c == neutral:
            continue
        if type(c) is type(f):
            kids.extend(c.children)
        else:
            kids.append(c)
    if not kids:
        return neutral
    if len(kids) == 1:
        return kids[0]
    return And(kids) if is_and else Or(kids)


def normalize_nnf(raw: Formula) -> Formula:
    """Push negations into atoms, canonicalize relations and flatten."""
    return flatten(_push_negations(raw))


def negate(f: Formula) -> Formula:
    """De Morgan dual with every atom relation flipped, re-flattened."""
    def dual(g: Formula) -> Formula:
        if isinstance(g, Atom):
            return negate_atom(g)
        if isinstance(g, And):
            return Or(dual(c) for c in g.children)
        if isinstance(g, Or):
            return And(dual(c) for c in g.children)
        return _push_negations(g.child)  # double negation
    return flatten(dual(f))


def substitute_margin(f: Formula, eta: float) -> Formula:
    """Q[eta]: relax every atom ``LE <= 0`` to ``LE <= eta`` (same for ``<``)."""
    if eta < 0:
        raise FormulaError("margin must be non-negative")
    if isinstance(f, Atom):
        a = canonical_atom(f)
        return Atom(a.expr - eta, a.rel)
    if isinstance(f, And):
        return And(substitute_margin(c, eta) for c in f.children)
    if isinstance(f, Or):
        return Or(substitute_margin(c, eta) for c in f.children)
    raise FormulaError("substitute_margin expects a normalized formula")


# -- queries ----------------------------------------------------------------

def atoms(f: Formula) -> list[Atom]:
    if isinstance(f, Atom):
        return [f]
    if isinstance(f, Not):
        return atoms(f.child)
    return [a for c in f.children for a in atoms(c)]


def node_count(f: Formula) -> int:
    if isinstance(f, Atom):
        return 1
    if isinstance(f, Not):
        return node_count(f.child)
    return 1 + sum(node_count(c) for c in f.children)


def depth(f: Formula) -> int:
    """Connective depth: 0 for an atom."""
    if isinstance(f, Atom):
        return 0
    if isinstance(f, Not):
        return depth(f.child)
    return 1 + max(depth(c) for c in f.children)


def arity(f: Formula) -> int:
    """Smallest output count the formula can be evaluated on."""
    return 1 + max((a.expr.max_index for a in atoms(f)), default=-1)


def check_arity(f: Formula, m: int) -> None:
    need = arity(f)
    if need > m:
        raise FormulaError(f"formula references y_{need - 1} but the network has {m} outputs")


def eval_formula(f: Formula, point) -> bool | np.ndarray:
    """Evaluate at one point ``(m,)`` (returns bool) or a batch ``(n, m)``."""
    pts = np.asarray(point, dtype=float)
    if pts.ndim not in (1, 2):
        raise FormulaError("points must be a vector or a 2-D batch")
    check_arity(f, pts.shape[-1])
    out = _eval(f, pts)
    return bool(out) if pts.ndim == 1 else out


def _eval(f: Formula, pts: np.ndarray):
    if isinstance(f, Atom):
        v = f.expr.value(pts)
        if f.rel == LE:
            return v <= 0
        if f.rel == LT:
            return v < 0
        if f.rel == GE:
            return v >= 0
        return v > 0
    if isinstance(f, Not):
        return np.logical_not(_eval(f.child, pts))
    vals = [_eval(c, pts) for c in f.children]
    op = np.logical_and if isinstance(f, And) else np.logical_or
    out = vals[0]
    for v in vals[1:]:
        out = op(out, v)
    return out


# -- classification ---------------------------------------------------------

class Root(enum.Enum):
    ATOMIC = "atomic"
    CONJUNCTIVE = "conjunctive"
    DISJUNCTIVE = "disjunctive"


class Shape(enum.Enum):
    PURE_CONJ = "pure_conj"
    PURE_DISJ = "pure_disj"
    DNF = "dnf"
    CNF = "cnf"
    GENERAL = "general"


class Strictness(enum.Enum):
    STRICT = "<"
    NONSTRICT = "<="

    @property
    def bar(self) -> "Strictness":
        """The swapped comparator used at the top-level query."""
        return Strictness.NONSTRICT if self is Strictness.STRICT else Strictness.STRICT


@dataclass(frozen=True)
class FormulaClass:
    root: Root
    shape: Shape
    strictness: Strictness
    depth: int
    n_atoms: int

    @property
    def normal_form(self) -> bool:
        """True for DNF/CNF (pure conjunctions and disjunctions are both)."""
        return self.shape is not Shape.GENERAL

    def to_dict(self) -> dict:
        return {"root": self.root.value, "shape": self.shape.value,
                "strictness": self.strictness.value, "depth": self.depth,
                "atoms": self.n_atoms}


def strictness(f: Formula) -> Strictness:
    """Recursive comparator: an And is strict if any child is, an Or only if all are."""
    if isinstance(f, Atom):
        return Strictness.STRICT if canonical_atom(f).rel == LT else Strictness.NONSTRICT
    kids = [strictness(c) for c in f.children]
    if isinstance(f, And):
        return Strictness.NONSTRICT if all(k is Strictness.NONSTRICT for k in kids) \
            else Strictness.STRICT
    return Strictness.STRICT if all(k is Strictness.STRICT for k in kids) \
        else Strictness.NONSTRICT


def classify(f: Formula, m: int | None = None) -> FormulaClass:
    if m is not None:
        check_arity(f, m)
    d = depth(f)
    if isinstance(f, Atom):
        # a lone literal is a one-clause conjunction
        root, shape = Root.ATOMIC, Shape.PURE_CONJ
    else:
        root = Root.CONJUNCTIVE if isinstance(f, And) else Root.DISJUNCTIVE
        if d == 1:
            shape = Shape.PURE_CONJ if root is Root.CONJUNCTIVE else Shape.PURE_DISJ
        elif d == 2:
            shape = Shape.CNF if root is Root.CONJUNCTIVE else Shape.DNF
        else:
            shape = Shape.GENERAL
    return FormulaClass(root, shape, strictness(f), d, len(atoms(f)))


def conjunction(parts: Sequence[Formula]) -> Formula:
    return flatten(And(parts))


def disjunction(parts: Sequence[Formula]) -> Formula:
    return flatten(Or(parts))


def to_sexpr(f: Formula, var: str = "Y") -> str:
    """Render in the VNNLIB s-expression dialect (used for debugging and info)."""
    from .vnnlib import format_formula
    return format_formula(f, var)


def is_finite(f: Formula) -> bool:
    return all(math.isfinite(a.expr.bias) and all(math.isfinite(c) for _, c in a.expr.coeffs)
               for a in atoms(f))
