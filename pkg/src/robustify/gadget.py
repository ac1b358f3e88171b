"""Lower a normalized formula to ReLU layers with a single scalar output.

Two lowerings are provided:

* :func:`compile_fast_path` for a pure conjunction of non-strict atoms or a
  pure disjunction of strict atoms.  ``y = sum(relu(LE_i))`` and the query
  ``y <= 0`` (resp. ``y > 0``) is exact.
* :func:`compile_gadget` for arbitrary And/Or nesting.  Every connective
  with role ``op`` and ``k`` children becomes
  ``V = sum_i relu(b(op, k, eta) - V_child_i)``, children taking the dual
  role.  Atoms are the base case ``LE + eta`` (role and) or ``-LE + eta``
  (role or).  A satisfying point for the formula lands on the asserted side
  of ``eta``; the converse only holds up to the ``2 * eta`` slack band.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .formula import (
    LT, And, Atom, Formula, FormulaClass, FormulaError, Or, Root, Shape, Strictness,
    canonical_atom, classify, depth, node_count,
)

DEFAULT_ETA = 1e-4
MIN_ETA = 1e-7

AND = "and"
OR = "or"


class Mode(enum.Enum):
    FAST_PATH_EXACT = "fast_path_exact"
    GADGET_APPROX = "gadget_approx"


class FastPathError(ValueError):
    """The formula is not eligible for the exact single-layer encoding."""


def b_value(op: str, k: int, eta: float) -> float:
    """Flip bias for a connective: ``eta * (1 + 1/k)`` for and, ``2 * eta`` for or."""
    if k < 1:
        raise ValueError("fan-out must be at least 1")
    if op == AND:
        return eta * (1.0 + 1.0 / k)
    if op == OR:
        return 2.0 * eta
    raise ValueError(f"unknown connective {op!r}")


def _dual(op: str) -> str:
    return OR if op == AND else AND


def _op_of(f: Formula) -> str:
    return OR if isinstance(f, Or) else AND


@dataclass
class AffineLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray    # (out,)

    def __post_init__(self):
        self.weight = np.atleast_2d(np.asarray(self.weight, dtype=float))
        self.bias = np.asarray(self.bias, dtype=float).reshape(-1)
        if self.weight.shape[0] != self.bias.shape[0]:
            raise ValueError("weight rows and bias length differ")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weight.T + self.bias


@dataclass(frozen=True)
class QuerySpec:
    """Comparator asserted to the solver for the appended scalar output.

    ``assert_rel`` describes the counterexample region (what goes into the
    VNNLIB file); ``verify_rel`` is the property proven when that region is
    empty.
    """

    assert_rel: str
    threshold: float

    @property
    def verify_rel(self) -> str:
        return {">=": "<", ">": "<=", "<=": ">", "<": ">="}[self.assert_rel]

    def asserted(self, y, tol: float = 0.0) -> np.ndarray | bool:
        """Whether ``y`` lies in the asserted (counterexample) region.

        ``tol`` widens the region, which is what a soundness check wants.
        """
        y = np.asarray(y, dtype=float)
        t = self.threshold
        out = {
            ">=": lambda: y >= t - tol,
            ">": lambda: y > t - tol,
            "<=": lambda: y <= t + tol,
            "<": lambda: y < t + tol,
        }[self.assert_rel]()
        return bool(out) if out.ndim == 0 else out

    def to_dict(self) -> dict:
        return {"assert": f"y {self.assert_rel} {self.threshold!r}",
                "verify": f"y {self.verify_rel} {self.threshold!r}",
                "assert_rel": self.assert_rel, "threshold": self.threshold}


@dataclass
class GadgetTrace:
    """Pre-folding view of the circuit, in the terms used to describe the gadget.

    ``atom_gadgets`` holds ``(role, V-expression bias)`` for each atom in
    formula order; ``stages`` holds ``(op, k, b)`` per connective, listed by
    depth from the leaves upward (``stages[d]`` are the connectives of
    height ``d + 1``).
    """

    atom_gadgets: list[tuple[str, float]] = field(default_factory=list)
    stages: list[list[tuple[str, int, float]]] = field(default_factory=list)

    @property
    def atom_biases(self) -> list[float]:
        return [b for _, b in self.atom_gadgets]

    @property
    def stage_b(self) -> list[list[float]]:
        return [[b for _, _, b in s] for s in self.stages]


@dataclass
class CircuitIR:
    m: int
    layers: list[AffineLayer]
    root: Root
    strictness: Strictness
    mode: Mode
    eta: float
    query: QuerySpec
    formula_class: FormulaClass
    trace: GadgetTrace = field(default_factory=GadgetTrace)
    carried: int = 0

    @property
    def relu_stages(self) -> int:
        return len(self.layers) - 1

    @property
    def relu_neurons(self) -> list[int]:
        return [layer.out_dim for layer in self.layers[:-1]]

    def __call__(self, logits) -> np.ndarray | float:
        return eval_circuit(self, logits)

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "mode": self.mode.value,
            "root": self.root.value,
            "strictness": self.strictness.value,
            "eta": self.eta,
            "relu_stages": self.relu_stages,
            "relu_neurons": self.relu_neurons,
            "carried_neurons": self.carried,
            "query": self.query.to_dict(),
            "atom_gadget_biases": self.trace.atom_biases,
            "stage_b": self.trace.stage_b,
        }


def eval_circuit(c: CircuitIR, logits) -> np.ndarray | float:
    """Run the affine/ReLU stack on logits ``(m,)`` or ``(n, m)``."""
    x = np.asarray(logits, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != c.m:
        raise ValueError(f"circuit expects {c.m} inputs, got {x.shape[1]}")
    for layer in c.layers[:-1]:
        x = np.maximum(layer(x), 0.0)
    y = c.layers[-1](x)[:, 0]
    return float(y[0]) if single else y


# -- exact fast path ------------------------------------------------------------

def fast_path_kind(f: Formula) -> str | None:
    """``"conj"``, ``"disj"`` or None when the exact encoding does not apply."""
    if isinstance(f, Atom):
        return "disj" if canonical_atom(f).rel == LT else "conj"
    if any(not isinstance(c, Atom) for c in f.children):
        return None
    rels = {canonical_atom(c).rel for c in f.children}
    if isinstance(f, And) and rels == {"<="}:
        return "conj"
    if isinstance(f, Or) and rels == {LT}:
        return "disj"
    return None


def compile_fast_path(f: Formula, m: int) -> CircuitIR:
    cls = classify(f, m)
    kind = fast_path_kind(f)
    if kind is None:
        raise FastPathError(f"fast path needs a pure conjunction of non-strict atoms or a pure "
                            f"disjunction of strict atoms (got {cls.shape.value}, "
                            f"{cls.strictness.value})")
    lits = [f] if isinstance(f, Atom) else list(f.children)
    sign = 1.0 if kind == "conj" else -1.0
    rows = [sign * canonical_atom(a).expr.dense(m) for a in lits]
    bias = [sign * canonical_atom(a).expr.bias for a in lits]
    first = AffineLayer(np.array(rows), np.array(bias))
    total = AffineLayer(np.ones((1, len(lits))), np.zeros(1))
    query = QuerySpec("<=" if kind == "conj" else ">", 0.0)
    return CircuitIR(m, [first, total], cls.root, cls.strictness, Mode.FAST_PATH_EXACT,
                     0.0, query, cls)


# -- general gadget ---------------------------------------------------------------

def _height(f: Formula) -> int:
    return depth(f)


def gadget_value(f: Formula, eta: float, points, role: str | None = None,
                 b: Callable[[str, int, float], float] = b_value) -> np.ndarray:
    """Directly evaluate ``V(role, f, eta)`` by recursion (no layer folding)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    role = role or _op_of(f)

    def rec(g: Formula, r: str) -> np.ndarray:
        if isinstance(g, Atom):
            v = canonical_atom(g).expr.value(pts)
            return v + eta if r == AND else -v + eta
        k = len(g.children)
        bb = b(r, k, eta)
        return sum(np.maximum(bb - rec(c, _dual(r)), 0.0) for c in g.children)

    return rec(f, role)


def _query_for(cls: FormulaClass, eta: float) -> QuerySpec:
    strict = cls.strictness is Strictness.STRICT
    if cls.root is Root.DISJUNCTIVE:
        return QuerySpec(">" if strict else ">=", eta)
    return QuerySpec("<" if strict else "<=", eta)


def compile_gadget(f: Formula, eta: float, m: int,
                   b: Callable[[str, int, float], float] = b_value) -> CircuitIR:
    """Build the layered circuit for ``V(op(f), f, eta)``.

    Connective outputs whose parent sits more than one stage higher are
    carried forward through identity rows (ReLU of a non-negative value is
    the identity), so shallow leaves next to deep subtrees cost one extra
    neuron per skipped stage.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    _check_flat(f)
    cls = classify(f, m)
    root_op = _op_of(f)
    trace = GadgetTrace()

    if isinstance(f, Atom):
        e = canonical_atom(f).expr
        trace.atom_gadgets.append((AND, e.bias + eta))
        layer = AffineLayer(e.dense(m)[None, :], np.array([e.bias + eta]))
        return CircuitIR(m, [layer], cls.root, cls.strictness, Mode.GADGET_APPROX, eta,
                         _query_for(cls, eta), cls, trace)

    H = _height(f)
    # edges: one ReLU neuron per (parent, child) pair
    edges: list[dict] = []
    node_edges: dict[int, list[int]] = {}
    stage_nodes: list[list[tuple[str, int, float]]] = [[] for _ in range(H)]

    def walk(g: Formula, role: str, is_root: bool = False) -> int:
        """Register edges below ``g``; return a fresh node id."""
        gid = len(node_edges)
        node_edges[gid] = []
        k = len(g.children)
        bb = b(role, k, eta)
        stage_nodes[_height(g) - 1].append((role, k, bb))
        ids = []
        for c in g.children:
            rec = {"parent_b": bb, "child": c, "level": _height(c) + 1,
                   "until": H if is_root else _height(g)}
            if isinstance(c, Atom):
                child_role = _dual(role)
                e = canonical_atom(c).expr
                s = 1.0 if child_role == AND else -1.0
                trace.atom_gadgets.append((child_role, s * e.bias + eta))
                rec["atom"] = (s, e)
            else:
                rec["sub"] = walk(c, _dual(role))
            edges.append(rec)
            ids.append(len(edges) - 1)
        node_edges[gid] = ids
        return gid

    root_id = walk(f, root_op, is_root=True)
    trace.stages = stage_nodes

    # slots[L] = edge ids present in ReLU stage L (1-based), in order
    slots: list[list[int]] = [[] for _ in range(H + 1)]
    for L in range(1, H + 1):
        slots[L] = [i for i, e in enumerate(edges) if e["level"] <= L <= e["until"]]
    carried = sum(1 for L in range(1, H + 1) for i in slots[L] if edges[i]["level"] < L)

    layers = []
    # input -> stage 1
    W = np.zeros((len(slots[1]), m))
    B = np.zeros(len(slots[1]))
    for r, i in enumerate(slots[1]):
        e = edges[i]
        s, expr = e["atom"]
        # relu(b - (s * LE + eta))
        W[r] = -s * expr.dense(m)
        B[r] = e["parent_b"] - s * expr.bias - eta
    layers.append(AffineLayer(W, B))
    for L in range(1, H):
        pos = {i: p for p, i in enumerate(slots[L])}
        W = np.zeros((len(slots[L + 1]), len(slots[L])))
        B = np.zeros(len(slots[L + 1]))
        for r, i in enumerate(slots[L + 1]):
            e = edges[i]
            if e["level"] <= L:
                W[r, pos[i]] = 1.0
            else:
                for j in node_edges[e["sub"]]:
                    W[r, pos[j]] = -1.0
                B[r] = e["parent_b"]
        layers.append(AffineLayer(W, B))
    pos = {i: p for p, i in enumerate(slots[H])}
    W = np.zeros((1, len(slots[H])))
    for j in node_edges[root_id]:
        W[0, pos[j]] = 1.0
    layers.append(AffineLayer(W, np.zeros(1)))

    return CircuitIR(m, layers, cls.root, cls.strictness, Mode.GADGET_APPROX, eta,
                     _query_for(cls, eta), cls, trace, carried)


def _check_flat(f: Formula) -> None:
    if isinstance(f, Atom):
        return
    if not isinstance(f, (And, Or)):
        raise FormulaError("compile expects a normalized formula (no negation)")
    if len(f.children) < 2:
        raise FormulaError("unflattened formula: connective with a single child")
    for c in f.children:
        if type(c) is type(f):
            raise FormulaError("unflattened formula: nested connectives of the same kind")
        _check_flat(c)


def compile_formula(f: Formula, m: int, eta: float = DEFAULT_ETA,
                    prefer_fast_path: bool = True) -> CircuitIR:
    """Pick the exact fast path when it applies, the gadget otherwise."""
    if eta < MIN_ETA:
        raise ValueError(f"eta={eta} is below the floor {MIN_ETA}")
    if prefer_fast_path and fast_path_kind(f) is not None:
        return compile_fast_path(f, m)
    return compile_gadget(f, eta, m)


def expected_error_margin(f: Formula, eta: float) -> float | None:
    """Atom slack a solver counterexample may carry: ``2 * eta`` for DNF/CNF.

    Returns None for deeper formulas, where no bound is claimed.
    """
    cls = classify(f)
    if cls.shape is Shape.GENERAL:
        return None
    return 2.0 * eta


def circuit_size(f: Formula) -> int:
    """ReLU neurons needed before carries: one per non-root node."""
    return node_count(f) - 1
