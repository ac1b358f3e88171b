"""Sampling validators for the encoding guarantees.

Every validator is deterministic given its seed and returns a
:class:`ValidationReport`.  The tolerance ladder is 1e-12 for closed-form
identities, 1e-9 for double-precision chains and 1e-6 across float32
storage.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from . import confidence as conf
from .formula import (
    GE, GT, LE, LT, And, Atom, Formula, LinearExpr, Not, Or, Root, Shape, arity, atoms,
    canonical_atom, classify, eval_formula, negate, normalize_nnf, substitute_margin,
)
from .gadget import (
    CircuitIR, b_value, compile_fast_path, compile_gadget, eval_circuit, fast_path_kind,
    gadget_value,
)
from .topk import TopKContext, build_affinity_negation, build_topk_negation, \
    build_topk_relaxed_negation, filter_affinity_pairs, topk_sets_batch, TRIVIALLY_VIOLATED

TOL_CLOSED = 1e-12
TOL_DOUBLE = 1e-9
TOL_FLOAT32 = 1e-6
DEFAULT_BOX = 10.0


def default_seed(seed: int | None = None) -> int:
    if seed is not None:
        return seed
    return int(os.environ.get("ROBUSTIFY_SEED", "0"))


@dataclass
class ValidationReport:
    name: str
    samples: int = 0
    violations: int = 0
    witnesses: list = field(default_factory=list)
    max_slack: float = 0.0
    tolerance: float = TOL_DOUBLE
    details: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return "pass" if self.violations == 0 else "fail"

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def add_violation(self, witness, limit: int = 5) -> None:
        self.violations += 1
        if len(self.witnesses) < limit:
            self.witnesses.append(witness)

    def merge(self, other: "ValidationReport") -> "ValidationReport":
        self.samples += other.samples
        self.violations += other.violations
        self.witnesses.extend(other.witnesses[: max(0, 5 - len(self.witnesses))])
        self.max_slack = max(self.max_slack, other.max_slack)
        return self

    def to_dict(self) -> dict:
        def clean(w):
            if isinstance(w, np.ndarray):
                return w.tolist()
            if isinstance(w, (list, tuple)):
                return [clean(v) for v in w]
            if isinstance(w, dict):
                return {k: clean(v) for k, v in w.items()}
            if isinstance(w, np.generic):
                return w.item()
            return w if isinstance(w, (int, float, str, bool, type(None))) else str(w)
        return {"property": self.name, "samples": self.samples, "violations": self.violations,
                "witnesses": clean(self.witnesses), "max_slack": self.max_slack,
                "tolerance": self.tolerance, "verdict": self.verdict,
                "details": clean(self.details)}

    def __str__(self) -> str:
        return (f"{self.name}: {self.verdict.upper()} "
                f"({self.violations} violations / {self.samples} samples, tol {self.tolerance:g})")


# -- random formulas ---------------------------------------------------------------

def random_atom(rng: np.random.Generator, m: int, rels: Sequence[str] = (LE, LT, GE, GT),
                max_vars: int = 3, integer: bool = False) -> Atom:
    k = int(rng.integers(1, min(max_vars, m) + 1))
    idx = rng.choice(m, size=k, replace=False)
    if integer:
        coeffs = rng.integers(-3, 4, size=k).astype(float)
        coeffs[coeffs == 0] = 1.0
        bias = float(rng.integers(-5, 6))
    else:
        coeffs = rng.normal(0, 1, size=k)
        bias = float(rng.normal(0, 2))
    return Atom(LinearExpr.build(dict(zip(idx.tolist(), coeffs.tolist())), bias),
                str(rng.choice(list(rels))))


def random_raw_formula(rng: np.random.Generator, m: int, max_depth: int = 4,
                       max_fanout: int = 5, neg_prob: float = 0.2,
                       rels: Sequence[str] = (LE, LT, GE, GT), leaf_prob: float = 0.25):
    """Random PC-grammar tree, possibly with negated atoms and same-kind nesting."""
    def rec(d: int):
        if d >= max_depth or (d > 0 and rng.random() < leaf_prob):
            a = random_atom(rng, m, rels)
            return Not(a) if rng.random() < neg_prob else a
        k = int(rng.integers(2, max_fanout + 1))
        kids = [rec(d + 1) for _ in range(k)]
        return And(kids) if rng.random() < 0.5 else Or(kids)
    return rec(0)


def random_formula(rng: np.random.Generator, m: int, max_depth: int = 4,
                   max_fanout: int = 5, strict_prob: float = 0.3) -> Formula:
    """Random normalized formula with strictly alternating connectives."""
    def rel():
        return str(rng.choice([LT, GT])) if rng.random() < strict_prob \
            else str(rng.choice([LE, GE]))

    depth = int(rng.integers(1, max_depth + 1))
    root_or = rng.random() < 0.5

    def rec(d: int, is_or: bool):
        if d == 0:
            return canonical_atom(Atom(random_atom(rng, m).expr, rel()))
        k = int(rng.integers(2, max_fanout + 1))
        kids = []
        for i in range(k):
            # at least one child reaches full depth
            sub = d - 1 if i == 0 or rng.random() < 0.6 else int(rng.integers(0, d))
            kids.append(rec(sub, not is_or))
        return Or(kids) if is_or else And(kids)

    return rec(depth, root_or)


def random_normal_form(rng: np.random.Generator, m: int, kind: str = "dnf",
                       max_clauses: int = 5, max_clause: int = 5,
                       strict_prob: float = 0.3) -> Formula:
    """Random DNF (``kind="dnf"``) or CNF with at least two atoms."""
    def lit():
        a = random_atom(rng, m)
        r = LT if rng.random() < strict_prob else LE
        return canonical_atom(Atom(a.expr, r))

    n = int(rng.integers(1, max_clauses + 1))
    clauses = []
    for _ in range(n):
        size = int(rng.integers(1, max_clause + 1))
        lits = [lit() for _ in range(size)]
        clauses.append(lits[0] if size == 1 else (And(lits) if kind == "dnf" else Or(lits)))
    if n == 1 and isinstance(clauses[0], Atom):
        clauses.append(lit())
    if n == 1 and not isinstance(clauses[0], Atom):
        return clauses[0]
    return normalize_nnf(Or(clauses) if kind == "dnf" else And(clauses))


# -- sampling ----------------------------------------------------------------------

def stratified_points(f: Formula, m: int, n: int, rng: np.random.Generator, eta: float,
                      box: float = DEFAULT_BOX, uniform_frac: float = 0.3) -> np.ndarray:
    """Uniform points in ``[-box, box]^m`` plus points pinned near atom boundaries.

    Boundary points sit at signed distances ``{0, ±eta/2, ±eta, ±2eta}`` from
    one to three atom hyperplanes at once (least-norm projection).
    """
    n_uni = int(round(n * uniform_frac))
    pts = [rng.uniform(-box, box, size=(n_uni, m))]
    lits = [canonical_atom(a).expr for a in atoms(f) if not a.expr.is_constant]
    offsets = np.array([0.0, eta / 2, -eta / 2, eta, -eta, 2 * eta, -2 * eta])
    n_bnd = n - n_uni
    if lits and n_bnd > 0:
        A_all = np.array([e.dense(m) for e in lits])
        b_all = np.array([e.bias for e in lits])
        base = rng.uniform(-box, box, size=(n_bnd, m))
        out = np.empty_like(base)
        counts = rng.integers(1, min(3, len(lits), m) + 1, size=n_bnd)
        for cnt in np.unique(counts):
            rows = np.flatnonzero(counts == cnt)
            # distinct atoms per row: argsort of random keys
            sel = np.argsort(rng.random((rows.size, len(lits))), axis=1)[:, :cnt]
            A, b = A_all[sel], b_all[sel]
            target = rng.choice(offsets, size=(rows.size, cnt))
            resid = target - (np.einsum("rcm,rm->rc", A, base[rows]) + b)
            out[rows] = base[rows] + np.einsum("rmc,rc->rm", np.linalg.pinv(A), resid)
        pts.append(out)
    elif n_bnd > 0:
        pts.append(rng.uniform(-box, box, size=(n_bnd, m)))
    return np.vstack(pts)


# -- gadget soundness ---------------------------------------------------------------

def _circuit_for(f: Formula, eta: float, m: int, b) -> CircuitIR:
    return compile_gadget(f, eta, m, b=b)


def validate_soundness(f: Formula, eta: float, n_samples: int = 1000,
                       seed: int | None = None, m: int | None = None,
                       b: Callable[[str, int, float], float] = b_value,
                       tol: float = TOL_DOUBLE, box: float = DEFAULT_BOX) -> ValidationReport:
    """Every point satisfying ``f`` lands on the asserted side of ``eta``."""
    rng = np.random.default_rng(default_seed(seed))
    m = m or max(arity(f), 1)
    c = _circuit_for(f, eta, m, b)
    pts = stratified_points(f, m, n_samples, rng, eta, box)
    truth = eval_formula(f, pts)
    y = eval_circuit(c, pts)
    ok = c.query.asserted(y, tol)
    bad = np.flatnonzero(truth & ~ok)
    rep = ValidationReport("gadget-soundness", len(pts), 0, tolerance=tol,
                           details={"eta": eta, "root": c.root.value,
                                    "assert": c.query.assert_rel, "true_points": int(truth.sum())})
    for i in bad:
        rep.add_violation({"point": pts[i], "y": float(y[i])})
    if truth.any():
        rep.max_slack = float(np.max(np.abs(y[truth] - eta)))
    return rep


def validate_atomic_exactness(f: Atom, eta: float, points: np.ndarray,
                              tol: float = TOL_CLOSED) -> ValidationReport:
    """For a single atom the comparator and the formula agree, boundary included.

    Points whose atom value is within ``tol`` of zero are skipped: there the
    two sides differ only by the rounding of ``LE + eta - eta``.
    """
    m = points.shape[1]
    e = canonical_atom(f).expr
    strict = canonical_atom(f).rel == LT
    truth = eval_formula(f, points)
    clear = np.abs(e.value(points)) > tol
    rep = ValidationReport("atomic-exactness", len(points), tolerance=tol,
                           details={"skipped_rounding_band": int((~clear).sum())})
    for role in ("and", "or"):
        v = gadget_value(f, eta, points, role=role)
        if role == "and":
            side = v < eta if strict else v <= eta
        else:
            side = v > eta if strict else v >= eta
        for i in np.flatnonzero((side != truth) & clear):
            rep.add_violation({"role": role, "point": points[i], "v": float(v[i])})
    c = compile_gadget(f, eta, m)
    side = c.query.asserted(eval_circuit(c, points))
    for i in np.flatnonzero((side != truth) & clear):
        rep.add_violation({"role": "circuit", "point": points[i]})
    return rep


def validate_fast_path(f: Formula, points: np.ndarray, tol: float = 0.0) -> ValidationReport:
    """The exact encoding agrees with the formula at every point.

    With ``tol > 0`` disagreements at points where some atom is within
    ``tol`` of its boundary are ignored (summation-order rounding).
    """
    m = points.shape[1]
    c = compile_fast_path(f, m)
    side = c.query.asserted(eval_circuit(c, points))
    truth = eval_formula(f, points)
    rep = ValidationReport("fast-path-exactness", len(points), tolerance=tol,
                           details={"kind": fast_path_kind(f)})
    bad = side != truth
    if tol > 0:
        near = np.zeros(len(points), dtype=bool)
        for a in atoms(f):
            near |= np.abs(canonical_atom(a).expr.value(points)) <= tol
        bad &= ~near
    for i in np.flatnonzero(bad):
        rep.add_violation({"point": points[i]})
    return rep


def grid_points(f: Formula, m: int, n: int, rng: np.random.Generator, box: int = 8,
                denom: int = 64, boundary_frac: float = 0.5) -> np.ndarray:
    """Dyadic points, half of them exactly on an atom boundary.

    With small-integer coefficients every atom value is computed without
    rounding in any summation order, so exact-equivalence checks are
    meaningful at the boundary itself.  Boundary points solve one atom for
    a variable whose coefficient is a power of two.
    """
    pts = rng.integers(-box * denom, box * denom + 1, size=(n, m)) / denom
    cands = []
    for a in atoms(f):
        e = canonical_atom(a).expr
        for j, cj in e.coeffs:
            if abs(cj) in (1.0, 2.0, 4.0):
                cands.append((e, j, cj))
    if not cands:
        return pts
    nb = int(n * boundary_frac)
    for r in range(nb):
        e, j, cj = cands[int(rng.integers(len(cands)))]
        x = pts[r]
        x[j] = 0.0
        x[j] = -e.value(x) / cj
    return pts


# -- error bound --------------------------------------------------------------------

def validate_error_bound(f: Formula, eta: float, n_samples: int = 1000,
                         seed: int | None = None, m: int | None = None,
                         tol: float = TOL_DOUBLE, box: float = DEFAULT_BOX,
                         points: np.ndarray | None = None) -> ValidationReport:
    """Points on the asserted side satisfy ``f`` with every atom relaxed by ``2 * eta``."""
    cls = classify(f)
    if cls.shape is Shape.GENERAL:
        raise ValueError("the 2*eta bound is only established for DNF/CNF formulas")
    rng = np.random.default_rng(default_seed(seed))
    m = m or max(arity(f), 1)
    c = compile_gadget(f, eta, m)
    pts = stratified_points(f, m, n_samples, rng, eta, box) if points is None else points
    y = eval_circuit(c, pts)
    side = c.query.asserted(y)
    relaxed = eval_formula(substitute_margin(f, 2 * eta + tol), pts)
    truth = eval_formula(f, pts)
    rep = ValidationReport("error-bound-2eta", len(pts), tolerance=tol,
                           details={"eta": eta, "shape": cls.shape.value,
                                    "asserted": int(side.sum()),
                                    "slack_points": int((side & ~truth).sum())})
    for i in np.flatnonzero(side & ~relaxed):
        rep.add_violation({"point": pts[i], "y": float(y[i])})
    slack = side & ~truth
    if slack.any():
        rep.max_slack = float(max_atom_violation(f, pts[slack]).max())
    return rep


def max_atom_violation(f: Formula, pts: np.ndarray) -> np.ndarray:
    """Smallest uniform atom relaxation that makes ``f`` true at each point."""
    def rec(g):
        if isinstance(g, Atom):
            return canonical_atom(g).expr.value(pts)
        vals = np.stack([rec(c) for c in g.children])
        return vals.max(axis=0) if isinstance(g, And) else vals.min(axis=0)
    return np.maximum(rec(f), 0.0)


def find_slack_witness(f: Formula, eta: float, m: int | None = None,
                       seed: int = 0, budget: int = 60, radius: float = 100.0):
    """Point where ``f`` is false yet the circuit asserts it, or None.

    See :func:`slack_witness_search` for the search itself.
    """
    return slack_witness_search(f, eta, m, seed, budget, radius)[1]


def slack_witness_search(f: Formula, eta: float, m: int | None = None, seed: int = 0,
                         budget: int = 60, radius: float = 100.0):
    """Look for a point in the slack region: ``f`` false, circuit asserted.

    Returns ``(status, point)`` with status ``"found"``, ``"empty"`` (no such
    point in the box ``[-radius, radius]^m`` up to measure-zero boundaries)
    or ``"unknown"`` (solver gave no verdict).

    Cheap random sampling goes first; the decisive step is a mixed-integer
    program: the circuit's ReLUs get exact big-M encodings, ``not f`` gets
    one binary selector per disjunct, and a common margin ``t`` is
    maximized.  A witness exists iff the optimum is positive.
    """
    m = m or max(arity(f), 1)
    c = compile_gadget(f, eta, m)
    relaxed = substitute_margin(f, 2 * eta)
    rng = np.random.default_rng(seed)

    def confirm(p):
        return bool((not eval_formula(f, p)) and c.query.asserted(eval_circuit(c, p))
                    and eval_formula(relaxed, p))

    if budget:
        pts = stratified_points(f, m, budget * 100, rng, eta, box=min(radius, DEFAULT_BOX))
        ok = (~eval_formula(f, pts)) & c.query.asserted(eval_circuit(c, pts)) \
            & eval_formula(relaxed, pts)
        # batched and single-point evaluation can round apart on a boundary
        for i in np.flatnonzero(ok)[:50]:
            if confirm(pts[i]):
                return "found", pts[i]

    status, p = _milp_slack(f, c, eta, m, radius)
    if status == "found" and not confirm(p):
        return "unknown", None
    return status, p


class _Milp:
    """Tiny row builder for :func:`scipy.optimize.milp`."""

    def __init__(self):
        self.lb, self.ub, self.integ = [], [], []
        self.rows = []  # (dict var -> coef, lo, hi)

    def var(self, lo=-np.inf, hi=np.inf, integer=False) -> int:
        self.lb.append(lo)
        self.ub.append(hi)
        self.integ.append(1 if integer else 0)
        return len(self.lb) - 1

    def row(self, coefs: dict, lo=-np.inf, hi=np.inf):
        self.rows.append((coefs, lo, hi))

    def solve(self, objective: dict, time_limit: float = 30.0):
        n = len(self.lb)
        A = np.zeros((len(self.rows), n))
        for i, (cf, _, _) in enumerate(self.rows):
            for j, v in cf.items():
                A[i, j] += v
        cost = np.zeros(n)
        for j, v in objective.items():
            cost[j] = v
        return milp(cost, constraints=LinearConstraint(A, [r[1] for r in self.rows],
                                                       [r[2] for r in self.rows]),
                    integrality=np.array(self.integ), bounds=Bounds(self.lb, self.ub),
                    options={"time_limit": time_limit})


def _milp_slack(f, c, eta, m, radius):
    P = _Milp()
    x = [P.var(-radius, radius) for _ in range(m)]
    lo, hi = np.full(m, -radius), np.full(m, radius)
    h = x
    for layer in c.layers:
        W, b = layer.weight, layer.bias
        Wp, Wn = np.maximum(W, 0), np.minimum(W, 0)
        ulo, uhi = Wp @ lo + Wn @ hi + b, Wp @ hi + Wn @ lo + b
        last = layer is c.layers[-1]
        out = []
        for i in range(W.shape[0]):
            pre = {h[j]: W[i, j] for j in range(len(h)) if W[i, j] != 0}
            if last:
                y = P.var()
                P.row({**pre, y: -1.0}, -b[i], -b[i])
                out.append(y)
                continue
            if uhi[i] <= 0:
                out.append(P.var(0.0, 0.0))
                continue
            z = P.var(0.0, max(uhi[i], 0.0))
            if ulo[i] >= 0:
                P.row({**pre, z: -1.0}, -b[i], -b[i])
            else:
                d = P.var(0, 1, integer=True)
                P.row({**pre, z: -1.0}, hi=-b[i])                    # z >= u
                P.row({z: 1.0, **{k: -v for k, v in pre.items()}, d: -ulo[i]},
                      hi=b[i] - ulo[i])                              # z <= u - L(1-d)
                P.row({z: 1.0, d: -uhi[i]}, hi=0.0)                  # z <= U d
            out.append(z)
        h = out
        lo, hi = np.maximum(ulo, 0), np.maximum(uhi, 0)
    y = h[0]
    t = P.var(-np.inf, eta)

    # asserted with margin t; boundary-only witnesses are measure zero anyway
    q = c.query
    tc = -1.0
    if q.assert_rel in (">=", ">"):
        P.row({y: 1.0, t: tc}, lo=q.threshold)
    else:
        P.row({y: -1.0, t: tc}, lo=-q.threshold)

    def big(e):
        d = e.dense(m)
        return float(abs(e.bias) + radius * np.abs(d).sum() + abs(eta) + 1.0)

    def encode(g, guards):
        # g true with margin t whenever every guard binary is 1
        if isinstance(g, Atom):
            e = canonical_atom(g).expr
            d = e.dense(m)
            M = big(e)
            cf = {x[j]: d[j] for j in range(m) if d[j] != 0}
            cf[t] = cf.get(t, 0.0) + 1.0
            for s in guards:
                cf[s] = cf.get(s, 0.0) + M
            P.row(cf, hi=-e.bias + M * len(guards))
        elif isinstance(g, And):
            for ch in g.children:
                encode(ch, guards)
        else:
            sel = [P.var(0, 1, integer=True) for _ in g.children]
            P.row({s: 1.0 for s in sel}, lo=1.0)
            for s, ch in zip(sel, g.children):
                encode(ch, guards + [s])

    encode(negate(f), [])
    res = P.solve({t: -1.0})
    if res.status == 2:  # infeasible
        return "empty", None
    if res.x is None:
        return "unknown", None
    if res.status != 0:
        # stopped early: a positive incumbent is still a candidate
        return ("found", np.array(res.x[:m])) if -res.fun > 1e-9 else ("unknown", None)
    if -res.fun <= 1e-9:
        return "empty", None
    return "found", np.array(res.x[:m])


# -- confidence claims ----------------------------------------------------------------

def _logits_with_gap(rng, n: int, m: int, gaps: np.ndarray, t: np.ndarray | None = None):
    """Logits where class ``t`` exceeds the best rival by exactly ``gaps`` (up to rounding)."""
    scale = rng.choice([0.5, 2.0, 5.0], size=(n, 1))
    y = rng.normal(0, 1, size=(n, m)) * scale
    if t is None:
        t = rng.integers(0, m, size=n)
    rows = np.arange(n)
    others = y.copy()
    others[rows, t] = -np.inf
    y[rows, t] = others.max(axis=1) + gaps
    return y, t


def _top_two(y: np.ndarray, t: np.ndarray):
    """Seed logit and best rival, via sorting (independent of the formula builders)."""
    rows = np.arange(len(y))
    yt = y[rows, t]
    others = np.where(np.arange(y.shape[1])[None, :] == t[:, None], -np.inf, y)
    return yt, np.sort(others, axis=1)[:, -1]


def check_claims_relaxed(m: int, tau: float, n: int, rng, tol: float = TOL_DOUBLE,
                         delta: float | None = None) -> ValidationReport:
    """Gap below delta keeps a top-1 class under tau; gap above delta gives the floor."""
    delta = conf.delta_relaxed(tau) if delta is None else delta
    floor = conf.floor_pct(delta, m)
    ceiling = conf.sigmoid_pct(delta)
    gaps = np.concatenate([rng.uniform(0, delta, n // 2) if delta > 0 else np.zeros(n // 2),
                           delta + rng.exponential(1.0, n - n // 2) * rng.choice([0, 1e-9, 1], n - n // 2)])
    y, t = _logits_with_gap(rng, n, m, gaps)
    yt, ys = _top_two(y, t)
    gap = yt - ys
    c = conf.confidence(y)[np.arange(n), t]
    rep = ValidationReport(f"claims-relaxed m={m} tau={tau:g}", n, tolerance=tol,
                           details={"delta": delta, "floor": floor})
    below = (gap >= 0) & (gap < delta)
    for i in np.flatnonzero(below & (c >= ceiling + tol)):
        rep.add_violation({"claim": "upper", "logits": y[i], "conf": c[i]})
    for i in np.flatnonzero((gap >= delta) & (c < floor - tol)):
        rep.add_violation({"claim": "lower", "logits": y[i], "conf": c[i]})
    # formula agrees with the sort-based margin condition away from the boundary
    for t_star in range(min(m, 3)):
        f = conf.build_relaxed_negation(m, t_star, delta)
        got = eval_formula(f, y)
        top = np.argmax(y, axis=1)
        srt = np.sort(y, axis=1)
        margin = srt[:, -1] - srt[:, -2]
        want = (top != t_star) & (margin >= delta)
        clear = np.abs(margin - delta) > tol
        for i in np.flatnonzero((got != want) & clear):
            rep.add_violation({"claim": "formula", "t": t_star, "logits": y[i]})
    return rep


def check_claims_strong(m: int, tau2: float, n: int, rng, tol: float = TOL_DOUBLE,
                        delta: float | None = None) -> ValidationReport:
    delta = conf.delta_strong(tau2, m) if delta is None else delta
    thr = conf.floor_pct(delta, m)
    ceiling = conf.sigmoid_pct(delta)
    gaps = delta + rng.uniform(-4, 4, n) * rng.choice([0, 1e-9, 1], n)
    y, t = _logits_with_gap(rng, n, m, gaps)
    yt, ys = _top_two(y, t)
    gap = yt - ys
    c = conf.confidence(y)[np.arange(n), t]
    rep = ValidationReport(f"claims-strong m={m} tau2={tau2:g}", n, tolerance=tol,
                           details={"delta": delta, "tau2_effective": thr})
    above = gap > delta
    wrong = above & ((c <= thr - tol) | (np.argmax(y, axis=1) != t))
    for i in np.flatnonzero(wrong):
        rep.add_violation({"claim": "above", "logits": y[i], "conf": c[i]})
    for i in np.flatnonzero(~above & (c > ceiling + tol)):
        rep.add_violation({"claim": "below", "logits": y[i], "conf": c[i]})
    for t_star in range(min(m, 3)):
        f = conf.build_strong_negation(m, t_star, delta)
        yt2, ys2 = _top_two(y, np.full(n, t_star))
        want = yt2 - ys2 <= delta
        clear = np.abs(yt2 - ys2 - delta) > tol
        got = eval_formula(f, y)
        for i in np.flatnonzero((got != want) & clear):
            rep.add_violation({"claim": "formula", "t": t_star, "logits": y[i]})
    return rep


def check_claims_smooth(m: int, C: float, tau: float, n: int, rng,
                        tol: float = TOL_DOUBLE,
                        deltas: tuple[float, float] | None = None) -> ValidationReport:
    d1, d2 = deltas if deltas is not None else tuple(conf.deltas_smooth(C, tau, m))
    lo, hi = min(d1, d2), max(d1, d2)
    gaps = rng.uniform(lo - 3, hi + 3, n)
    y, t = _logits_with_gap(rng, n, m, gaps)
    yt, ys = _top_two(y, t)
    gap = yt - ys
    c = conf.confidence(y)[np.arange(n), t]
    rep = ValidationReport(f"claims-smooth m={m} C={C:g} tau={tau:g}", n, tolerance=tol,
                           details={"delta1": d1, "delta2": d2, "feasible": d2 < d1})
    inside = (gap < d1) & (gap > d2)
    t1, t2 = conf.sigmoid_pct(d1), conf.floor_pct(d2, m)
    for i in np.flatnonzero(inside & ((c >= t1 + tol) | (c <= t2 - tol))):
        rep.add_violation({"claim": "inside", "logits": y[i], "conf": c[i]})
    hi_floor, lo_ceil = conf.floor_pct(d1, m), conf.sigmoid_pct(d2)
    outside = ~inside
    ok = ((gap >= d1) & (c >= hi_floor - tol)) | ((gap <= d2) & (c <= lo_ceil + tol))
    for i in np.flatnonzero(outside & ~ok):
        rep.add_violation({"claim": "outside", "logits": y[i], "conf": c[i]})
    for t_star in range(min(m, 3)):
        f = conf.build_smooth_negation(m, t_star, d1, d2)
        yt2, ys2 = _top_two(y, np.full(n, t_star))
        g2 = yt2 - ys2
        want = (g2 >= d1) | (g2 <= d2)
        clear = (np.abs(g2 - d1) > tol) & (np.abs(g2 - d2) > tol)
        got = eval_formula(f, y)
        for i in np.flatnonzero((got != want) & clear):
            rep.add_violation({"claim": "formula", "t": t_star, "logits": y[i]})
    return rep


def validate_confidence_claims(m: int, tau: float = 80.0, n_samples: int = 10_000,
                               seed: int | None = None, tau2: float | None = None,
                               smooth: tuple[float, float] | None = None,
                               tol: float = TOL_DOUBLE) -> ValidationReport:
    """Relaxed, strong and smoothness margin claims at one grid cell.

    Also re-runs each check with the margins rounded to float32 (as stored
    in the appended network) against the thresholds those rounded margins
    imply, and records how far the rounded thresholds drift from the
    requested ones.
    """
    rng = np.random.default_rng(default_seed(seed))
    rep = ValidationReport(f"confidence-claims m={m}", tolerance=tol)
    d = conf.delta_relaxed(tau)
    rep.merge(check_claims_relaxed(m, tau, n_samples, rng, tol))
    d32 = float(np.float32(d))
    rep.merge(check_claims_relaxed(m, tau, n_samples // 10 or 1, rng, tol, delta=d32))
    drift = {"relaxed": abs(conf.sigmoid_pct(d32) - tau)}
    if tau2 is not None and tau2 >= 100.0 / m:
        ds = conf.delta_strong(tau2, m)
        rep.merge(check_claims_strong(m, tau2, n_samples, rng, tol))
        ds32 = float(np.float32(ds))
        rep.merge(check_claims_strong(m, tau2, n_samples // 10 or 1, rng, tol, delta=ds32))
        drift["strong"] = abs(conf.floor_pct(ds32, m) - tau2)
    if smooth is not None:
        C, st = smooth
        rep.merge(check_claims_smooth(m, C, st, n_samples, rng, tol))
        d1, d2 = conf.deltas_smooth(C, st, m)
        r32 = (float(np.float32(d1)), float(np.float32(d2)))
        rep.merge(check_claims_smooth(m, C, st, n_samples // 10 or 1, rng, tol, deltas=r32))
        drift["smooth"] = max(abs(conf.sigmoid_pct(r32[0]) - (C + st)),
                              abs(conf.floor_pct(r32[1], m) - (C - st)))
    rep.details["float32_threshold_drift_pct"] = drift
    if max(drift.values()) > 1e-4:
        rep.add_violation({"claim": "float32-drift", "drift": drift})
    return rep


# -- top-k -------------------------------------------------------------------------

def _perturbed(rng, seed_logits: np.ndarray, n: int) -> np.ndarray:
    scale = rng.choice([0.05, 0.3, 1.0, 3.0], size=(n, 1))
    return seed_logits[None, :] + rng.normal(0, 1, size=(n, seed_logits.size)) * scale


def validate_topk(m: int, k: int, n_samples: int = 10_000, seed: int | None = None,
                  K: int | None = None,
                  affinity_sets: Sequence[Sequence[int]] | None = None,
                  seed_logits: np.ndarray | None = None) -> ValidationReport:
    """Set-oracle agreement for the three top-k encodings around one seed."""
    rng = np.random.default_rng(default_seed(seed))
    K = K or k
    if seed_logits is None:
        seed_logits = rng.normal(0, 2, size=m)
    seed_logits = np.asarray(seed_logits, dtype=float)
    ctx = TopKContext(seed_logits, K, affinity_sets)
    ys = _perturbed(rng, seed_logits, n_samples)
    rep = ValidationReport(f"topk m={m} k={k} K={K}", n_samples, tolerance=0.0)

    def changed(kk):
        ref = topk_sets_batch(seed_logits[None, :], kk)[0]
        return np.any(topk_sets_batch(ys, kk) != ref[None, :], axis=1)

    f = build_topk_negation(ctx, k)
    n_atoms = len(atoms(f))
    if n_atoms != (m - k) * k:
        rep.add_violation({"check": "atom-count", "got": n_atoms, "want": (m - k) * k})
    for i in np.flatnonzero(eval_formula(f, ys) != changed(k)):
        rep.add_violation({"check": "topk", "logits": ys[i]})

    fr = build_topk_relaxed_negation(ctx)
    want = np.logical_and.reduce([changed(kk) for kk in range(1, K + 1)])
    for i in np.flatnonzero(eval_formula(fr, ys) != want):
        rep.add_violation({"check": "topk-relaxed", "logits": ys[i]})

    if affinity_sets is not None:
        pairs = filter_affinity_pairs(ctx)
        fa = build_affinity_negation(ctx)
        rep.details["affinity_pairs"] = [(kk, sorted(s)) for kk, s in pairs]
        if fa is TRIVIALLY_VIOLATED:
            if pairs:
                rep.add_violation({"check": "affinity-empty"})
        else:
            want = np.logical_and.reduce([changed(kk) for kk, _ in pairs])
            for i in np.flatnonzero(eval_formula(fa, ys) != want):
                rep.add_violation({"check": "affinity", "logits": ys[i]})
    rep.details["changed_fraction"] = float(changed(k).mean())
    return rep


# -- sweeps ---------------------------------------------------------------------------

def soundness_sweep(n_formulas: int, n_points: int, etas: Sequence[float],
                    seed: int | None = None, max_depth: int = 4, max_fanout: int = 5,
                    max_m: int = 6) -> ValidationReport:
    rng = np.random.default_rng(default_seed(seed))
    total = ValidationReport("gadget-soundness-sweep", tolerance=TOL_DOUBLE)
    for fi in range(n_formulas):
        m = int(rng.integers(1, max_m + 1))
        f = random_formula(rng, m, max_depth, max_fanout)
        for eta in etas:
            r = validate_soundness(f, eta, n_points, seed=int(rng.integers(2**31)), m=m)
            if not r.passed:
                r.witnesses = [{"formula": str(f), **w} for w in r.witnesses]
            total.merge(r)
    total.details["formulas"] = n_formulas
    return total
