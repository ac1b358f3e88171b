"""Logit margins that stand in for softmax confidence thresholds.

Thresholds are percentages in (0, 100).  Each ``delta_*`` helper turns a
confidence requirement into a gap between the seed logit and the best
competitor; each ``build_*_negation`` returns the counterexample condition
(the negated post-condition) as a :mod:`robustify.formula` tree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .formula import And, Atom, Formula, LE, LinearExpr, Or, flatten


class ThresholdError(ValueError):
    pass


def confidence(logits, c: int | None = None):
    """Softmax confidence in percent, ``100 * e^{y_c} / sum_i e^{y_i}``.

    With ``c=None`` the full percentage vector is returned.  Accepts a batch
    ``(n, m)``.
    """
    y = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("logits must be finite")
    z = np.exp(y - y.max(axis=-1, keepdims=True))
    pct = 100.0 * z / z.sum(axis=-1, keepdims=True)
    if c is None:
        return pct
    return pct[..., c] if pct.ndim > 1 else float(pct[c])


def _check_classes(m: int, *idx: int) -> None:
    if m < 2:
        raise ThresholdError(f"need at least 2 classes, got m={m}")
    for t in idx:
        if not 0 <= t < m:
            raise ThresholdError(f"class index {t} outside 0..{m - 1}")


@dataclass(frozen=True)
class SeedContext:
    m: int
    seed_class: int
    seed_confidence: float | None = None
    seed_logits: tuple[float, ...] | None = None

    def __post_init__(self):
        _check_classes(self.m, self.seed_class)
        if self.seed_logits is not None:
            y = np.asarray(self.seed_logits, dtype=float)
            if y.shape != (self.m,):
                raise ThresholdError("seed logits length must equal m")
            if int(np.argmax(y)) != self.seed_class:
                raise ThresholdError("seed class must be the argmax of the seed logits")
            c = confidence(y, self.seed_class)
            if self.seed_confidence is None:
                object.__setattr__(self, "seed_confidence", c)
            elif abs(self.seed_confidence - c) > 1e-9:
                raise ThresholdError("seed confidence disagrees with seed logits")
        if self.seed_confidence is not None and not 0 < self.seed_confidence <= 100:
            raise ThresholdError("seed confidence must be a percentage in (0, 100]")

    @classmethod
    def from_logits(cls, logits) -> "SeedContext":
        y = tuple(float(v) for v in np.asarray(logits, dtype=float).ravel())
        return cls(len(y), int(np.argmax(y)), None, y)


@dataclass(frozen=True)
class ConfidenceBounds:
    """Guarantees attached to one confidence-aware encoding.

    ``guaranteed_safe_threshold`` is what a *holding* query certifies;
    ``counterexample_bounds`` is what any solver counterexample is known to
    reach.  For smoothness both are pairs.
    """

    kind: str
    m: int
    deltas: tuple[float, ...]
    guaranteed_safe_threshold: float | tuple[float, float]
    counterexample_bounds: tuple[float, ...]
    notes: tuple[str, ...] = field(default=())

    @property
    def counterexample_floor(self) -> float:
        return self.counterexample_bounds[0]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "m": self.m,
            "deltas": list(self.deltas),
            "guaranteed_safe_threshold": (list(self.guaranteed_safe_threshold)
                                          if isinstance(self.guaranteed_safe_threshold, tuple)
                                          else self.guaranteed_safe_threshold),
            "counterexample_bounds": list(self.counterexample_bounds),
            "notes": list(self.notes),
        }


def sigmoid_pct(delta: float) -> float:
    """``100 / (1 + e^{-delta})``: confidence of a two-way split with gap delta."""
    return 100.0 / (1.0 + math.exp(-delta))


def floor_pct(delta: float, m: int) -> float:
    """``100 / (1 + (m-1) e^{-delta})``: worst case when all m-1 rivals tie."""
    return 100.0 / (1.0 + (m - 1) * math.exp(-delta))


def _gap(i: int, j: int, delta: float) -> Atom:
    """``y_j - y_i + delta <= 0``, i.e. ``y_i >= y_j + delta``."""
    return Atom(LinearExpr.build({j: 1.0, i: -1.0}, delta), LE)


# -- relaxed robustness -------------------------------------------------------

def delta_relaxed(tau: float) -> float:
    if not 50 <= tau < 100:
        raise ThresholdError(f"relaxed robustness needs 50 <= tau < 100 (got {tau}); "
                             "the margin argument only holds for tau >= 50")
    return -math.log(100.0 / tau - 1.0)


def relaxed_bounds(delta: float, m: int) -> ConfidenceBounds:
    _check_classes(m)
    if delta < 0:
        raise ThresholdError("relaxed margin must be non-negative")
    return ConfidenceBounds("relaxed", m, (delta,), sigmoid_pct(delta), (floor_pct(delta, m),))


def build_relaxed_negation(m: int, t_star: int, delta: float) -> Formula:
    """Some class ``i != t_star`` beats every other class by at least ``delta``."""
    _check_classes(m, t_star)
    clauses = [And(_gap(i, j, delta) for j in range(m) if j != i)
               for i in range(m) if i != t_star]
    return flatten(Or(clauses))


# -- strong robustness --------------------------------------------------------

def delta_strong(tau2: float, m: int) -> float:
    _check_classes(m)
    if not 0 < tau2 < 100:
        raise ThresholdError("tau2 must be a percentage in (0, 100)")
    arg = (100.0 / tau2 - 1.0) / (m - 1)
    delta = -math.log(arg)
    if delta < -1e-12:
        raise ThresholdError(f"tau2={tau2} is below the uniform confidence 100/m={100 / m:g}; "
                             "the strong margin would be negative")
    return max(delta, 0.0)


def strong_bounds(delta: float, m: int) -> ConfidenceBounds:
    _check_classes(m)
    return ConfidenceBounds("strong", m, (delta,), floor_pct(delta, m), (sigmoid_pct(delta),))


def build_strong_negation(m: int, t: int, delta: float) -> Formula:
    """Some rival comes within ``delta`` of the seed class: ``y_t <= y_i + delta``."""
    _check_classes(m, t)
    return flatten(Or(Atom(LinearExpr.build({t: 1.0, i: -1.0}, -delta), LE)
                      for i in range(m) if i != t))


# -- smoothness -----------------------------------------------------------------

@dataclass(frozen=True)
class SmoothDeltas:
    delta1: float
    delta2: float

    @property
    def feasible(self) -> bool:
        """Whether ``y_t' + delta2 < y_t < y_t' + delta1`` can hold at all."""
        return self.delta2 < self.delta1

    def __iter__(self):
        return iter((self.delta1, self.delta2))


def deltas_smooth(C: float, tau: float, m: int) -> SmoothDeltas:
    _check_classes(m)
    if C - tau <= 0:
        raise ThresholdError(f"C - tau must be positive (C={C}, tau={tau})")
    if C + tau >= 100:
        raise ThresholdError(f"C + tau must stay below 100 (C={C}, tau={tau})")
    d1 = -math.log(100.0 / (C + tau) - 1.0)
    d2 = -math.log((100.0 / (C - tau) - 1.0) / (m - 1))
    return SmoothDeltas(d1, d2)


def build_smooth_negation(m: int, t: int, delta1: float, delta2: float) -> Formula:
    """Confidence too high (beats every rival by ``delta1``) or too low."""
    _check_classes(m, t)
    high = And(_gap(t, i, delta1) for i in range(m) if i != t)
    low = [Atom(LinearExpr.build({t: 1.0, i: -1.0}, -delta2), LE) for i in range(m) if i != t]
    return flatten(Or([high, *low]))


def smooth_bounds(delta1: float, delta2: float, m: int) -> ConfidenceBounds:
    _check_classes(m)
    band = (floor_pct(delta2, m), sigmoid_pct(delta1))
    notes = () if delta2 < delta1 else ("infeasible-approximation: delta2 >= delta1",)
    return ConfidenceBounds("smooth", m, (delta1, delta2), band,
                            (floor_pct(delta1, m), sigmoid_pct(delta2)), notes)
