"""Top-k, top-k-relaxed and top-k-affinity counterexample conditions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .formula import And, Atom, Formula, LT, LinearExpr, Or, flatten


class TieError(ValueError):
    """The seed logits tie across a rank boundary, so ``N^k`` is ill-defined."""


class _TriviallyViolated:
    """No affinity pair survives filtering: the negated post-condition is vacuously true."""

    def __repr__(self) -> str:
        return "TRIVIALLY_VIOLATED"

    def __bool__(self) -> bool:
        return False


TRIVIALLY_VIOLATED = _TriviallyViolated()


def topk_set(logits, k: int) -> frozenset[int]:
    """Indices of the k largest logits; a tie at rank k/k+1 is an error."""
    y = np.asarray(logits, dtype=float).ravel()
    m = y.size
    if not 1 <= k <= m:
        raise ValueError(f"k must be in 1..{m}")
    order = np.argsort(-y, kind="stable")
    if k < m and y[order[k - 1]] == y[order[k]]:
        raise TieError(f"logits tie across rank {k}: N^k would hold more than {k} classes")
    return frozenset(int(i) for i in order[:k])


def topk_sets_batch(logits: np.ndarray, k: int) -> np.ndarray:
    """Membership mask ``(n, m)`` of the top-k sets for a batch (ties not checked)."""
    y = np.asarray(logits, dtype=float)
    order = np.argsort(-y, axis=1, kind="stable")[:, :k]
    mask = np.zeros(y.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    return mask


@dataclass(frozen=True)
class TopKContext:
    seed_logits: tuple[float, ...]
    K: int = 1
    affinity_sets: tuple[frozenset[int], ...] | None = None

    def __init__(self, seed_logits, K: int = 1,
                 affinity_sets: Sequence[Sequence[int]] | None = None):
        y = tuple(float(v) for v in np.asarray(seed_logits, dtype=float).ravel())
        object.__setattr__(self, "seed_logits", y)
        object.__setattr__(self, "K", int(K))
        if affinity_sets is not None:
            affinity_sets = tuple(frozenset(int(i) for i in s) for s in affinity_sets)
        object.__setattr__(self, "affinity_sets", affinity_sets)
        m = len(y)
        if not 1 <= self.K < m:
            raise ValueError(f"K must satisfy 1 <= K < m={m}")
        for s in affinity_sets or ():
            if any(not 0 <= i < m for i in s):
                raise ValueError(f"affinity set {sorted(s)} has classes outside 0..{m - 1}")

    @property
    def m(self) -> int:
        return len(self.seed_logits)

    def topk(self, k: int) -> frozenset[int]:
        return topk_set(self.seed_logits, k)


def _clause(ctx: TopKContext, k: int, top: frozenset[int] | None = None) -> Or | Atom:
    top = ctx.topk(k) if top is None else top
    # y_i > y_j for i outside the seed's top-k and j inside: (y_j - y_i < 0)
    lits = [Atom(LinearExpr.build({j: 1.0, i: -1.0}), LT)
            for i in range(ctx.m) if i not in top
            for j in sorted(top)]
    return lits[0] if len(lits) == 1 else Or(lits)


def build_topk_negation(ctx: TopKContext, k: int) -> Formula:
    """Some class outside ``N^k(seed)`` overtakes one inside; ``(m-k)*k`` strict atoms."""
    return flatten(_clause(ctx, k))


def build_topk_relaxed_negation(ctx: TopKContext) -> Formula:
    """The top-k set changes for every ``k <= K`` (CNF, K clauses)."""
    return flatten(And(_clause(ctx, k) for k in range(1, ctx.K + 1)))


def filter_affinity_pairs(ctx: TopKContext) -> list[tuple[int, frozenset[int]]]:
    """Pairs ``(k, S)`` with ``N^k(seed) ⊆ S``; all other pairs are satisfied up front."""
    if ctx.affinity_sets is None:
        raise ValueError("no affinity sets given")
    out = []
    for k in range(1, ctx.K + 1):
        top = ctx.topk(k)
        out.extend((k, s) for s in ctx.affinity_sets if top <= s)
    return out


def build_affinity_negation(ctx: TopKContext) -> Formula | _TriviallyViolated:
    pairs = filter_affinity_pairs(ctx)
    if not pairs:
        return TRIVIALLY_VIOLATED
    return flatten(And(_clause(ctx, k) for k, _ in pairs))


def clause_atom_count(m: int, k: int) -> int:
    return (m - k) * k
