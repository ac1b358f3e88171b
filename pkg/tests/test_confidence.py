import math

import numpy as np
import pytest

from robustify.confidence import (
    SeedContext, ThresholdError, build_relaxed_negation, build_smooth_negation,
    build_strong_negation, confidence, delta_relaxed, delta_strong, deltas_smooth, floor_pct,
    relaxed_bounds, sigmoid_pct, smooth_bounds, strong_bounds,
)
from robustify.formula import And, Atom, Or, atoms, classify, Shape
from robustify.validation import check_claims_relaxed, check_claims_smooth, check_claims_strong


def test_confidence_equal_logits():
    for m in (2, 5, 10):
        assert np.allclose(confidence(np.zeros(m)), 100.0 / m, atol=1e-12)


def test_confidence_closed_form():
    e2 = math.exp(2.0)
    assert abs(confidence([2.0, 0.0], 0) - 100 * e2 / (e2 + 1)) < 1e-12
    assert abs(confidence([2.0, 0.0], 0) - 88.0797) < 1e-4


def test_confidence_shift_invariant_and_sums_to_100():
    rng = np.random.default_rng(0)
    y = rng.normal(0, 3, size=(100, 7))
    c = confidence(y)
    assert np.allclose(c.sum(axis=1), 100.0, atol=1e-9)
    assert np.allclose(confidence(y + 123.0), c, atol=1e-12)


def test_confidence_large_logits_stable():
    c = confidence([1000.0, 0.0, -1000.0])
    assert np.all(np.isfinite(c)) and abs(c[0] - 100.0) < 1e-12


def test_confidence_rejects_nonfinite():
    with pytest.raises(ValueError):
        confidence([np.nan, 1.0])


def test_delta_relaxed_spot_values():
    assert abs(delta_relaxed(80) - math.log(4)) < 1e-12
    assert abs(delta_relaxed(80) - 1.3862944) < 1e-6
    assert delta_relaxed(50) == 0.0


def test_delta_relaxed_range():
    with pytest.raises(ThresholdError):
        delta_relaxed(40)
    with pytest.raises(ThresholdError):
        delta_relaxed(100)


def test_relaxed_floor_ten_classes():
    b = relaxed_bounds(math.log(4), 10)
    # 100 / (1 + 9/4)
    assert abs(b.counterexample_floor - 400 / 13) < 1e-9
    assert abs(b.counterexample_floor - 30.769) < 1e-3
    assert abs(b.guaranteed_safe_threshold - 80.0) < 1e-9


def test_relaxed_formula_shape():
    f = build_relaxed_negation(10, 3, 1.0)
    assert classify(f).shape is Shape.DNF
    assert len(f.children) == 9
    assert all(len(c.children) == 9 for c in f.children)
    assert len(atoms(f)) == 81


def test_relaxed_formula_two_classes_is_single_clause():
    f = build_relaxed_negation(2, 0, 0.5)
    assert isinstance(f, Atom)


def test_delta_strong_spot_value():
    d = delta_strong(30, 10)
    assert abs(d - (-math.log((100 / 30 - 1) / 9))) < 1e-12
    assert abs(d - 1.34993) < 1e-5
    assert abs(strong_bounds(d, 10).guaranteed_safe_threshold - 30.0) < 1e-9


def test_delta_strong_below_uniform_rejected():
    with pytest.raises(ThresholdError):
        delta_strong(5, 10)
    assert delta_strong(10, 10) == 0.0


def test_strong_formula():
    f = build_strong_negation(4, 1, 0.5)
    assert isinstance(f, Or) and len(f.children) == 3
    assert eval_strong(f, [0.0, 0.4, 0.0, 0.0])
    assert not eval_strong(f, [0.0, 0.6, 0.0, 0.0])


def eval_strong(f, y):
    from robustify.formula import eval_formula
    return eval_formula(f, np.array(y))


def test_smooth_deltas_and_infeasible_case():
    d = deltas_smooth(50, 10, 10)
    assert abs(d.delta1 - (-math.log(100 / 60 - 1))) < 1e-12
    assert abs(d.delta2 - (-math.log((100 / 40 - 1) / 9))) < 1e-12
    assert not d.feasible
    b = smooth_bounds(d.delta1, d.delta2, 10)
    assert b.notes
    assert deltas_smooth(90, 5, 2).feasible


def test_smooth_range_checks():
    with pytest.raises(ThresholdError):
        deltas_smooth(10, 10, 5)
    with pytest.raises(ThresholdError):
        deltas_smooth(95, 5, 5)


def test_smooth_formula_structure():
    f = build_smooth_negation(5, 0, 2.0, 1.0)
    assert isinstance(f, Or)
    kinds = sorted(type(c).__name__ for c in f.children)
    assert kinds == ["And"] + ["Atom"] * 4


def test_seed_context_checks():
    ctx = SeedContext.from_logits([0.1, 2.0, -1.0])
    assert ctx.seed_class == 1 and ctx.m == 3
    assert abs(ctx.seed_confidence - confidence([0.1, 2.0, -1.0], 1)) < 1e-12
    with pytest.raises(ThresholdError):
        SeedContext(3, 0, None, (0.1, 2.0, -1.0))
    with pytest.raises(ThresholdError):
        SeedContext(3, 5)


def test_helper_percentages():
    assert sigmoid_pct(0.0) == 50.0
    assert abs(floor_pct(0.0, 4) - 25.0) < 1e-12


def test_claim_checks_small_grid():
    rng = np.random.default_rng(7)
    for m in (2, 3, 10):
        assert check_claims_relaxed(m, 90, 4000, rng).passed
        assert check_claims_strong(m, 60, 4000, rng).passed
        assert check_claims_smooth(m, 70, 10, 4000, rng).passed


def test_claim_checker_detects_wrong_floor():
    # pretending the floor is the two-class sigmoid must fail for m > 2
    rng = np.random.default_rng(3)
    d = delta_relaxed(80)
    y = np.zeros((1, 10))
    y[0, 0] = d + 1e-6
    c = confidence(y)[0, 0]
    assert c < sigmoid_pct(d)
    assert c >= floor_pct(d, 10) - 1e-9
