import numpy as np
import pytest

from robustify.formula import And, Or, Shape, atom, classify, eval_formula, substitute_margin
from robustify.gadget import compile_gadget, eval_circuit
from robustify.validation import (
    ValidationReport, find_slack_witness, slack_witness_search, max_atom_violation, random_formula, random_normal_form,
    stratified_points, validate_confidence_claims, validate_error_bound, validate_soundness,
)


def test_verdict_tracks_violations():
    r = ValidationReport("x")
    assert r.verdict == "pass"
    r.add_violation({"p": 1})
    assert r.verdict == "fail" and r.to_dict()["violations"] == 1


def test_deterministic_given_seed():
    f = Or([And([atom({0: 1}), atom({1: 1})]), atom({0: -1, 1: 1}, 0.3)])
    a = validate_soundness(f, 0.1, 500, seed=3).to_dict()
    b = validate_soundness(f, 0.1, 500, seed=3).to_dict()
    assert a == b


def test_stratified_points_hit_boundaries():
    f = And([atom({0: 1.0}, -1.0), atom({1: 2.0, 0: 1.0})])
    pts = stratified_points(f, 2, 2000, np.random.default_rng(0), 0.1)
    v = np.stack([a.expr.value(pts) for a in f.children])
    close = np.min(np.abs(v), axis=0) <= 0.2 + 1e-9
    assert close.mean() > 0.6


def test_random_formula_alternates():
    rng = np.random.default_rng(0)
    for _ in range(30):
        f = random_formula(rng, 4)
        assert classify(f).depth <= 4


def test_normal_form_generator_shapes():
    rng = np.random.default_rng(1)
    for _ in range(30):
        assert classify(random_normal_form(rng, 3, "dnf")).shape in (
            Shape.DNF, Shape.PURE_DISJ, Shape.PURE_CONJ)
        assert classify(random_normal_form(rng, 3, "cnf")).shape in (
            Shape.CNF, Shape.PURE_CONJ, Shape.PURE_DISJ)


def test_error_bound_rejects_general():
    deep = Or([And([Or([atom({0: 1}), atom({1: 1})]), atom({0: -1})]), atom({1: -1})])
    with pytest.raises(ValueError):
        validate_error_bound(deep, 0.1)


def test_error_bound_fig3_and_slack():
    f = Or([And([atom({0: 1, 1: 1}), atom({1: 1})]), And([atom({0: 1, 2: -1}), atom({2: 1}, -2)])])
    r = validate_error_bound(f, 0.2, 10_000, seed=0)
    assert r.passed
    assert r.details["slack_points"] > 0
    assert 0 < r.max_slack <= 0.4 + 1e-9


def test_witness_for_fig3():
    f = Or([And([atom({0: 1, 1: 1}), atom({1: 1})]), And([atom({0: 1, 2: -1}), atom({2: 1}, -2)])])
    w = find_slack_witness(f, 0.2, m=3)
    assert w is not None
    c = compile_gadget(f, 0.2, 3)
    assert not eval_formula(f, w)
    assert c.query.asserted(eval_circuit(c, w))
    assert eval_formula(substitute_margin(f, 0.4), w)


def test_witness_for_cnf():
    f = And([Or([atom({0: 1}), atom({1: 1})]), Or([atom({0: -1}, -1.0), atom({1: -1}, -1.0)])])
    w = find_slack_witness(f, 0.2, m=2)
    assert w is not None and not eval_formula(f, w)


def test_milp_witness_without_sampling():
    f = And([Or([atom({0: 1}), atom({1: 1})]), Or([atom({0: -1}, -1.0), atom({1: -1}, -1.0)])])
    status, w = slack_witness_search(f, 0.2, m=2, budget=0)
    assert status == "found"
    c = compile_gadget(f, 0.2, 2)
    assert not eval_formula(f, w) and c.query.asserted(eval_circuit(c, w))


def test_empty_slack_region_certified():
    # the two violated half-lines sit too far apart for the sum to stay near eta
    f = Or([atom({0: 1.388}, -1.011), atom({0: -0.771}, 2.398)])
    status, w = slack_witness_search(f, 0.2, m=1, budget=0)
    assert status == "empty" and w is None
    xs = np.linspace(-50, 50, 200_001)[:, None]
    c = compile_gadget(f, 0.2, 1)
    assert not np.any(~eval_formula(f, xs) & c.query.asserted(eval_circuit(c, xs)))


def test_valid_formula_has_no_witness():
    f = Or([atom({0: 1}), atom({0: -1})])
    assert slack_witness_search(f, 0.2, m=1)[0] == "empty"


def test_max_atom_violation():
    f = Or([And([atom({0: 1}), atom({1: 1})]), atom({0: -1}, 5.0)])
    v = max_atom_violation(f, np.array([[0.3, 0.1], [-1.0, -1.0]]))
    assert np.allclose(v, [0.3, 0.0])


def test_confidence_claims_records_float32_drift():
    r = validate_confidence_claims(4, 80, 3000, seed=0, tau2=50, smooth=(70, 10))
    assert r.passed
    drift = r.details["float32_threshold_drift_pct"]
    assert set(drift) == {"relaxed", "strong", "smooth"}
    assert max(drift.values()) < 1e-4
