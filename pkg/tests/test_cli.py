import json
import math
import os

import numpy as np
import pytest

from robustify.cli import main
from robustify.evaluator import forward
from robustify.gadget import eval_circuit
from robustify.onnx_model import build_mlp, load_model_file, random_mlp, save_model_file
from robustify.pipeline import RobustnessSpec, SpecError, compile_property
from robustify.formula import atoms


@pytest.fixture
def model10(tmp_path):
    g = random_mlp([20, 16, 10], np.random.default_rng(0), batch="N")
    path = tmp_path / "m.onnx"
    save_model_file(g, path)
    return g, str(path)


def write_spec(tmp_path, name, **spec):
    p = tmp_path / name
    p.write_text(json.dumps(spec))
    return str(p)


def seed_x(n=20):
    return np.random.default_rng(1).uniform(0, 1, n).tolist()


def test_compile_relaxed(tmp_path, model10, capsys):
    g, mpath = model10
    spec = write_spec(tmp_path, "s.json", kind="relaxed", tau=80, seed_input=seed_x(),
                      epsilon=0.01, clip=[0, 1])
    out = tmp_path / "out"
    assert main(["compile", "-m", mpath, "-p", spec, "-o", str(out)]) == 0
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["n_atoms"] == 81 and meta["formula"]["shape"] == "dnf"
    assert meta["mode"] == "gadget_approx"
    assert abs(meta["delta"] - math.log(4)) < 1e-6
    assert abs(meta["bounds"]["counterexample_bounds"][0] - 30.769) < 1e-3
    assert meta["error_margin"] == pytest.approx(2e-4)
    assert any("80%" in s for s in meta["guarantees"])
    vnn = (out / "property.vnnlib").read_text()
    assert vnn.strip().endswith("(assert (>= Y_0 0.0001))")
    assert vnn.count("(declare-const X_") == 20
    h = load_model_file(out / "model.onnx")
    assert [o.name for o in h.outputs] == ["Y_prop"]
    x = np.random.default_rng(2).uniform(0, 1, size=(50, 20))
    prop = compile_property(RobustnessSpec.from_file(spec), g)
    assert np.max(np.abs(forward(h, x)[:, 0] - eval_circuit(prop.circuit, forward(g, x)))) < 1e-6


def test_compile_standard_fast_path(tmp_path, model10):
    _, mpath = model10
    spec = write_spec(tmp_path, "s.json", kind="standard", seed_input=seed_x(), epsilon=0.02)
    out = tmp_path / "o"
    assert main(["compile", "-m", mpath, "-p", spec, "-o", str(out)]) == 0
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["mode"] == "fast_path_exact" and meta["formula"]["shape"] == "pure_disj"
    assert meta["error_margin"] == 0.0
    assert (out / "property.vnnlib").read_text().strip().endswith("(assert (> Y_0 0.0))")


def test_compile_byte_identical(tmp_path, model10):
    _, mpath = model10
    spec = write_spec(tmp_path, "s.json", kind="relaxed", tau=90, seed_input=seed_x(),
                      epsilon=0.01)
    for d in ("a", "b"):
        assert main(["compile", "-m", mpath, "-p", spec, "-o", str(tmp_path / d)]) == 0
    for f in ("model.onnx", "property.vnnlib", "metadata.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_smooth_infeasible_warns_and_strict_exits_4(tmp_path, model10, capsys):
    _, mpath = model10
    # seed confidence exactly 50 with m=10
    logits = [math.log(9)] + [0.0] * 9
    spec = write_spec(tmp_path, "s.json", kind="smooth", tau=10, seed_logits=logits,
                      seed_input=seed_x(), epsilon=0.01)
    assert main(["compile", "-m", mpath, "-p", spec, "-o", str(tmp_path / "o")]) == 0
    meta = json.loads((tmp_path / "o" / "metadata.json").read_text())
    assert meta["flags"]["infeasible_approximation"]
    assert meta["delta2"] >= meta["delta1"]
    capsys.readouterr()
    assert main(["compile", "-m", mpath, "-p", spec, "-o", str(tmp_path / "o2"), "--strict"]) == 4
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_code"] == 4


def test_spec_error_exit_2(tmp_path, model10, capsys):
    _, mpath = model10
    spec = write_spec(tmp_path, "s.json", kind="relaxed", tau=30, seed_input=seed_x(),
                      epsilon=0.01)
    assert main(["compile", "-m", mpath, "-p", spec, "-o", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "spec_error" and "tau" in err["message"]
    bad = write_spec(tmp_path, "b.json", kind="nope")
    assert main(["compile", "-m", mpath, "-p", bad, "-o", str(tmp_path / "o")]) == 2


def test_model_error_exit_3(tmp_path, capsys):
    junk = tmp_path / "junk.onnx"
    junk.write_bytes(b"not a model")
    spec = write_spec(tmp_path, "s.json", kind="standard", seed_input=[0.0], epsilon=0.1)
    assert main(["compile", "-m", str(junk), "-p", spec, "-o", str(tmp_path / "o")]) == 3
    assert json.loads(capsys.readouterr().err)["error"] == "model_error"


def test_strong_trivially_satisfied():
    spec = RobustnessSpec.from_dict({"kind": "strong", "tau1": 90, "tau2": 60,
                                     "seed_logits": [1.0, 0.5, 0.0]})
    p = compile_property(spec)
    assert p.flags["trivially_satisfied"]
    assert not p.circuit.query.asserted(p.circuit(np.zeros(3)))


def test_affinity_trivially_violated():
    spec = RobustnessSpec.from_dict({"kind": "topk_affinity", "K": 1,
                                     "affinity_sets": [[0, 1]],
                                     "seed_logits": [0.0, 1.0, 3.0, 2.0]})
    p = compile_property(spec)
    assert p.flags["trivially_violated"]
    assert p.circuit.query.asserted(p.circuit(np.array([5.0, 1.0, 0.0, 0.0])))


def test_seed_class_mismatch():
    with pytest.raises(SpecError):
        compile_property(RobustnessSpec.from_dict({"kind": "standard", "seed_class": 0,
                                                   "seed_logits": [0.0, 1.0]}))


def test_unknown_field_rejected():
    with pytest.raises(SpecError):
        RobustnessSpec.from_dict({"kind": "standard", "tua": 3})


def test_eval_equal_logits(tmp_path, capsys):
    g = build_mlp([np.zeros((4, 3))], [np.zeros(4)])
    mp = tmp_path / "z.onnx"
    save_model_file(g, mp)
    x = tmp_path / "x.json"
    x.write_text("[1, 2, 3]")
    assert main(["eval", "-m", str(mp), "-x", str(x)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert np.allclose(out["confidence"], 25.0, atol=1e-12)


def test_info_topk(tmp_path, capsys):
    spec = write_spec(tmp_path, "t.json", kind="topk", k=2, seed_logits=[4.0, 3.0, 2.0, 1.0])
    assert main(["info", spec]) == 0
    assert "4 disjunctive atoms" in capsys.readouterr().out


def test_info_model_and_vnnlib(tmp_path, model10, capsys):
    _, mpath = model10
    assert main(["info", mpath, "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["m"] == 10
    v = tmp_path / "p.vnnlib"
    v.write_text("(declare-const X_0 Real)(declare-const Y_0 Real)(declare-const Y_1 Real)"
                 "(assert (<= X_0 1))(assert (>= X_0 0))(assert (or (>= Y_0 Y_1) (>= Y_1 3)))")
    assert main(["info", str(v)]) == 0
    assert "2 atoms" in capsys.readouterr().out


def test_validate_claims(capsys):
    assert main(["validate", "--claims", "--m", "10", "--tau", "80", "--samples", "5000"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_validate_vnnlib_json(tmp_path, capsys):
    v = tmp_path / "p.vnnlib"
    v.write_text("(declare-const X_0 Real)(declare-const Y_0 Real)(declare-const Y_1 Real)"
                 "(assert (<= X_0 1))(assert (>= X_0 0))"
                 "(assert (or (and (>= Y_0 Y_1) (<= Y_0 2)) (>= Y_1 3)))")
    assert main(["validate", "--vnnlib", str(v), "--eta", "0.1", "--samples", "2000",
                 "--json"]) == 0
    reps = json.loads(capsys.readouterr().out)
    assert {r["property"] for r in reps} == {"gadget-soundness", "error-bound-2eta"}
    assert all(r["verdict"] == "pass" for r in reps)


def test_validate_seed_from_env(monkeypatch, capsys):
    monkeypatch.setenv("ROBUSTIFY_SEED", "5")
    main(["validate", "--topk", "2", "--m", "4", "--samples", "500", "--json"])
    a = capsys.readouterr().out
    main(["validate", "--topk", "2", "--m", "4", "--samples", "500", "--json"])
    assert capsys.readouterr().out == a


def test_batch(tmp_path, model10, capsys):
    _, mpath = model10
    s1 = write_spec(tmp_path, "a.json", kind="standard", seed_input=seed_x(), epsilon=0.01)
    s2 = write_spec(tmp_path, "b.json", kind="relaxed", tau=20, seed_input=seed_x(),
                    epsilon=0.01)
    jobs = tmp_path / "jobs.json"
    jobs.write_text(json.dumps([
        {"model": "m.onnx", "property": "a.json", "out": "ja"},
        {"model": "m.onnx", "property": "b.json", "out": "jb"},
    ]))
    rc = main(["batch", str(jobs), "--jobs", "2"])
    res = json.loads(capsys.readouterr().out)
    assert [r["exit_code"] for r in res] == [0, 2]
    assert rc == 2
    assert (tmp_path / "ja" / "model.onnx").exists()


def test_raw_vnnlib_kind(tmp_path, model10):
    g, mpath = model10
    lines = [f"(declare-const X_{i} Real)" for i in range(20)]
    lines += [f"(declare-const Y_{j} Real)" for j in range(10)]
    lines += [f"(assert (<= X_{i} 1))(assert (>= X_{i} 0))" for i in range(20)]
    lines.append("(assert (or (and (>= Y_1 Y_0) (>= Y_1 Y_2)) (and (>= Y_3 Y_0))))")
    (tmp_path / "q.vnnlib").write_text("\n".join(lines))
    spec = write_spec(tmp_path, "r.json", kind="raw_vnnlib", vnnlib="q.vnnlib")
    assert main(["compile", "-m", mpath, "-p", spec, "-o", str(tmp_path / "o")]) == 0
    meta = json.loads((tmp_path / "o" / "metadata.json").read_text())
    assert meta["formula"]["shape"] == "dnf" and meta["n_atoms"] == 3


def test_topk_relaxed_metadata():
    spec = RobustnessSpec.from_dict({"kind": "topk_relaxed", "K": 2,
                                     "seed_logits": [3.0, 1.0, 2.0, 0.0, -1.0]})
    p = compile_property(spec)
    assert len(atoms(p.formula)) == 4 + 6
    assert p.metadata()["formula"]["shape"] == "cnf"
