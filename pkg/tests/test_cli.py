import json

import numpy as np
import pytest

from preview_gain.cli import main
from preview_gain.model import ModelProvider, StepData, unicycle_model


@pytest.fixture
def small_model(tmp_path):
    steps = [StepData([[1.1, 0.1], [0.0, 0.9 + 0.1 * k]], np.eye(2), np.eye(2), np.eye(2)) for k in range(3)]
    path = tmp_path / "small.json"
    ModelProvider.periodic(steps).save(path)
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_check_unicycle_passes(capsys):
    code, out, _ = run(capsys, "check", "--gamma", "125", "--d", "10")
    assert code == 0
    assert "one full period" in out
    assert out.splitlines()[-1].startswith("10,True,True")


def test_check_uncontrollable_fails(capsys, tmp_path):
    path = tmp_path / "b0.json"
    ModelProvider.periodic([StepData(np.eye(2), np.zeros((2, 1)), np.eye(2), [[1.0]])]).save(path)
    code, _, _ = run(capsys, "check", "--model", str(path), "--gamma", "5", "--d", "3", "--json")
    assert code == 2


def test_malformed_model_is_input_error(capsys, tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{]")
    code, _, err = run(capsys, "check", "--model", str(path), "--gamma", "5")
    assert code == 3 and "malformed" in err
    assert run(capsys, "check", "--model", str(tmp_path / "missing.json"), "--gamma", "5")[0] == 3
    assert run(capsys, "bound", "--gamma", "5", "--d", "x")[0] == 3
    assert run(capsys, "bound", "--gamma", "5", "--beta", "-1")[0] == 3


def test_bound_is_deterministic_and_hashed(capsys, small_model):
    args = ("bound", "--model", small_model, "--gamma", "20", "--d", "1:3", "--beta-frac", "0.1,0.5")
    code, a, _ = run(capsys, *args)
    _, b, _ = run(capsys, *args)
    assert code == 0 and a == b
    assert a.startswith("# preview-gain bound config=")
    rows = [r for r in a.splitlines() if not r.startswith("#")]
    assert rows[0].split(",")[:3] == ["d", "beta", "beta_frac"] and len(rows) == 1 + 3 * 2
    _, c, _ = run(capsys, *args[:-1], "0.2")
    assert c.splitlines()[0] != a.splitlines()[0]


def test_bound_json(capsys, small_model):
    code, out, _ = run(capsys, "bound", "--model", small_model, "--gamma", "20", "--d", "2", "--beta", "1", "--json")
    cert = json.loads(out)["certificates"][0]
    assert code == 0 and cert["T_chosen"] > cert["T_bar"] and cert["window"]


def test_synthesize_writes_schedule_and_snapshot(capsys, small_model, tmp_path):
    out = tmp_path / "o"
    code, _, _ = run(capsys, "synthesize", "--model", small_model, "--gamma", "20", "--d", "2", "--beta", "5",
                     "--out", str(out))
    assert code == 0
    lines = (out / "schedule.csv").read_text().splitlines()
    body = [r for r in lines if not r.startswith("#")]
    assert body[0].startswith("t,K_0_0") and len(body) == 1 + 3
    snap = json.loads((out / "controller.json").read_text())
    assert snap["T"] == json.loads((out / "synthesize.json").read_text())["T"]


def test_synthesize_T0_and_advisory(capsys, small_model):
    code, out, _ = run(capsys, "synthesize", "--model", small_model, "--gamma", "20", "--d", "2", "--beta", "5",
                       "--T", "0", "--json")
    d = json.loads(out)
    assert code == 0 and d["T"] == 0 and d["advisory"] is True


def test_synthesize_infeasible_gamma(capsys, small_model):
    code, _, err = run(capsys, "synthesize", "--model", small_model, "--gamma", "0.5", "--d", "2", "--beta", "0.1")
    assert code == 2 and err.startswith("error:")


def test_simulate_small(capsys, small_model, tmp_path):
    out = tmp_path / "s"
    code, _, _ = run(capsys, "simulate", "--model", small_model, "--gamma", "20", "--d", "2", "--beta", "5",
                     "--count", "50", "--out", str(out))
    assert code == 0
    rep = json.loads((out / "gain_report.json").read_text())
    assert rep["gain"]["empirical"] <= rep["alpha"] and rep["ensemble"]["all_nonpositive"]
    trace = [r for r in (out / "trace.csv").read_text().splitlines() if not r.startswith("#")]
    assert trace[0] == "t,x0,x1,u0,u1,w0,w1,z_norm2,running_J" and len(trace) == 1 + 10


def test_simulate_baseline_policy(capsys, small_model):
    code, out, _ = run(capsys, "simulate", "--model", small_model, "--gamma", "20", "--count", "10", "--json")
    rep = json.loads(out)
    assert code == 0 and rep["policy"] == "baseline" and rep["gain"]["empirical"] <= 20


def test_sweep_delta_unicycle(capsys):
    code, out, _ = run(capsys, "sweep-delta", "--gamma", "125", "--d", "40", "--T", "1,2", "--json")
    summary = json.loads(out)["summary"]
    assert code == 0
    assert [s["T"] for s in summary] == [1, 2]
    assert all(s["max_delta"] <= s["bound"] / 100 for s in summary)
    assert summary[1]["max_delta"] <= summary[0]["max_delta"]


def test_example_roundtrip(capsys, tmp_path):
    code, _, _ = run(capsys, "example", "unicycle", "--out", str(tmp_path))
    assert code == 0
    model = ModelProvider.load(tmp_path / "model.json")
    assert (model.n, model.m, model.period) == (3, 2, 400)
    assert run(capsys, "example", "nope")[0] == 3


def test_example_parameters_and_file_target(capsys, tmp_path):
    target = tmp_path / "nested" / "model.json"
    code, _, _ = run(capsys, "example", "unicycle", "--a", "2", "--period", "200", "--h", "0.1",
                     "--out", str(target))
    assert code == 0
    model = ModelProvider.load(target)
    assert model.period == 200
    direct = unicycle_model(a=2.0, N=200, h=0.1)
    for t in (0, 57, 199):
        assert np.array_equal(model.step(t).A, direct.step(t).A)
        assert np.array_equal(model.step(t).B, direct.step(t).B)
    assert run(capsys, "example", "unicycle", "--period", "1")[0] == 3
    assert run(capsys, "example", "unicycle", "--h", "0")[0] == 3
