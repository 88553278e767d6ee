import json

import numpy as np
import pytest

from preview_gain.errors import InputError
from preview_gain.model import (
    ModelProvider,
    StepData,
    check_assumptions,
    gramians,
    nominal_lemniscate,
    transition,
    unicycle_model,
)


def scalar(a=2.0, b=1.0, q=1.0, r=1.0):
    return StepData([[a]], [[b]], [[q]], [[r]])


def test_stepdata_validates_shapes_and_symmetry():
    with pytest.raises(InputError):
        StepData(np.eye(2), np.ones((3, 1)), np.eye(2), np.eye(1))
    with pytest.raises(InputError):
        StepData(np.eye(2), np.ones((2, 1)), [[1.0, 1.0], [0.0, 1.0]], np.eye(1))
    with pytest.raises(InputError):
        StepData(np.eye(2), np.ones((2, 1)), np.eye(2), np.eye(2))
    with pytest.raises(InputError):
        StepData([[np.nan]], [[1.0]], [[1.0]], [[1.0]])
    s = scalar()
    assert s.dims == (1, 1)
    assert not s.A.flags.writeable


def test_issues_reports_singular_a_and_indefinite_r():
    s = StepData(np.zeros((2, 2)), np.ones((2, 1)), np.eye(2), [[-1.0]])
    issues = s.issues()
    assert any("singular" in i for i in issues)
    assert any("R" in i for i in issues)


def test_provider_kinds():
    per = ModelProvider.periodic([scalar(1.0), scalar(2.0)])
    assert per.step(5).A[0, 0] == 2.0 and per.key(5) == 1
    exp = ModelProvider.explicit([scalar(1.0), scalar(2.0)])
    with pytest.raises(InputError):
        exp.step(2)
    gen = ModelProvider.generator(lambda t: scalar(float(t + 1)), 1, 1)
    assert gen.step(9).A[0, 0] == 10.0
    with pytest.raises(InputError):
        gen.default_window(3)
    bad = ModelProvider.generator(lambda t: StepData(np.eye(2), np.ones((2, 1)), np.eye(2), np.eye(1)), 1, 1)
    with pytest.raises(InputError):
        bad.step(0)


def test_mixed_dims_rejected():
    with pytest.raises(InputError):
        ModelProvider.periodic([scalar(), StepData(np.eye(2), np.ones((2, 1)), np.eye(2), np.eye(1))])


def test_transition_examples():
    p = ModelProvider.periodic([scalar(2.0)])
    np.testing.assert_array_equal(transition(p, 4, 4), np.eye(1))
    assert transition(p, 0, 3)[0, 0] == 8.0
    with pytest.raises(InputError):
        transition(p, 3, 2)


def test_transition_matches_propagation_on_unicycle():
    m = unicycle_model()
    Phi = transition(m, 0, 5)
    for i in range(3):
        x = np.eye(3)[i]
        for t in range(5):
            x = m.step(t).A @ x
        np.testing.assert_allclose(Phi[:, i], x, rtol=1e-14)


def test_gramian_examples():
    s = StepData(np.array([[1.0, 0.2], [0.0, 1.0]]), np.array([[1.0], [0.5]]), np.diag([1.0, 2.0]), [[1.0]])
    obs, ctr = gramians(ModelProvider.periodic([s]), 0, 1)
    np.testing.assert_allclose(obs, s.Q)
    np.testing.assert_allclose(ctr, s.B @ s.B.T)
    obs, ctr = gramians(ModelProvider.periodic([scalar(1.0, 1.0, 1.0, 1.0)]), 0, 3)
    assert (obs[0, 0], ctr[0, 0]) == (3.0, 3.0)


def test_unicycle_gramians_and_assumptions():
    m = unicycle_model()
    obs, ctr = gramians(m, 0, 10)
    assert np.linalg.eigvalsh(obs)[0] > 0 and np.linalg.eigvalsh(ctr)[0] > 0
    rep = check_assumptions(m, 10)
    assert rep.passed, rep.failures[:3]
    assert "one full period" in rep.window


def test_assumption_failures_are_located():
    zero_b = ModelProvider.periodic([StepData(np.eye(2), np.zeros((2, 1)), np.eye(2), [[1.0]])])
    rep = check_assumptions(zero_b, 3)
    assert not rep.passed and any("controllability" in f for f in rep.failures)
    steps = [StepData(np.eye(2), np.eye(2), np.eye(2), np.eye(2)) for _ in range(4)]
    steps[2] = StepData(np.zeros((2, 2)), np.eye(2), np.eye(2), np.eye(2))
    rep = check_assumptions(ModelProvider.periodic(steps), 2)
    assert not rep.passed and any(f.startswith("t=2:") and "singular" in f for f in rep.failures)


def test_unicycle_structure():
    h = 0.05
    m = unicycle_model()
    assert (m.n, m.m, m.period) == (3, 2, 400)
    assert m.meta["disturbance_scale"] == h
    _, _, psi, v, _ = nominal_lemniscate()
    for t in (0, 57, 211, 399):
        s = m.step(t)
        np.testing.assert_array_equal(np.diag(s.A), np.ones(3))
        assert s.A[0, 2] == pytest.approx(-v[t] * np.sin(psi[t]) * h, rel=1e-12)
        np.testing.assert_array_equal(s.B[:, 1], [0.0, 0.0, h])
        np.testing.assert_array_equal(m.step(t + 400).A, s.A)


def test_unicycle_heading_is_continuous():
    _, _, psi, _, _ = nominal_lemniscate()
    assert np.max(np.abs(np.diff(psi))) < 0.5


def test_json_roundtrip_and_malformed(tmp_path):
    m = unicycle_model(N=20)
    path = tmp_path / "m.json"
    m.save(path)
    back = ModelProvider.load(path)
    assert back.kind == "periodic" and back.period == 20
    np.testing.assert_array_equal(back.step(7).A, m.step(7).A)
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(InputError):
        ModelProvider.load(tmp_path / "bad.json")
    (tmp_path / "kind.json").write_text(json.dumps({"kind": "other", "steps": []}))
    with pytest.raises(InputError):
        ModelProvider.load(tmp_path / "kind.json")
