import io
import json

import numpy as np
import pytest
from conftest import GAMMA, H
from helpers import random_model

from preview_gain.errors import InputError
from preview_gain.model import ModelProvider, StepData
from preview_gain.riccati import baseline_gains
from preview_gain.sim import (
    ClosedLoop,
    disturbance_ensemble,
    dissipation_check,
    empirical_gain,
    measure_delta,
    simulate,
    write_trace_csv,
)


def scalar(a, b=1.0):
    return ModelProvider.periodic([StepData([[a]], [[b]], [[1.0]], [[1.0]])])


def test_zero_disturbance_gives_zero_trace():
    rng = np.random.default_rng(0)
    model = random_model(rng, 3, 2, 2)
    tr = simulate(model, [np.ones((2, 3))] * 11, np.zeros((10, 3)), alpha=2.0)
    assert not tr.x.any() and not tr.u.any() and not tr.z.any()
    assert tr.J() == 0.0


def test_impulse_response_decays_geometrically():
    w = np.zeros((5, 1))
    w[0] = 1.0
    tr = simulate(scalar(0.5), [np.zeros((1, 1))] * 6, w)
    np.testing.assert_allclose(tr.x[:, 0], [0, 1, 0.5, 0.25, 0.125, 0.0625])


def test_superposition():
    rng = np.random.default_rng(1)
    model = random_model(rng, 3, 2, 3)
    Ks = [0.2 * rng.standard_normal((2, 3)) for _ in range(9)]
    w1, w2 = rng.standard_normal((8, 3)), rng.standard_normal((8, 3))
    x = simulate(model, Ks, w1 + w2).x
    np.testing.assert_allclose(x, simulate(model, Ks, w1).x + simulate(model, Ks, w2).x, atol=1e-10)


def test_batched_equals_single():
    rng = np.random.default_rng(2)
    model = random_model(rng, 2, 1, 2)
    Ks = [0.1 * np.ones((1, 2))] * 7
    W = rng.standard_normal((4, 6, 2))
    tr = simulate(model, Ks, W, alpha=3.0)
    for i in range(4):
        np.testing.assert_allclose(tr.z[i], simulate(model, Ks, W[i]).z, rtol=1e-13, atol=1e-15)


def test_gain_coverage_and_shape_errors():
    with pytest.raises(InputError, match="t=3"):
        simulate(scalar(0.5), [np.zeros((1, 1))] * 3, np.zeros((3, 1)))
    with pytest.raises(InputError, match="t=0"):
        simulate(scalar(0.5), [np.zeros((2, 1))] * 4, np.zeros((3, 1)))
    with pytest.raises(InputError):
        simulate(scalar(0.5), [np.zeros((1, 1))] * 4, np.zeros((3, 2)))


def test_pass_through_gain_is_one():
    model = ModelProvider.periodic([StepData([[0.0]], [[0.0]], [[1.0]], [[1.0]])])
    rep = empirical_gain(model, [np.zeros((1, 1))] * 2, 1, method="both")
    assert rep.empirical == pytest.approx(1.0, rel=1e-10)
    assert rep.dense == pytest.approx(1.0, rel=1e-12)


def test_adjoint_consistency():
    rng = np.random.default_rng(4)
    model = random_model(rng, 3, 2, 4)
    loop = ClosedLoop(model, [0.3 * rng.standard_normal((2, 3)) for _ in range(21)], 20)
    w, y = rng.standard_normal((20, 3)), rng.standard_normal((21, 5))
    lhs, rhs = np.sum(loop.apply(w) * y), np.sum(loop.adjoint(y) * w)
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_gain_nondecreasing_in_horizon():
    rng = np.random.default_rng(5)
    model = random_model(rng, 2, 1, 3)
    Ks = [0.1 * rng.standard_normal((1, 2)) for _ in range(41)]
    vals = [empirical_gain(model, Ks, N, method="dense").empirical for N in (5, 10, 20, 40)]
    assert all(a <= b * (1 + 1e-12) for a, b in zip(vals, vals[1:]))


def test_power_iteration_matches_dense():
    rng = np.random.default_rng(6)
    model = random_model(rng, 3, 2, 4)
    Ks = [0.2 * rng.standard_normal((2, 3)) for _ in range(31)]
    rep = empirical_gain(model, Ks, 30, method="both")
    assert rep.converged and rep.empirical_scaled == pytest.approx(rep.dense, rel=1e-6)


def test_infinite_preview_gain_units(unicycle, baseline):
    Ks = baseline_gains(unicycle, baseline)
    rep = empirical_gain(unicycle, lambda t: Ks[t % 400], 400, units="original", certified=GAMMA)
    assert rep.empirical_scaled <= GAMMA
    assert rep.empirical == pytest.approx(rep.empirical_scaled * H)
    assert rep.certified == pytest.approx(6.25)
    d = json.loads(rep.to_json())
    assert set(d) >= {"empirical", "certified", "units", "N", "iterations", "converged"}


def test_random_disturbances_respect_baseline_bound(unicycle, baseline):
    Ks = baseline_gains(unicycle, baseline)
    W = disturbance_ensemble(50, 400, 3, seed=1)
    tr = simulate(unicycle, lambda t: Ks[t % 400], W)
    ratio = tr.z_energy[:, -1] / tr.w_energy[:, -1]
    assert np.all(ratio <= (GAMMA) ** 2)


def test_ensemble_is_seeded_unit_norm():
    a = disturbance_ensemble(5, 30, 2, seed=3)
    np.testing.assert_array_equal(a, disturbance_ensemble(5, 30, 2, seed=3))
    np.testing.assert_allclose(np.linalg.norm(a.reshape(5, -1), axis=1), 1.0)
    assert np.sum(a[:, -5:] ** 2) < np.sum(a[:, :5] ** 2)


def test_dissipation_report(unicycle, baseline):
    Ks = baseline_gains(unicycle, baseline)
    zero = simulate(unicycle, lambda t: Ks[t % 400], np.zeros((50, 3)))
    rep = dissipation_check(unicycle, zero, lambda t: baseline.at(t + 1), GAMMA)
    assert rep.passed and rep.max_residual == 0.0
    w = disturbance_ensemble(1, 400, 3, seed=2)[0]
    tr = simulate(unicycle, lambda t: Ks[t % 400], w)
    rep = dissipation_check(unicycle, tr, lambda t: baseline.at(t + 1), GAMMA)
    assert rep.passed, rep.flags[:3]
    assert rep.max_residual <= 1e-8 and np.all(rep.control <= 1e-9 * (1 + np.abs(rep.disturbance)))


def test_dissipation_negative_control_is_flagged():
    # X far above anything the gain bound allows: the report flags, it does not raise
    model = scalar(1.0)
    tr = simulate(model, [np.zeros((1, 1))] * 6, np.ones((5, 1)))
    rep = dissipation_check(model, tr, [np.array([[4.0]])] * 5, 1.0)
    assert not rep.passed and rep.flags


def test_measure_delta():
    P = [np.eye(2) * (i + 1) for i in range(4)]
    rep = measure_delta(P, P)
    assert rep.max == 0.0 and rep.values.shape == (4,)
    with pytest.raises(InputError):
        measure_delta(P, P[:2])


def test_trace_csv():
    tr = simulate(scalar(0.5), [np.zeros((1, 1))] * 4, np.ones((3, 1)))
    buf = io.StringIO()
    write_trace_csv(buf, tr, 2.0, ["hdr"])
    lines = buf.getvalue().splitlines()
    assert lines[1] == "t,x0,u0,w0,z_norm2,running_J"
    assert len(lines) == 2 + 4
    assert float(lines[-1].split(",")[-1]) == pytest.approx(tr.running_J(2.0)[-1])
