import json
import math

import numpy as np
import pytest

import actionmatch as am


def translation_path():
    return am.make_path({"kind": "gaussian", "x0": [0.0, 0.0],
                         "mean": {"kind": "translation", "u": [2.0, 2.0]},
                         "scale": {"kind": "constant", "c": 1.0}})


def test_field_evaluation_shapes():
    f = am.MlpField(2, [8, 8], "tanh", seed=1)
    assert f.dim == 2
    assert len(f.params) == f.param_count
    jets = f.evaluate(np.array([0.1, 0.9]), np.zeros((2, 2)))
    assert jets["grad"].shape == (2, 2)
    assert jets["laplacian"].shape == (2,)


def test_relu_is_rejected():
    with pytest.raises(am.InvalidArgument):
        am.MlpField(2, [8], "relu")


def test_path_sampling_is_seeded():
    p = translation_path()
    a = p.sample(0.5, 100, seed=3)
    assert np.array_equal(a, p.sample(0.5, 100, seed=3))
    assert abs(a.mean() - 1.0) < 0.3
    assert p.has_velocity


def test_constant_field_objective_is_zero():
    p = translation_path()
    f = am.MlpField(2, [4], seed=0)
    f.params = [0.0] * f.param_count
    est = am.objective(f, p, "am", 16, 16)
    assert est["value"] == 0.0
    assert set(est["terms"]) >= {"boundary_0", "boundary_1", "kinetic", "time_deriv"}


def test_short_training_reduces_field_error(tmp_path):
    p = translation_path()
    f = am.MlpField(2, [32], seed=0)
    before = am.field_error(f, p, 4, 100)
    records = am.train(f, p, iterations=300, lr=3e-3, n_boundary=64, n_interior=64, eval_every=100)
    assert len(records) == 3
    assert am.field_error(f, p, 4, 100) < before
    f.save(str(tmp_path / "f.json"))
    g = am.load_field(str(tmp_path / "f.json"))
    assert g.params == f.params


def test_integration_and_likelihood():
    f = am.MlpField(1, [4], seed=0)
    f.params = [0.0] * f.param_count
    x = np.linspace(-1, 1, 5).reshape(-1, 1)
    y, w = am.integrate_ode(f, x)
    assert np.allclose(y, x) and w is None
    y, w = am.integrate_ode(f, x, log_weights=np.zeros(5))
    assert np.allclose(w, 0.0)
    assert np.allclose(am.integrate_sde(f, x, sigma={"kind": "constant", "c": 0.0}), x)
    ll = am.log_likelihood(f, x, np.zeros(1))
    assert np.allclose(ll, -0.5 * x[:, 0] ** 2 - 0.5 * math.log(2 * math.pi))


def test_metrics():
    x = np.array([[0.0]])
    y = np.array([[1.0]])
    assert am.mmd(x, y, bandwidth=1.0) == pytest.approx(math.sqrt(2 - 2 * math.exp(-0.5)), abs=1e-12)
    assert am.wasserstein2(np.array([[0.0], [1.0]]), np.array([[1.0], [0.0]])) == 0.0
    with pytest.raises(am.InvalidArgument):
        am.wasserstein2(x, np.zeros((2, 1)))


def test_ald_with_zero_steps_returns_initial():
    p = am.make_path({"kind": "qho"})
    x0 = p.sample(0.0, 50, seed=1)
    frames = am.ald_sample(p, [0.5, 1.0], 0, 0.01, x0)
    assert all(np.array_equal(fr, x0) for fr in frames)


def test_run_command_exit_codes(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"path": {"kind": "weight_shift"}, "generate": {"n": 10}}))
    assert am.run_command("generate", str(cfg), str(tmp_path / "out")) == 0
    assert (tmp_path / "out" / "snapshots.csv").exists()
    cfg.write_text(json.dumps({"path": {"kind": "nope"}}))
    assert am.run_command("generate", str(cfg), str(tmp_path / "bad")) == 2
    assert "compare-ald" in am.commands
