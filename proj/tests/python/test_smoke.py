"""Smoke tests for the kkl_tune python module.

Run from the repository root after building the extension:
    PYTHONPATH=python pytest tests/python
"""

import math

import numpy as np
import pytest

import kkl_tune as kt


def test_bessel_poles_match_reference():
    poles = kt.bessel_poles(1, 1.0 / (2.0 * math.pi))
    assert len(poles) == 1
    assert poles[0] == pytest.approx(-1.0, abs=1e-12)

    raw = sorted(kt.bessel_poles_raw(3), key=lambda p: p.imag)
    assert raw[1] == pytest.approx(-2.32218535, abs=1e-6)
    assert raw[2].real == pytest.approx(-1.83890732, abs=1e-6)
    assert raw[2].imag == pytest.approx(1.75438096, abs=1e-6)


def test_design_and_norms():
    design = kt.build_design(0.15, 2, 1)
    assert design.d_z == 3
    assert design.F.shape == (3, 1)
    assert np.all(design.F == 1.0)
    assert design.lambda_min > 0

    ev = np.linalg.eigvals(design.D)
    assert sorted(p.real for p in design.poles) == pytest.approx(
        sorted(ev.real), abs=1e-10
    )

    d_scalar = np.array([[-2.0]])
    assert kt.h2_norm(d_scalar) == pytest.approx(0.5, rel=1e-12)
    assert kt.hinf_norm(d_scalar, np.array([[1.0]])) == pytest.approx(
        0.5, rel=1e-10
    )

    p_mat = kt.solve_lyapunov(d_scalar, np.eye(1))
    assert p_mat[0, 0] == pytest.approx(0.25, rel=1e-12)


def test_lhs_stratification_and_determinism():
    lower = np.array([-1.0, -1.0])
    upper = np.array([1.0, 1.0])
    pts = kt.lhs(50, lower, upper, seed=7)
    assert pts.shape == (50, 2)
    for dim in range(2):
        cells = np.floor((pts[:, dim] + 1.0) / 2.0 * 50).astype(int)
        assert sorted(cells) == list(range(50))
    again = kt.lhs(50, lower, upper, seed=7)
    np.testing.assert_array_equal(pts, again)


def test_simulate_roundtrip():
    t, states, outputs = kt.simulate("rev-duffing", np.array([0.6, 0.6]), 2.0, 1e-3)
    assert states.shape[0] == len(t) == 2001
    assert outputs[0, 0] == pytest.approx(0.6)
    back_t, back_states, _ = kt.simulate(
        "rev-duffing", states[-1], 2.0, 1e-3, direction="backward"
    )
    np.testing.assert_allclose(back_states[-1], [0.6, 0.6], atol=1e-6)
    assert back_t[-1] == pytest.approx(-2.0)


def test_backward_blowup_raises():
    with pytest.raises(RuntimeError):
        kt.generate_dataset("van-der-pol-unsat", [0.2], 16, seed=1)


def test_dataset_shapes_and_sylvester_consistency():
    X, Z, W = kt.generate_dataset("rev-duffing", [0.3, 0.6], 20, seed=3)
    assert X.shape == (40, 2)
    assert Z.shape == (40, 3)
    assert set(np.round(W, 12)) == {0.3, 0.6}
    assert np.all(np.isfinite(Z))
    assert np.all(np.abs(X) <= 1.0 + 1e-5)


def test_train_sweep_evaluate_pipeline():
    obs = kt.train_supervised(
        "rev-duffing",
        omegas=[0.3, 0.8],
        n_per_omega=60,
        hidden=[16, 16],
        epochs=10,
        batch_size=32,
        patience=10,
        data_seed=5,
        train_seed=6,
    )
    assert obs.d_x == 2 and obs.d_z == 3

    z = obs.t(np.array([0.4, -0.2]), 0.3)
    assert z.shape == (3,)
    x_back = obs.t_star(z, 0.3)
    assert x_back.shape == (2,)
    jac = obs.t_star_jacobian(z, 0.3)
    assert jac.shape == (2, 3)
    assert np.all(np.isfinite(jac))

    residual = kt.pde_residual(obs, "rev-duffing", np.array([0.1, 0.2]), 0.3)
    assert residual.shape == (3,)

    argmin, entries = kt.sweep(obs, "rev-duffing", [0.3, 0.8], n_test_points=16, seed=2)
    assert argmin in (0.3, 0.8)
    assert len(entries) == 2
    for e in entries:
        assert e["alpha"] == pytest.approx(
            e["J_l2"] * (e["hinf_Geps"] + e["h2_Gz"]), rel=1e-12
        )

    run = kt.evaluate(obs, "rev-duffing", 0.3, np.array([0.6, 0.6]),
                      duration=1.0, sigma=0.1, seed=4)
    assert run["x_hat"].shape == run["x"].shape
    assert math.isfinite(run["rmse"])


def test_observer_save_load_roundtrip(tmp_path):
    obs = kt.train_supervised(
        "rev-duffing",
        omegas=[0.5],
        n_per_omega=40,
        hidden=[8],
        epochs=3,
        batch_size=32,
        data_seed=8,
        train_seed=9,
    )
    path = str(tmp_path / "ckpt.json")
    obs.save(path)
    loaded = kt.Observer.load(path)
    x = np.array([0.3, 0.3])
    np.testing.assert_array_equal(obs.t(x, 0.5), loaded.t(x, 0.5))


def test_autoencoder_smoke(tmp_path):
    model = kt.train_autoencoder(
        "rev-duffing",
        n_samples=200,
        lambda_weight=0.1,
        omega_init=0.2,
        optimize_d=True,
        hidden=[16, 16],
        epochs=5,
        batch_size=64,
        seed=11,
    )
    assert model.d_z == 3
    ev = np.linalg.eigvals(model.D)
    assert np.all(ev.real < 0)

    z = model.encode(np.array([0.2, -0.4]))
    x_hat = model.decode(z)
    assert x_hat.shape == (2,)

    path = str(tmp_path / "ae.json")
    model.save(path)
    loaded = kt.Autoencoder.load(path)
    np.testing.assert_array_equal(loaded.D, model.D)

    run = kt.evaluate_autoencoder(
        model, "rev-duffing", np.array([0.6, 0.6]), duration=0.5, sigma=0.0
    )
    assert math.isfinite(run["rmse"])
