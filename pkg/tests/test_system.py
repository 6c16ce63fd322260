import numpy as np
import pytest

from scnfilt.system import (Controller, SystemModel, Trajectory, control_input,
                            measure, observability_matrix, observability_rank,
                            simulate_trajectory, step_truth, workbench_model)

import oracles


def test_workbench_parameters():
    model, ctrl = workbench_model("observable")
    assert np.array_equal(model.Q, np.eye(2) / 1000)
    assert np.array_equal(model.R, [[0.01]])
    assert np.array_equal(model.x0, [10.0, 1.0])
    assert np.array_equal(ctrl.Kc, [[1.0, 1.7321]])
    assert np.array_equal(model.B, [[0.0], [1.0]])
    assert np.array_equal(model.C, [[1.0, 0.0]])


def test_workbench_variants_differ_in_dynamics():
    obs, _ = workbench_model("observable")
    lit, _ = workbench_model("literal")
    assert np.array_equal(obs.A, [[0, 1], [0, 0]])
    assert np.array_equal(lit.A, [[0, 0], [0, 1]])
    with pytest.raises(ValueError):
        workbench_model("bogus")


def test_observability_ranks():
    obs, _ = workbench_model("observable")
    lit, _ = workbench_model("literal")
    # oracle: stack C and C A by hand and rank the result
    for model, want in ((obs, 2), (lit, 1)):
        stacked = np.vstack([model.C, oracles.mm(model.C, model.A)])
        assert np.linalg.matrix_rank(stacked) == want
        assert observability_rank(model) == want
    assert np.array_equal(observability_matrix(obs.A, obs.C), np.eye(2))


def test_control_input_examples():
    ctrl = Controller(Kc=[[1.0, 1.7321]])
    assert control_input(ctrl, [0.0, 0.0]) == pytest.approx([0.0])
    assert control_input(ctrl, [1.0, 0.0]) == pytest.approx([-1.0])
    assert control_input(ctrl, [10.0, 1.0]) == pytest.approx([-11.7321])
    with pytest.raises(ValueError):
        control_input(ctrl, [1.0, 2.0, 3.0])


def _still_model(n=2):
    return SystemModel(A=np.zeros((n, n)), B=np.zeros((n, 1)),
                       C=np.eye(n)[:1], Q=np.zeros((n, n)),
                       R=np.zeros((1, 1)), x0=np.zeros(n))


def test_step_truth_no_dynamics_no_noise():
    model = _still_model()
    rng = np.random.default_rng(0)
    x = np.array([3.0, -2.0])
    assert np.array_equal(step_truth(model, x, [0.0], 0.01, rng), x)


def test_step_truth_drift_only():
    model, _ = workbench_model()
    model = SystemModel(A=model.A, B=model.B, C=model.C,
                        Q=np.zeros((2, 2)), R=model.R, x0=model.x0)
    rng = np.random.default_rng(0)
    out = step_truth(model, [1.0, 2.0], [0.0], 0.01, rng)
    assert out == pytest.approx([1.02, 2.0], abs=1e-15)


def test_step_truth_matches_euler_maruyama_oracle():
    model, _ = workbench_model()
    x, u, dt = np.array([1.5, -0.5]), np.array([0.3]), 0.01
    rng = np.random.default_rng(123)
    got = step_truth(model, x, u, dt, rng)
    xi = np.random.default_rng(123).standard_normal(2)  # same stream, same draw
    want = oracles.euler_maruyama_step_oracle(model.A, model.B, model.Q, x, u, dt, xi)
    assert got == pytest.approx(want, abs=1e-14)


def test_step_truth_per_step_noise_reading():
    model, _ = workbench_model()
    x, u, dt = np.array([1.5, -0.5]), np.array([0.3]), 0.01
    rng = np.random.default_rng(7)
    got = step_truth(model, x, u, dt, rng, sqrt_dt_noise=False)
    xi = np.random.default_rng(7).standard_normal(2)
    w = np.linalg.cholesky(model.Q) @ xi
    want = x + dt * (model.A @ x + model.B @ u + w)
    assert got == pytest.approx(want, abs=1e-15)


def test_step_truth_rejects_bad_dt_and_indefinite_q():
    model, _ = workbench_model()
    with pytest.raises(ValueError):
        step_truth(model, model.x0, [0.0], 0.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        SystemModel(A=model.A, B=model.B, C=model.C,
                    Q=np.array([[1.0, 0.0], [0.0, -1.0]]), R=model.R, x0=model.x0)


def test_measure_examples():
    model = _still_model()
    rng = np.random.default_rng(0)
    out = measure(SystemModel(A=np.zeros((2, 2)), B=np.zeros((2, 1)),
                              C=np.array([[1.0, 0.0]]), Q=np.zeros((2, 2)),
                              R=np.zeros((1, 1)), x0=np.zeros(2)),
                  [10.0, 1.0], rng)
    assert np.array_equal(out, [10.0])
    ident = SystemModel(A=np.zeros((2, 2)), B=np.zeros((2, 1)), C=np.eye(2),
                        Q=np.zeros((2, 2)), R=np.zeros((2, 2)), x0=np.zeros(2))
    x = np.array([4.0, -1.0])
    assert np.array_equal(measure(ident, x, rng), x)


def test_measure_matches_seeded_oracle():
    model, _ = workbench_model()
    x = np.array([2.0, 0.5])
    got = measure(model, x, np.random.default_rng(99))
    xi = np.random.default_rng(99).standard_normal(1)
    want = model.C @ x + np.sqrt(0.01) * xi
    assert got == pytest.approx(want, abs=1e-15)


def test_sqrt_dt_scaling_variance_invariance():
    # noiseless-drift-free increments: per-unit-time variance independent of dt
    model = SystemModel(A=np.zeros((1, 1)), B=np.zeros((1, 1)),
                        C=np.eye(1), Q=np.array([[0.04]]),
                        R=np.zeros((1, 1)), x0=np.zeros(1))
    samples = 20_000
    out = {}
    for dt, steps in ((0.02, 5), (0.01, 10)):
        rng = np.random.default_rng(5)
        vals = np.empty(samples)
        for i in range(samples):
            x = np.zeros(1)
            for _ in range(steps):
                x = step_truth(model, x, [0.0], dt, rng)
            vals[i] = x[0]
        out[dt] = vals.var()
    # both integrate to T=0.1 so Var = Q*T = 0.004
    assert out[0.02] == pytest.approx(0.004, rel=0.05)
    assert out[0.01] == pytest.approx(out[0.02], rel=0.05)


def test_noiseless_closed_loop_reproducible_and_bounded():
    model, ctrl = workbench_model()
    quiet = SystemModel(A=model.A, B=model.B, C=model.C,
                        Q=np.zeros((2, 2)), R=np.zeros((1, 1)), x0=model.x0)
    t1 = simulate_trajectory(quiet, ctrl, 0.01, 1000, np.random.default_rng(0))
    t2 = simulate_trajectory(quiet, ctrl, 0.01, 1000, np.random.default_rng(1))
    assert np.array_equal(t1.states, t2.states)  # rng irrelevant without noise
    # closed-loop eigenvalues stay in the left half plane
    Acl = model.A - model.B @ ctrl.Kc
    assert np.real(np.linalg.eigvals(Acl)).max() <= 1e-12
    assert np.linalg.norm(t1.states, axis=1).max() <= 2 * np.linalg.norm(model.x0)


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(times=np.array([0.0, 0.1, 0.3]), states=np.zeros((3, 2)),
                   inputs=np.zeros((3, 1)), measurements=np.zeros((3, 1)))
    with pytest.raises(ValueError):
        Trajectory(times=np.arange(3) * 0.1, states=np.zeros((2, 2)),
                   inputs=np.zeros((3, 1)), measurements=np.zeros((3, 1)))


def test_model_dimension_checks():
    with pytest.raises(ValueError):
        SystemModel(A=np.zeros((2, 3)), B=np.zeros((2, 1)), C=np.eye(2),
                    Q=np.eye(2), R=np.eye(2), x0=np.zeros(2))
    with pytest.raises(ValueError):
        SystemModel(A=np.zeros((2, 2)), B=np.zeros((3, 1)), C=np.eye(2),
                    Q=np.eye(2), R=np.eye(2), x0=np.zeros(2))
    with pytest.raises(ValueError):
        SystemModel(A=np.zeros((2, 2)), B=np.zeros((2, 1)),
                    C=np.eye(2), Q=np.eye(2), R=np.eye(2), x0=np.zeros(3))
