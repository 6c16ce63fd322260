"""Linear time-invariant plant with process/measurement noise and state feedback.

The plant is the continuous-time system

    dx/dt = A x + B u + w,      z = C x + v

integrated by forward Euler.  Process noise supports two per-step readings
(see ``step_truth``); measurement noise is sampled v ~ N(0, R) once per step.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SystemModel",
    "Controller",
    "Trajectory",
    "workbench_model",
    "control_input",
    "step_truth",
    "measure",
    "simulate_trajectory",
    "observability_matrix",
    "observability_rank",
]

_SYM_TOL = 1e-10


def _as_matrix(a, name):
    m = np.asarray(a, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def _check_psd(m, name):
    if np.abs(m - m.T).max() > _SYM_TOL:
        raise ValueError(f"{name} must be symmetric")
    w = np.linalg.eigvalsh(m)
    if w.min() < -1e-10 * max(1.0, w.max()):
        raise ValueError(f"{name} must be positive semidefinite (min eig {w.min():g})")


@dataclass
class SystemModel:
    """Plant matrices and initial state.

    Q and R must be symmetric PSD.  R may be singular (noiseless measurements)
    at construction; operations that invert R reject singular R themselves.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    x0: np.ndarray

    def __post_init__(self):
        self.A = _as_matrix(self.A, "A")
        self.B = _as_matrix(self.B, "B")
        self.C = _as_matrix(self.C, "C")
        self.Q = _as_matrix(self.Q, "Q")
        self.R = _as_matrix(self.R, "R")
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError("A must be square")
        if self.B.shape[0] != n:
            raise ValueError("rows(B) must match A")
        if self.C.shape[1] != n:
            raise ValueError("cols(C) must match A")
        if self.Q.shape != (n, n):
            raise ValueError("Q must be n_x by n_x")
        if self.R.shape != (self.C.shape[0],) * 2:
            raise ValueError("R must be n_z by n_z")
        if self.x0.shape != (n,):
            raise ValueError("x0 must have length n_x")
        _check_psd(self.Q, "Q")
        _check_psd(self.R, "R")

    @property
    def n_x(self):
        return self.A.shape[0]

    @property
    def n_u(self):
        return self.B.shape[1]

    @property
    def n_z(self):
        return self.C.shape[0]


@dataclass
class Controller:
    """Static state-feedback law u = -Kc x."""

    Kc: np.ndarray

    def __post_init__(self):
        self.Kc = _as_matrix(self.Kc, "Kc")


@dataclass
class Trajectory:
    """Uniformly sampled record of one closed-loop simulation.

    All arrays share the leading length steps+1; measurements are taken at
    every grid point including t=0.
    """

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    measurements: np.ndarray
    dt: float = field(default=0.0)

    def __post_init__(self):
        k = len(self.times)
        if not (len(self.states) == len(self.inputs) == len(self.measurements) == k):
            raise ValueError("trajectory arrays must have equal length")
        if k > 1:
            steps = np.diff(self.times)
            if np.abs(steps - steps[0]).max() > 1e-9:
                raise ValueError("time grid must be uniform")
            if not self.dt:
                self.dt = float(steps[0])

    @property
    def steps(self):
        return len(self.times) - 1


def workbench_model(variant="observable"):
    """Two-state benchmark plant with position measurement and stabilizing feedback.

    ``observable`` uses the double-integrator dynamics A=[[0,1],[0,0]] (full
    observability rank, the default).  ``literal`` selects A=[[0,0],[0,1]],
    which leaves the measured channel decoupled (rank 1); it is kept selectable
    for fidelity studies.
    """
    if variant == "observable":
        A = np.array([[0.0, 1.0], [0.0, 0.0]])
    elif variant == "literal":
        A = np.array([[0.0, 0.0], [0.0, 1.0]])
    else:
        raise ValueError(f"unknown workbench variant {variant!r}")
    model = SystemModel(
        A=A,
        B=np.array([[0.0], [1.0]]),
        C=np.array([[1.0, 0.0]]),
        Q=np.eye(2) / 1000.0,
        R=np.array([[1.0 / 100.0]]),
        x0=np.array([10.0, 1.0]),
    )
    ctrl = Controller(Kc=np.array([[1.0, 1.7321]]))
    return model, ctrl


def control_input(ctrl: Controller, x):
    """u = -Kc x."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != ctrl.Kc.shape[1]:
        raise ValueError("state dimension does not match Kc")
    return -(ctrl.Kc @ x)


def _noise_chol(Q):
    """Lower factor L with L L^T = Q; tolerates semidefinite Q."""
    try:
        return np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(Q)
        if w.min() < -1e-10 * max(1.0, abs(w.max())):
            raise np.linalg.LinAlgError("Q is not positive semidefinite")
        return V * np.sqrt(np.clip(w, 0.0, None))


def step_truth(model: SystemModel, x, u, dt, rng, sqrt_dt_noise=True, chol_q=None):
    """One forward-Euler step of the plant.

    With ``sqrt_dt_noise`` (default) the diffusion enters as sqrt(dt) L xi,
    the standard SDE scaling.  With it off, w ~ N(0, Q) is sampled per step
    and folded into the drift (x += dt (Ax + Bu + w)); the experiment harness
    uses that reading (see ExperimentConfig.process_noise).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    L = chol_q if chol_q is not None else _noise_chol(model.Q)
    w = L @ rng.standard_normal(model.n_x)
    drift = model.A @ x + model.B @ u
    if sqrt_dt_noise:
        return x + dt * drift + np.sqrt(dt) * w
    return x + dt * (drift + w)


def measure(model: SystemModel, x, rng, chol_r=None):
    """z = C x + v with v ~ N(0, R) sampled per call."""
    x = np.asarray(x, dtype=float)
    L = chol_r if chol_r is not None else _noise_chol(model.R)
    return model.C @ x + L @ rng.standard_normal(model.n_z)


def simulate_trajectory(model, ctrl, dt, steps, rng, sqrt_dt_noise=True):
    """Integrate the closed loop u = -Kc x(true) and record z at every grid point."""
    chol_q = _noise_chol(model.Q)
    chol_r = _noise_chol(model.R)
    times = np.arange(steps + 1) * dt
    states = np.empty((steps + 1, model.n_x))
    inputs = np.empty((steps + 1, model.n_u))
    meas = np.empty((steps + 1, model.n_z))
    x = model.x0.copy()
    states[0] = x
    meas[0] = measure(model, x, rng, chol_r=chol_r)
    for k in range(steps):
        u = control_input(ctrl, x)
        inputs[k] = u
        x = step_truth(model, x, u, dt, rng, sqrt_dt_noise=sqrt_dt_noise, chol_q=chol_q)
        states[k + 1] = x
        meas[k + 1] = measure(model, x, rng, chol_r=chol_r)
    inputs[steps] = control_input(ctrl, x)
    return Trajectory(times=times, states=states, inputs=inputs, measurements=meas, dt=dt)


def observability_matrix(A, C):
    """Stacked [C; CA; ...; CA^(n-1)]."""
    A = np.asarray(A, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    blocks = [C]
    for _ in range(A.shape[0] - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def observability_rank(model: SystemModel):
    """Rank of the observability matrix (reported, not enforced)."""
    return int(np.linalg.matrix_rank(observability_matrix(model.A, model.C)))
