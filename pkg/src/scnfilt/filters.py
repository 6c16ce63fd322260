"""Continuous-time linear filters integrated by forward Euler.

Three gain rules over a shared predict/correct structure:

    KF    K = P C^T R^-1
    SIF   K = C+ sat(|z - zhat| / delta)
    MSIF  K = C+ sat(diag(Pzz) / delta),   Pzz = C P C^T + R

The error covariance P propagates through the Riccati right-hand side for all
three kinds; the gain rule is the only difference between them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .system import SystemModel

__all__ = [
    "FilterState",
    "FilterConfig",
    "FilterRun",
    "FilterDivergence",
    "saturate",
    "pseudo_inverse",
    "kf_gain",
    "riccati_rhs",
    "innovation_cov",
    "sif_gain",
    "msif_gain",
    "filter_step",
    "gain_schedule",
    "run_filter",
]

KINDS = ("KF", "SIF", "MSIF")


class FilterDivergence(RuntimeError):
    """Raised when an estimate or covariance stops being finite."""


@dataclass
class FilterState:
    xhat: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        self.xhat = np.atleast_1d(np.asarray(self.xhat, dtype=float))
        self.P = np.asarray(self.P, dtype=float)

    @property
    def sigma(self):
        """Per-state standard deviations sqrt(P_ii)."""
        return np.sqrt(np.diag(self.P))


@dataclass
class FilterConfig:
    kind: str = "KF"
    delta: float = 0.005
    dt: float = 0.01

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind in ("SIF", "MSIF") and self.delta <= 0:
            raise ValueError("delta must be positive for SIF/MSIF")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass
class FilterRun:
    """Estimate and 3-sigma-source series for one trajectory."""

    estimates: np.ndarray   # (steps+1, n_x)
    sigmas: np.ndarray      # (steps+1, n_x)
    diverged: bool = False
    diverge_step: int | None = None


def saturate(y):
    """Elementwise clamp to [-1, 1]."""
    return np.clip(np.asarray(y, dtype=float), -1.0, 1.0)


def pseudo_inverse(C):
    """Moore-Penrose pseudo-inverse; rejects an all-zero matrix."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if not C.any():
        raise ValueError("cannot pseudo-invert a zero matrix")
    return np.linalg.pinv(C)


def kf_gain(P, C, R):
    """K = P C^T R^-1."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    return np.asarray(P) @ np.atleast_2d(C).T @ np.linalg.inv(R)


def riccati_rhs(P, A, C, Q, R):
    """dP/dt = A P + P A^T + Q - P C^T R^-1 C P."""
    P = np.asarray(P, dtype=float)
    A = np.asarray(A, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    PCt = P @ C.T
    return A @ P + P @ A.T + np.asarray(Q) - PCt @ np.linalg.inv(R) @ PCt.T


def innovation_cov(P, C, R):
    """Pzz = C P C^T + R."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    return C @ np.asarray(P) @ C.T + np.atleast_2d(np.asarray(R))


def _diag_gain(C, satvec):
    # C+ times diagmat(satvec); for n_z = 1 this is just a scaled column.
    return pseudo_inverse(C) * np.asarray(satvec, dtype=float)[np.newaxis, :]


def sif_gain(innovation, C, delta):
    """K = C+ sat(|z - zhat| / delta)."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    s = saturate(np.abs(np.atleast_1d(innovation)) / delta)
    return _diag_gain(C, s)


def msif_gain(Pzz, C, delta):
    """K = C+ sat(diag(Pzz) / delta)."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    s = saturate(np.diag(np.atleast_2d(Pzz)) / delta)
    return _diag_gain(C, s)


def _gain(kind, P, model, innovation, delta):
    if kind == "KF":
        return kf_gain(P, model.C, model.R)
    if kind == "SIF":
        return sif_gain(innovation, model.C, delta)
    return msif_gain(innovation_cov(P, model.C, model.R), model.C, delta)


def filter_step(state: FilterState, cfg: FilterConfig, model: SystemModel, u, z):
    """One Euler step of estimate and covariance.

    xhat' = xhat + dt (A xhat + B u + K (z - C xhat)); P' is the Euler step of
    the Riccati flow, symmetrized.  Raises FilterDivergence on nonfinite state.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    innovation = z - model.C @ state.xhat
    K = _gain(cfg.kind, state.P, model, innovation, cfg.delta)
    xhat = state.xhat + cfg.dt * (model.A @ state.xhat + model.B @ u + K @ innovation)
    P = state.P + cfg.dt * riccati_rhs(state.P, model.A, model.C, model.Q, model.R)
    P = 0.5 * (P + P.T)
    if not (np.all(np.isfinite(xhat)) and np.all(np.isfinite(P))):
        raise FilterDivergence("filter state became nonfinite")
    return FilterState(xhat=xhat, P=P)


def gain_schedule(model: SystemModel, kind, P0, dt, steps, delta=0.005):
    """Precomputed per-step gains and sigma envelope for data-independent rules.

    The KF and MSIF gains depend only on the Riccati flow, so the whole
    schedule is known before any measurement arrives.  Returns (K_seq, sigmas)
    with K_seq[k] the gain applied on step k and sigmas[k] = sqrt(diag P(t_k)),
    k = 0..steps.
    """
    if kind not in ("KF", "MSIF"):
        raise ValueError("gain_schedule applies to data-independent kinds (KF, MSIF)")
    P = np.asarray(P0, dtype=float).copy()
    A, C, Q = model.A, model.C, model.Q
    R = np.atleast_2d(model.R)
    Rinv = np.linalg.inv(R)
    Cpinv = pseudo_inverse(C) if kind == "MSIF" else None
    K_seq = np.empty((steps, model.n_x, model.n_z))
    sigmas = np.empty((steps + 1, model.n_x))
    sigmas[0] = np.sqrt(np.diag(P))
    for k in range(steps):
        PCt = P @ C.T
        if kind == "KF":
            K_seq[k] = PCt @ Rinv
        else:
            Pzz = C @ PCt + R
            K_seq[k] = Cpinv * saturate(np.diag(Pzz) / delta)[np.newaxis, :]
        P = P + dt * (A @ P + P @ A.T + Q - PCt @ Rinv @ PCt.T)
        P = 0.5 * (P + P.T)
        sigmas[k + 1] = np.sqrt(np.diag(P))
    return np.ascontiguousarray(K_seq), sigmas


def run_filter(model_est, cfg, traj, xhat0, P0, divergence_limit=1e4,
               schedule=None):
    """Run one classical filter over a recorded trajectory.

    ``model_est`` is the (possibly perturbed) model the filter believes in; the
    trajectory carries the true states and shared measurements.  For KF/MSIF
    the data-independent gain schedule is precomputed (or passed in, when one
    batch shares it across runs); SIF recomputes its gain from each
    innovation.  On divergence the estimate is held at its last finite value
    and the run is flagged.
    """
    steps = traj.steps
    est = np.empty((steps + 1, model_est.n_x))
    xhat = np.asarray(xhat0, dtype=float).copy()
    est[0] = xhat
    if cfg.kind == "SIF":
        # P flows identically for every kind; reuse the MSIF schedule machinery
        _, sig = gain_schedule(model_est, "MSIF", P0, cfg.dt, steps, cfg.delta)
        K_seq = None
        Cpinv = pseudo_inverse(model_est.C)
    else:
        if schedule is None:
            schedule = gain_schedule(model_est, cfg.kind, P0, cfg.dt, steps, cfg.delta)
        K_seq, sig = schedule
        Cpinv = None
    A, B, C = model_est.A, model_est.B, model_est.C
    dt = cfg.dt
    diverged = False
    diverge_step = None
    for k in range(steps):
        innovation = traj.measurements[k] - C @ xhat
        if K_seq is None:
            K = Cpinv * saturate(np.abs(innovation) / cfg.delta)[np.newaxis, :]
        else:
            K = K_seq[k]
        xhat = xhat + dt * (A @ xhat + B @ traj.inputs[k] + K @ innovation)
        peak = np.abs(xhat).max()
        if not np.isfinite(peak) or peak > divergence_limit:
            diverged = True
            diverge_step = k
            est[k + 1:] = est[k]
            break
        est[k + 1] = xhat
    return FilterRun(estimates=est, sigmas=sig.copy(), diverged=diverged,
                     diverge_step=diverge_step)
