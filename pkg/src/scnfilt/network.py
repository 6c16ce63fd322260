"""Recurrent LIF spike-coding network implementing the linear filters.

The network's synaptic weights are derived analytically from the system model
and a random decoder D (no learning):

    F       = D^T B                 input weights
    Omega_s = D^T (A + lam I) D     slow recurrence (model dynamics)
    Omega_f = -D^T D                fast lateral inhibition (spike resets)
    Omega_k = -D^T K C D            estimation feedback, refreshed with K
    F_k     = D^T K                 measurement weights, refreshed with K

A neuron fires when its membrane potential exceeds T_i = ||D_i||^2 / 2, which
is exactly the condition that a spike of neuron i reduces the instantaneous
coding error ||x - D r||^2.  The estimate is decoded linearly as xhat = D r.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from . import _backend
from .filters import (gain_schedule, innovation_cov, kf_gain, msif_gain,
                      pseudo_inverse)
from .system import SystemModel

__all__ = [
    "DecoderMatrix",
    "NetworkSpec",
    "NetworkState",
    "SpikeRaster",
    "GAIN_MODES",
    "build_decoder",
    "thresholds",
    "build_weights",
    "measurement_weights",
    "fires",
    "initial_rates",
    "step_network",
    "decode",
    "run_snn_estimator",
    "SnnRun",
]

GAIN_MODES = ("KF", "MSIF-cov", "MSIF-innov")


@dataclass
class DecoderMatrix:
    """Fixed random decoder; column i is the output kernel of neuron i."""

    D: np.ndarray
    seed: int
    sigma2: float

    @property
    def n_x(self):
        return self.D.shape[0]

    @property
    def N(self):
        return self.D.shape[1]


@dataclass
class NetworkSpec:
    """Compiled network: weight matrices, thresholds and gain rule."""

    F: np.ndarray
    Omega_s: np.ndarray
    Omega_f: np.ndarray
    Omega_k: np.ndarray
    F_k: np.ndarray
    lam: float
    T: np.ndarray
    gain_mode: str = "KF"
    delta: float = 0.005


@dataclass
class NetworkState:
    """Per-step network variables; r stays nonnegative, s is binary."""

    v: np.ndarray
    r: np.ndarray
    s: np.ndarray
    eta_sigma: float = 0.0


@dataclass
class SpikeRaster:
    """Spike events as (step index, neuron index) pairs, sorted by step."""

    events: np.ndarray  # (n_events, 2) int
    N: int
    steps: int
    dt: float

    def __post_init__(self):
        self.events = np.asarray(self.events, dtype=np.int64).reshape(-1, 2)

    @property
    def count(self):
        return self.events.shape[0]

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(f"# N={self.N} steps={self.steps} dt={self.dt!r}\n")
            for step, neuron in self.events:
                fh.write(f"{step},{neuron}\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            header = fh.readline()
            if not header.startswith("#"):
                raise ValueError("missing raster header")
            fields = dict(tok.split("=") for tok in header[1:].split())
            events = []
            for line in fh:
                line = line.strip()
                if line:
                    a, b = line.split(",")
                    events.append((int(a), int(b)))
        return cls(events=np.array(events, dtype=np.int64).reshape(-1, 2),
                   N=int(fields["N"]), steps=int(fields["steps"]),
                   dt=float(fields["dt"]))


def build_decoder(n_x, N, seed, sigma2=0.25):
    """Decoder with i.i.d. N(0, sigma2) entries, deterministic under seed.

    Exactly-zero columns would make a neuron fire on any positive potential
    (T_i = 0); they are resampled, a probability-zero event kept for safety.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    rng = np.random.default_rng(seed)
    D = np.sqrt(sigma2) * rng.standard_normal((n_x, N))
    while True:
        dead = ~D.any(axis=0)
        if not dead.any():
            break
        D[:, dead] = np.sqrt(sigma2) * rng.standard_normal((n_x, int(dead.sum())))
    return DecoderMatrix(D=D, seed=seed, sigma2=sigma2)


def thresholds(decoder):
    """T_i = ||D_i||^2 / 2 per neuron."""
    D = decoder.D if isinstance(decoder, DecoderMatrix) else np.asarray(decoder)
    return 0.5 * np.diag(D.T @ D).copy()


def measurement_weights(D, K, C):
    """Gain-dependent pair (Omega_k, F_k) = (-D^T K C D, D^T K)."""
    D = np.asarray(D, dtype=float)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    Omega_k = -(D.T @ (K @ C) @ D)
    F_k = D.T @ K
    return Omega_k, F_k


def build_weights(model: SystemModel, decoder, lam, gain_mode="KF",
                  delta=0.005, P0=None):
    """Assemble the full NetworkSpec from the (estimator-side) model.

    Omega_k and F_k are seeded from the gain at P0 (or the zero innovation for
    the innovation-driven mode) and are refreshed every step by the runner.
    """
    if gain_mode not in GAIN_MODES:
        raise ValueError(f"gain_mode must be one of {GAIN_MODES}")
    D = decoder.D if isinstance(decoder, DecoderMatrix) else np.asarray(decoder, dtype=float)
    n_x = model.n_x
    if D.shape[0] != n_x:
        raise ValueError("decoder rows must match the state dimension")
    G = D.T @ D
    F = D.T @ model.B
    Omega_s = D.T @ (model.A + lam * np.eye(n_x)) @ D
    Omega_f = -G
    T = 0.5 * np.diag(G).copy()
    if P0 is None:
        P0 = np.eye(n_x)
    if gain_mode == "KF":
        K = kf_gain(P0, model.C, model.R)
    elif gain_mode == "MSIF-cov":
        K = msif_gain(innovation_cov(P0, model.C, model.R), model.C, delta)
    else:
        K = np.zeros((n_x, model.n_z))
    Omega_k, F_k = measurement_weights(D, K, model.C)
    return NetworkSpec(F=F, Omega_s=Omega_s, Omega_f=Omega_f, Omega_k=Omega_k,
                       F_k=F_k, lam=float(lam), T=T, gain_mode=gain_mode,
                       delta=float(delta))


def fires(v_i, T_i):
    """Strict threshold test: spike iff v_i > T_i."""
    return bool(v_i > T_i)


def initial_rates(decoder, xhat0):
    """Nonnegative rates with D r = xhat0, so decoding starts at the prior.

    Solved by nonnegative least squares; for generic decoders the residual is
    zero with at most n_x active neurons.
    """
    D = decoder.D if isinstance(decoder, DecoderMatrix) else np.asarray(decoder)
    r, _ = nnls(D, np.asarray(xhat0, dtype=float))
    return r


def step_network(state: NetworkState, spec: NetworkSpec, u, z, dt, rng=None,
                 multi_spike=False):
    """One Euler step of the membrane/rate dynamics with unit spike impulses.

    The drift (leak, input, recurrence, measurement drive) is scaled by dt;
    spikes enter v (through Omega_f) and r as unit impulses.  Firing is
    evaluated on the post-drift, pre-spike potentials; by default at most one
    neuron (the largest threshold excess, lowest index on ties) fires per
    step, with ``multi_spike`` firing every neuron above threshold at once.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = np.atleast_1d(np.asarray(u, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    drive = (spec.F @ u + spec.Omega_s @ state.r + spec.Omega_k @ state.r
             + spec.F_k @ z + (-spec.lam) * state.v)
    v = state.v + dt * drive
    if state.eta_sigma > 0.0:
        if rng is None:
            raise ValueError("eta_sigma > 0 requires an rng")
        v = v + state.eta_sigma * np.sqrt(dt) * rng.standard_normal(v.shape[0])
    if not np.all(np.isfinite(v)):
        raise FloatingPointError("membrane potentials became nonfinite")
    s = np.zeros_like(v)
    r = state.r + dt * ((-spec.lam) * state.r)
    if multi_spike:
        fired = v > spec.T
        if fired.any():
            v = v + spec.Omega_f @ fired.astype(float)
            r = r + fired
            s = fired.astype(float)
    else:
        i = int(np.argmax(v - spec.T))
        if v[i] > spec.T[i]:
            v = v + spec.Omega_f[:, i]
            r[i] += 1.0
            s[i] = 1.0
    return NetworkState(v=v, r=r, s=s, eta_sigma=state.eta_sigma)


def decode(decoder, r):
    """xhat = D r."""
    D = decoder.D if isinstance(decoder, DecoderMatrix) else np.asarray(decoder)
    return D @ np.asarray(r, dtype=float)


@dataclass
class SnnRun:
    """Decoded estimates, sigma envelope and raster for one network run."""

    estimates: np.ndarray
    sigmas: np.ndarray
    raster: SpikeRaster
    diverged: bool = False
    diverge_step: int | None = None
    backend: str = field(default="python")


def run_snn_estimator(model_est, decoder, traj, gain_mode="KF", lam=0.5,
                      delta=0.005, P0=None, xhat0=None, eta_sigma=0.0,
                      eta_rng=None, multi_spike=False, divergence_limit=1e4,
                      backend=None, schedule=None):
    """Step the network over a trajectory's inputs and measurements.

    The gain (and with it the measurement weights) refreshes every step: for
    KF / MSIF-cov from the co-integrated Riccati covariance, for MSIF-innov
    from the decoded innovation z - C D r.  Outputs are decoded per step; on
    divergence the series is held at the last finite value and flagged.
    ``schedule`` optionally supplies the precomputed (K_seq, sigmas) pair so a
    batch can share one Riccati integration across runs.
    """
    D = decoder.D if isinstance(decoder, DecoderMatrix) else np.asarray(decoder, dtype=float)
    n_x = model_est.n_x
    steps = traj.steps
    dt = traj.dt
    if P0 is None:
        P0 = np.eye(n_x)
    if xhat0 is None:
        xhat0 = model_est.x0
    if gain_mode not in GAIN_MODES:
        raise ValueError(f"gain_mode must be one of {GAIN_MODES}")

    if gain_mode == "MSIF-innov":
        if schedule is None:
            # sigma envelope still follows the Riccati flow for reporting
            _, sigmas = gain_schedule(model_est, "MSIF", P0, dt, steps, delta)
        else:
            _, sigmas = schedule
        K_seq = None
    else:
        kind = "KF" if gain_mode == "KF" else "MSIF"
        if schedule is None:
            schedule = gain_schedule(model_est, kind, P0, dt, steps, delta)
        K_seq, sigmas = schedule

    G = D.T @ D
    T = 0.5 * np.diag(G).copy()
    Omega_f = np.ascontiguousarray(-G)
    Alam = np.ascontiguousarray(model_est.A + lam * np.eye(n_x))
    Cpinv = np.ascontiguousarray(pseudo_inverse(model_est.C))
    r0 = initial_rates(D, xhat0)
    eta = None
    if eta_sigma > 0.0:
        if eta_rng is None:
            raise ValueError("eta_sigma > 0 requires eta_rng")
        eta = eta_sigma * np.sqrt(dt) * eta_rng.standard_normal((steps, D.shape[1]))

    est, spike_steps, spike_neurons, diverge_step, backend_name = _backend.run_network(
        D=np.ascontiguousarray(D),
        Alam=Alam,
        B=np.ascontiguousarray(model_est.B),
        C=np.ascontiguousarray(model_est.C),
        Cpinv=Cpinv,
        Omega_f=Omega_f,
        T=np.ascontiguousarray(T),
        u_seq=np.ascontiguousarray(traj.inputs[:steps]),
        z_seq=np.ascontiguousarray(traj.measurements[:steps]),
        K_seq=K_seq,
        delta=float(delta),
        lam=float(lam),
        dt=float(dt),
        r0=np.ascontiguousarray(r0),
        eta=eta,
        multi_spike=bool(multi_spike),
        divergence_limit=float(divergence_limit),
        backend=backend,
    )
    diverged = diverge_step >= 0
    if diverged:
        est[diverge_step + 1:] = est[diverge_step]
    events = np.stack([spike_steps, spike_neurons], axis=1) if len(spike_steps) else \
        np.empty((0, 2), dtype=np.int64)
    raster = SpikeRaster(events=events, N=D.shape[1], steps=steps, dt=dt)
    return SnnRun(estimates=est, sigmas=sigmas.copy(), raster=raster,
                  diverged=diverged,
                  diverge_step=diverge_step if diverged else None,
                  backend=backend_name)
