"""Monte-Carlo experiment harness: accuracy, robustness and neuron-count studies.

Every run derives its own RNG streams from (base seed, run index), simulates
one shared truth/measurement trajectory and feeds it to every configured
estimator, so comparisons are paired.  Aggregation is order-independent and
deterministic under parallel execution.
"""
from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .filters import FilterConfig, gain_schedule, run_filter
from .network import build_decoder, run_snn_estimator
from .system import SystemModel, simulate_trajectory, workbench_model

__all__ = [
    "ESTIMATORS",
    "ExperimentConfig",
    "EstimatorResult",
    "ExperimentReport",
    "SweepRow",
    "rmse_timeseries",
    "avg_rmse",
    "sigma_coverage",
    "inject_uncertainty",
    "spike_activity",
    "chattering",
    "monte_carlo",
    "neuron_sweep",
    "default_p0",
]

ESTIMATORS = ("kf", "msif", "snn-kf", "snn-msif")
SNN_ESTIMATORS = ("snn-kf", "snn-msif")

# Initial covariance: the measured state starts with a 3-sigma envelope of +-1.
P0_DIAG = 1.0 / 9.0


def default_p0(n_x, p0_diag=P0_DIAG):
    return p0_diag * np.eye(n_x)


@dataclass
class ExperimentConfig:
    """Knobs for one Monte-Carlo batch; defaults follow the workbench setup."""

    runs: int = 100
    horizon: float = 10.0
    dt: float = 0.01
    seed: int = 0
    estimators: tuple = ESTIMATORS
    neurons: int = 300
    lam: float = 0.5
    delta: float = 0.005
    uncertainty: float = 0.0
    uncertainty_mode: str = "scale"
    variant: str = "observable"
    decoder_sigma2: float = 0.25
    eta_sigma: float = 0.0
    multi_spike: bool = False
    gain_source: str = "covariance"
    process_noise: str = "per-step"
    convergence_time: float = 5.0
    divergence_limit: float = 1e4
    p0: float = P0_DIAG
    q_scale: float = 1.0
    r_scale: float = 1.0
    workers: int = 1

    def validate(self):
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.horizon < self.dt:
            raise ValueError("horizon must cover at least one step")
        if not (0 <= self.uncertainty < 1):
            raise ValueError("uncertainty must lie in [0, 1)")
        if self.uncertainty_mode not in ("scale", "additive"):
            raise ValueError("uncertainty_mode must be 'scale' or 'additive'")
        if self.variant not in ("observable", "literal"):
            raise ValueError("variant must be 'observable' or 'literal'")
        if self.neurons < 1:
            raise ValueError("neurons must be at least 1")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.decoder_sigma2 <= 0:
            raise ValueError("decoder_sigma2 must be positive")
        if self.eta_sigma < 0:
            raise ValueError("eta_sigma must be nonnegative")
        if self.gain_source not in ("covariance", "innovation"):
            raise ValueError("gain_source must be 'covariance' or 'innovation'")
        if self.process_noise not in ("per-step", "sqrt-dt"):
            raise ValueError("process_noise must be 'per-step' or 'sqrt-dt'")
        if self.convergence_time < 0:
            raise ValueError("convergence_time must be nonnegative")
        if self.divergence_limit <= 0:
            raise ValueError("divergence_limit must be positive")
        if self.p0 <= 0:
            raise ValueError("p0 must be positive")
        if self.q_scale < 0:
            raise ValueError("q_scale must be nonnegative")
        if self.r_scale < 0:
            raise ValueError("r_scale must be nonnegative")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators: {sorted(unknown)}")
        if not self.estimators:
            raise ValueError("estimators must not be empty")
        return self

    @property
    def steps(self):
        return int(round(self.horizon / self.dt))


@dataclass
class EstimatorResult:
    """Cross-run aggregates for one estimator."""

    name: str
    rmse: np.ndarray                 # (steps+1, n_x) RMSE over runs per step
    avg_rmse: np.ndarray             # (n_x,) time-mean of the RMSE series
    coverage: np.ndarray             # (n_x,) fraction of |e| <= 3 sigma
    chatter: float
    diverged_runs: int
    diverge_steps: list
    activity_overall: float = float("nan")   # percent, SNN only
    activity_post: float = float("nan")
    raster0: object = None           # SpikeRaster of run 0, SNN only
    estimates0: np.ndarray = None    # run-0 series for plotting
    sigmas0: np.ndarray = None


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    times: np.ndarray
    results: dict                    # name -> EstimatorResult
    truth0: np.ndarray               # run-0 true states
    z_checksums: list = field(default_factory=list)

    @property
    def any_divergence(self):
        return any(r.diverged_runs > 0 for r in self.results.values())


@dataclass
class SweepRow:
    N: int
    estimator: str
    avg_rmse: np.ndarray
    chatter: float
    diverged_runs: int


def rmse_timeseries(errors):
    """Per-step RMS over runs, per state component.

    errors: (runs, steps+1, n_x) of x - xhat.
    """
    errors = np.asarray(errors, dtype=float)
    if errors.ndim != 3 or errors.shape[0] < 1:
        raise ValueError("errors must be (runs, steps, states) with at least one run")
    return np.sqrt(np.mean(errors ** 2, axis=0))


def avg_rmse(series):
    """Arithmetic time-mean of an RMSE series, per state."""
    series = np.asarray(series, dtype=float)
    if series.size == 0:
        raise ValueError("empty RMSE series")
    return series.mean(axis=0)


def sigma_coverage(errors, sigmas):
    """Fraction of samples with |e_i| <= 3 sigma_i, per state.

    sigmas broadcasts against errors; entries must be nonnegative (negative
    variances are a data error).
    """
    errors = np.asarray(errors, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    if np.any(sigmas < 0):
        raise ValueError("negative sigma encountered")
    inside = np.abs(errors) <= 3.0 * sigmas
    return inside.reshape(-1, errors.shape[-1]).mean(axis=0)


def inject_uncertainty(model: SystemModel, pct, mode="scale"):
    """Model with a perturbed dynamics matrix, for estimator-side use only.

    The plant keeps the nominal A; robustness comes from the filters and the
    network weights being designed against the perturbed copy.
    """
    if not (0 <= pct < 1):
        raise ValueError("uncertainty must lie in [0, 1)")
    if mode == "scale":
        A = (1.0 + pct) * model.A
    elif mode == "additive":
        A = model.A + pct
    else:
        raise ValueError("mode must be 'scale' or 'additive'")
    return SystemModel(A=A, B=model.B.copy(), C=model.C.copy(),
                       Q=model.Q.copy(), R=model.R.copy(), x0=model.x0.copy())


def spike_activity(raster, convergence_time=5.0):
    """(overall %, post-convergence %) of emitted vs possible spikes."""
    total = raster.N * raster.steps
    if total == 0:
        return 0.0, 0.0
    overall = 100.0 * raster.count / total
    start = int(round(convergence_time / raster.dt))
    post_steps = raster.steps - start
    if post_steps <= 0:
        return overall, 0.0
    post = int(np.sum(raster.events[:, 0] >= start)) if raster.count else 0
    return overall, 100.0 * post / (raster.N * post_steps)


def chattering(estimates, dt, horizon):
    """Mean |xhat(t+dt) - xhat(t)| over the final half of the horizon."""
    est = np.asarray(estimates, dtype=float)
    start = int(round(0.5 * horizon / dt))
    tail = est[start:]
    if tail.shape[0] < 2:
        return 0.0
    return float(np.abs(np.diff(tail, axis=0)).mean())


def _run_streams(seed, run):
    """Independent, reproducible child streams for one run."""
    root = np.random.SeedSequence((seed, run))
    truth_ss, meas_ss, dec_ss, eta_ss = root.spawn(4)
    return truth_ss, meas_ss, dec_ss, eta_ss


def _simulate_run_trajectory(model, ctrl, cfg, run):
    # one generator drives both plant noises; the draw order per step is fixed
    truth_ss, _meas_ss, dec_ss, eta_ss = _run_streams(cfg.seed, run)
    rng = np.random.default_rng(truth_ss)
    plant = model
    if cfg.q_scale != 1.0 or cfg.r_scale != 1.0:
        # noise scaling stresses the plant only; estimators keep the nominal model
        plant = SystemModel(A=model.A, B=model.B, C=model.C,
                            Q=cfg.q_scale * model.Q, R=cfg.r_scale * model.R,
                            x0=model.x0)
    traj = simulate_trajectory(plant, ctrl, cfg.dt, cfg.steps, rng,
                               sqrt_dt_noise=(cfg.process_noise == "sqrt-dt"))
    return traj, dec_ss, eta_ss


@lru_cache(maxsize=16)
def _cached_schedules(variant, uncertainty, uncertainty_mode, dt, steps, delta, p0):
    """Per-process cache of the data-independent gain/sigma schedules."""
    model, _ = workbench_model(variant)
    model_est = inject_uncertainty(model, uncertainty, uncertainty_mode)
    P0 = default_p0(model.n_x, p0)
    return {kind: gain_schedule(model_est, kind, P0, dt, steps, delta)
            for kind in ("KF", "MSIF")}


def _run_single(cfg: ExperimentConfig, run: int):
    """All per-run work: one trajectory, every configured estimator."""
    model, ctrl = workbench_model(cfg.variant)
    model_est = inject_uncertainty(model, cfg.uncertainty, cfg.uncertainty_mode)
    traj, dec_ss, eta_ss = _simulate_run_trajectory(model, ctrl, cfg, run)
    P0 = default_p0(model.n_x, cfg.p0)
    xhat0 = model.x0
    schedules = _cached_schedules(cfg.variant, cfg.uncertainty,
                                  cfg.uncertainty_mode, cfg.dt, cfg.steps,
                                  cfg.delta, cfg.p0)
    z_checksum = hashlib.sha256(
        np.ascontiguousarray(traj.measurements).tobytes()).hexdigest()

    out = {}
    for name in cfg.estimators:
        if name in ("kf", "msif"):
            fcfg = FilterConfig(kind=name.upper(), delta=cfg.delta, dt=cfg.dt)
            run_out = run_filter(model_est, fcfg, traj, xhat0, P0,
                                 divergence_limit=cfg.divergence_limit,
                                 schedule=schedules[name.upper()])
            est, sig = run_out.estimates, run_out.sigmas
            diverged, dstep, raster = run_out.diverged, run_out.diverge_step, None
        else:
            gain_mode = "KF" if name == "snn-kf" else (
                "MSIF-cov" if cfg.gain_source == "covariance" else "MSIF-innov")
            decoder = build_decoder(model.n_x, cfg.neurons, dec_ss,
                                    sigma2=cfg.decoder_sigma2)
            eta_rng = np.random.default_rng(eta_ss) if cfg.eta_sigma > 0 else None
            snn = run_snn_estimator(
                model_est, decoder, traj, gain_mode=gain_mode, lam=cfg.lam,
                delta=cfg.delta, P0=P0, xhat0=xhat0, eta_sigma=cfg.eta_sigma,
                eta_rng=eta_rng, multi_spike=cfg.multi_spike,
                divergence_limit=cfg.divergence_limit,
                schedule=schedules["KF" if gain_mode == "KF" else "MSIF"])
            est, sig = snn.estimates, snn.sigmas
            diverged, dstep, raster = snn.diverged, snn.diverge_step, snn.raster
        err = traj.states - est
        out[name] = dict(err=err, sigmas=sig, diverged=diverged, dstep=dstep,
                         raster=raster, estimates=est)
    return dict(run=run, traj_states=traj.states, z_checksum=z_checksum,
                estimators=out)


def monte_carlo(cfg: ExperimentConfig):
    """Run the full batch and aggregate per-estimator metrics.

    Deterministic for a fixed config (including under workers > 1): per-run
    streams depend only on (seed, run index) and the reduction is done in run
    order.
    """
    cfg.validate()
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            per_run = list(pool.map(_run_single, [cfg] * cfg.runs, range(cfg.runs)))
    else:
        per_run = [_run_single(cfg, r) for r in range(cfg.runs)]

    times = np.arange(cfg.steps + 1) * cfg.dt
    results = {}
    for name in cfg.estimators:
        errs = np.stack([pr["estimators"][name]["err"] for pr in per_run])
        sigs = np.stack([pr["estimators"][name]["sigmas"] for pr in per_run])
        rmse = rmse_timeseries(errs)
        coverage = sigma_coverage(errs, sigs)
        chat = float(np.mean([
            chattering(pr["estimators"][name]["estimates"], cfg.dt, cfg.horizon)
            for pr in per_run]))
        dsteps = [pr["estimators"][name]["dstep"] for pr in per_run
                  if pr["estimators"][name]["diverged"]]
        res = EstimatorResult(
            name=name, rmse=rmse, avg_rmse=avg_rmse(rmse), coverage=coverage,
            chatter=chat, diverged_runs=len(dsteps), diverge_steps=dsteps,
            estimates0=per_run[0]["estimators"][name]["estimates"],
            sigmas0=per_run[0]["estimators"][name]["sigmas"].copy(),
        )
        if name in SNN_ESTIMATORS:
            acts = [spike_activity(pr["estimators"][name]["raster"],
                                   cfg.convergence_time) for pr in per_run]
            res.activity_overall = float(np.mean([a for a, _ in acts]))
            res.activity_post = float(np.mean([b for _, b in acts]))
            res.raster0 = per_run[0]["estimators"][name]["raster"]
        results[name] = res
    return ExperimentReport(config=cfg, times=times, results=results,
                            truth0=per_run[0]["traj_states"],
                            z_checksums=[pr["z_checksum"] for pr in per_run])


def neuron_sweep(cfg: ExperimentConfig, Ns):
    """Monte-Carlo per neuron count for the network estimators.

    Returns SweepRow entries (one per N per estimator) with averaged RMSE, the
    chattering metric and the count of diverged runs.
    """
    if not Ns:
        raise ValueError("Ns must not be empty")
    rows = []
    for N in Ns:
        sub = replace(cfg, neurons=int(N),
                      estimators=tuple(e for e in SNN_ESTIMATORS))
        report = monte_carlo(sub)
        for name in SNN_ESTIMATORS:
            res = report.results[name]
            rows.append(SweepRow(N=int(N), estimator=name,
                                 avg_rmse=res.avg_rmse, chatter=res.chatter,
                                 diverged_runs=res.diverged_runs))
    return rows
