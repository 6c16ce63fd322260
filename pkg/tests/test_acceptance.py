"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Heavy Monte-Carlo batches are session fixtures shared with the unit suite.
Reference values for the accuracy criteria come from the published workbench
results; tolerances are fixed here, not tuned at runtime.
"""
import time
from dataclasses import replace

import numpy as np
import pytest

from scnfilt.cli import cmd_run, parse_config
from scnfilt.filters import (innovation_cov, kf_gain, msif_gain, riccati_rhs,
                             sif_gain)
from scnfilt.harness import ExperimentConfig, default_p0, neuron_sweep
from scnfilt.network import build_weights, measurement_weights
from scnfilt.system import workbench_model

import oracles

# published workbench averages: estimator -> (x1, x2)
NOMINAL_ANCHORS = {
    "kf": (0.0224, 0.0114),
    "msif": (0.0161, 0.0031),
    "snn-kf": (0.0248, 0.0183),
    "snn-msif": (0.0142, 0.0197),
}
ACCURACY_FACTOR = 3.0


def _verdict(name, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return ok


def test_criterion_1_formula_oracles():
    """Gain/covariance/weight formulas match brute-force oracles to 1e-12."""
    rng = np.random.default_rng(2024)
    t0 = time.monotonic()
    worst = 0.0
    for _ in range(100):
        n_x = int(rng.integers(1, 5))
        n_z = int(rng.integers(1, min(n_x, 3) + 1))
        P = rng.standard_normal((n_x, n_x))
        P = P @ P.T  # symmetric PSD
        C = rng.standard_normal((n_z, n_x))
        M = rng.standard_normal((n_z, n_z))
        R = M @ M.T + n_z * np.eye(n_z)  # well conditioned
        Q = np.eye(n_x) * rng.random()
        A = rng.standard_normal((n_x, n_x))
        delta = 0.5 * float(rng.random()) + 1e-3
        innov = rng.standard_normal(n_z)

        worst = max(worst, np.abs(
            kf_gain(P, C, R) - oracles.kf_gain_oracle(P, C, R)).max())
        worst = max(worst, np.abs(
            riccati_rhs(P, A, C, Q, R)
            - oracles.riccati_rhs_oracle(P, A, C, Q, R)).max())
        worst = max(worst, np.abs(
            innovation_cov(P, C, R)
            - oracles.innovation_cov_oracle(P, C, R)).max())
        worst = max(worst, np.abs(
            sif_gain(innov, C, delta)
            - oracles.sif_gain_oracle(innov, C, delta)).max())
        Pzz = oracles.innovation_cov_oracle(P, C, R)
        worst = max(worst, np.abs(
            msif_gain(Pzz, C, delta)
            - oracles.msif_gain_oracle(Pzz, C, delta)).max())

        # weight construction on a random instance
        from scnfilt.system import SystemModel
        N = int(rng.integers(1, 40))
        D = rng.standard_normal((n_x, N))
        B = rng.standard_normal((n_x, 1))
        lam = float(rng.random())
        model = SystemModel(A=A, B=B, C=C, Q=Q, R=R, x0=np.zeros(n_x))
        spec = build_weights(model, D, lam=lam, gain_mode="KF", P0=P)
        K = oracles.kf_gain_oracle(P, C, R)
        want = oracles.weights_oracle(A, B, C, D, lam, K)
        for gotm, wantm in ((spec.F, want["F"]), (spec.Omega_s, want["Omega_s"]),
                            (spec.Omega_f, want["Omega_f"]),
                            (spec.Omega_k, want["Omega_k"]),
                            (spec.F_k, want["F_k"]), (spec.T, want["T"])):
            worst = max(worst, np.abs(np.asarray(gotm) - wantm).max())
        Ok, Fk = measurement_weights(D, K, C)
        worst = max(worst, np.abs(Ok - want["Omega_k"]).max())
        worst = max(worst, np.abs(Fk - want["F_k"]).max())
    elapsed = time.monotonic() - t0
    ok = worst < 1e-12 and elapsed < 5.0
    assert _verdict("criterion 1 formula oracles", ok,
                    f"max |deviation| {worst:.2e} (tol 1e-12), {elapsed:.2f}s (< 5s)")


def test_criterion_2_firing_rule_identity():
    """Threshold test agrees exactly with the coding-error-reduction rule."""
    rng = np.random.default_rng(7)
    t0 = time.monotonic()
    draws = 0
    mismatches = 0
    for _ in range(50):
        n_x = int(rng.integers(1, 6))
        N = int(rng.integers(1, 50))
        D = rng.standard_normal((n_x, N))
        x = rng.standard_normal((400, n_x)) * 3.0
        r = rng.random((400, N))
        resid = x - r @ D.T                       # (400, n_x)
        v = resid @ D                             # v_ij = D_j . resid_i
        T = 0.5 * np.einsum("ij,ij->j", D, D)
        threshold_fires = v > T[np.newaxis, :]
        before = np.sum(resid ** 2, axis=1)[:, np.newaxis]
        after = (np.sum(resid ** 2, axis=1)[:, np.newaxis]
                 - 2.0 * v + np.sum(D * D, axis=0)[np.newaxis, :])
        error_reduces = before > after
        mismatches += int(np.sum(threshold_fires != error_reduces))
        draws += threshold_fires.size
    elapsed = time.monotonic() - t0
    ok = mismatches == 0 and draws >= 10_000 and elapsed < 5.0
    assert _verdict("criterion 2 firing-rule identity", ok,
                    f"{draws} draws, {mismatches} disagreements, {elapsed:.2f}s (< 5s)")


def test_criterion_3_riccati_convergence():
    """Forward Euler covariance flow settles below 1e-6 within the horizon."""
    model, _ = workbench_model()
    P = default_p0(2)
    dt, steps = 0.01, 1000
    res_min = np.inf
    sig = [np.sqrt(np.diag(P))]
    for _ in range(steps):
        P = P + dt * riccati_rhs(P, model.A, model.C, model.Q, model.R)
        P = 0.5 * (P + P.T)
        res_min = min(res_min, np.abs(
            riccati_rhs(P, model.A, model.C, model.Q, model.R)).max())
        sig.append(np.sqrt(np.diag(P)))
    sig = np.array(sig)
    # complex closed-loop eigenvalues make the approach a slow spiral, so
    # "nonincreasing" is asserted at envelope precision (1e-7 per step)
    worst_rise = float(np.diff(sig[100:], axis=0).max())
    ok = res_min < 1e-6 and worst_rise <= 1e-7
    assert _verdict("criterion 3 Riccati convergence", ok,
                    f"min ||Pdot||_inf {res_min:.3e} (< 1e-6 by t=10), "
                    f"max sigma rise after 1s {worst_rise:.2e} (<= 1e-7)")


def test_criterion_4_nominal_accuracy(nominal_batch):
    """100-run averages within a factor of 3 of the published workbench table."""
    report, batch_seconds = nominal_batch
    details = []
    ok = True
    for name, anchor in NOMINAL_ANCHORS.items():
        got = report.results[name].avg_rmse
        for i, ref in enumerate(anchor):
            ratio = got[i] / ref
            ok &= (1.0 / ACCURACY_FACTOR) <= ratio <= ACCURACY_FACTOR
            details.append(f"{name}.x{i + 1}={got[i]:.4f} ({ratio:.2f}x)")
    ok &= batch_seconds < 120.0
    details.append(f"batch {batch_seconds:.1f}s (< 120s)")
    assert _verdict("criterion 4 nominal accuracy", ok, "; ".join(details))


def test_criterion_5_three_sigma_containment(nominal_report):
    """Nominal-case coverage: classical >= 0.99, network >= 0.95."""
    res = nominal_report.results
    parts = []
    ok = True
    for name, floor in (("kf", 0.99), ("msif", 0.99),
                        ("snn-kf", 0.95), ("snn-msif", 0.95)):
        cov = res[name].coverage
        ok &= bool(np.all(cov >= floor))
        parts.append(f"{name}={np.round(cov, 4)} (>= {floor})")
    assert _verdict("criterion 5 3-sigma containment", ok, "; ".join(parts))


def test_criterion_6_robustness_ordering(uncertain_report):
    """10% dynamics error: saturated-gain filters dominate on the blind state."""
    res = uncertain_report.results
    kf2 = res["kf"].avg_rmse[1]
    msif2 = res["msif"].avg_rmse[1]
    skf2 = res["snn-kf"].avg_rmse[1]
    smsif2 = res["snn-msif"].avg_rmse[1]
    ok = (msif2 < 0.25 * kf2) and (smsif2 < 0.5 * skf2)
    assert _verdict("criterion 6 robustness ordering", ok,
                    f"msif x2 {msif2:.4f} vs 0.25*kf {0.25 * kf2:.4f}; "
                    f"snn-msif x2 {smsif2:.4f} vs 0.5*snn-kf {0.5 * skf2:.4f}")


def test_criterion_7_spike_sparsity(nominal_report):
    """Network activity stays far below the possible-spike budget."""
    res = nominal_report.results["snn-msif"]
    ok = res.activity_overall <= 6.0 and res.activity_post <= 5.0
    assert _verdict("criterion 7 spike sparsity", ok,
                    f"overall {res.activity_overall:.3f}% (<= 6%), "
                    f"post-5s {res.activity_post:.3f}% (<= 5%)")


@pytest.fixture(scope="module")
def sweep_rows():
    cfg = ExperimentConfig(runs=25, seed=0).validate()
    return {(r.N, r.estimator): r
            for r in neuron_sweep(cfg, list(range(50, 451, 50)))}


def test_criterion_8a_neuron_loss_divergence(sweep_rows):
    """N=50 region: network-KF flagged divergent on most runs, network-MSIF
    finite with lower RMSE.

    Known red: under the unit-impulse spike convention with exact-decode
    initialization (both forced by the accuracy and containment criteria),
    the estimator degrades gracefully at N=50 instead of destabilizing, and
    no tested reading of the step dynamics (fire-all resolution, dt-scaled
    spikes, membrane noise) produces this asymmetry without breaking
    criteria 4/5/7.  See the project decision log for the full experiment
    matrix.
    """
    runs = 25
    kf = sweep_rows[(50, "snn-kf")]
    msif = sweep_rows[(50, "snn-msif")]
    finite = bool(np.all(np.isfinite(msif.avg_rmse)))
    ok = (kf.diverged_runs > runs / 2
          and finite
          and msif.avg_rmse.max() < kf.avg_rmse.max())
    assert _verdict(
        "criterion 8a N=50 divergence asymmetry", ok,
        f"snn-kf flagged {kf.diverged_runs}/{runs} (need > {runs // 2}); "
        f"snn-msif finite={finite}, rmse {msif.avg_rmse} vs snn-kf {kf.avg_rmse}")


def test_criterion_8b_neuron_range_stability(sweep_rows):
    """N in 100..300 keeps averaged RMSE within 3x of the N=300 values."""
    base = {e: sweep_rows[(300, e)].avg_rmse for e in ("snn-kf", "snn-msif")}
    ok = True
    worst = 0.0
    for N in (100, 150, 200, 250, 300):
        for e in ("snn-kf", "snn-msif"):
            ratio = float((sweep_rows[(N, e)].avg_rmse / base[e]).max())
            worst = max(worst, ratio)
            ok &= ratio <= 3.0
    assert _verdict("criterion 8b mid-range stability", ok,
                    f"worst RMSE ratio vs N=300: {worst:.2f} (<= 3)")


def test_criterion_8c_chattering_growth(sweep_rows):
    """N=450 chattering at least doubles relative to N=300.

    Known red: with unit-impulse spikes and one-spike-per-step resolution the
    per-spike decode jump shrinks as columns densify, so the chattering
    metric is flat-to-decreasing in N (measured ratio ~0.7).  Fire-all
    resolution does grow chatter with N but saturates the spike budget and
    destroys the accuracy criteria at every N.  See the decision log.
    """
    ok = True
    parts = []
    for e in ("snn-kf", "snn-msif"):
        ratio = sweep_rows[(450, e)].chatter / sweep_rows[(300, e)].chatter
        ok &= ratio >= 2.0
        parts.append(f"{e} 450/300 chatter ratio {ratio:.2f} (need >= 2)")
    assert _verdict("criterion 8c chattering growth", ok, "; ".join(parts))


def test_criterion_9_determinism(tmp_path):
    """Byte-identical CSV artifacts on repeat, including parallel execution."""
    cfg_text = "runs: 4\nneurons: 60\nhorizon: 3.0\nseed: 17\nworkers: 2\n"
    cfg_file = tmp_path / "cfg.yaml"
    cfg_file.write_text(cfg_text)
    cfg = parse_config(cfg_file)
    _, dir1 = cmd_run(cfg, tmp_path / "a")
    _, dir2 = cmd_run(cfg, tmp_path / "b")
    serial = replace(cfg, workers=1)
    _, dir3 = cmd_run(serial, tmp_path / "c")
    names = sorted(p.name for p in dir1.iterdir() if p.suffix in (".csv", ".txt"))
    identical = all((dir1 / n).read_bytes() == (dir2 / n).read_bytes() for n in names)
    sched_free = all((dir1 / n).read_bytes() == (dir3 / n).read_bytes() for n in names)
    ok = identical and sched_free and len(names) >= 10
    assert _verdict("criterion 9 determinism", ok,
                    f"{len(names)} artifacts byte-identical across reruns "
                    f"(parallel repeat: {identical}, parallel==serial: {sched_free})")
