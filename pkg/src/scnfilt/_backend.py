"""Network run-loop backends: compiled kernel with a pure-numpy fallback.

Both backends execute the identical sequence of floating-point operations
(every reduction is a BLAS dgemv, elementwise passes share the same order),
so their outputs are bit-identical.  Selection happens at import: the Cython
kernel when available, else the numpy loop.  Override with the environment
variable SCNFILT_BACKEND=python|compiled or the ``backend=`` argument.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from . import _kernel
except ImportError:  # extension not built; numpy fallback only
    _kernel = None

HAVE_KERNEL = _kernel is not None


def available_backends():
    return ("compiled", "python") if HAVE_KERNEL else ("python",)


def default_backend():
    forced = os.environ.get("SCNFILT_BACKEND", "").strip().lower()
    if forced:
        if forced not in ("python", "compiled"):
            raise ValueError(f"SCNFILT_BACKEND must be 'python' or 'compiled', got {forced!r}")
        if forced == "compiled" and not HAVE_KERNEL:
            raise RuntimeError("SCNFILT_BACKEND=compiled but the kernel extension is not built")
        return forced
    return "compiled" if HAVE_KERNEL else "python"


def run_network_python(D, Alam, B, C, Cpinv, Omega_f, T, u_seq, z_seq, K_seq,
                       innov_mode, delta, lam, dt, r0, eta, multi_spike,
                       divergence_limit):
    """Reference implementation of the network run loop.

    Per step: decode, innovation, gain (scheduled or innovation-driven),
    membrane drift D^T(Alam xdec + B u + K innov) - lam v scaled by dt, spike
    resolution on the post-drift potentials, rate decay plus unit impulses.
    Returns (estimates, spike_steps, spike_neurons, diverge_step).
    """
    steps = u_seq.shape[0]
    N = D.shape[1]
    nl = -lam
    v = np.zeros(N)
    r = r0.copy()
    est = np.empty((steps + 1, D.shape[0]))
    est[0] = D @ r
    spike_steps = []
    spike_neurons = []
    diverge_step = -1
    for k in range(steps):
        xdec = D @ r
        zhat = C @ xdec
        innov = z_seq[k] - zhat
        if innov_mode:
            sat = np.minimum(np.abs(innov) / delta, 1.0)
            K = Cpinv * sat[np.newaxis, :]
        else:
            K = K_seq[k]
        corr = K @ innov
        pred = Alam @ xdec
        bu = B @ u_seq[k]
        w = pred + bu + corr
        g = D.T @ w
        drive = g + nl * v
        v = v + dt * drive
        if eta is not None:
            v = v + eta[k]
        if not np.all(np.isfinite(v)):
            diverge_step = k
            break
        r = r + dt * (nl * r)
        if multi_spike:
            fired = v > T
            if fired.any():
                ff = fired.astype(float)
                v = v + Omega_f @ ff
                r = r + ff
                idx = np.nonzero(fired)[0]
                spike_steps.extend([k] * len(idx))
                spike_neurons.extend(idx.tolist())
        else:
            i = int(np.argmax(v - T))
            if v[i] > T[i]:
                v = v + Omega_f[:, i]
                r[i] += 1.0
                spike_steps.append(k)
                spike_neurons.append(i)
        est[k + 1] = D @ r
        peak = np.abs(est[k + 1]).max()
        if not np.isfinite(peak) or peak > divergence_limit:
            diverge_step = k
            break
    return (est, np.asarray(spike_steps, dtype=np.int64),
            np.asarray(spike_neurons, dtype=np.int64), diverge_step)


def run_network(D, Alam, B, C, Cpinv, Omega_f, T, u_seq, z_seq, K_seq, delta,
                lam, dt, r0, eta, multi_spike, divergence_limit, backend=None):
    """Dispatch one network run to the selected backend."""
    name = backend if backend is not None else default_backend()
    innov_mode = K_seq is None
    if innov_mode:
        K_seq = np.zeros((1, D.shape[0], C.shape[0]))
    if name == "compiled":
        if not HAVE_KERNEL:
            raise RuntimeError("compiled backend requested but the kernel is not built")
        eta_arr = eta if eta is not None else np.empty((0, D.shape[1]))
        est, ss, sn, dstep = _kernel.run_network(
            D, Alam, B, C, Cpinv, Omega_f, T, u_seq, z_seq, K_seq,
            int(innov_mode), float(delta), float(lam), float(dt), r0, eta_arr,
            int(bool(multi_spike)), float(divergence_limit))
    elif name == "python":
        est, ss, sn, dstep = run_network_python(
            D, Alam, B, C, Cpinv, Omega_f, T, u_seq, z_seq, K_seq, innov_mode,
            delta, lam, dt, r0, eta, multi_spike, divergence_limit)
    else:
        raise ValueError(f"unknown backend {name!r}")
    return est, ss, sn, dstep, name
