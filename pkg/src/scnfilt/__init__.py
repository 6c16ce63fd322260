"""scnfilt: linear state estimation with classical and spike-coding-network filters.

Continuous-time Kalman and sliding-innovation filters, their recurrent-LIF
network counterparts with analytically derived synaptic weights, and a
Monte-Carlo harness for accuracy, robustness and neuron-count studies.
"""
__version__ = "0.1.0"

from ._backend import HAVE_KERNEL, available_backends, default_backend
from .filters import (FilterConfig, FilterState, gain_schedule, innovation_cov,
                      kf_gain, msif_gain, pseudo_inverse, riccati_rhs,
                      run_filter, saturate, sif_gain)
from .harness import (ExperimentConfig, ExperimentReport, avg_rmse,
                      inject_uncertainty, monte_carlo, neuron_sweep,
                      rmse_timeseries, sigma_coverage, spike_activity)
from .network import (DecoderMatrix, NetworkSpec, NetworkState, SpikeRaster,
                      build_decoder, build_weights, decode, fires,
                      initial_rates, run_snn_estimator, step_network,
                      thresholds)
from .system import (Controller, SystemModel, Trajectory, control_input,
                     measure, observability_rank, simulate_trajectory,
                     step_truth, workbench_model)
