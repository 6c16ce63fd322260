"""Command-line entry point and artifact emission.

Subcommands: ``run`` (Monte-Carlo batch), ``sweep`` (neuron-count sweep),
``plotdata`` (convert run artifacts to gnuplot-style .dat files).  Every
invocation writes into a fresh subdirectory of --out named from the config
hash and a timestamp, so reruns never clobber.  Exit codes: 0 success, 1
usage/config error, 2 completed with divergence flags.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import yaml

from . import __version__
from .harness import ExperimentConfig, monte_carlo, neuron_sweep

__all__ = ["ConfigError", "parse_config", "dump_config", "cmd_run",
           "cmd_sweep", "cmd_plotdata", "main"]

DEFAULT_SWEEP_NS = tuple(range(50, 451, 50))

_BOOL_KEYS = {"multi_spike"}
_INT_KEYS = {"runs", "seed", "neurons", "workers"}
_FLOAT_KEYS = {"horizon", "dt", "lambda", "delta", "uncertainty",
               "decoder_sigma2", "eta_sigma", "convergence_time",
               "divergence_limit", "p0", "q_scale", "r_scale"}
_STR_KEYS = {"uncertainty_mode", "variant", "gain_source", "process_noise"}
_LIST_KEYS = {"estimators"}
_ALL_KEYS = _BOOL_KEYS | _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | _LIST_KEYS

# config file key -> ExperimentConfig field
_RENAME = {"lambda": "lam"}


class ConfigError(ValueError):
    """Invalid configuration file or values; message names the offending key."""


def _coerce(key, value):
    if key in _BOOL_KEYS:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"key '{key}' must be a boolean, got {value!r}")
    if key in _INT_KEYS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"key '{key}' must be an integer, got {value!r}")
        return value
    if key in _FLOAT_KEYS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"key '{key}' must be a number, got {value!r}")
        return float(value)
    if key in _STR_KEYS:
        if not isinstance(value, str):
            raise ConfigError(f"key '{key}' must be a string, got {value!r}")
        return value
    # estimators: list or comma-separated string
    if isinstance(value, str):
        value = [tok.strip() for tok in value.split(",") if tok.strip()]
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ConfigError(f"key '{key}' must be a list of names, got {value!r}")
    return tuple(v.lower() for v in value)


def parse_config(path):
    """Load a YAML key/value config; unset keys take the workbench defaults.

    Unknown keys are errors, as are out-of-range values (the exception names
    the key).  An empty file yields the full default configuration.
    """
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of key: value pairs")
    kwargs = {}
    for key, value in raw.items():
        if key not in _ALL_KEYS:
            raise ConfigError(f"unknown config key '{key}'")
        kwargs[_RENAME.get(key, key)] = _coerce(key, value)
    cfg = ExperimentConfig(**kwargs)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def dump_config(cfg: ExperimentConfig):
    """YAML text that parse_config maps back to the same configuration."""
    d = asdict(cfg)
    d["lambda"] = d.pop("lam")
    d["estimators"] = list(d["estimators"])
    ordered = {k: d[k] for k in sorted(_ALL_KEYS)}
    return yaml.safe_dump(ordered, sort_keys=False)


def _config_hash(cfg):
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()[:12]


def _fmt(x):
    """Full-precision decimal so emitted values re-parse exactly."""
    return repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _new_out_dir(out_root, cfg):
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S.%f")
    d = Path(out_root) / f"{_config_hash(cfg)}-{stamp}"
    d.mkdir(parents=True, exist_ok=False)
    return d


def _state_cols(n_x):
    return [f"x{i + 1}" for i in range(n_x)]


def _write_manifest(out_dir, cfg, artifacts, t0):
    manifest = {
        "tool": "scnfilt",
        "version": __version__,
        "seed": cfg.seed,
        "config": yaml.safe_load(dump_config(cfg)),
        "artifacts": sorted(str(Path(a).name) for a in artifacts),
        "wall_clock_s": round(time.monotonic() - t0, 3),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def cmd_run(cfg: ExperimentConfig, out_root):
    """Execute the Monte-Carlo batch and write all artifacts.

    Returns (exit_code, run_dir): 0 on success, 2 if any estimator diverged
    (artifacts are still written).
    """
    t0 = time.monotonic()
    report = monte_carlo(cfg)
    out_dir = _new_out_dir(out_root, cfg)
    n_x = report.truth0.shape[1]
    cols = _state_cols(n_x)
    artifacts = []

    for name, res in report.results.items():
        tag = name.replace("-", "_")
        path = out_dir / f"rmse_{tag}.csv"
        _write_csv(path, ["t"] + [f"rmse_{c}" for c in cols],
                   ([_fmt(t)] + [_fmt(v) for v in row]
                    for t, row in zip(report.times, res.rmse)))
        artifacts.append(path)

        path = out_dir / f"states_{tag}.csv"
        _write_csv(path, ["t"] + cols + [f"xhat{i + 1}" for i in range(n_x)],
                   ([_fmt(t)] + [_fmt(v) for v in truth] + [_fmt(v) for v in est]
                    for t, truth, est in zip(report.times, report.truth0,
                                             res.estimates0)))
        artifacts.append(path)

        path = out_dir / f"sigma_{tag}.csv"
        err0 = report.truth0 - res.estimates0
        _write_csv(path, ["t"] + [f"err_{c}" for c in cols] + [f"bound_{c}" for c in cols],
                   ([_fmt(t)] + [_fmt(v) for v in e] + [_fmt(3.0 * s) for s in sig]
                    for t, e, sig in zip(report.times, err0, res.sigmas0)))
        artifacts.append(path)

        if res.raster0 is not None:
            path = out_dir / f"raster_{tag}.txt"
            res.raster0.save(path)
            artifacts.append(path)

    path = out_dir / "avg_rmse.csv"
    _write_csv(path, ["estimator", "state", "value"],
               ([name, cols[i], _fmt(res.avg_rmse[i])]
                for name, res in report.results.items() for i in range(n_x)))
    artifacts.append(path)

    path = out_dir / "coverage.csv"
    _write_csv(path, ["estimator", "state", "coverage"],
               ([name, cols[i], _fmt(res.coverage[i])]
                for name, res in report.results.items() for i in range(n_x)))
    artifacts.append(path)

    artifacts.append(_write_manifest(out_dir, cfg, artifacts, t0))
    return (2 if report.any_divergence else 0), out_dir


def cmd_sweep(cfg: ExperimentConfig, Ns, out_root):
    """Neuron-count sweep; writes sweep.csv."""
    if not Ns:
        raise ConfigError("sweep requires a nonempty neuron-count list")
    t0 = time.monotonic()
    rows = neuron_sweep(cfg, Ns)
    out_dir = _new_out_dir(out_root, cfg)
    n_x = rows[0].avg_rmse.shape[0]
    path = out_dir / "sweep.csv"
    _write_csv(path,
               ["N", "estimator"] + [f"avg_rmse_x{i + 1}" for i in range(n_x)]
               + ["chatter", "diverged_runs"],
               ([str(r.N), r.estimator] + [_fmt(v) for v in r.avg_rmse]
                + [_fmt(r.chatter), str(r.diverged_runs)] for r in rows))
    _write_manifest(out_dir, cfg, [path], t0)
    code = 2 if any(r.diverged_runs for r in rows) else 0
    return code, out_dir


def _read_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    return header, rows


def cmd_plotdata(run_dir, out_root=None):
    """Emit whitespace-separated plot files from a run directory.

    tracking_<est>.dat   t, truth..., estimate...
    envelope_<est>_<state>.dat   t, error, +3sigma, -3sigma
    raster_<est>.dat     t, neuron   (one line per spike event)
    """
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"run directory not found: {run_dir}")
    out_dir = Path(out_root) if out_root else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    state_files = sorted(run_dir.glob("states_*.csv"))
    if not state_files:
        raise FileNotFoundError("no states_*.csv artifacts in run directory")
    for path in state_files:
        tag = path.stem.removeprefix("states_")
        header, rows = _read_csv(path)
        dat = out_dir / f"tracking_{tag}.dat"
        with open(dat, "w") as fh:
            for row in rows:
                fh.write(" ".join(row) + "\n")
        written.append(dat)
    for path in sorted(run_dir.glob("sigma_*.csv")):
        tag = path.stem.removeprefix("sigma_")
        header, rows = _read_csv(path)
        n_x = (len(header) - 1) // 2
        for i in range(n_x):
            dat = out_dir / f"envelope_{tag}_x{i + 1}.dat"
            with open(dat, "w") as fh:
                for row in rows:
                    t, err, bound = row[0], row[1 + i], row[1 + n_x + i]
                    fh.write(f"{t} {err} {bound} -{bound}\n")
            written.append(dat)
    for path in sorted(run_dir.glob("raster_*.txt")):
        tag = path.stem.removeprefix("raster_")
        with open(path) as fh:
            header_line = fh.readline()
            dt = float(dict(tok.split("=") for tok in header_line[1:].split())["dt"])
            dat = out_dir / f"raster_{tag}.dat"
            with open(dat, "w") as out:
                for line in fh:
                    line = line.strip()
                    if line:
                        step, neuron = line.split(",")
                        out.write(f"{repr(int(step) * dt)} {neuron}\n")
        written.append(dat)
    return written


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_parser():
    parser = _Parser(prog="scnfilt",
                     description="State-estimation workbench: classical and "
                                 "spiking-network filters under Monte-Carlo.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="YAML config file (defaults apply if omitted)")
        p.add_argument("--out", default="runs", help="output root directory")
        p.add_argument("--seed", type=int, help="override the base RNG seed")

    p_run = sub.add_parser("run", help="Monte-Carlo batch with artifacts")
    add_common(p_run)
    p_sweep = sub.add_parser("sweep", help="neuron-count sweep for the network estimators")
    add_common(p_sweep)
    p_sweep.add_argument("--neurons", help="comma-separated neuron counts "
                                           "(default 50..450 step 50)")
    p_plot = sub.add_parser("plotdata", help="emit plot-ready .dat files from a run")
    p_plot.add_argument("--run-dir", required=True, help="directory written by 'run' or 'sweep'")
    p_plot.add_argument("--out", default=None, help="output directory (default: run dir)")
    return parser


def _load_cfg(args):
    cfg = parse_config(args.config) if args.config else ExperimentConfig().validate()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "run":
            code, out_dir = cmd_run(_load_cfg(args), args.out)
            print(out_dir)
            return code
        if args.command == "sweep":
            if args.neurons is not None:
                try:
                    Ns = [int(tok) for tok in args.neurons.split(",") if tok.strip()]
                except ValueError as exc:
                    raise ConfigError(f"invalid --neurons list: {args.neurons!r}") from exc
            else:
                Ns = list(DEFAULT_SWEEP_NS)
            code, out_dir = cmd_sweep(_load_cfg(args), Ns, args.out)
            print(out_dir)
            return code
        # plotdata
        written = cmd_plotdata(args.run_dir, args.out)
        for path in written:
            print(path)
        return 0
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
