"""Experiment driver: runs one configuration to a trace, compares two runs
through the area-between-curves score, and sweeps momentum parameters.

Output layout (all plain text):
  trace.csv       -- one row per recorded iteration; columns are
                     ``iteration``, then ``theta_0..`` (or ``theta_norm``
                     when the parameter is wider than ``theta_trace_limit``),
                     then the configured metrics in order.  Floats carry 17
                     significant digits so the file is bit-stable; the trace
                     contains nothing wallclock-dependent, which keeps equal
                     seeds byte-identical.
  summary.json    -- final metrics, config echo, seed, wallclock.
  checkpoint.json -- final optimizer state (see particlemle.state).
"""

from __future__ import annotations

import copy
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import ConfigError, ExperimentConfig, toyhm_target
from .diagnostics import RunRecord, abc, empirical_w1, param_error
from .extras import RmsPropState, SubsampleSchedule, subsampled_step
from .integrators import mpd_step, nc_step, pgd_step
from .state import BATCH_STREAM, METRIC_STREAM, init_state, make_generator, save_checkpoint

DIVERGENCE_LIMIT = 1e12
W1_SAMPLES = 1000


def _fmt(x: float) -> str:
    return f"{x:.17g}"


class _MetricEngine:
    def __init__(self, config: ExperimentConfig, model):
        self.names = config.metrics
        self.model = model
        self.theta_star = toyhm_target(config, model)
        self.metric_rng = make_generator(config.seed, METRIC_STREAM)
        if "param_error" in self.names and self.theta_star is None:
            raise ConfigError("metrics: param_error needs a model with a known MLE (toyhm)")

    def evaluate(self, state, cloud) -> dict:
        out = {}
        for name in self.names:
            if name == "param_error":
                out[name] = param_error(state.theta, self.theta_star)
            elif name == "w1":
                samples = self.model.sample(state.theta, W1_SAMPLES, self.metric_rng)
                out[name] = empirical_w1(samples, self.model.y)
            elif name == "loss":
                total = 0.0
                for row in cloud.X:
                    total += self.model.log_joint(state.theta, row)
                out[name] = -total / (cloud.n_particles * self.model.n_data)
        return out


def run_experiment(config: ExperimentConfig, outdir=None, threads: int = 1):
    """Run one experiment; returns (records, summary). Writes files if outdir."""
    t_start = time.perf_counter()
    model = config.build_model()
    params = config.momentum_params()
    variant = config.variant()
    state, cloud = init_state(
        model, config.particles, config.theta0(model), config.cloud_init(),
        config.seed, momentum_init=config.momentum_init(),
        eta_x=params.eta_x if params.eta_x > 0 else None,
    )
    metrics = _MetricEngine(config, model)

    precond = None
    if config.raw.get("preconditioner") is not None and "preconditioner" in config.raw:
        pre = config.raw["preconditioner"]
        precond = RmsPropState(model.d_theta, beta=pre.get("beta", 0.9),
                               eps=pre.get("eps", 1e-8))
        if variant.algorithm == "MPD_NC":
            raise ConfigError("preconditioner: not supported with mpd_nc")

    schedule = None
    batch_rng = None
    if config.raw.get("subsampling") is not None and "subsampling" in config.raw:
        sub = config.raw["subsampling"]
        if not model.factorizes:
            raise ConfigError("subsampling: model does not factorize over data")
        if variant.algorithm == "MPD_NC":
            raise ConfigError("subsampling: not supported with mpd_nc")
        schedule = SubsampleSchedule(batch_size=sub["batch_size"], n_data=model.n_data,
                                     catch_up=sub.get("catch_up", "single"))
        batch_rng = make_generator(config.seed, BATCH_STREAM)

    records = [RunRecord(0, state.theta.copy(), metrics.evaluate(state, cloud), 0.0)]
    diverged = False
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, config.iterations + 1):
            if schedule is not None:
                idx = schedule.draw_indices(batch_rng)
                state, cloud = subsampled_step(state, cloud, model, params, variant,
                                               idx, schedule, preconditioner=precond)
            elif variant.algorithm == "PGD":
                state, cloud = pgd_step(state, cloud, model, params.h_theta,
                                        params.h_x, preconditioner=precond,
                                        threads=threads)
            elif variant.algorithm == "MPD_EXP":
                state, cloud = mpd_step(state, cloud, model, params, variant,
                                        preconditioner=precond, threads=threads)
            else:
                state, cloud = nc_step(state, cloud, model, params,
                                       config.mu_theta, threads=threads)
            bad = (not np.isfinite(state.theta).all()
                   or np.abs(state.theta).max() > DIVERGENCE_LIMIT)
            if k % config.record_every == 0 or k == config.iterations or bad:
                vals = metrics.evaluate(state, cloud) if not bad else \
                    {name: float("nan") for name in metrics.names}
                records.append(RunRecord(k, state.theta.copy(), vals,
                                         time.perf_counter() - t_start))
            if bad:
                diverged = True
                break

    elapsed = time.perf_counter() - t_start
    summary = {
        "config": copy.deepcopy(config.raw),
        "seed": config.seed,
        "iterations_run": records[-1].iteration,
        "diverged": diverged,
        "final_theta_norm": float(np.linalg.norm(records[-1].theta))
        if np.isfinite(records[-1].theta).all() else None,
        "final_metrics": records[-1].metrics,
        "elapsed_seconds": elapsed,
    }
    if outdir is not None:
        os.makedirs(outdir, exist_ok=True)
        write_trace(os.path.join(outdir, "trace.csv"), records, config)
        with open(os.path.join(outdir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2)
        save_checkpoint(os.path.join(outdir, "checkpoint.json"), state, cloud,
                        records[-1].iteration)
    return records, summary


def trace_columns(config: ExperimentConfig, d_theta: int):
    if d_theta <= config.theta_trace_limit:
        theta_cols = [f"theta_{i}" for i in range(d_theta)]
    else:
        theta_cols = ["theta_norm"]
    return ["iteration"] + theta_cols + config.metrics


def write_trace(path, records, config: ExperimentConfig):
    d_theta = records[0].theta.size
    cols = trace_columns(config, d_theta)
    lines = [",".join(cols)]
    wide = d_theta > config.theta_trace_limit
    for rec in records:
        row = [str(rec.iteration)]
        if wide:
            row.append(_fmt(float(np.linalg.norm(rec.theta))))
        else:
            row.extend(_fmt(v) for v in rec.theta)
        row.extend(_fmt(rec.metrics[name]) for name in config.metrics)
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def metric_curve(records, name: str) -> np.ndarray:
    return np.array([rec.metrics[name] for rec in records])


def _check_comparable(cfg_a: ExperimentConfig, cfg_b: ExperimentConfig):
    if cfg_a.raw["model"] != cfg_b.raw["model"]:
        raise ConfigError("compare: configs must share the model")
    if cfg_a.iterations != cfg_b.iterations:
        raise ConfigError("compare: configs must share the iteration count")
    if cfg_a.record_every != cfg_b.record_every:
        raise ConfigError("compare: configs must share the record cadence")
    if cfg_a.seed != cfg_b.seed:
        raise ConfigError("compare: configs must share the seed")
    common = [m for m in cfg_a.metrics if m in cfg_b.metrics]
    if not common:
        raise ConfigError("compare: configs share no metrics")
    return common


def compare_experiments(cfg_a: ExperimentConfig, cfg_b: ExperimentConfig,
                        outdir=None, threads: int = 1, raw_weights: bool = False):
    """Run both configs and score ABC(curve_a - curve_b) per shared metric.

    Positive values mean the second run's curve sits below the first's, the
    usual orientation being (baseline, candidate).
    """
    common = _check_comparable(cfg_a, cfg_b)
    rec_a, sum_a = run_experiment(
        cfg_a, None if outdir is None else os.path.join(outdir, "a"), threads)
    rec_b, sum_b = run_experiment(
        cfg_b, None if outdir is None else os.path.join(outdir, "b"), threads)
    n = min(len(rec_a), len(rec_b))  # runs may stop early on divergence
    scores = {}
    for name in common:
        curve_a = metric_curve(rec_a[:n], name)
        curve_b = metric_curve(rec_b[:n], name)
        mask = np.isfinite(curve_a) & np.isfinite(curve_b)
        scores[name] = abc(curve_a[mask], curve_b[mask], raw_weights=raw_weights)
    report = {
        "abc": scores,
        "records_compared": int(n),
        "a": {"summary": sum_a},
        "b": {"summary": sum_b},
    }
    if outdir is not None:
        os.makedirs(outdir, exist_ok=True)
        with open(os.path.join(outdir, "abc.csv"), "w") as fh:
            fh.write("metric,abc\n")
            for name, val in scores.items():
                fh.write(f"{name},{_fmt(val)}\n")
        with open(os.path.join(outdir, "summary.json"), "w") as fh:
            json.dump(report, fh, indent=2)
    return report


def sweep_experiments(base: ExperimentConfig, baseline: ExperimentConfig,
                      gamma_grid, eta_grid, outdir=None, threads: int = 1,
                      metric: str = "param_error"):
    """ABC(baseline vs momentum run) over a (gamma, eta) grid.

    The grid value replaces (gamma_theta, gamma_x) and (eta_theta, eta_x) of
    the base config; the baseline (usually PGD) runs once and is shared by
    every cell.  Cells are independent and individually seeded, so the pool
    size never changes results.
    """
    gamma_grid = list(gamma_grid)
    eta_grid = list(eta_grid)
    if not gamma_grid or not eta_grid:
        raise ConfigError("sweep: grids must be nonempty")
    rec_base, _ = run_experiment(baseline, None, 1)
    curve_base = metric_curve(rec_base, metric)

    def cell(ge):
        gamma, eta = ge
        raw = copy.deepcopy(base.raw)
        raw["params"].update({"gamma_theta": gamma, "gamma_x": gamma,
                              "eta_theta": eta, "eta_x": eta})
        rec, _ = run_experiment(ExperimentConfig(raw), None, 1)
        n = min(len(rec), len(curve_base))
        curve = metric_curve(rec[:n], metric)
        mask = np.isfinite(curve) & np.isfinite(curve_base[:n])
        return abc(curve_base[:n][mask], curve[mask])

    cells = [(g, e) for g in gamma_grid for e in eta_grid]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            values = list(ex.map(cell, cells))
    else:
        values = [cell(c) for c in cells]
    matrix = np.array(values).reshape(len(gamma_grid), len(eta_grid))

    if outdir is not None:
        os.makedirs(outdir, exist_ok=True)
        with open(os.path.join(outdir, "abc.csv"), "w") as fh:
            fh.write("gamma\\eta," + ",".join(_fmt(e) for e in eta_grid) + "\n")
            for g, row in zip(gamma_grid, matrix):
                fh.write(_fmt(g) + "," + ",".join(_fmt(v) for v in row) + "\n")
        with open(os.path.join(outdir, "summary.json"), "w") as fh:
            json.dump({
                "metric": metric,
                "gamma_grid": gamma_grid,
                "eta_grid": eta_grid,
                "abc": matrix.tolist(),
            }, fh, indent=2)
    return matrix
