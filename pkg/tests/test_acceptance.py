"""Acceptance gate: every shipped claim at its stated tolerance.

Each test evaluates one criterion, records a [PASS]/[FAIL] line (shown in
the terminal summary; add ``-s`` to stream them live), and asserts.  The
heavy multi-seed batches are shared through module-scoped fixtures.  The
whole module takes roughly 15 minutes single-threaded.
"""

import copy
import time

import numpy as np
import pytest

from particlemle.config import ExperimentConfig, preset_config, preset_pair
from particlemle.diagnostics import sign_changes_after_first_crossing
from particlemle.models import toyhm_mle
from particlemle.diagnostics import abc
from particlemle.runner import metric_curve, run_experiment
from particlemle.validate import (check_free_energy_sandwich,
                                  check_moment_flow_descent,
                                  check_toyhm_hessian_eigenvalues,
                                  check_toyhm_lipschitz_spectral,
                                  check_transition_cholesky,
                                  check_transition_moments_mc, run_validation)

N_SEEDS = 10
CONVERGENCE_TOL = 0.5
DIVERGENCE_BAR = 1e6


def _theta_series(records):
    return np.array([rec.theta[0] for rec in records])


@pytest.fixture(scope="module")
def critical_runs():
    """Ten seeded runs of the critically damped preset (shared by 1 and 2);
    seed 0 is timed for the wallclock bound."""
    cfg = preset_config("fig1a-critical")
    out = []
    elapsed0 = None
    for seed in range(N_SEEDS):
        t0 = time.perf_counter()
        records, _ = run_experiment(cfg.with_overrides(seed=seed))
        if seed == 0:
            elapsed0 = time.perf_counter() - t0
        out.append(records)
    theta_star = toyhm_mle(cfg.build_model().y)
    return {"records": out, "elapsed_seed0": elapsed0, "theta_star": theta_star}


@pytest.fixture(scope="module")
def pgd_runs():
    cfg = preset_config("pgd-baseline")
    return [run_experiment(cfg.with_overrides(seed=seed))[0] for seed in range(N_SEEDS)]


@pytest.fixture(scope="module")
def underdamped_runs():
    cfg = preset_config("fig1a-underdamped")
    return [run_experiment(cfg.with_overrides(seed=seed))[0] for seed in range(N_SEEDS)]


def test_criterion_01_toyhm_convergence(critical_runs, pgd_runs, record_acceptance):
    """MPD (critical preset) reaches |theta - mean(y)| < 0.5 within 1e4
    iterations in < 60 s; PGD converges too; ABC(PGD vs MPD) > 0 over 10 seeds."""
    mpd_first = [metric_curve(r, "param_error") for r in critical_runs["records"]]
    mpd_converged = all(curve.min() < CONVERGENCE_TOL and curve[-1] < CONVERGENCE_TOL
                        for curve in mpd_first)
    pgd_curves = [metric_curve(r, "param_error") for r in pgd_runs]
    pgd_converged = all(curve.min() < CONVERGENCE_TOL for curve in pgd_curves)
    scores = [abc(p, m) for p, m in zip(pgd_curves, mpd_first)]
    mean_abc = float(np.mean(scores))
    elapsed = critical_runs["elapsed_seed0"]
    passed = mpd_converged and pgd_converged and mean_abc > 0.0 and elapsed < 60.0
    record_acceptance(
        f"[{'PASS' if passed else 'FAIL'}] criterion 1 (ToyHM convergence): "
        f"MPD<0.5 all seeds={mpd_converged}, PGD converged={pgd_converged}, "
        f"mean ABC={mean_abc:.3f} (>0), seed-0 runtime {elapsed:.1f}s (<60s)")
    assert mpd_converged
    assert pgd_converged
    assert mean_abc > 0.0
    assert elapsed < 60.0


def test_criterion_02_damping_regimes(critical_runs, underdamped_runs, record_acceptance):
    """Underdamped traces oscillate past the target; critically damped traces
    do not (sign changes counted with a band of 0.1% of the initial gap)."""
    theta_star = critical_runs["theta_star"]
    votes_under = 0
    votes_crit = 0
    for records in underdamped_runs:
        series = _theta_series(records)
        hyst = 1e-3 * abs(series[0] - theta_star)
        if sign_changes_after_first_crossing(series, theta_star, hyst) >= 1:
            votes_under += 1
    for records in critical_runs["records"]:
        series = _theta_series(records)
        hyst = 1e-3 * abs(series[0] - theta_star)
        if sign_changes_after_first_crossing(series, theta_star, hyst) == 0:
            votes_crit += 1
    passed = votes_under > N_SEEDS // 2 and votes_crit > N_SEEDS // 2
    record_acceptance(
        f"[{'PASS' if passed else 'FAIL'}] criterion 2 (damping regimes): "
        f"underdamped oscillates {votes_under}/10, critical monotone {votes_crit}/10 "
        f"(majority vote)")
    assert votes_under > N_SEEDS // 2
    assert votes_crit > N_SEEDS // 2


def test_criterion_03_gradient_correction_stability(record_acceptance):
    """At 1.01x the fig1c step sizes, FULL correction stays bounded where the
    uncorrected variant blows past |theta| = 1e6 within 1e4 steps."""
    (_, cfg_none), (_, cfg_full) = preset_pair("fig1c-correction")

    def scaled(cfg):
        raw = copy.deepcopy(cfg.raw)
        raw["params"]["h_theta"] *= 1.01
        raw["params"]["h_x"] *= 1.01
        return ExperimentConfig(raw)

    def diverged_count(cfg):
        count = 0
        for seed in range(N_SEEDS):
            records, _ = run_experiment(scaled(cfg).with_overrides(seed=seed))
            series = _theta_series(records)
            if (not np.isfinite(series).all()) or np.nanmax(np.abs(series)) > DIVERGENCE_BAR:
                count += 1
        return count

    none_diverged = diverged_count(cfg_none)
    full_bounded = N_SEEDS - diverged_count(cfg_full)
    passed = full_bounded >= 8 and none_diverged >= 5
    record_acceptance(
        f"[{'PASS' if passed else 'FAIL'}] criterion 3 (gradient correction): "
        f"FULL bounded {full_bounded}/10 (need >=8), "
        f"NONE diverged {none_diverged}/10 (need >=5) at 1.01x steps")
    assert full_bounded >= 8
    assert none_diverged >= 5


def test_criterion_04_transition_kernel_exactness(record_acceptance):
    """12 grid points: 1e5 one-step draws within 5 SE of the analytic and
    EM-oracle moments; Cholesky reconstruction within 1e-10; under 30 s."""
    t0 = time.perf_counter()
    moments = check_transition_moments_mc()
    chol = check_transition_cholesky()
    elapsed = time.perf_counter() - t0
    passed = moments["passed"] and chol["passed"] and elapsed < 30.0
    record_acceptance(
        f"[{'PASS' if passed else 'FAIL'}] criterion 4 (transition kernel): "
        f"worst gap {moments['observed']:.2f} SE (<=5), "
        f"cholesky {chol['observed']:.2e} (<=1e-10), runtime {elapsed:.1f}s (<30s)")
    assert moments["passed"], moments
    assert chol["passed"], chol
    assert elapsed < 30.0


def test_criterion_05_toyhm_analytics(record_acceptance):
    eigs = check_toyhm_hessian_eigenvalues()
    lips = check_toyhm_lipschitz_spectral()
    passed = eigs["passed"] and lips["passed"]
    record_acceptance(
        f"[{'PASS' if passed else 'FAIL'}] criterion 5 (ToyHM analytics): "
        f"eigenvalue gap {eigs['observed']:.2e} (<=1e-8), "
        f"Lipschitz gap {lips['observed']:.2e} (<=1e-8)")
    assert eigs["passed"], eigs
    assert lips["passed"], lips


def test_criterion_06_continuous_time_theory(record_acceptance):
    """Gaussian moment flow on ToyHM (d_x=5): free energy non-increasing at
    every step (slack 1e-12) and tail-linear log decay with R^2 > 0.99."""
    result = check_moment_flow_descent()
    obs = result["observed"]
    record_acceptance(
        f"[{'PASS' if result['passed'] else 'FAIL'}] criterion 6 (moment flow): "
        f"max increment {obs['max_increment']:.2e} (<=1e-12), "
        f"tail R^2 {obs['tail_r2']:.4f} (>0.99), slope {obs['tail_slope']:.3f} (<0)")
    assert result["passed"], result


def test_criterion_07_free_energy_sandwich(record_acceptance):
    result = check_free_energy_sandwich(cases=1000)
    record_acceptance(
        f"[{'PASS' if result['passed'] else 'FAIL'}] criterion 7 (sandwich): "
        f"worst violation {result['observed']:.2e} (<=1e-10) over 1000 tuples")
    assert result["passed"], result


def test_criterion_08_mog_density_estimation(record_acceptance):
    """Mixture-of-Gaussians decoder fit: over 10 seeds the mean W1 drops by
    at least half for both algorithms and MPD ends at or below PGD."""
    (_, cfg_pgd), (_, cfg_mpd) = preset_pair("mog-density")
    finals = {}
    inits = {}
    for name, cfg in (("pgd", cfg_pgd), ("mpd", cfg_mpd)):
        first, last = [], []
        for seed in range(N_SEEDS):
            records, _ = run_experiment(cfg.with_overrides(seed=seed))
            curve = metric_curve(records, "w1")
            first.append(curve[0])
            last.append(curve[-1])
        inits[name] = float(np.mean(first))
        finals[name] = float(np.mean(last))
    drop_pgd = 1.0 - finals["pgd"] / inits["pgd"]
    drop_mpd = 1.0 - finals["mpd"] / inits["mpd"]
    ordering = finals["mpd"] <= finals["pgd"]
    passed = drop_pgd >= 0.5 and drop_mpd >= 0.5 and ordering
    record_acceptance(
        f"[{'PASS' if passed else 'FAIL'}] criterion 8 (MoG density): "
        f"mean W1 drop PGD {drop_pgd:.0%}, MPD {drop_mpd:.0%} (>=50%); "
        f"final MPD {finals['mpd']:.3f} <= PGD {finals['pgd']:.3f}: {ordering}")
    assert drop_pgd >= 0.5
    assert drop_mpd >= 0.5
    assert ordering


def test_criterion_09_byte_identical_traces(tmp_path, record_acceptance):
    """The critical preset run twice with one seed gives byte-identical
    trace.csv, including 1 vs 8 worker threads."""
    cfg = preset_config("fig1a-critical").with_overrides(seed=4)
    run_experiment(cfg, tmp_path / "a", threads=1)
    run_experiment(cfg, tmp_path / "b", threads=1)
    run_experiment(cfg, tmp_path / "c", threads=8)
    bytes_a = (tmp_path / "a" / "trace.csv").read_bytes()
    same_repeat = bytes_a == (tmp_path / "b" / "trace.csv").read_bytes()
    same_threads = bytes_a == (tmp_path / "c" / "trace.csv").read_bytes()
    passed = same_repeat and same_threads
    record_acceptance(
        f"[{'PASS' if passed else 'FAIL'}] criterion 9 (determinism): "
        f"repeat identical={same_repeat}, 1-vs-8-thread identical={same_threads}")
    assert same_repeat
    assert same_threads


def test_criterion_10_validate_suite(record_acceptance):
    report = run_validation()
    failed = [c["name"] for c in report["checks"] if not c["passed"]]
    passed = report["all_passed"] and report["elapsed_seconds"] < 300.0
    record_acceptance(
        f"[{'PASS' if passed else 'FAIL'}] criterion 10 (validate): "
        f"{report['n_checks'] - len(failed)}/{report['n_checks']} checks green "
        f"in {report['elapsed_seconds']:.0f}s (<300s)"
        + (f"; failed: {failed}" if failed else ""))
    assert report["all_passed"], failed
    assert report["elapsed_seconds"] < 300.0
