"""Command-line front end.

Subcommands:
  run        -- run one experiment to trace.csv / summary.json / checkpoint.json
  compare    -- run two configs, emit abc.csv (positive favors the second)
  sweep      -- ABC(gamma, eta) matrix against a fixed baseline
  validate   -- run the oracle/invariant suite, emit validate.json
  mle        -- marginal MLE of a one-float-per-line dataset (the mean)

Exit codes: 0 ok, 1 check failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import ConfigError, ExperimentConfig, PRESETS, load_dataset, preset_config, preset_pair
from .models import toyhm_mle
from .runner import compare_experiments, run_experiment, sweep_experiments
from .validate import run_validation

USAGE_ERROR = 2
CHECK_FAILURE = 1


def _load_config(args, which: str | None = None) -> ExperimentConfig:
    preset = getattr(args, "preset", None)
    config_path = getattr(args, "config", None)
    if (preset is None) == (config_path is None):
        raise ConfigError("provide exactly one of --preset or --config")
    if preset is not None:
        name, _, variant = preset.partition(":")
        cfg = preset_config(name, variant or None)
    else:
        cfg = ExperimentConfig.from_file(config_path)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "iterations", None) is not None:
        overrides["iterations"] = args.iterations
    return cfg.with_overrides(**overrides) if overrides else cfg


def _cmd_run(args) -> int:
    cfg = _load_config(args)
    outdir = args.out or cfg.raw.get("output") or "."
    _, summary = run_experiment(cfg, outdir, threads=args.threads)
    print(json.dumps(summary["final_metrics"], indent=2))
    print(f"wrote {os.path.join(outdir, 'trace.csv')}")
    return 0


def _cmd_compare(args) -> int:
    if args.preset is not None:
        (name_a, cfg_a), (name_b, cfg_b) = preset_pair(args.preset)
    else:
        if not (args.config_a and args.config_b):
            raise ConfigError("compare needs --preset or both --config-a and --config-b")
        name_a, name_b = "a", "b"
        cfg_a = ExperimentConfig.from_file(args.config_a)
        cfg_b = ExperimentConfig.from_file(args.config_b)
    if args.seed is not None:
        cfg_a = cfg_a.with_overrides(seed=args.seed)
        cfg_b = cfg_b.with_overrides(seed=args.seed)
    outdir = args.out or "."
    report = compare_experiments(cfg_a, cfg_b, outdir, threads=args.threads,
                                 raw_weights=args.raw_weights)
    print(f"ABC ({name_a} vs {name_b}; positive favors {name_b}):")
    for metric, value in report["abc"].items():
        print(f"  {metric}: {value:.6g}")
    return 0


def _cmd_sweep(args) -> int:
    if args.preset is not None:
        if args.preset not in PRESETS or PRESETS[args.preset]["kind"] != "sweep":
            raise ConfigError(f"{args.preset!r} is not a sweep preset")
        spec = PRESETS[args.preset]["configs"]
        base = ExperimentConfig(spec["base"])
        baseline = ExperimentConfig(spec["baseline"])
        gamma_grid = args.gamma or spec["gamma_grid"]
        eta_grid = args.eta or spec["eta_grid"]
    else:
        if args.config is None:
            raise ConfigError("sweep needs --preset or --config")
        base = ExperimentConfig.from_file(args.config)
        if args.baseline is None or not (args.gamma and args.eta):
            raise ConfigError("sweep --config needs --baseline, --gamma, and --eta")
        baseline = ExperimentConfig.from_file(args.baseline)
        gamma_grid, eta_grid = args.gamma, args.eta
    if args.seed is not None:
        base = base.with_overrides(seed=args.seed)
        baseline = baseline.with_overrides(seed=args.seed)
    outdir = args.out or "."
    matrix = sweep_experiments(base, baseline, gamma_grid, eta_grid, outdir,
                               threads=args.threads, metric=args.metric)
    print(f"wrote {os.path.join(outdir, 'abc.csv')} "
          f"({matrix.shape[0]}x{matrix.shape[1]} cells)")
    return 0


def _cmd_validate(args) -> int:
    report = run_validation()
    outdir = args.out or "."
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, "validate.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
    for check in report["checks"]:
        print(f"[{'PASS' if check['passed'] else 'FAIL'}] {check['name']}")
        if not check["passed"]:
            print(f"       observed: {check['observed']}")
            print(f"       expected: {check['expected']}")
    print(f"{sum(c['passed'] for c in report['checks'])}/{report['n_checks']} checks passed "
          f"in {report['elapsed_seconds']:.1f}s; wrote {path}")
    return 0 if report["all_passed"] else CHECK_FAILURE


def _cmd_mle(args) -> int:
    y = load_dataset(args.dataset)
    print(f"{toyhm_mle(y):.17g}")
    return 0


def _comma_floats(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats: {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="particlemle",
        description="Momentum particle descent and baselines for latent-variable MLE.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, preset_help):
        p.add_argument("--config", help="path to a JSON experiment config")
        p.add_argument("--preset", help=preset_help)
        p.add_argument("--seed", type=int, help="override the config seed (u64)")
        p.add_argument("--out", help="output directory (default: current)")
        p.add_argument("--threads", type=int, default=1, help="worker threads")

    p_run = sub.add_parser("run", help="run one experiment")
    common(p_run, "preset name, optionally name:variant (see README)")
    p_run.add_argument("--iterations", type=int, help="override iteration count")
    p_run.set_defaults(func=_cmd_run)

    p_cmp = sub.add_parser("compare", help="run two configs and report ABC")
    common(p_cmp, "compare-style preset (fig1b-integrators, fig1c-correction, mog-density)")
    p_cmp.add_argument("--config-a", help="first config (baseline)")
    p_cmp.add_argument("--config-b", help="second config (candidate)")
    p_cmp.add_argument("--raw-weights", action="store_true",
                       help="use the unnormalized ABC weight variant")
    p_cmp.set_defaults(func=_cmd_compare)

    p_sweep = sub.add_parser("sweep", help="ABC heatmap over (gamma, eta)")
    common(p_sweep, "sweep preset (abc-sweep)")
    p_sweep.add_argument("--baseline", help="baseline config for --config mode")
    p_sweep.add_argument("--gamma", type=_comma_floats, help="comma-separated gamma grid")
    p_sweep.add_argument("--eta", type=_comma_floats, help="comma-separated eta grid")
    p_sweep.add_argument("--metric", default="param_error", help="curve metric for ABC")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_val = sub.add_parser("validate", help="run the oracle and invariant suite")
    p_val.add_argument("--out", help="output directory for validate.json")
    p_val.set_defaults(func=_cmd_validate)

    p_mle = sub.add_parser("mle", help="marginal MLE of a dataset (one float per line)")
    p_mle.add_argument("dataset", help="path to the dataset file")
    p_mle.set_defaults(func=_cmd_mle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
