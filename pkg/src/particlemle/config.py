"""Experiment configuration: strict JSON schema, presets, model building.

A config is a plain JSON object; unknown keys anywhere are rejected so that
typos fail loudly before any compute starts.  Presets bundle the
hyperparameter settings used by the shipped experiments; ``compare``-style
presets carry one named config per algorithm variant.
"""

from __future__ import annotations

import copy
import json
import math

import numpy as np

from .extras import eta_from_mu
from .integrators import MomentumParams, VariantConfig
from .models import TinyDecoderModel, ToyHM, toyhm_mle
from .state import CloudInit, DATA_STREAM, THETA_INIT_STREAM, make_generator


class ConfigError(ValueError):
    """Invalid experiment configuration; message carries the key path."""


def _require_keys(obj: dict, path: str, required: set, optional: set):
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = set(obj) - required - optional
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ConfigError(f"{path}: missing keys {sorted(missing)}")


def _num(obj, path, positive=False, nonneg=False):
    if not isinstance(obj, (int, float)) or isinstance(obj, bool):
        raise ConfigError(f"{path}: expected a number")
    v = float(obj)
    if positive and v <= 0:
        raise ConfigError(f"{path}: must be positive")
    if nonneg and v < 0:
        raise ConfigError(f"{path}: must be non-negative")
    return v


def _int(obj, path, minimum=None):
    if not isinstance(obj, int) or isinstance(obj, bool):
        raise ConfigError(f"{path}: expected an integer")
    if minimum is not None and obj < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}")
    return obj


_TOP_REQUIRED = {"model", "algorithm", "params", "particles", "iterations", "seed"}
_TOP_OPTIONAL = {"init", "subsampling", "preconditioner", "metrics",
                 "record_every", "theta_trace_limit", "output"}

_METRICS = ("param_error", "w1", "loss")


class ExperimentConfig:
    """Validated experiment description; build models/params lazily."""

    def __init__(self, raw: dict):
        self.raw = copy.deepcopy(raw)
        self._validate()

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(
                    f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}"
                ) from exc
        return cls(raw)

    def _validate(self):
        raw = self.raw
        _require_keys(raw, "config", _TOP_REQUIRED, _TOP_OPTIONAL)

        model = raw["model"]
        name = model.get("name")
        if name == "toyhm":
            _require_keys(model, "model", {"name"},
                          {"sigma2", "dataset", "generate"})
            if "sigma2" in model:
                _num(model["sigma2"], "model.sigma2", positive=True)
            self._validate_dataset_source(model, "model",
                                          gen_keys={"theta", "sigma2", "n", "seed", "center_to"})
        elif name == "tiny_decoder":
            _require_keys(model, "model", {"name"},
                          {"latent_dim", "width", "sigma2", "leaky_slope",
                           "output_scale", "dataset", "generate"})
            for k in ("latent_dim", "width"):
                if k in model:
                    _int(model[k], f"model.{k}", minimum=1)
            if "sigma2" in model:
                _num(model["sigma2"], "model.sigma2", positive=True)
            self._validate_dataset_source(model, "model",
                                          gen_keys={"kind", "n", "means", "variances",
                                                    "weights", "seed"})
        else:
            raise ConfigError(f"model.name: unknown model {name!r}")

        algo = raw["algorithm"]
        _require_keys(algo, "algorithm", {"name"},
                      {"enrich_theta", "enrich_x", "gradient_correction", "mu_theta"})
        if algo["name"] not in ("pgd", "mpd_exp", "mpd_nc"):
            raise ConfigError(f"algorithm.name: unknown algorithm {algo['name']!r}")
        if "mu_theta" in algo:
            mu = _num(algo["mu_theta"], "algorithm.mu_theta", nonneg=True)
            if mu >= 1.0:
                raise ConfigError("algorithm.mu_theta: must be < 1")
        if "gradient_correction" in algo and \
                str(algo["gradient_correction"]).upper() not in ("NONE", "THETA_ONLY", "FULL"):
            raise ConfigError("algorithm.gradient_correction: must be none/theta_only/full")
        self.variant()  # surfaces flag/algorithm inconsistencies now

        params = raw["params"]
        _require_keys(params, "params", {"h_theta", "h_x"},
                      {"gamma_theta", "eta_theta", "gamma_x", "eta_x"})
        for k in ("h_theta", "h_x"):
            _num(params[k], f"params.{k}", positive=True)
        for k in ("gamma_theta", "eta_theta", "gamma_x", "eta_x"):
            if k in params:
                _num(params[k], f"params.{k}", nonneg=True)

        _int(raw["particles"], "particles", minimum=1)
        _int(raw["iterations"], "iterations", minimum=0)
        _int(raw["seed"], "seed", minimum=0)

        if "init" in raw:
            init = raw["init"]
            _require_keys(init, "init", set(), {"theta0", "cloud", "momentum"})
            if "cloud" in init:
                cloud = init["cloud"]
                _require_keys(cloud, "init.cloud", {"kind"}, {"mean", "std", "value"})
                if cloud["kind"] not in ("point", "normal"):
                    raise ConfigError("init.cloud.kind: must be 'point' or 'normal'")
            if init.get("momentum", "zeros") not in ("zeros", "stationary"):
                raise ConfigError("init.momentum: must be 'zeros' or 'stationary'")

        if raw.get("subsampling") is not None and "subsampling" in raw:
            sub = raw["subsampling"]
            _require_keys(sub, "subsampling", {"batch_size"}, {"catch_up"})
            _int(sub["batch_size"], "subsampling.batch_size", minimum=1)
            if sub.get("catch_up", "single") not in ("single", "repeated"):
                raise ConfigError("subsampling.catch_up: must be 'single' or 'repeated'")

        if raw.get("preconditioner") is not None and "preconditioner" in raw:
            pre = raw["preconditioner"]
            _require_keys(pre, "preconditioner", set(), {"beta", "eps"})
            if "beta" in pre:
                beta = _num(pre["beta"], "preconditioner.beta", positive=True)
                if beta >= 1.0:
                    raise ConfigError("preconditioner.beta: must be < 1")
            if "eps" in pre:
                _num(pre["eps"], "preconditioner.eps", positive=True)

        metrics = raw.get("metrics", ["param_error"])
        if not isinstance(metrics, list) or not all(isinstance(m, str) for m in metrics):
            raise ConfigError("metrics: expected a list of metric names")
        for m in metrics:
            if m not in _METRICS:
                raise ConfigError(f"metrics: unknown metric {m!r} (known: {_METRICS})")

        if "record_every" in raw:
            _int(raw["record_every"], "record_every", minimum=1)
        if "theta_trace_limit" in raw:
            _int(raw["theta_trace_limit"], "theta_trace_limit", minimum=0)

    @staticmethod
    def _validate_dataset_source(model: dict, path: str, gen_keys: set):
        has_data = "dataset" in model and model["dataset"] is not None
        has_gen = "generate" in model and model["generate"] is not None
        if has_data == has_gen:
            raise ConfigError(f"{path}: provide exactly one of 'dataset' or 'generate'")
        if has_gen:
            gen = model["generate"]
            if not isinstance(gen, dict):
                raise ConfigError(f"{path}.generate: expected an object")
            unknown = set(gen) - gen_keys
            if unknown:
                raise ConfigError(f"{path}.generate: unknown keys {sorted(unknown)}")

    # accessors ---------------------------------------------------------

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def iterations(self) -> int:
        return self.raw["iterations"]

    @property
    def particles(self) -> int:
        return self.raw["particles"]

    @property
    def metrics(self) -> list:
        return list(self.raw.get("metrics", ["param_error"]))

    @property
    def record_every(self) -> int:
        return self.raw.get("record_every", 1)

    @property
    def theta_trace_limit(self) -> int:
        return self.raw.get("theta_trace_limit", 16)

    def momentum_params(self) -> MomentumParams:
        p = self.raw["params"]
        return MomentumParams(
            gamma_theta=p.get("gamma_theta", 0.0), eta_theta=p.get("eta_theta", 0.0),
            gamma_x=p.get("gamma_x", 0.0), eta_x=p.get("eta_x", 0.0),
            h_theta=p["h_theta"], h_x=p["h_x"],
        )

    def variant(self) -> VariantConfig:
        a = self.raw["algorithm"]
        name = {"pgd": "PGD", "mpd_exp": "MPD_EXP", "mpd_nc": "MPD_NC"}[a["name"]]
        if name == "PGD":
            enrich_theta = enrich_x = False
        else:
            enrich_theta = a.get("enrich_theta", True)
            enrich_x = a.get("enrich_x", True)
        return VariantConfig(
            algorithm=name,
            enrich_theta=enrich_theta,
            enrich_x=enrich_x,
            gradient_correction=str(a.get("gradient_correction", "full")).upper(),
        )

    @property
    def mu_theta(self) -> float:
        return float(self.raw["algorithm"].get("mu_theta", 0.9))

    def build_model(self):
        spec = self.raw["model"]
        y = self._load_or_generate_data(spec)
        if spec["name"] == "toyhm":
            return ToyHM(y, sigma2=spec.get("sigma2", 1.0))
        return TinyDecoderModel(
            y,
            latent_dim=spec.get("latent_dim", 10),
            width=spec.get("width", 32),
            sigma2=spec.get("sigma2", 0.01),
            leaky_slope=spec.get("leaky_slope", 0.01),
            output_scale=spec.get("output_scale", 4.0),
        )

    def _load_or_generate_data(self, spec: dict) -> np.ndarray:
        if spec.get("dataset"):
            return load_dataset(spec["dataset"])
        gen = spec["generate"]
        rng = make_generator(gen.get("seed", 0), DATA_STREAM)
        if spec["name"] == "toyhm":
            theta = gen.get("theta", 0.0)
            sigma2 = gen.get("sigma2", spec.get("sigma2", 1.0))
            n = gen.get("n", 100)
            y = theta + math.sqrt(sigma2) * rng.standard_normal(n) + rng.standard_normal(n)
            if gen.get("center_to") is not None:
                y = y - y.mean() + gen["center_to"]
            return y
        if gen.get("kind", "mog") != "mog":
            raise ConfigError("model.generate.kind: only 'mog' is supported")
        n = gen.get("n", 100)
        means = np.asarray(gen.get("means", [2.0, -2.0]), dtype=float)
        variances = np.asarray(gen.get("variances", [0.5, 0.5]), dtype=float)
        weights = np.asarray(gen.get("weights", [0.5, 0.5]), dtype=float)
        weights = weights / weights.sum()
        comp = rng.choice(len(means), size=n, p=weights)
        return means[comp] + np.sqrt(variances[comp]) * rng.standard_normal(n)

    def cloud_init(self) -> CloudInit:
        init = self.raw.get("init", {})
        cloud = init.get("cloud")
        if cloud is None:
            return CloudInit(kind="normal", mean=0.0, std=1.0)
        if cloud["kind"] == "point":
            return CloudInit(kind="point", value=cloud.get("value", 0.0))
        return CloudInit(kind="normal", mean=cloud.get("mean", 0.0),
                         std=cloud.get("std", 1.0))

    def momentum_init(self) -> str:
        return self.raw.get("init", {}).get("momentum", "zeros")

    def theta0(self, model) -> np.ndarray:
        init = self.raw.get("init", {})
        t0 = init.get("theta0", "default")
        if isinstance(t0, str):
            if t0 != "default":
                raise ConfigError("init.theta0: must be a number, list, or 'default'")
            return model.default_theta(make_generator(self.seed, THETA_INIT_STREAM))
        return np.broadcast_to(np.asarray(t0, dtype=float), (model.d_theta,)).copy()

    def with_overrides(self, **kw) -> "ExperimentConfig":
        """Copy with top-level keys replaced (seed, iterations, output, ...)."""
        raw = copy.deepcopy(self.raw)
        raw.update(kw)
        return ExperimentConfig(raw)


def load_dataset(path) -> np.ndarray:
    """One float per line, plain text; blank lines ignored."""
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                values.append(float(text))
            except ValueError as exc:
                raise ConfigError(f"{path}: line {lineno}: not a number: {text!r}") from exc
    if not values:
        raise ConfigError(f"{path}: dataset is empty")
    return np.array(values)


# ---------------------------------------------------------------------------
# Presets.  Data seeds are fixed so the MLE target is stable across run seeds.

_TOYHM_DATA = {"theta": 100.0, "sigma2": 1.0, "n": 100, "seed": 7}
_TOYHM2_DATA = {"theta": 10.0, "sigma2": 144.0, "n": 100, "seed": 7, "center_to": 10.0}
_MOG_DATA = {"kind": "mog", "n": 100, "means": [2.0, -2.0],
             "variances": [0.5, 0.5], "weights": [0.5, 0.5], "seed": 7}


def _toyhm_mpd(gamma, eta, h_theta=1e-4, h_x=1e-2, iterations=10000, seed=0,
               correction="full", data=_TOYHM_DATA, sigma2=1.0,
               enrich_theta=True, enrich_x=True, cloud=None):
    cfg = {
        "model": {"name": "toyhm", "sigma2": sigma2, "generate": dict(data)},
        "algorithm": {"name": "mpd_exp", "gradient_correction": correction,
                      "enrich_theta": enrich_theta, "enrich_x": enrich_x},
        "params": {"gamma_theta": gamma, "eta_theta": eta, "gamma_x": gamma,
                   "eta_x": eta, "h_theta": h_theta, "h_x": h_x},
        "particles": 100,
        "iterations": iterations,
        "seed": seed,
        "metrics": ["param_error"],
    }
    if cloud is not None:
        cfg["init"] = {"cloud": cloud}
    return cfg


def _toyhm_pgd(h_theta=1e-4, h_x=1e-2, iterations=10000, seed=0,
               data=_TOYHM_DATA, sigma2=1.0, cloud=None):
    cfg = {
        "model": {"name": "toyhm", "sigma2": sigma2, "generate": dict(data)},
        "algorithm": {"name": "pgd"},
        "params": {"h_theta": h_theta, "h_x": h_x},
        "particles": 100,
        "iterations": iterations,
        "seed": seed,
        "metrics": ["param_error"],
    }
    if cloud is not None:
        cfg["init"] = {"cloud": cloud}
    return cfg


def _fig1b_pair():
    gamma, h_theta, h_x, mu = 0.5, 10 ** -2.5, 1e-3, 0.9
    eta_t = eta_from_mu(mu, gamma, h_theta)
    eta_x = eta_from_mu(mu, gamma, h_x)
    exp_cfg = {
        "model": {"name": "toyhm", "sigma2": 1.0, "generate": dict(_TOYHM_DATA)},
        "algorithm": {"name": "mpd_exp", "gradient_correction": "full"},
        "params": {"gamma_theta": gamma, "eta_theta": eta_t, "gamma_x": gamma,
                   "eta_x": eta_x, "h_theta": h_theta, "h_x": h_x},
        "particles": 100, "iterations": 10000, "seed": 0,
        "metrics": ["param_error"],
    }
    nc_cfg = copy.deepcopy(exp_cfg)
    nc_cfg["algorithm"] = {"name": "mpd_nc", "mu_theta": mu}
    return {"mpd_nc": nc_cfg, "mpd_exp": exp_cfg}  # baseline first


def _fig1c_pair():
    full = _toyhm_mpd(0.3, 403.96, h_theta=6.86e-3, h_x=1e-2, correction="full")
    none = _toyhm_mpd(0.3, 403.96, h_theta=6.86e-3, h_x=1e-2, correction="none")
    return {"none": none, "full": full}  # baseline first


def _fig2_group():
    # badly initialized cloud: the regime where momentum shortens the transient
    cloud = {"kind": "normal", "mean": -100.0, "std": 1.0}
    kw = dict(data=_TOYHM2_DATA, sigma2=144.0, cloud=cloud,
              h_theta=2e-3, h_x=1e-2, iterations=4000)
    return {
        "pgd": _toyhm_pgd(h_theta=2e-3, h_x=1e-2, iterations=4000,
                          data=_TOYHM2_DATA, sigma2=144.0, cloud=cloud),
        "theta_only": _toyhm_mpd(0.7, 5.6, enrich_x=False, **kw),
        "x_only": _toyhm_mpd(0.7, 5.6, enrich_theta=False, **kw),
        "mpd": _toyhm_mpd(0.7, 5.6, **kw),
    }


def _mog_pair():
    gamma, h = 0.4, 1e-3
    eta = eta_from_mu(0.1, gamma, h)
    mpd = {
        "model": {"name": "tiny_decoder", "generate": dict(_MOG_DATA)},
        "algorithm": {"name": "mpd_exp", "gradient_correction": "full"},
        "params": {"gamma_theta": gamma, "eta_theta": eta, "gamma_x": gamma,
                   "eta_x": eta, "h_theta": h, "h_x": h},
        "particles": 3,
        "iterations": 20000,
        "seed": 0,
        "preconditioner": {"beta": 0.9, "eps": 1e-8},
        "metrics": ["w1", "loss"],
        "record_every": 500,
    }
    pgd = copy.deepcopy(mpd)
    pgd["algorithm"] = {"name": "pgd"}
    pgd["params"] = {"h_theta": h, "h_x": h}
    return {"pgd": pgd, "mpd": mpd}  # baseline first


def _abc_sweep():
    return {
        "base": _toyhm_mpd(0.7, 403.96, iterations=3000),
        "baseline": _toyhm_pgd(iterations=3000),
        "gamma_grid": [0.1, 0.4, 0.7, 1.0],
        "eta_grid": [1.0, 20.0, 403.96, 1000.0],
    }


def build_presets() -> dict:
    return {
        "fig1a-underdamped": {"kind": "run", "configs": {"mpd": _toyhm_mpd(0.1, 403.96)}},
        "fig1a-overdamped": {"kind": "run", "configs": {"mpd": _toyhm_mpd(1.0, 403.96)}},
        "fig1a-critical": {"kind": "run", "configs": {"mpd": _toyhm_mpd(0.7, 403.96)}},
        "fig1b-integrators": {"kind": "pair", "configs": _fig1b_pair()},
        "fig1c-correction": {"kind": "pair", "configs": _fig1c_pair()},
        "fig2-enrichment": {"kind": "group", "configs": _fig2_group()},
        "mog-density": {"kind": "pair", "configs": _mog_pair()},
        "abc-sweep": {"kind": "sweep", "configs": _abc_sweep()},
        "pgd-baseline": {"kind": "run", "configs": {"pgd": _toyhm_pgd()}},
    }


PRESETS = build_presets()


def preset_config(name: str, variant: str | None = None) -> ExperimentConfig:
    """Fetch one run config out of a preset (its first variant by default)."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r} (known: {sorted(PRESETS)})")
    entry = PRESETS[name]
    if entry["kind"] == "sweep":
        raise ConfigError(f"preset {name!r} is a sweep preset; use the sweep command")
    configs = entry["configs"]
    if variant is None:
        variant = next(iter(configs))
    if variant not in configs:
        raise ConfigError(f"preset {name!r} has no variant {variant!r} "
                          f"(known: {sorted(configs)})")
    return ExperimentConfig(configs[variant])


def preset_pair(name: str):
    """The two configs of a compare-style preset, in declared order."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r} (known: {sorted(PRESETS)})")
    entry = PRESETS[name]
    configs = list(entry["configs"].items())
    if len(configs) < 2:
        raise ConfigError(f"preset {name!r} does not define a pair")
    (name_a, cfg_a), (name_b, cfg_b) = configs[0], configs[1]
    return (name_a, ExperimentConfig(cfg_a)), (name_b, ExperimentConfig(cfg_b))


def toyhm_target(config: ExperimentConfig, model) -> np.ndarray | None:
    """Reference parameter for the param_error metric (marginal MLE)."""
    if isinstance(model, ToyHM):
        return np.array([toyhm_mle(model.y)])
    return None
