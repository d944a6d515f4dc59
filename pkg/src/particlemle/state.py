"""Optimizer state: parameter/momentum pair, particle cloud, RNG streams.

Randomness is organized as counter-based (Philox) streams keyed by
``(master_seed, stream_id)``.  Particle ``i`` owns stream ``i`` and is the
only consumer of it, which makes full runs bit-identical regardless of how
particles are scheduled across worker threads.  Stream ids at or above
``RESERVED_STREAM_BASE`` are reserved for non-particle uses (dataset
generation, batch schedules, metric sampling).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

RESERVED_STREAM_BASE = 2**32
DATA_STREAM = RESERVED_STREAM_BASE
BATCH_STREAM = RESERVED_STREAM_BASE + 1
METRIC_STREAM = RESERVED_STREAM_BASE + 2
THETA_INIT_STREAM = RESERVED_STREAM_BASE + 3


@dataclass(frozen=True)
class RngSpec:
    """Addresses one reproducible stream: (64-bit master seed, stream id)."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed % 2**64, self.stream % 2**64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


def make_generator(seed: int, stream: int = 0) -> np.random.Generator:
    return RngSpec(seed, stream).generator()


def gaussian_draw(rng: RngSpec, n: int) -> np.ndarray:
    """First ``n`` standard normals of the stream addressed by ``rng``."""
    return rng.generator().standard_normal(n)


@dataclass
class ThetaState:
    """Parameter theta and its momentum m (the deterministic half)."""

    theta: np.ndarray
    m: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).reshape(-1)
        self.m = np.asarray(self.m, dtype=float).reshape(-1)
        if self.theta.shape != self.m.shape:
            raise ValueError("theta and m must have equal dimensions")

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.theta).all() and np.isfinite(self.m).all())


@dataclass
class ParticleCloud:
    """M particle positions/momenta plus per-particle RNG streams.

    ``missed`` holds one counter per data block (not per particle): it
    tracks, for each datum, how many subsampled iterations skipped that
    datum's latent block since its last update.
    """

    X: np.ndarray
    U: np.ndarray
    stream_ids: np.ndarray
    missed: np.ndarray
    seed: int
    rngs: list = field(repr=False, default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.U = np.asarray(self.U, dtype=float)
        if self.X.shape != self.U.shape or self.X.ndim != 2:
            raise ValueError("X and U must be (M, d_x) arrays of equal shape")
        if self.X.shape[0] < 1:
            raise ValueError("cloud needs at least one particle")
        if not self.rngs:
            self.rngs = [make_generator(self.seed, int(s)) for s in self.stream_ids]

    @property
    def n_particles(self) -> int:
        return self.X.shape[0]

    @property
    def d_x(self) -> int:
        return self.X.shape[1]

    def replace(self, X: np.ndarray, U: np.ndarray, missed=None) -> "ParticleCloud":
        """New cloud with updated arrays; streams continue in place."""
        return ParticleCloud(
            X=X,
            U=U,
            stream_ids=self.stream_ids,
            missed=self.missed.copy() if missed is None else np.asarray(missed),
            seed=self.seed,
            rngs=self.rngs,
        )


@dataclass(frozen=True)
class CloudInit:
    """Initial particle-position law: a point mass or an isotropic normal."""

    kind: str = "normal"
    mean: float | np.ndarray = 0.0
    std: float = 1.0
    value: float | np.ndarray = 0.0

    def __post_init__(self):
        if self.kind not in ("point", "normal"):
            raise ValueError(f"unknown cloud init kind {self.kind!r}")
        if self.kind == "normal" and self.std < 0:
            raise ValueError("std must be non-negative")


def init_state(model, M: int, theta0, cloud_init: CloudInit, seed: int,
               momentum_init: str = "zeros", eta_x: float | None = None):
    """Build the initial (ThetaState, ParticleCloud) pair.

    Positions are drawn i.i.d. from ``cloud_init``, each particle using its
    own stream so the cloud is identical however the draw is scheduled.
    Momenta start at zero by default; ``momentum_init="stationary"`` draws
    ``U ~ N(0, I/eta_x)``, the stationary momentum law.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    theta0 = np.asarray(theta0, dtype=float).reshape(-1)
    if theta0.shape[0] != model.d_theta:
        raise ValueError(f"theta0 has dim {theta0.shape[0]}, expected {model.d_theta}")
    state = ThetaState(theta=theta0.copy(), m=np.zeros(model.d_theta))

    stream_ids = np.arange(M, dtype=np.int64)
    rngs = [make_generator(seed, int(s)) for s in stream_ids]
    d = model.d_x
    X = np.empty((M, d))
    U = np.zeros((M, d))
    if cloud_init.kind == "point":
        X[:] = np.broadcast_to(np.asarray(cloud_init.value, dtype=float), (d,))
    else:
        mean = np.broadcast_to(np.asarray(cloud_init.mean, dtype=float), (d,))
        for i, g in enumerate(rngs):
            X[i] = mean + cloud_init.std * g.standard_normal(d)
    if momentum_init == "stationary":
        if eta_x is None or eta_x <= 0:
            raise ValueError("stationary momentum init needs eta_x > 0")
        scale = 1.0 / np.sqrt(eta_x)
        for i, g in enumerate(rngs):
            U[i] = scale * g.standard_normal(d)
    elif momentum_init != "zeros":
        raise ValueError(f"unknown momentum init {momentum_init!r}")

    n_blocks = getattr(model, "n_data", d)
    cloud = ParticleCloud(
        X=X, U=U, stream_ids=stream_ids,
        missed=np.zeros(n_blocks, dtype=np.int64), seed=seed, rngs=rngs,
    )
    return state, cloud


def save_checkpoint(path, state: ThetaState, cloud: ParticleCloud, iteration: int):
    """Write the full optimizer state as JSON (binary-free, round-trippable)."""
    payload = {
        "iteration": int(iteration),
        "seed": int(cloud.seed),
        "theta": state.theta.tolist(),
        "m": state.m.tolist(),
        "X": cloud.X.tolist(),
        "U": cloud.U.tolist(),
        "missed": cloud.missed.tolist(),
        "stream_ids": cloud.stream_ids.tolist(),
        "rng_states": [_bit_state(g) for g in cloud.rngs],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path):
    """Restore (state, cloud, iteration) written by :func:`save_checkpoint`."""
    with open(path) as fh:
        payload = json.load(fh)
    state = ThetaState(theta=np.array(payload["theta"]), m=np.array(payload["m"]))
    stream_ids = np.asarray(payload["stream_ids"], dtype=np.int64)
    rngs = [make_generator(payload["seed"], int(s)) for s in stream_ids]
    for g, st in zip(rngs, payload["rng_states"]):
        _restore_bit_state(g, st)
    cloud = ParticleCloud(
        X=np.asarray(payload["X"], dtype=float),
        U=np.asarray(payload["U"], dtype=float),
        stream_ids=stream_ids,
        missed=np.asarray(payload["missed"], dtype=np.int64),
        seed=int(payload["seed"]),
        rngs=rngs,
    )
    return state, cloud, int(payload["iteration"])


def _bit_state(gen: np.random.Generator) -> dict:
    st = gen.bit_generator.state
    return {
        "counter": [int(v) for v in st["state"]["counter"]],
        "key": [int(v) for v in st["state"]["key"]],
        "buffer": [int(v) for v in st["buffer"]],
        "buffer_pos": int(st["buffer_pos"]),
        "has_uint32": int(st["has_uint32"]),
        "uinteger": int(st["uinteger"]),
    }


def _restore_bit_state(gen: np.random.Generator, payload: dict):
    st = gen.bit_generator.state
    st["state"]["counter"] = np.array(payload["counter"], dtype=np.uint64)
    st["state"]["key"] = np.array(payload["key"], dtype=np.uint64)
    st["buffer"] = np.array(payload["buffer"], dtype=np.uint64)
    st["buffer_pos"] = payload["buffer_pos"]
    st["has_uint32"] = payload["has_uint32"]
    st["uinteger"] = payload["uinteger"]
    gen.bit_generator.state = st
