import math

import numpy as np
import pytest

from particlemle.integrators import MomentumParams, VariantConfig, mpd_step
from particlemle.models import ToyHM
from particlemle.state import (CloudInit, RngSpec, ThetaState, gaussian_draw,
                               init_state, load_checkpoint, make_generator,
                               save_checkpoint)


class TestRng:
    def test_replay_identical(self):
        spec = RngSpec(987654321, 3)
        assert np.array_equal(gaussian_draw(spec, 64), gaussian_draw(spec, 64))

    def test_streams_differ(self):
        a = gaussian_draw(RngSpec(1, 0), 64)
        b = gaussian_draw(RngSpec(1, 1), 64)
        assert not np.array_equal(a, b)

    def test_clt_mean_bound(self):
        draws = gaussian_draw(RngSpec(2024, 5), 1_000_000)
        assert abs(draws.mean()) <= 4.0 / math.sqrt(1_000_000)

    def test_clt_variance_bound(self):
        draws = gaussian_draw(RngSpec(2025, 5), 1_000_000)
        assert 0.994 <= draws.var() <= 1.006

    def test_split_draw_matches_block_draw(self):
        g1 = make_generator(9, 4)
        block = g1.standard_normal((2, 5))
        g2 = make_generator(9, 4)
        first, second = g2.standard_normal(5), g2.standard_normal(5)
        assert np.array_equal(block, np.vstack([first, second]))


class TestThetaState:
    def test_dimension_check(self):
        with pytest.raises(ValueError):
            ThetaState(np.zeros(2), np.zeros(3))

    def test_finite_flag(self):
        s = ThetaState(np.zeros(2), np.zeros(2))
        assert s.finite
        assert not ThetaState(np.array([np.nan, 0.0]), np.zeros(2)).finite


class TestInitState:
    @pytest.fixture
    def model(self):
        return ToyHM(np.arange(4.0), sigma2=1.0)

    def test_point_mass(self, model):
        _, cloud = init_state(model, 5, np.zeros(1), CloudInit(kind="point", value=0.0), 1)
        assert np.all(cloud.X == 0.0)
        assert np.all(cloud.U == 0.0)
        assert np.all(cloud.missed == 0)
        assert list(cloud.stream_ids) == [0, 1, 2, 3, 4]

    def test_determinism_across_calls(self, model):
        spec = CloudInit(kind="normal", mean=-5.0, std=1.0)
        _, c1 = init_state(model, 8, np.zeros(1), spec, seed=42)
        _, c2 = init_state(model, 8, np.zeros(1), spec, seed=42)
        assert np.array_equal(c1.X, c2.X)

    def test_monte_carlo_mean(self, model):
        n = 25000  # 1e5 scalar draws across the (M, d_x) grid
        _, cloud = init_state(model, n, np.zeros(1),
                              CloudInit(kind="normal", mean=-5.0, std=1.0), seed=3)
        bound = 4.0 / math.sqrt(cloud.X.size)
        assert abs(cloud.X.mean() + 5.0) <= bound

    def test_momentum_initializations(self, model):
        _, zeros = init_state(model, 4, np.zeros(1), CloudInit(kind="point"), 1)
        assert np.all(zeros.U == 0.0)
        _, stat = init_state(model, 3000, np.zeros(1), CloudInit(kind="point"), 1,
                             momentum_init="stationary", eta_x=4.0)
        assert stat.U.var() == pytest.approx(0.25, rel=0.05)

    def test_errors(self, model):
        with pytest.raises(ValueError):
            init_state(model, 0, np.zeros(1), CloudInit(kind="point"), 1)
        with pytest.raises(ValueError):
            init_state(model, 2, np.zeros(2), CloudInit(kind="point"), 1)
        with pytest.raises(ValueError):
            CloudInit(kind="weird")
        with pytest.raises(ValueError):
            init_state(model, 2, np.zeros(1), CloudInit(kind="point"), 1,
                       momentum_init="stationary")


class TestCheckpoint:
    def test_roundtrip_continues_bitwise(self, tmp_path):
        rng = make_generator(21, 0)
        model = ToyHM(rng.normal(size=5), sigma2=1.0)
        params = MomentumParams(gamma_theta=0.8, eta_theta=1.5, gamma_x=0.8,
                                eta_x=1.5, h_theta=5e-3, h_x=5e-3)
        cfg = VariantConfig("MPD_EXP", True, True, "FULL")
        state, cloud = init_state(model, 3, np.zeros(1), CloudInit(kind="normal"), 14)
        for _ in range(4):
            state, cloud = mpd_step(state, cloud, model, params, cfg)
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, state, cloud, 4)
        state2, cloud2, iteration = load_checkpoint(path)
        assert iteration == 4
        assert np.array_equal(state.theta, state2.theta)
        assert np.array_equal(cloud.X, cloud2.X)
        assert np.array_equal(cloud.missed, cloud2.missed)
        sa, ca = mpd_step(state, cloud, model, params, cfg)
        sb, cb = mpd_step(state2, cloud2, model, params, cfg)
        assert np.array_equal(sa.theta, sb.theta)
        assert np.array_equal(ca.X, cb.X)
        assert np.array_equal(ca.U, cb.U)

    def test_checkpoint_is_json(self, tmp_path):
        import json
        model = ToyHM([1.0, 2.0], sigma2=1.0)
        state, cloud = init_state(model, 2, np.zeros(1), CloudInit(kind="point"), 5)
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, state, cloud, 0)
        payload = json.loads(path.read_text())
        for key in ("theta", "m", "X", "U", "missed", "seed", "iteration"):
            assert key in payload


def test_full_run_determinism_thread_invariant():
    """A complete optimization run is bit-identical across worker counts."""
    rng = make_generator(22, 0)
    model = ToyHM(rng.normal(size=12), sigma2=1.0)
    params = MomentumParams(gamma_theta=0.7, eta_theta=2.0, gamma_x=0.7,
                            eta_x=2.0, h_theta=1e-2, h_x=1e-2)
    cfg = VariantConfig("MPD_EXP", True, True, "FULL")

    def run(threads):
        state, cloud = init_state(model, 16, np.zeros(1),
                                  CloudInit(kind="normal", mean=0.0), seed=11)
        for _ in range(25):
            state, cloud = mpd_step(state, cloud, model, params, cfg, threads=threads)
        return state.theta.copy(), cloud.X.copy(), cloud.U.copy()

    base = run(1)
    for threads in (2, 8):
        other = run(threads)
        for arr_a, arr_b in zip(base, other):
            assert np.array_equal(arr_a, arr_b)
