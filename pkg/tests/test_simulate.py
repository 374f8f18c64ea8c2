"""Sampling schemes and the exact path simulator."""

from __future__ import annotations

import numpy as np
import pytest

from qscale.exceptions import ConfigError
from qscale.levy import (
    CompoundPoissonExponential,
    GammaSubordinator,
    LevyModel,
    NoJumps,
)
from qscale.simulate import (
    SamplingScheme,
    load_observation,
    make_scheme,
    s2_quantity,
    save_observation,
    simulate,
)


class TestMakeScheme:
    def test_spec_arithmetic(self):
        s = make_scheme(100.0, a=1.0)
        assert s.n == 10_000 and s.delta == pytest.approx(0.01)
        assert s.T == pytest.approx(100.0)

    def test_eps_rule(self):
        s = make_scheme(100.0, a=1.0, rho=0.49, c_eps=2.0)
        assert s.eps == pytest.approx(2.0 * 0.01**0.49)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"T": 0.5}, {"T": 100, "a": 0.0}, {"T": 100, "a": 1.5},
            {"T": 100, "rho": 0.0}, {"T": 100, "rho": 0.6}, {"T": 100, "c_eps": 0.0},
        ],
    )
    def test_parameter_ranges(self, kwargs):
        with pytest.raises(ConfigError):
            make_scheme(**kwargs)

    def test_s2_zero_without_jumps(self):
        s = make_scheme(100.0)
        assert s2_quantity(NoJumps(), s) == 0.0

    def test_s2_decreasing_along_family(self):
        jumps = CompoundPoissonExponential(1.0, 1.0)
        vals = [s2_quantity(jumps, make_scheme(float(T))) for T in (100, 400, 1600)]
        assert vals[0] > vals[1] > vals[2]


class TestSimulate:
    def test_deterministic_drift_only(self):
        m = LevyModel(x0=2.0, c=1.0, D=0.0, jumps=NoJumps(), q=0.0)
        s = SamplingScheme(n=100, delta=0.01, eps=0.05)
        obs = simulate(m, s, seed=5)
        assert obs.grid == pytest.approx(2.0 + np.arange(101) * 0.01, abs=1e-14)
        assert len(obs.jump_sizes) == 0

    def test_bit_identical_reruns(self, exp_jump_model):
        s = make_scheme(50.0)
        a = simulate(exp_jump_model, s, seed=123)
        b = simulate(exp_jump_model, s, seed=123)
        assert np.array_equal(a.grid, b.grid)
        assert np.array_equal(a.jump_times, b.jump_times)
        assert np.array_equal(a.jump_sizes, b.jump_sizes)

    def test_different_seeds_differ(self, exp_jump_model):
        s = make_scheme(50.0)
        a = simulate(exp_jump_model, s, seed=1)
        b = simulate(exp_jump_model, s, seed=2)
        assert not np.array_equal(a.grid, b.grid)

    def test_recorded_jumps_exceed_eps(self, exp_jump_model):
        s = make_scheme(200.0)
        for seed in range(5):
            obs = simulate(exp_jump_model, s, seed=seed)
            if len(obs.jump_sizes):
                assert obs.jump_sizes.min() > s.eps

    def test_poisson_jump_count(self):
        # mean count over seeds ~ lambda T within 3 standard errors
        lam, T = 1.0, 50.0
        m = LevyModel(x0=0, c=1.5, D=0.0, jumps=CompoundPoissonExponential(lam, 1.0), q=0.0)
        s = SamplingScheme(n=5000, delta=0.01, eps=1e-9)  # record everything
        counts = [len(simulate(m, s, seed=seed).jump_sizes) for seed in range(400)]
        mean = np.mean(counts)
        se = np.std(counts, ddof=1) / np.sqrt(len(counts))
        assert abs(mean - lam * T) <= 3 * se

    def test_gaussian_increment_variance(self):
        sigma = 1.3
        m = LevyModel(x0=0, c=0.0, D=sigma**2 / 2, jumps=NoJumps(), q=0.0)
        s = SamplingScheme(n=20_000, delta=0.01, eps=0.05)
        obs = simulate(m, s, seed=7)
        incr = np.diff(obs.grid)
        var = incr.var(ddof=1)
        se = np.sqrt(2.0 / (len(incr) - 1)) * sigma**2 * 0.01
        assert abs(var - sigma**2 * 0.01) <= 3 * se

    def test_path_reconstruction_no_diffusion(self):
        # sigma = 0: X_T = x0 + c T - sum(jumps); eps tiny so all jumps recorded
        m = LevyModel(x0=1.0, c=1.5, D=0.0, jumps=CompoundPoissonExponential(1.0, 1.0), q=0.0)
        s = SamplingScheme(n=10_000, delta=0.01, eps=1e-12)
        obs = simulate(m, s, seed=42)
        assert obs.jump_sizes.min() > 1e-6  # all realized jumps were recorded
        want = 1.0 + 1.5 * s.T - obs.jump_sizes.sum()
        assert obs.grid[-1] == pytest.approx(want, abs=1e-10)

    def test_gamma_subordinator_mean_drift(self):
        # E[X_T - x0] = (c - nu(z)) T regardless of the simulation cutoff
        jumps = GammaSubordinator(shape=0.8, rate=1.0)
        m = LevyModel(x0=0.0, c=1.5, D=0.0, jumps=jumps, q=0.0)
        s = SamplingScheme(n=100, delta=0.5, eps=0.01)
        finals = [simulate(m, s, seed=seed).grid[-1] for seed in range(300)]
        want = (1.5 - jumps.mean()) * s.T
        se = np.std(finals, ddof=1) / np.sqrt(len(finals))
        assert abs(np.mean(finals) - want) <= 3 * se

    def test_grid_value_between_jumps_exact(self):
        # with sigma = 0 the grid interpolates drift minus accumulated jumps
        m = LevyModel(x0=0.0, c=2.0, D=0.0, jumps=CompoundPoissonExponential(0.3, 1.0), q=0.0)
        s = SamplingScheme(n=1000, delta=0.01, eps=1e-12)
        obs = simulate(m, s, seed=3)
        t = obs.times
        lsum = np.array([obs.jump_sizes[obs.jump_times <= tt].sum() for tt in t])
        assert obs.grid == pytest.approx(2.0 * t - lsum, abs=1e-12)


class TestSerialization:
    def test_round_trip(self, exp_jump_model, tmp_path):
        s = make_scheme(50.0)
        obs = simulate(exp_jump_model, s, seed=9)
        save_observation(
            obs, tmp_path / "grid.csv", tmp_path / "jumps.csv", tmp_path / "obs.json"
        )
        back = load_observation(
            tmp_path / "grid.csv", tmp_path / "jumps.csv", tmp_path / "obs.json"
        )
        assert np.array_equal(back.grid, obs.grid)
        assert np.array_equal(back.jump_times, obs.jump_times)
        assert np.array_equal(back.jump_sizes, obs.jump_sizes)
        assert back.scheme == obs.scheme
        assert back.seed == obs.seed

    def test_round_trip_no_jumps(self, brownian_model, tmp_path):
        s = SamplingScheme(n=50, delta=0.1, eps=0.5)
        obs = simulate(brownian_model, s, seed=9)
        assert len(obs.jump_sizes) == 0
        save_observation(
            obs, tmp_path / "grid.csv", tmp_path / "jumps.csv", tmp_path / "obs.json"
        )
        back = load_observation(
            tmp_path / "grid.csv", tmp_path / "jumps.csv", tmp_path / "obs.json"
        )
        assert len(back.jump_sizes) == 0
        assert np.array_equal(back.grid, obs.grid)

    def test_byte_identical_files(self, exp_jump_model, tmp_path):
        s = make_scheme(50.0)
        for d in ("a", "b"):
            obs = simulate(exp_jump_model, s, seed=77)
            (tmp_path / d).mkdir()
            save_observation(
                obs,
                tmp_path / d / "grid.csv",
                tmp_path / d / "jumps.csv",
                tmp_path / d / "obs.json",
            )
        for name in ("grid.csv", "jumps.csv", "obs.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
