"""Estimator pipeline: D_hat, nu_hat, gamma_hat, coefficients, covariance."""

from __future__ import annotations

import numpy as np
import pytest

from qscale.exceptions import DegenerateEstimateError
from qscale.laguerre import LaguerreParams
from qscale.levy import (
    CompoundPoissonExponential,
    LevyModel,
    NoJumps,
    lundberg_exponent,
    nu_functional_exact,
)
from qscale.series import ScaleApprox, coeffs_true, h_functionals, scale_approx
from qscale.simulate import ObservationSet, SamplingScheme, make_scheme, simulate
from qscale.estimators import (
    GammaEstimate,
    PipelineEstimates,
    build_B,
    build_report,
    covariance_machinery,
    estimate_D,
    estimate_coeffs,
    estimate_gamma,
    estimate_W,
    nu_hat,
    population_covariance,
    report_from_true_model,
)


def _obs_from_path(grid, delta, jump_times, jump_sizes, eps=1e-6, seed=0):
    scheme = SamplingScheme(n=len(grid) - 1, delta=delta, eps=eps)
    return ObservationSet(
        grid=np.asarray(grid, dtype=float),
        jump_times=np.asarray(jump_times, dtype=float),
        jump_sizes=np.asarray(jump_sizes, dtype=float),
        scheme=scheme,
        seed=seed,
    )


class TestEstimateD:
    def test_deterministic_drift(self):
        # X = c t, no jumps: D_hat = c^2 delta / 2 summed over the window
        delta, c = 0.01, 1.0
        grid = c * np.arange(101) * delta
        obs = _obs_from_path(grid, delta, [], [])
        assert estimate_D(obs) == pytest.approx(0.005)

    def test_single_jump_netting(self):
        # flat grid except one jump of size J: jump increment nets out
        delta, J = 0.01, 2.0
        grid = np.zeros(101)
        grid[50:] = -J
        obs = _obs_from_path(grid, delta, [0.495], [J])
        assert estimate_D(obs) == pytest.approx((J**2 - J**2) / 2.0, abs=1e-12)

    def test_jump_outside_window_ignored(self):
        delta, J = 0.01, 2.0
        grid = np.zeros(301)
        grid[150:] = -J
        obs = _obs_from_path(grid, delta, [1.495], [J])
        # window [0, 1] sees neither the increment nor the recorded jump
        assert estimate_D(obs, window=1.0) == pytest.approx(0.0)
        # window [0, 3] sees both and they net out
        assert estimate_D(obs, window=3.0) == pytest.approx(0.0, abs=1e-12)

    def test_scale_equivariance(self, exp_jump_model):
        obs = simulate(exp_jump_model, make_scheme(50.0), seed=4)
        u = 3.0
        scaled = ObservationSet(
            grid=u * obs.grid,
            jump_times=obs.jump_times,
            jump_sizes=u * obs.jump_sizes,
            scheme=obs.scheme,
            seed=obs.seed,
        )
        assert estimate_D(scaled) == pytest.approx(u * u * estimate_D(obs), rel=1e-12)

    def test_brownian_monte_carlo_mean(self):
        # D = 0.5: mean of D_hat over seeds within 3 standard errors
        m = LevyModel(x0=0, c=0.0, D=0.5, jumps=NoJumps(), q=0.0)
        s = SamplingScheme(n=1000, delta=1e-3, eps=0.1)
        vals = [estimate_D(simulate(m, s, seed=seed)) for seed in range(500)]
        mean, se = np.mean(vals), np.std(vals, ddof=1) / np.sqrt(len(vals))
        assert abs(mean - 0.5) <= 3 * se


class TestNuHat:
    def test_no_jumps_zero(self, brownian_model):
        obs = simulate(brownian_model, make_scheme(10.0), seed=0)
        assert nu_hat(obs, lambda z: z * z) == 0.0

    def test_single_jump(self):
        obs = _obs_from_path(np.zeros(101), 0.01, [0.5], [2.0])
        assert nu_hat(obs, lambda z: z * z) == pytest.approx(4.0)

    def test_exponential_mean_monte_carlo(self):
        lam, mu = 1.0, 1.0
        m = LevyModel(x0=0, c=1.5, D=0.0, jumps=CompoundPoissonExponential(lam, 1 / mu), q=0.0)
        s = SamplingScheme(n=5000, delta=0.01, eps=1e-9)
        vals = [nu_hat(simulate(m, s, seed=seed), lambda z: z) for seed in range(500)]
        mean, se = np.mean(vals), np.std(vals, ddof=1) / np.sqrt(len(vals))
        assert abs(mean - lam / mu) <= 3 * se


class TestEstimateGamma:
    def test_zero_at_q_zero(self, exp_jump_model):
        obs = simulate(exp_jump_model, make_scheme(50.0), seed=1)
        assert estimate_gamma(obs, 0.0, 0.5, 1.5).value == 0.0

    def test_brownian_reduction(self, brownian_model):
        # no jumps, D_hat = D: the root is the Brownian Phi(q)
        obs = simulate(brownian_model, make_scheme(20.0), seed=2)
        got = estimate_gamma(obs, 0.1, 0.5, 1.5)
        want = lundberg_exponent(brownian_model, 0.1)
        assert not got.boundary
        assert got.value == pytest.approx(want, abs=1e-8)

    def test_boundary_flag_when_unreachable(self, exp_jump_model):
        obs = simulate(exp_jump_model, make_scheme(50.0), seed=3)
        got = estimate_gamma(obs, 0.1, 0.5, 1.5, r_max=1e-6)
        assert got.boundary and got.value <= 1e-6

    def test_consistency_monte_carlo(self, exp_jump_model):
        gamma0 = lundberg_exponent(exp_jump_model, 0.1)
        s = make_scheme(400.0)
        vals = []
        for seed in range(60):
            obs = simulate(exp_jump_model, s, seed=seed)
            vals.append(estimate_gamma(obs, 0.1, estimate_D(obs), 1.5).value)
        mean, se = np.mean(vals), np.std(vals, ddof=1) / np.sqrt(len(vals))
        assert abs(mean - gamma0) <= 3 * se


class TestEstimateCoeffs:
    def test_no_jumps_all_zero(self, brownian_model, params20):
        obs = simulate(brownian_model, make_scheme(20.0), seed=5)
        est = estimate_coeffs(obs, 0.1, 1.5, params20)
        assert est.p == 0.0
        assert np.all(est.coeffs.a_G == 0.0)

    def test_single_atom_jump(self, params20):
        # one jump of size z* on [0, 1]: p_hat = H_p(z*; theta_hat) exactly
        zstar = 2.0
        grid = np.zeros(101)
        grid[50:] = -zstar
        obs = _obs_from_path(grid, 0.01, [0.495], [zstar])
        est = estimate_coeffs(obs, 0.1, 1.5, params20)
        H_p, H_f, H_F = h_functionals(1.5, est.theta, params20, np.array([zstar]))
        assert est.p == pytest.approx(H_p[0], rel=1e-12)
        assert est.coeffs.a_f == pytest.approx(H_f[:, 0], rel=1e-12)

    def test_degenerate_p_raises(self, params20):
        # a huge atom forces p_hat >= 1
        grid = np.zeros(101)
        obs = _obs_from_path(grid, 0.01, [0.5] * 60, [50.0] * 60)
        with pytest.raises(DegenerateEstimateError):
            estimate_coeffs(obs, 0.1, 1.5, params20, D_hat=0.5, gamma_hat=GammaEstimate(0.4))

    def test_consistency_monte_carlo(self, exp_jump_model, params20):
        cs0 = coeffs_true(exp_jump_model, params20)
        s = make_scheme(400.0)
        vals = []
        for seed in range(60):
            obs = simulate(exp_jump_model, s, seed=seed)
            vals.append(estimate_coeffs(obs, 0.1, 1.5, params20).p)
        mean, se = np.mean(vals), np.std(vals, ddof=1) / np.sqrt(len(vals))
        assert abs(mean - cs0.p) <= 3 * se


class TestEstimateW:
    def test_true_values_reproduce_eval(self, exp_jump_model, params20):
        cs0 = coeffs_true(exp_jump_model, params20)
        est = PipelineEstimates(
            D_raw=exp_jump_model.D, gamma=GammaEstimate(cs0.theta.gamma), coeffs=cs0
        )
        xs = np.linspace(0, 5, 11)
        W, Z = estimate_W(est, 1.5, 0.1, xs)
        ap = scale_approx(exp_jump_model, params20)
        assert W == pytest.approx(ap.w(xs), rel=0, abs=0)
        assert Z == pytest.approx(ap.z(xs), rel=0, abs=0)

    def test_no_jump_data_gives_brownian_form(self, brownian_model, params20):
        obs = simulate(brownian_model, make_scheme(20.0), seed=6)
        est = estimate_coeffs(obs, 0.1, 1.5, params20)
        xs = np.linspace(0, 5, 6)
        W, _ = estimate_W(est, 1.5, 0.1, xs)
        D, g = est.theta.D, est.theta.gamma
        beta = 1.5 / D + g
        want = (np.exp(g * xs) - np.exp(-beta * xs)) / (D * (beta + g))
        assert W == pytest.approx(want, rel=1e-12)


class TestCovarianceMachinery:
    def test_no_jumps_degenerate(self, brownian_model, params20):
        obs = simulate(brownian_model, make_scheme(20.0), seed=7)
        rep = build_report(obs, 0.1, 1.5, params20, x=[1.0, 3.0])
        assert np.all(rep.cov.Sigma == 0.0)
        assert rep.cov.W_lo == pytest.approx(rep.cov.W_hi)

    def test_gamma_block_structure(self, exp_jump_model, params20):
        obs = simulate(exp_jump_model, make_scheme(100.0), seed=8)
        rep = build_report(obs, 0.1, 1.5, params20, x=[1.0])
        G = rep.cov.Gamma
        d = 2 * params20.K + 4
        assert G.shape == (d, d)
        assert np.array_equal(G[: d - 1, : d - 1], np.eye(d - 1))
        assert G[d - 1, d - 1] == 1.0
        assert np.all(G[d - 1, : d - 1] == 0.0)

    def test_sigma_psd(self, exp_jump_model, params20):
        obs = simulate(exp_jump_model, make_scheme(100.0), seed=9)
        rep = build_report(obs, 0.1, 1.5, params20, x=[1.0])
        assert rep.cov.psd_ok
        assert rep.cov.min_eig >= -1e-10

    def test_joint_covariance_diagonal(self, exp_jump_model, params20):
        # the joint 2x2 blocks carry (sigma_K, sigma*_K) on the diagonal
        obs = simulate(exp_jump_model, make_scheme(100.0), seed=13)
        rep = build_report(obs, 0.1, 1.5, params20, x=[1.0, 3.0])
        joint = rep.cov.joint
        assert joint[:, 0, 0] == pytest.approx(rep.cov.sigma_W, rel=1e-12)
        assert joint[:, 1, 1] == pytest.approx(rep.cov.sigma_Z, rel=1e-12)
        assert joint[:, 0, 1] == pytest.approx(joint[:, 1, 0], rel=1e-12)

    def test_triangular_residual_on_estimates(self, exp_jump_model, params20):
        from qscale.series import build_Af

        obs = simulate(exp_jump_model, make_scheme(100.0), seed=10)
        est = estimate_coeffs(obs, 0.1, 1.5, params20)
        A = build_Af(est.coeffs.a_f, params20.alpha)
        resid = np.max(np.abs(A @ est.coeffs.a_G - est.coeffs.a_F))
        assert resid <= 1e-12 * max(1.0, np.max(np.abs(est.coeffs.a_F)))

    def test_plug_in_identity_oracle_mode(self, exp_jump_model):
        # population Sigma entries match nu_functional_exact of the products
        params = LaguerreParams(1.0, 4)
        Sigma = population_covariance(exp_jump_model, params)
        theta = exp_jump_model.theta0()
        psi_p = (
            exp_jump_model.c
            + 2 * exp_jump_model.D * theta.gamma
            - exp_jump_model.jumps.exp_moment(theta.gamma)
        )

        def component(i):
            def H(z):
                Hp, Hf, HF = h_functionals(exp_jump_model.c, theta, params, z)
                Hg = -np.expm1(-theta.gamma * z) / psi_p  # note: minus k_gamma
                stack = np.vstack([Hf, HF, Hp[None, :], Hg[None, :]])
                return stack[i]

            return H

        # K = 4: rows 0-4 = H^f, 5-9 = H^F, 10 = H_p, 11 = gamma kernel
        for i, j in [(0, 0), (3, 7), (10, 10), (10, 11), (0, 11), (11, 11)]:
            want = nu_functional_exact(
                exp_jump_model, lambda z: component(i)(z) * component(j)(z)
            )
            assert Sigma[i, j] == pytest.approx(want, rel=1e-6, abs=1e-10)

    def test_v_gamma_matches_closed_form(self, exp_jump_model):
        # v0^2 = nu(k_gamma^2) / psi'(gamma)^2
        params = LaguerreParams(1.0, 2)
        Sigma = population_covariance(exp_jump_model, params)
        g = exp_jump_model.theta0().gamma
        nu_k2 = 1 / (1 + 2 * g) - 2 / (1 + g) + 1
        psi_p = 1.5 + 2 * 0.5 * g - 1.0 / (1 + g) ** 2
        assert Sigma[-1, -1] == pytest.approx(nu_k2 / psi_p**2, rel=1e-9)

    def test_gradient_rows_match_fd(self, exp_jump_model, params20):
        # C_K collapses the delta method: perturbing (p, gamma) in the
        # evaluator matches the last two gradient entries
        cs0 = coeffs_true(exp_jump_model, params20)
        est = PipelineEstimates(
            D_raw=exp_jump_model.D, gamma=GammaEstimate(cs0.theta.gamma), coeffs=cs0
        )
        obs = simulate(exp_jump_model, make_scheme(100.0), seed=11)
        x = np.array([2.0])
        cov = covariance_machinery(obs, est, 1.5, 0.1, x)
        from qscale.series import eval_P, eval_Q_all
        from qscale.levy import ThetaParams

        h = 1e-6
        K = params20.K

        def w_at(p, gamma):
            P = eval_P(x, p, gamma, cs0.theta.D, 1.5)
            Q = eval_Q_all(params20, x, p, gamma, cs0.theta.D, 1.5)
            return (P - cs0.a_G @ Q)[0]

        # reconstruct C entries (before Gamma) from covariance internals:
        # dW/dp and dW/dgamma occupy the last two slots
        dp_fd = (w_at(cs0.p + h, cs0.theta.gamma) - w_at(cs0.p - h, cs0.theta.gamma)) / (2 * h)
        dg_fd = (w_at(cs0.p, cs0.theta.gamma + h) - w_at(cs0.p, cs0.theta.gamma - h)) / (2 * h)
        # recompute C the same way the machinery does
        from qscale.series import grad_P, grad_Q_all

        dQ_dp, dQ_dg = grad_Q_all(params20, x, cs0.p, cs0.theta.gamma, cs0.theta.D, 1.5)
        dP_dp, dP_dg = grad_P(x, cs0.p, cs0.theta.gamma, cs0.theta.D, 1.5)
        assert dP_dp[0] - cs0.a_G @ dQ_dp[:, 0] == pytest.approx(dp_fd, rel=1e-6)
        assert dP_dg[0] - cs0.a_G @ dQ_dg[:, 0] == pytest.approx(dg_fd, rel=1e-6)

    def test_starred_gradients_match_fd(self, exp_jump_model, params20):
        from qscale.series import eval_Pstar, eval_Qstar_all, grad_Pstar, grad_Qstar_all

        cs0 = coeffs_true(exp_jump_model, params20)
        x = np.array([2.0])
        p0, g0, D0 = cs0.p, cs0.theta.gamma, cs0.theta.D
        h = 1e-6

        def z_at(p, gamma):
            Ps = eval_Pstar(x, p, gamma, D0, 1.5)
            Qs = eval_Qstar_all(params20, x, p, gamma, D0, 1.5)
            return (Ps - cs0.a_G @ Qs)[0]

        dp_fd = (z_at(p0 + h, g0) - z_at(p0 - h, g0)) / (2 * h)
        dg_fd = (z_at(p0, g0 + h) - z_at(p0, g0 - h)) / (2 * h)
        dQs_dp, dQs_dg = grad_Qstar_all(params20, x, p0, g0, D0, 1.5)
        dPs_dp, dPs_dg = grad_Pstar(x, p0, g0, D0, 1.5)
        assert dPs_dp[0] - cs0.a_G @ dQs_dp[:, 0] == pytest.approx(dp_fd, rel=1e-6)
        assert dPs_dg[0] - cs0.a_G @ dQs_dg[:, 0] == pytest.approx(dg_fd, rel=1e-6)

    def test_build_B_linearizes_triangular_solve(self, exp_jump_model):
        # -A^{-1} B (delta_f, delta_F) reproduces the change in a^G
        from qscale.series import build_Af, solve_aG
        from scipy.linalg import solve_triangular

        params = LaguerreParams(1.0, 6)
        cs0 = coeffs_true(exp_jump_model, params)
        A = build_Af(cs0.a_f, params.alpha)
        B = build_B(cs0.a_G, params.alpha)
        rng = np.random.default_rng(0)
        h = 1e-7
        df = rng.normal(size=params.K + 1) * h
        dF = rng.normal(size=params.K + 1) * h
        aG_pert = solve_aG(build_Af(cs0.a_f + df, params.alpha), cs0.a_F + dF)
        lin = -solve_triangular(A, B @ np.concatenate([df, dF]), lower=True)
        assert aG_pert - cs0.a_G == pytest.approx(lin, abs=1e-10)


class TestOracleModeReport:
    def test_reproduces_series_curves(self, exp_jump_model, params20):
        xs = np.linspace(0, 5, 21)
        rep = report_from_true_model(exp_jump_model, params20, xs)
        ap = scale_approx(exp_jump_model, params20)
        assert rep.cov.W_hat == pytest.approx(ap.w(xs), rel=0, abs=0)
        assert rep.cov.Z_hat == pytest.approx(ap.z(xs), rel=0, abs=0)
        assert rep.flags.get("oracle_mode") is True

    def test_report_json_round_trips(self, exp_jump_model, params20, tmp_path):
        import json

        obs = simulate(exp_jump_model, make_scheme(100.0), seed=12)
        rep = build_report(obs, 0.1, 1.5, params20, x=[1.0, 3.0])
        rep.save_json(tmp_path / "report.json")
        d = json.loads((tmp_path / "report.json").read_text())
        assert d["estimates"]["p_hat"] == pytest.approx(rep.p_hat)
        assert len(d["covariance"]["Sigma"]) == 2 * params20.K + 4
