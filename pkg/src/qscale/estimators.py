"""Estimation pipeline: D_hat, nu_hat, gamma_hat, coefficient estimators,
plug-in scale-function estimators, and the asymptotic covariance machinery.

Every coefficient-level quantity is a threshold functional
``nu_hat(H) = (1/T) sum_{recorded jumps} H(size)``; the CLT covariance of the
stacked estimator (a^f, a^F, p, gamma) is Gamma Sigma Gamma^T with
``sigma_ij = nu(Htilde_i Htilde_j)`` and Gamma the identity bordered by the
column ``nu(d/dgamma H)`` (plugged in with estimates throughout).  Pointwise
variances for W_hat and Z_hat contract that matrix with the gradient rows
C_K(x), q C*_K(x); confidence bounds are value +/- z * sqrt(var / T).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate, optimize, special
from scipy.linalg import solve_triangular

from .exceptions import DegenerateEstimateError, DomainError
from .laguerre import LaguerreParams
from .levy import LevyModel, ThetaParams
from .series import (
    CoefficientSet,
    ScaleApprox,
    build_Af,
    coeffs_true,
    eval_Q_all,
    eval_Qstar_all,
    grad_P,
    grad_Pstar,
    grad_Q_all,
    grad_Qstar_all,
    h_functionals,
    h_functionals_at,
    solve_aG,
)
from .simulate import ObservationSet
from .tabular import write_csv

__all__ = [
    "estimate_D",
    "nu_hat",
    "empirical_psi",
    "empirical_psi_deriv",
    "GammaEstimate",
    "estimate_gamma",
    "PipelineEstimates",
    "estimate_coeffs",
    "estimate_W",
    "build_B",
    "CovarianceReport",
    "covariance_machinery",
    "population_covariance",
    "EstimationReport",
    "build_report",
    "report_from_true_model",
    "write_ci_csv",
]

_FD_STEP = 1e-6  # central finite-difference step for d/dgamma of the H-kernels


def estimate_D(obs: ObservationSet, window: float = 1.0) -> float:
    """Realized-variance estimator of D = sigma^2/2 on [0, window].

    (1/(2 window)) * [ sum of squared grid increments - sum of squared
    recorded jump sizes with time <= window ].  The raw value is returned
    even when negative; callers clamp at zero where a nonnegative D feeds
    closed forms.
    """
    if window <= 0:
        raise DomainError(f"window must be > 0, got {window}")
    # epsilon guards the floor against float division noise at window = T
    m = int(math.floor(window / obs.scheme.delta + 1e-9))
    if m < 1 or m > obs.scheme.n:
        raise DomainError(
            f"window {window} needs {m} increments but the grid has {obs.scheme.n}"
        )
    incr = np.diff(obs.grid[: m + 1])
    sum_sq = float(np.dot(incr, incr))
    in_window = obs.jump_times <= window
    jump_sq = float(np.dot(obs.jump_sizes[in_window], obs.jump_sizes[in_window]))
    return (sum_sq - jump_sq) / (2.0 * window)


def nu_hat(obs: ObservationSet, H: Callable[[np.ndarray], np.ndarray]):
    """Threshold estimator (1/T) * sum_{jumps} H(size) over the whole window."""
    if len(obs.jump_sizes) == 0:
        probe = np.asarray(H(np.asarray([1.0])), dtype=float)
        return np.zeros(probe.shape[:-1]) if probe.ndim > 1 else 0.0
    vals = np.asarray(H(obs.jump_sizes), dtype=float)
    return vals.sum(axis=-1) / obs.scheme.T


def empirical_psi(obs: ObservationSet, c: float, D: float, r) -> float:
    """psi_hat(r) = c r + D r^2 + nu_hat(e^{-r z} - 1); convex in r for D >= 0."""
    z = obs.jump_sizes
    tail = float(np.sum(np.expm1(-np.multiply.outer(r, z)))) / obs.scheme.T if len(z) else 0.0
    return c * r + D * r * r + tail


def empirical_psi_deriv(obs: ObservationSet, c: float, D: float, r) -> float:
    z = obs.jump_sizes
    tail = float(np.sum(z * np.exp(-r * z))) / obs.scheme.T if len(z) else 0.0
    return c + 2.0 * D * r - tail


@dataclass(frozen=True)
class GammaEstimate:
    value: float
    boundary: bool = False  # search hit the box edge; value is the box optimum


def estimate_gamma(
    obs: ObservationSet,
    q: float,
    D_hat: float,
    c: float,
    r_max: float | None = None,
) -> GammaEstimate:
    """M-estimator of the Lundberg exponent: gamma_hat solves psi_hat(r) = q.

    Returns 0 exactly when q = 0 (the indicator in the definition).  The
    empirical psi_hat is convex, so its largest root is found by locating the
    minimizer of psi_hat (root of the increasing psi_hat') and bracketing to
    the right; when psi_hat never reaches q on [0, r_max] the squared
    objective is minimized by golden section instead and the boundary flag
    is set.
    """
    if q < 0:
        raise DomainError(f"q must be >= 0, got {q}")
    if q == 0.0:
        return GammaEstimate(0.0)
    D = max(D_hat, 0.0)
    if r_max is None:
        # ten times the Brownian-only root at 2q: a generous, finite box
        if D > 0:
            r0 = (-c + math.sqrt(c * c + 8.0 * D * q)) / (2.0 * D)
        else:
            r0 = 2.0 * q / c
        r_max = 10.0 * max(r0, 1e-3)

    psi = lambda r: empirical_psi(obs, c, D, r) - q
    dpsi = lambda r: empirical_psi_deriv(obs, c, D, r)
    lo = 0.0
    if dpsi(0.0) < 0.0:
        if dpsi(r_max) <= 0.0:
            lo = r_max
        else:
            lo = optimize.brentq(dpsi, 0.0, r_max, xtol=1e-14)
    if psi(r_max) < 0.0 or psi(lo) > 0.0:
        res = optimize.minimize_scalar(
            lambda r: psi(r) ** 2, bounds=(0.0, r_max), method="bounded",
            options={"xatol": 1e-12},
        )
        return GammaEstimate(float(res.x), boundary=True)
    if psi(lo) == 0.0:
        return GammaEstimate(float(lo))
    root = optimize.brentq(psi, lo, r_max, xtol=1e-14, rtol=8.9e-16)
    return GammaEstimate(float(root))


@dataclass(frozen=True)
class PipelineEstimates:
    """theta_hat = (max(D_hat, 0), gamma_hat) and the plug-in coefficient set."""

    D_raw: float
    gamma: GammaEstimate
    coeffs: CoefficientSet

    @property
    def theta(self) -> ThetaParams:
        return self.coeffs.theta

    @property
    def p(self) -> float:
        return self.coeffs.p


def estimate_coeffs(
    obs: ObservationSet,
    q: float,
    c: float,
    params: LaguerreParams,
    D_hat: float | None = None,
    gamma_hat: GammaEstimate | None = None,
    D_window: float = 1.0,
) -> PipelineEstimates:
    """(p_hat, a^f_hat, a^F_hat, a^G_hat) from one observation set.

    Averages the closed-form kernels over recorded jump sizes, then solves
    the triangular system built from a^f_hat.  Raises
    DegenerateEstimateError when p_hat >= 1 (every downstream formula
    divides by 1 - p) and IllConditionedError when the triangular system
    degenerates.
    """
    if D_hat is None:
        D_hat = estimate_D(obs, window=D_window)
    if gamma_hat is None:
        gamma_hat = estimate_gamma(obs, q, D_hat, c)
    theta = ThetaParams(D=max(D_hat, 0.0), gamma=gamma_hat.value)
    n = params.K + 1
    if len(obs.jump_sizes) == 0:
        coeffs = CoefficientSet(0.0, np.zeros(n), np.zeros(n), np.zeros(n), params, theta)
        return PipelineEstimates(D_raw=D_hat, gamma=gamma_hat, coeffs=coeffs)
    H_p, H_f, H_F = h_functionals(c, theta, params, obs.jump_sizes)
    T = obs.scheme.T
    p_hat = float(H_p.sum() / T)
    a_f = H_f.sum(axis=1) / T
    a_F = H_F.sum(axis=1) / T
    if p_hat >= 1.0:
        raise DegenerateEstimateError("p_hat >= 1", raw_value=p_hat)
    a_G = solve_aG(build_Af(a_f, params.alpha), a_F)
    coeffs = CoefficientSet(p_hat, a_f, a_F, a_G, params, theta)
    return PipelineEstimates(D_raw=D_hat, gamma=gamma_hat, coeffs=coeffs)


def estimate_W(est: PipelineEstimates, c: float, q: float, x):
    """(W_hat(x), Z_hat(x)) by plugging the estimates into the evaluators."""
    approx = ScaleApprox(c=c, q=q, coeffs=est.coeffs)
    return approx.w(x), approx.z(x)


def build_B(a_G: np.ndarray, alpha: float) -> np.ndarray:
    """B_K = (B*_K, -I): the sensitivity of the triangular system to a^f.

    B* has diagonal -a^G_0 / sqrt(2 alpha) and entries
    -(a^G_{k-l} - a^G_{k-l-1}) / sqrt(2 alpha) below it.
    """
    a_G = np.asarray(a_G, dtype=float)
    n = len(a_G)
    r = math.sqrt(2.0 * alpha)
    col = np.empty(n)
    col[0] = -a_G[0] / r
    if n > 1:
        col[1:] = -(a_G[1:] - a_G[:-1]) / r
    B_star = np.zeros((n, n))
    for d in range(n):
        B_star[np.arange(d, n), np.arange(0, n - d)] = col[d]
    return np.hstack([B_star, -np.eye(n)])


@dataclass(frozen=True)
class CovarianceReport:
    """Plug-in CLT covariance blocks and pointwise intervals on the x grid."""

    Sigma: np.ndarray       # (2K+4, 2K+4), nu_hat of Htilde outer products
    Gamma: np.ndarray       # (2K+4, 2K+4), identity bordered by nu_hat(dH/dgamma)
    B: np.ndarray           # (K+1, 2K+2)
    x: np.ndarray
    W_hat: np.ndarray
    Z_hat: np.ndarray
    sigma_W: np.ndarray     # sigma_K(x), asymptotic variance of sqrt(T) (W_hat - W_K)
    sigma_Z: np.ndarray     # sigma*_K(x)
    joint: np.ndarray       # (nx, 2, 2) joint asymptotic covariance
    W_lo: np.ndarray
    W_hi: np.ndarray
    Z_lo: np.ndarray
    Z_hi: np.ndarray
    level: float
    psd_ok: bool
    min_eig: float

    @property
    def v_gamma_sq(self) -> float:
        """Asymptotic variance of sqrt(T) (gamma_hat - gamma_0)."""
        return float(self.Sigma[-1, -1])


def _h_stack_at(c, D, gamma, params, z):
    Hp, Hf, HF = h_functionals_at(c, D, gamma, params, z)
    return np.vstack([Hf, HF, Hp[None, :]])


def covariance_machinery(
    obs: ObservationSet,
    est: PipelineEstimates,
    c: float,
    q: float,
    x,
    level: float = 0.95,
) -> CovarianceReport:
    """Sigma_hat, Gamma_hat, B_hat and pointwise variances / CIs for (W, Z).

    Gradients of P, Q, P*, Q* in (p, gamma) are analytic; the column
    nu_hat(d/dgamma H) in Gamma_hat uses central finite differences of the
    closed-form kernels (step 1e-6), which the kernels' C^1 regularity makes
    accurate to ~1e-8.
    """
    coeffs = est.coeffs
    params = coeffs.params
    theta = coeffs.theta
    K = params.K
    dim = 2 * K + 4
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = obs.jump_sizes
    T = obs.scheme.T

    if len(z) > 0:
        Hstack = _h_stack_at(c, theta.D, theta.gamma, params, z)  # (2K+3, nz)
        psi_prime = empirical_psi_deriv(obs, c, theta.D, theta.gamma)
        # gamma influence function: expanding psi_hat(gamma_hat) = q around
        # gamma_0 gives sqrt(T)(gamma_hat - gamma_0)
        #   = -sqrt(T)(nu_hat - nu)(k_gamma) / psi'(gamma) + o_p(1),
        # so the stacked kernel is -k_gamma / psi' (the sign matters only for
        # the cross-covariances, not for v_gamma^2 itself)
        k_gamma = np.expm1(-theta.gamma * z)
        H_gamma = (-k_gamma / psi_prime)[None, :]
        Htilde = np.vstack([Hstack, H_gamma])
        Sigma = (Htilde @ Htilde.T) / T
        up = _h_stack_at(c, theta.D, theta.gamma + _FD_STEP, params, z)
        dn = _h_stack_at(c, theta.D, theta.gamma - _FD_STEP, params, z)
        dH_col = ((up - dn) / (2.0 * _FD_STEP)).sum(axis=1) / T
    else:
        Sigma = np.zeros((dim, dim))
        dH_col = np.zeros(dim - 1)

    Gamma = np.eye(dim)
    Gamma[: dim - 1, dim - 1] = dH_col

    eigs = np.linalg.eigvalsh(Sigma)
    min_eig = float(eigs[0])
    psd_ok = min_eig >= -1e-10 * max(1.0, float(np.trace(Sigma)))

    B = build_B(coeffs.a_G, params.alpha)
    A = build_Af(coeffs.a_f, params.alpha)
    AinvB = solve_triangular(A, B, lower=True)  # (K+1, 2K+2)

    p, gamma, D = coeffs.p, theta.gamma, theta.D
    approx = ScaleApprox(c=c, q=q, coeffs=coeffs)
    W_hat = approx.w(x)
    Z_hat = approx.z(x)

    Q = eval_Q_all(params, x, p, gamma, D, c)            # (K+1, nx)
    dQ_dp, dQ_dg = grad_Q_all(params, x, p, gamma, D, c)
    dP_dp, dP_dg = grad_P(x, p, gamma, D, c)
    C = np.empty((len(x), dim))
    C[:, : 2 * K + 2] = Q.T @ AinvB
    C[:, 2 * K + 2] = dP_dp - coeffs.a_G @ dQ_dp
    C[:, 2 * K + 3] = dP_dg - coeffs.a_G @ dQ_dg

    Qs = eval_Qstar_all(params, x, p, gamma, D, c)
    dQs_dp, dQs_dg = grad_Qstar_all(params, x, p, gamma, D, c)
    dPs_dp, dPs_dg = grad_Pstar(x, p, gamma, D, c)
    Cs = np.empty((len(x), dim))
    Cs[:, : 2 * K + 2] = Qs.T @ AinvB
    Cs[:, 2 * K + 2] = dPs_dp - coeffs.a_G @ dQs_dp
    Cs[:, 2 * K + 3] = dPs_dg - coeffs.a_G @ dQs_dg

    CG = C @ Gamma
    CsG = Cs @ Gamma
    sigma_W = np.einsum("xi,ij,xj->x", CG, Sigma, CG)
    sigma_Z = q * q * np.einsum("xi,ij,xj->x", CsG, Sigma, CsG)
    rows = np.stack([CG, q * CsG], axis=1)  # (nx, 2, dim)
    joint = np.einsum("xai,ij,xbj->xab", rows, Sigma, rows)

    zq = float(special.ndtri(0.5 + level / 2.0))
    if psd_ok:
        hw_W = zq * np.sqrt(np.maximum(sigma_W, 0.0) / T)
        hw_Z = zq * np.sqrt(np.maximum(sigma_Z, 0.0) / T)
        W_lo, W_hi = W_hat - hw_W, W_hat + hw_W
        Z_lo, Z_hi = Z_hat - hw_Z, Z_hat + hw_Z
    else:  # suppress intervals rather than report nonsense
        nanarr = np.full_like(W_hat, np.nan)
        W_lo = W_hi = Z_lo = Z_hi = nanarr

    return CovarianceReport(
        Sigma=Sigma, Gamma=Gamma, B=B, x=x, W_hat=W_hat, Z_hat=Z_hat,
        sigma_W=sigma_W, sigma_Z=sigma_Z, joint=joint,
        W_lo=W_lo, W_hi=W_hi, Z_lo=Z_lo, Z_hi=Z_hi,
        level=level, psd_ok=psd_ok, min_eig=min_eig,
    )


def population_covariance(model: LevyModel, params: LaguerreParams) -> np.ndarray:
    """Sigma_K at the true parameters by quadrature against nu (oracle mode)."""
    theta = model.theta0()
    psi_prime = model.c + 2.0 * model.D * theta.gamma - model.jumps.exp_moment(theta.gamma)
    dim = 2 * params.K + 4

    def stacked(z):
        H = _h_stack_at(model.c, theta.D, theta.gamma, params, z)
        Hg = (-np.expm1(-theta.gamma * z) / psi_prime)[None, :]
        return np.vstack([H, Hg])

    def integrand(z):
        zz = np.asarray([z], dtype=float)
        h = stacked(zz)[:, 0]
        return np.outer(h, h) * float(model.jumps.density(zz)[0])

    res, err = integrate.quad_vec(integrand, 0.0, np.inf, epsabs=1e-12, epsrel=1e-9, limit=200)
    assert res.shape == (dim, dim)
    return res


@dataclass
class EstimationReport:
    """Everything one estimation run produces, JSON-serializable."""

    c: float
    q: float
    alpha: float
    K: int
    D_hat_raw: float
    D_hat: float
    gamma_hat: float
    gamma_boundary: bool
    p_hat: float
    a_f_hat: np.ndarray
    a_F_hat: np.ndarray
    a_G_hat: np.ndarray
    cov: CovarianceReport
    scheme: dict
    seed: int
    n_jumps: int
    level: float
    flags: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        cov = self.cov
        return {
            "c": self.c,
            "q": self.q,
            "laguerre": {"alpha": self.alpha, "K": self.K},
            "estimates": {
                "D_hat_raw": self.D_hat_raw,
                "D_hat": self.D_hat,
                "gamma_hat": self.gamma_hat,
                "gamma_boundary": self.gamma_boundary,
                "p_hat": self.p_hat,
                "a_f_hat": self.a_f_hat.tolist(),
                "a_F_hat": self.a_F_hat.tolist(),
                "a_G_hat": self.a_G_hat.tolist(),
                "v_gamma_sq": cov.v_gamma_sq,
            },
            "covariance": {
                "Sigma": cov.Sigma.tolist(),
                "Gamma": cov.Gamma.tolist(),
                "B": cov.B.tolist(),
                "psd_ok": cov.psd_ok,
                "min_eig": cov.min_eig,
            },
            "curves": {
                "x": cov.x.tolist(),
                "W_hat": cov.W_hat.tolist(),
                "Z_hat": cov.Z_hat.tolist(),
                "sigma_K": cov.sigma_W.tolist(),
                "sigma_star_K": cov.sigma_Z.tolist(),
                "joint_cov": cov.joint.tolist(),
                "W_lo": cov.W_lo.tolist(),
                "W_hi": cov.W_hi.tolist(),
                "Z_lo": cov.Z_lo.tolist(),
                "Z_hi": cov.Z_hi.tolist(),
                "level": self.level,
            },
            "scheme": self.scheme,
            "seed": self.seed,
            "n_jumps": self.n_jumps,
            "flags": self.flags,
        }

    def save_json(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"
        )


def build_report(
    obs: ObservationSet,
    q: float,
    c: float,
    params: LaguerreParams,
    x,
    level: float = 0.95,
    D_window: float = 1.0,
) -> EstimationReport:
    """Run the whole pipeline on one observation set."""
    D_raw = estimate_D(obs, window=D_window)
    gam = estimate_gamma(obs, q, D_raw, c)
    est = estimate_coeffs(obs, q, c, params, D_hat=D_raw, gamma_hat=gam)
    cov = covariance_machinery(obs, est, c, q, x, level=level)
    flags = {}
    if D_raw < 0:
        flags["negative_D_hat"] = True
    if gam.boundary:
        flags["gamma_boundary"] = True
    if not cov.psd_ok:
        flags["non_psd_sigma"] = True
    return EstimationReport(
        c=c, q=q, alpha=params.alpha, K=params.K,
        D_hat_raw=D_raw, D_hat=max(D_raw, 0.0),
        gamma_hat=gam.value, gamma_boundary=gam.boundary,
        p_hat=est.p,
        a_f_hat=est.coeffs.a_f, a_F_hat=est.coeffs.a_F, a_G_hat=est.coeffs.a_G,
        cov=cov, scheme=obs.scheme.to_dict(), seed=obs.seed,
        n_jumps=len(obs.jump_sizes), level=level, flags=flags,
    )


def report_from_true_model(
    model: LevyModel,
    params: LaguerreParams,
    x,
    obs: ObservationSet | None = None,
    level: float = 0.95,
) -> EstimationReport:
    """Oracle mode: true (theta0, p0, a^G) through the estimation code path.

    Reproduces the scale_series curves exactly; covariances use the exact
    nu-functionals when no observation set is supplied.
    """
    coeffs = coeffs_true(model, params)
    est = PipelineEstimates(
        D_raw=model.D, gamma=GammaEstimate(coeffs.theta.gamma), coeffs=coeffs
    )
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if obs is not None:
        cov = covariance_machinery(obs, est, model.c, model.q, x, level=level)
        scheme, seed, n_jumps = obs.scheme.to_dict(), obs.seed, len(obs.jump_sizes)
    else:
        approx = ScaleApprox(c=model.c, q=model.q, coeffs=coeffs)
        dim = 2 * params.K + 4
        zeros = np.zeros(len(x))
        W_hat, Z_hat = approx.w(x), approx.z(x)
        cov = CovarianceReport(
            Sigma=np.zeros((dim, dim)), Gamma=np.eye(dim),
            B=build_B(coeffs.a_G, params.alpha),
            x=x, W_hat=W_hat, Z_hat=Z_hat,
            sigma_W=zeros, sigma_Z=zeros.copy(),
            joint=np.zeros((len(x), 2, 2)),
            W_lo=W_hat.copy(), W_hi=W_hat.copy(),
            Z_lo=Z_hat.copy(), Z_hi=Z_hat.copy(),
            level=level, psd_ok=True, min_eig=0.0,
        )
        scheme, seed, n_jumps = {}, -1, 0
    return EstimationReport(
        c=model.c, q=model.q, alpha=params.alpha, K=params.K,
        D_hat_raw=model.D, D_hat=model.D,
        gamma_hat=coeffs.theta.gamma, gamma_boundary=False,
        p_hat=coeffs.p,
        a_f_hat=coeffs.a_f, a_F_hat=coeffs.a_F, a_G_hat=coeffs.a_G,
        cov=cov, scheme=scheme, seed=seed, n_jumps=n_jumps,
        level=level, flags={"oracle_mode": True},
    )


def write_ci_csv(path, cov: CovarianceReport) -> None:
    """Per-x curve: x, W_hat, Z_hat, W_lo, W_hi, Z_lo, Z_hi, sigma_K, sigma_star_K."""
    write_csv(
        path,
        ["x", "W_hat", "Z_hat", "W_lo", "W_hi", "Z_lo", "Z_hi", "sigma_K", "sigma_star_K"],
        [cov.x, cov.W_hat, cov.Z_hat, cov.W_lo, cov.W_hi, cov.Z_lo, cov.Z_hi,
         cov.sigma_W, cov.sigma_Z],
    )
