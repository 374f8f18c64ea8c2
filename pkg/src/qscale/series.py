"""Laguerre-type series expansion of the q-scale functions W and Z.

Pipeline: the model induces a defective density ``ftilde_q`` with total mass
``p in (0,1)`` under the net profit condition; the tail of the associated
compound geometric distribution solves a defective renewal equation whose
Laguerre coefficients ``a^G`` satisfy a lower-triangular Toeplitz system
``A^f a^G = a^F``.  The truncated expansions

    W_K(x) = P(x) - Q_{alpha,K}(x) . a^G
    Z_K(x) = 1 + q * (P*(x) - Q*_{alpha,K}(x) . a^G)

use closed-form kernels built from the convolution integrals Psi_{alpha,k}.
The starred kernels are the exact antiderivatives of the unstarred ones, so
Z_K = 1 + q * int_0^x W_K holds identically.

Coefficient functionals: p, a^f_k, a^F_k are nu-integrals of kernels H_p,
H^f_k, H^F_k.  Those kernels are evaluated pointwise through stable
first-order recurrences in k (same generating-function identity as Psi); a
full nested-quadrature evaluation is retained as a cross-check mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .exceptions import DomainError, IllConditionedError, NumericalError
from .laguerre import (
    LaguerreParams,
    laguerre_fn_all,
    partial_sum,
    psi_integral_all,
    psi_integral_db_all,
)
from .levy import CompoundPoissonExponential, LevyModel, ThetaParams

__all__ = [
    "CoefficientSet",
    "ScaleApprox",
    "ftilde_q",
    "p_value",
    "h_functionals",
    "h_functionals_at",
    "h_functionals_quadrature",
    "coeffs_true",
    "scale_approx",
    "build_Af",
    "solve_aG",
    "gbar_partial_sum",
    "eval_P",
    "eval_Q_all",
    "eval_Pstar",
    "eval_Qstar_all",
    "grad_P",
    "grad_Q_all",
    "grad_Pstar",
    "grad_Qstar_all",
    "eval_WK",
    "eval_ZK",
]

_SOLVE_RTOL = 1e-12
_DIAG_FLOOR = 1e-10


# ---------------------------------------------------------------------------
# Defective density and its mass
# ---------------------------------------------------------------------------

def _tilted_tail(model: LevyModel, gamma: float, y):
    """g(y) = int_y^inf e^{-gamma (z - y)} nu(dz), closed form per family."""
    from scipy import special

    jumps = model.jumps
    y = np.asarray(y, dtype=float)
    if jumps.is_zero:
        return np.zeros_like(y)
    if isinstance(jumps, CompoundPoissonExponential):
        mu = jumps.mu
        return jumps.rate * mu * np.exp(-mu * y) / (gamma + mu)
    kind = jumps.kind
    if kind == "compound-poisson-gamma":
        a, s = jumps.shape, jumps.scale
        w = gamma + 1.0 / s
        return jumps.rate * np.exp(gamma * y) * special.gammaincc(a, w * y) / (s * w) ** a
    if kind == "gamma-subordinator":
        a, b = jumps.shape, jumps.rate
        return a * np.exp(gamma * y) * special.exp1((b + gamma) * y)
    # generic fallback: tail quadrature of the defining integral
    def one(yy):
        val, _ = integrate.quad(
            lambda z: np.exp(-gamma * (z - yy)) * float(jumps.density(z)),
            yy,
            np.inf,
            limit=200,
        )
        return val

    return np.vectorize(one)(y)


def ftilde_q(model: LevyModel, theta: ThetaParams, x):
    """The defective density ftilde_q(x) (mass p, not normalized).

    D > 0: D^{-1} int_0^x e^{-beta (x-y)} g(y) dy with g the gamma-tilted
    jump tail; D = 0: c^{-1} g(x).
    """
    gamma = theta.gamma
    x_in = np.asarray(x, dtype=float)
    x_arr = np.atleast_1d(x_in)
    if model.jumps.is_zero:
        out = np.zeros_like(x_arr)
        return float(out[0]) if x_in.ndim == 0 else out
    if theta.D == 0:
        out = _tilted_tail(model, gamma, x_arr) / model.c
        return float(out[0]) if x_in.ndim == 0 else out
    beta = theta.beta(model.c)

    def one(xx):
        if xx <= 0:
            return 0.0
        val, _ = integrate.quad(
            lambda y: np.exp(-beta * (xx - y)) * float(_tilted_tail(model, gamma, y)),
            0.0,
            xx,
            limit=200,
            points=[0.0] if model.jumps.total_rate() == np.inf else None,
        )
        return val / theta.D

    out = np.vectorize(one)(x_arr)
    return float(out[0]) if x_in.ndim == 0 else out


def p_value(model: LevyModel, theta: ThetaParams) -> float:
    """p = nu(H_p(.; theta)) in closed form via the jump exponential functional.

    H_p(z) = (1 - e^{-gamma z}) / (gamma (c + D gamma)) covers both branches
    (beta D = c + D gamma when D > 0), with the gamma -> 0 limit z / c.
    """
    model.require_npc()
    if model.jumps.is_zero:
        return 0.0
    c, D, gamma = model.c, theta.D, theta.gamma
    if gamma == 0.0:
        return model.jumps.mean() / c
    return float(-model.jumps.exp_functional(gamma) / (gamma * (c + D * gamma)))


# ---------------------------------------------------------------------------
# Coefficient kernels H_p, H^f_k, H^F_k
# ---------------------------------------------------------------------------

def _gamma_window(gamma: float, z: np.ndarray) -> np.ndarray:
    """(1 - e^{-gamma z}) / gamma with the gamma -> 0 limit z."""
    if abs(gamma) < 1e-10:
        return z.copy()
    return -np.expm1(-gamma * z) / gamma


def h_functionals(
    c: float, theta: ThetaParams, params: LaguerreParams, z
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(H_p, H^f_{0..K}, H^F_{0..K})(z; theta) for an array of jump sizes z.

    Returns shapes ((nz,), (K+1, nz), (K+1, nz)).
    """
    return h_functionals_at(c, theta.D, theta.gamma, params, z)


def h_functionals_at(
    c: float, D: float, gamma: float, params: LaguerreParams, z
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """h_functionals on raw (D, gamma); gamma may dip slightly negative.

    Used by the finite-difference gamma-derivatives in the covariance
    machinery (the kernels extend smoothly through gamma = 0).  All inner
    x-integrals are closed forms; the k-ladders below are first-order
    recurrences with contraction factor |alpha - beta| / (alpha + beta) < 1
    (D > 0 branch).
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    K, alpha = params.K, params.alpha
    sq2a = params.sq2a
    ks = np.arange(K + 1)
    sign = np.where(ks % 2 == 0, 1.0, -1.0)[:, None]
    kg = _gamma_window(gamma, z)[None, :]
    psi_neg = psi_integral_all(params, z, -gamma)  # Psi_k(z; -gamma), (K+1, nz)

    if D == 0:
        H_p = kg[0] / c
        H_f = psi_neg / c
        S0 = np.empty_like(psi_neg)
        S0[0] = psi_neg[0] / alpha
        for k in range(1, K + 1):
            S0[k] = -S0[k - 1] + (psi_neg[k] - psi_neg[k - 1]) / alpha
        H_F = (sign * sq2a * kg / alpha - S0) / c
        return H_p, H_f, H_F

    beta = c / D + gamma
    st = alpha + beta
    H_p = kg[0] / (beta * D)
    # V_k = int_0^z e^{-gamma (z-y)} Utilde_k(y) dy (scaled by sqrt(2 alpha))
    V = np.empty_like(psi_neg)
    V[0] = psi_neg[0] / st
    for k in range(1, K + 1):
        V[k] = (-(2.0 * alpha - st) * V[k - 1] + (psi_neg[k] - psi_neg[k - 1])) / st
    H_f = V / D
    S = np.empty_like(psi_neg)
    S[0] = psi_neg[0] / (alpha * st)
    for k in range(1, K + 1):
        S[k] = -S[k - 1] + (V[k] - V[k - 1]) / alpha
    H_F = (sign * sq2a * kg / (alpha * beta) - S) / D
    return H_p, H_f, H_F


def h_functionals_quadrature(
    c: float, theta: ThetaParams, params: LaguerreParams, z: float, k: int
) -> tuple[float, float, float]:
    """Nested-quadrature evaluation of (H_p, H^f_k, H^F_k)(z; theta).

    Slow cross-check of the recurrence path (one z, one order at a time).
    """
    gamma, D = theta.gamma, theta.D
    phi = lambda x: laguerre_fn_all(params, x, kmax=k)[k]
    psi0 = lambda x: psi_integral_all(params, x, 0.0, kmax=k)[k]
    if D == 0:
        H_p, _ = integrate.quad(lambda x: np.exp(-gamma * (z - x)), 0.0, z)
        H_f, _ = integrate.quad(lambda x: np.exp(-gamma * (z - x)) * phi(x), 0.0, z, limit=200)
        H_F, _ = integrate.quad(lambda x: np.exp(-gamma * (z - x)) * psi0(x), 0.0, z, limit=200)
        return H_p / c, H_f / c, H_F / c
    beta = theta.beta(c)

    def outer(inner_fn):
        def dy(y):
            val, _ = integrate.quad(
                lambda x: np.exp(-beta * (x - y)) * inner_fn(x), y, np.inf, limit=200
            )
            return np.exp(-gamma * (z - y)) * val

        val, _ = integrate.quad(dy, 0.0, z, limit=200)
        return val / D

    return outer(lambda x: 1.0), outer(phi), outer(psi0)


# ---------------------------------------------------------------------------
# Coefficient system
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoefficientSet:
    """Expansion state: mass p and the coefficient vectors of length K+1."""

    p: float
    a_f: np.ndarray
    a_F: np.ndarray
    a_G: np.ndarray
    params: LaguerreParams
    theta: ThetaParams

    def __post_init__(self):
        n = self.params.K + 1
        for name in ("a_f", "a_F", "a_G"):
            vec = getattr(self, name)
            if vec.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},), got {vec.shape}")


def build_Af(a_f: np.ndarray, alpha: float) -> np.ndarray:
    """Lower-triangular Toeplitz matrix of the renewal-convolution system.

    Diagonal 1 - a^f_0 / sqrt(2 alpha); entry (k, l) for k > l is
    -(a^f_{k-l} - a^f_{k-l-1}) / sqrt(2 alpha); zero above the diagonal.
    """
    a_f = np.asarray(a_f, dtype=float)
    n = len(a_f)
    r = np.sqrt(2.0 * alpha)
    col = np.empty(n)
    col[0] = 1.0 - a_f[0] / r
    if n > 1:
        col[1:] = -(a_f[1:] - a_f[:-1]) / r
    A = np.zeros((n, n))
    for d in range(n):
        A[np.arange(d, n), np.arange(0, n - d)] = col[d]
    return A


def solve_aG(A: np.ndarray, a_F: np.ndarray) -> np.ndarray:
    """Forward substitution for the lower-triangular system A a_G = a_F.

    Raises IllConditionedError when a diagonal entry is below 1e-10 in
    magnitude (signals p f_q mass concentration), NumericalError if the
    final residual exceeds 1e-12 * |a_F|_inf.
    """
    A = np.asarray(A, dtype=float)
    a_F = np.asarray(a_F, dtype=float)
    n = len(a_F)
    if np.min(np.abs(np.diag(A))) < _DIAG_FLOOR:
        raise IllConditionedError(
            f"triangular system near-singular: min |diag| = {np.min(np.abs(np.diag(A))):.3e}"
        )
    x = np.zeros(n)
    for i in range(n):
        x[i] = (a_F[i] - A[i, :i] @ x[:i]) / A[i, i]
    scale = max(float(np.max(np.abs(a_F))), 1e-300)
    resid = float(np.max(np.abs(A @ x - a_F)))
    if resid > _SOLVE_RTOL * scale:
        raise NumericalError("triangular solve residual above tolerance", residual=resid)
    return x


def coeffs_true(
    model: LevyModel, params: LaguerreParams, method: str = "auto"
) -> CoefficientSet:
    """Population coefficients (p, a^f, a^F, a^G) at theta0 = (D, Phi(q)).

    method: 'closed' uses the exponential-mixture form of p f_q (exponential
    jump family only); 'quadrature' integrates the H-kernels against nu;
    'auto' picks closed where available.
    """
    model.require_npc()
    theta = model.theta0()
    n = params.K + 1
    if model.jumps.is_zero:
        zero = np.zeros(n)
        return CoefficientSet(0.0, zero, zero.copy(), zero.copy(), params, theta)

    if method == "auto":
        method = (
            "closed" if isinstance(model.jumps, CompoundPoissonExponential) else "quadrature"
        )
    if method == "closed":
        p, a_f, a_F = _closed_coeffs_exponential(model, theta, params)
    elif method == "quadrature":
        p = p_value(model, theta)
        a_f, a_F = _quadrature_coeffs(model, theta, params)
    else:
        raise ValueError(f"unknown coefficient method {method!r}")
    if not 0.0 < p < 1.0:
        raise DomainError(f"p = {p} outside (0,1); NPC or quadrature failure")
    A = build_Af(a_f, params.alpha)
    a_G = solve_aG(A, a_F)
    return CoefficientSet(p, a_f, a_F, a_G, params, theta)


def _lag_transform_exp(rate: float, params: LaguerreParams) -> np.ndarray:
    """<e^{-r x}, phi_{alpha,k}> = sqrt(2a)/s * ((s-2a)/s)^k, s = r + alpha."""
    s = rate + params.alpha
    ks = np.arange(params.K + 1)
    return params.sq2a / s * ((s - 2.0 * params.alpha) / s) ** ks


def _lag_transform_xexp(rate: float, params: LaguerreParams) -> np.ndarray:
    """<x e^{-r x}, phi_{alpha,k}> = -d/ds of the pure-exponential transform."""
    a = params.alpha
    s = rate + a
    u = (s - 2.0 * a) / s
    ks = np.arange(params.K + 1)
    main = u**ks / s**2
    corr = 2.0 * a * ks * u ** np.maximum(ks - 1, 0) / s**3
    return params.sq2a * (main - corr)


def _closed_coeffs_exponential(
    model: LevyModel, theta: ThetaParams, params: LaguerreParams
) -> tuple[float, np.ndarray, np.ndarray]:
    """p f_q is a one- or two-exponential mixture for exponential jumps."""
    jumps = model.jumps
    assert isinstance(jumps, CompoundPoissonExponential)
    lam, mu = jumps.rate, jumps.mu
    gamma, D, c = theta.gamma, theta.D, model.c
    p = p_value(model, theta)
    if D == 0:
        w = lam * mu / (c * (gamma + mu))
        a_f = w * _lag_transform_exp(mu, params)
        a_F = (w / mu) * _lag_transform_exp(mu, params)
        return p, a_f, a_F
    beta = theta.beta(c)
    front = lam * mu / (D * (gamma + mu))
    if abs(beta - mu) > 1e-8 * max(beta, mu):
        C = front / (beta - mu)
        a_f = C * (_lag_transform_exp(mu, params) - _lag_transform_exp(beta, params))
        a_F = C * (
            _lag_transform_exp(mu, params) / mu - _lag_transform_exp(beta, params) / beta
        )
    else:
        # beta ~ mu: p f_q = front * x e^{-mu x}
        a_f = front * _lag_transform_xexp(mu, params)
        a_F = front * (
            _lag_transform_xexp(mu, params) / mu + _lag_transform_exp(mu, params) / mu**2
        )
    return p, a_f, a_F


def _quadrature_coeffs(
    model: LevyModel, theta: ThetaParams, params: LaguerreParams
) -> tuple[np.ndarray, np.ndarray]:
    """a^f, a^F by adaptive quadrature of the H-kernels against nu."""
    jumps = model.jumps
    n = params.K + 1

    def integrand(z):
        zz = np.asarray([z], dtype=float)
        _, H_f, H_F = h_functionals(model.c, theta, params, zz)
        return np.concatenate([H_f[:, 0], H_F[:, 0]]) * float(jumps.density(zz)[0])

    res, err = integrate.quad_vec(integrand, 0.0, np.inf, epsabs=1e-12, epsrel=1e-9, limit=200)
    scale = max(float(np.max(np.abs(res))), 1.0)
    if err > 1e-6 * scale:
        raise NumericalError("coefficient quadrature did not converge", residual=float(err))
    return res[:n], res[n:]


# ---------------------------------------------------------------------------
# Evaluators P, Q, P*, Q* and the truncated scale functions
# ---------------------------------------------------------------------------

def _check_p(p: float) -> None:
    if p >= 1.0:
        raise DomainError(f"p = {p} >= 1: compound geometric representation undefined")


def _expm1_over(gamma: float, x: np.ndarray) -> np.ndarray:
    """(e^{gamma x} - 1) / gamma with the gamma -> 0 limit x."""
    if gamma < 1e-10:
        return x.copy()
    return np.expm1(gamma * x) / gamma


def eval_P(x, p: float, gamma: float, D: float, c: float):
    """Leading term of W_K (the p f_q = 0 part of the compound-geometric form)."""
    _check_p(p)
    x = np.asarray(x, dtype=float)
    if D > 0:
        beta = c / D + gamma
        return (np.exp(gamma * x) - np.exp(-beta * x)) / (D * (1.0 - p) * (beta + gamma))
    return np.exp(gamma * x) / (c * (1.0 - p))


def eval_Q_all(params: LaguerreParams, x, p: float, gamma: float, D: float, c: float):
    """Q_{alpha,k}(x) for k = 0..K; the kernel applied to each basis function."""
    _check_p(p)
    x = np.asarray(x, dtype=float)
    if D > 0:
        beta = c / D + gamma
        psi_g = psi_integral_all(params, x, gamma)
        psi_b = psi_integral_all(params, x, -beta)
        return (gamma * psi_g + beta * psi_b) / (D * (1.0 - p) * (beta + gamma))
    phi = laguerre_fn_all(params, x)
    psi_g = psi_integral_all(params, x, gamma)
    return (phi + gamma * psi_g) / (c * (1.0 - p))


def eval_Pstar(x, p: float, gamma: float, D: float, c: float):
    """int_0^x P; exact antiderivative of eval_P."""
    _check_p(p)
    x = np.asarray(x, dtype=float)
    g1 = _expm1_over(gamma, x)
    if D > 0:
        beta = c / D + gamma
        return (g1 - (1.0 - np.exp(-beta * x)) / beta) / (D * (1.0 - p) * (beta + gamma))
    return g1 / (c * (1.0 - p))


def eval_Qstar_all(params: LaguerreParams, x, p: float, gamma: float, D: float, c: float):
    """int_0^x Q_{alpha,k}; exact antiderivative of eval_Q_all."""
    _check_p(p)
    x = np.asarray(x, dtype=float)
    psi_g = psi_integral_all(params, x, gamma)
    if D > 0:
        beta = c / D + gamma
        psi_b = psi_integral_all(params, x, -beta)
        return (psi_g - psi_b) / (D * (1.0 - p) * (beta + gamma))
    return psi_g / (c * (1.0 - p))


def grad_P(x, p: float, gamma: float, D: float, c: float):
    """(d/dp P, d/dgamma P); gamma enters beta = c/D + gamma with slope 1."""
    _check_p(p)
    x = np.asarray(x, dtype=float)
    P = eval_P(x, p, gamma, D, c)
    dP_dp = P / (1.0 - p)
    if D > 0:
        beta = c / D + gamma
        dnum = x * (np.exp(gamma * x) + np.exp(-beta * x))
        dP_dg = dnum / (D * (1.0 - p) * (beta + gamma)) - 2.0 * P / (beta + gamma)
    else:
        dP_dg = x * P
    return dP_dp, dP_dg


def grad_Q_all(params: LaguerreParams, x, p: float, gamma: float, D: float, c: float):
    """(d/dp Q_k, d/dgamma Q_k) for k = 0..K."""
    _check_p(p)
    x = np.asarray(x, dtype=float)
    Q = eval_Q_all(params, x, p, gamma, D, c)
    dQ_dp = Q / (1.0 - p)
    psi_g = psi_integral_all(params, x, gamma)
    dpsi_g = psi_integral_db_all(params, x, gamma)
    if D > 0:
        beta = c / D + gamma
        psi_b = psi_integral_all(params, x, -beta)
        dpsi_b = psi_integral_db_all(params, x, -beta)
        dnum = psi_g + gamma * dpsi_g + psi_b - beta * dpsi_b
        dQ_dg = dnum / (D * (1.0 - p) * (beta + gamma)) - 2.0 * Q / (beta + gamma)
    else:
        dQ_dg = (psi_g + gamma * dpsi_g) / (c * (1.0 - p))
    return dQ_dp, dQ_dg


def grad_Pstar(x, p: float, gamma: float, D: float, c: float):
    """(d/dp P*, d/dgamma P*)."""
    _check_p(p)
    x = np.asarray(x, dtype=float)
    Ps = eval_Pstar(x, p, gamma, D, c)
    dPs_dp = Ps / (1.0 - p)
    if gamma < 1e-10:
        dg1 = 0.5 * x * x
    else:
        dg1 = (x * np.exp(gamma * x) - _expm1_over(gamma, x)) / gamma
    if D > 0:
        beta = c / D + gamma
        e = np.exp(-beta * x)
        dtail = (1.0 - e) / beta**2 - x * e / beta
        dPs_dg = (dg1 + dtail) / (D * (1.0 - p) * (beta + gamma)) - 2.0 * Ps / (beta + gamma)
    else:
        dPs_dg = dg1 / (c * (1.0 - p))
    return dPs_dp, dPs_dg


def grad_Qstar_all(params: LaguerreParams, x, p: float, gamma: float, D: float, c: float):
    """(d/dp Q*_k, d/dgamma Q*_k) for k = 0..K."""
    _check_p(p)
    x = np.asarray(x, dtype=float)
    Qs = eval_Qstar_all(params, x, p, gamma, D, c)
    dQs_dp = Qs / (1.0 - p)
    dpsi_g = psi_integral_db_all(params, x, gamma)
    if D > 0:
        beta = c / D + gamma
        dpsi_b = psi_integral_db_all(params, x, -beta)
        dQs_dg = (dpsi_g + dpsi_b) / (D * (1.0 - p) * (beta + gamma)) - 2.0 * Qs / (
            beta + gamma
        )
    else:
        dQs_dg = dpsi_g / (c * (1.0 - p))
    return dQs_dp, dQs_dg


@dataclass(frozen=True)
class ScaleApprox:
    """Evaluator bundle for W_K and Z_K given a coefficient set.

    Pure and read-only after construction: safe for concurrent evaluation.
    """

    c: float
    q: float
    coeffs: CoefficientSet

    @property
    def params(self) -> LaguerreParams:
        return self.coeffs.params

    @property
    def theta(self) -> ThetaParams:
        return self.coeffs.theta

    def w(self, x):
        cs = self.coeffs
        P = eval_P(x, cs.p, cs.theta.gamma, cs.theta.D, self.c)
        Q = eval_Q_all(cs.params, x, cs.p, cs.theta.gamma, cs.theta.D, self.c)
        return P - np.tensordot(cs.a_G, Q, axes=(0, 0))

    def z(self, x):
        cs = self.coeffs
        Ps = eval_Pstar(x, cs.p, cs.theta.gamma, cs.theta.D, self.c)
        Qs = eval_Qstar_all(cs.params, x, cs.p, cs.theta.gamma, cs.theta.D, self.c)
        return 1.0 + self.q * (Ps - np.tensordot(cs.a_G, Qs, axes=(0, 0)))

    def gbar(self, x):
        return gbar_partial_sum(self.coeffs, x)


def scale_approx(model: LevyModel, params: LaguerreParams, method: str = "auto") -> ScaleApprox:
    """Build the K-th Laguerre-type approximation of (W, Z) for the model."""
    return ScaleApprox(c=model.c, q=model.q, coeffs=coeffs_true(model, params, method=method))


def eval_WK(approx: ScaleApprox, x):
    """W_K(x) = P(x) - Q_{alpha,K}(x) . a^G."""
    return approx.w(x)


def eval_ZK(approx: ScaleApprox, x):
    """Z_K(x) = 1 + q (P*(x) - Q*_{alpha,K}(x) . a^G)."""
    return approx.z(x)


def gbar_partial_sum(coeffs: CoefficientSet, x):
    """Truncated compound-geometric tail Gbar_{q,K}(x) = sum_k a^G_k phi_k(x)."""
    return partial_sum(coeffs.a_G, coeffs.params, x)
