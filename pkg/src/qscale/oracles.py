"""Independent ground-truth generators for the scale-function pipeline.

Three routes that never touch the Laguerre expansion:

* fixed-Talbot numerical inversion of the defining transform 1/(psi - q),
  contour shifted right of the Lundberg root so every singularity of the
  (analytically continued) transform is enclosed;
* the compound geometric distribution built directly on a grid by marching
  the defective renewal equation (geometric-series summation as cross-check);
* closed forms for the Brownian-with-drift and Cramer-Lundberg-exponential
  special cases.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import DomainError, GridTooCoarseError
from .levy import LevyModel, laplace_exponent, lundberg_exponent
from .tabular import write_csv

__all__ = [
    "TalbotResult",
    "laplace_invert_scale",
    "GridDistribution",
    "compound_geometric_grid",
    "compound_geometric_series",
    "closed_form_W",
    "write_oracle_csv",
]


class TalbotResult(NamedTuple):
    value: float
    error_estimate: float
    flagged: bool


def _talbot_sum(F, x: float, M: int) -> float:
    """Fixed-Talbot quadrature of the Bromwich integral at time x.

    Contour s(phi) = r phi (cot phi + i), phi in (-pi, pi), r = 2M/(5x).
    """
    r = 2.0 * M / (5.0 * x)
    phi = np.arange(1, M) * np.pi / M
    cot = 1.0 / np.tan(phi)
    s = r * phi * (cot + 1j)
    sigma = phi + (phi * cot - 1.0) * cot
    terms = np.exp(x * s) * F(s) * (1.0 + 1j * sigma)
    total = 0.5 * np.exp(r * x) * np.real(F(np.complex128(r))) + np.sum(np.real(terms))
    return float(r / M * total)


def laplace_invert_scale(
    model: LevyModel,
    x: float,
    q: float | None = None,
    M: int = 32,
    tol: float = 1e-6,
) -> TalbotResult:
    """W^(q)(x) by fixed-Talbot inversion of theta -> 1/(psi(theta) - q).

    The transform is inverted after shifting by a = Phi(q), which moves the
    rightmost singularity to the origin (enclosed by the Talbot contour) and
    every other pole / branch cut onto the negative real axis, which the
    contour wraps around.  Returns the M-node value together with a
    node-doubling error estimate |W_M - W_{M/2}|; `flagged` is set instead of
    raising when the estimate exceeds `tol`.

    M defaults to 32: the truncation error ~10^{-0.6 M} is already far below
    double precision there, while roundoff grows like e^{2M/5} * eps, so
    larger M strictly degrades the result.
    """
    if x <= 0:
        raise DomainError(f"inversion requires x > 0, got x = {x}")
    if q is None:
        q = model.q
    a = lundberg_exponent(model, q)  # also enforces NPC (pole location sanity)

    def F(u):
        return 1.0 / (laplace_exponent(model, a + u) - q)

    shift = float(np.exp(a * x))
    v_half = shift * _talbot_sum(F, x, M // 2)
    v = shift * _talbot_sum(F, x, M)
    err = abs(v - v_half)
    return TalbotResult(value=v, error_estimate=err, flagged=err > tol * max(1.0, abs(v)))


@dataclass(frozen=True)
class GridDistribution:
    """Compound geometric distribution on a uniform grid.

    The atom at zero (mass 1 - p) is carried explicitly and never smeared
    onto the grid; `density` covers the absolutely continuous part and
    `tail` stores Gbar(x_i) = 1 - G(x_i) with Gbar(0) = p.
    """

    h: float
    x_max: float
    atom: float
    density: np.ndarray
    tail: np.ndarray

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("grid step h must be > 0")
        mass = self.atom + float(np.trapezoid(self.density, dx=self.h))
        if not 1.0 - 1e-6 <= mass <= 1.0 + 1e-6:
            raise GridTooCoarseError(
                "compound geometric grid mass outside [1-1e-6, 1+1e-6]",
                residual=abs(mass - 1.0),
            )

    @property
    def x(self) -> np.ndarray:
        return np.arange(len(self.tail)) * self.h

    def tail_at(self, x) -> np.ndarray:
        """Gbar at arbitrary points by linear interpolation (0 beyond x_max)."""
        return np.interp(np.asarray(x, dtype=float), self.x, self.tail, right=0.0)


def compound_geometric_grid(
    f_vals: np.ndarray, p: float, h: float, x_max: float | None = None
) -> GridDistribution:
    """Solve the defective renewal equation Gbar = p Fbar + p f * Gbar by marching.

    `f_vals` samples the (normalized) density f_q on the uniform grid
    0, h, 2h, ...; trapezoid weights are used both for Fbar and for the
    convolution.  The input mass must be within 1e-4 of one, else the grid
    is rejected as too coarse; the stored density is renormalized so the
    total mass (atom + trapezoid of density) is exact.
    """
    if not 0.0 < p < 1.0:
        raise DomainError(f"compound geometric requires p in (0,1), got {p}")
    f_vals = np.asarray(f_vals, dtype=float)
    if np.any(f_vals < -1e-12):
        raise DomainError("density values must be nonnegative")
    n = len(f_vals)
    if x_max is None:
        x_max = (n - 1) * h
    f_mass = float(np.trapezoid(f_vals, dx=h))
    if abs(f_mass - 1.0) > 1e-4:
        raise GridTooCoarseError(
            "input density mass deviates from 1 beyond 1e-4", residual=abs(f_mass - 1.0)
        )

    # Fbar on the grid (trapezoid cumulative)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * h * (f_vals[1:] + f_vals[:-1]))])
    Fbar = 1.0 - cum / f_mass
    f = f_vals / f_mass

    # March Gbar_i = p Fbar_i + p h [ f_0 Gbar_i / 2 + sum_{0<j<i} f_j Gbar_{i-j}
    #                                + f_i Gbar_0 / 2 ]
    Gbar = np.empty(n)
    Gbar[0] = p
    lead = 1.0 - 0.5 * p * h * f[0]
    f_rev = f[::-1]
    for i in range(1, n):
        mid = np.dot(f[1:i], Gbar[i - 1 : 0 : -1]) if i >= 2 else 0.0
        Gbar[i] = (p * Fbar[i] + p * h * (mid + 0.5 * f[i] * Gbar[0])) / lead

    # Density of the a.c. part: g = p (1-p) f + p f * g, same marching kernel
    g = np.empty(n)
    g[0] = p * (1.0 - p) * f[0] / lead
    for i in range(1, n):
        mid = np.dot(f[1:i], g[i - 1 : 0 : -1]) if i >= 2 else 0.0
        g[i] = (p * (1.0 - p) * f[i] + p * h * (mid + 0.5 * f[i] * g[0])) / lead
    g_mass = float(np.trapezoid(g, dx=h))
    if abs(g_mass - p) > 1e-4:
        raise GridTooCoarseError(
            "compound geometric density mass deviates from p beyond 1e-4",
            residual=abs(g_mass - p),
        )
    g *= p / g_mass  # total mass (atom + density) is then exactly 1

    return GridDistribution(h=h, x_max=x_max, atom=1.0 - p, density=g, tail=Gbar)


def compound_geometric_series(
    f_vals: np.ndarray, p: float, h: float, tol: float = 1e-12
) -> np.ndarray:
    """Gbar by direct geometric-series summation (cross-check of the DRE march).

    Truncates when p^k < tol.  Convolution powers are accumulated with
    trapezoid-weighted discrete convolution.
    """
    f_vals = np.asarray(f_vals, dtype=float)
    n = len(f_vals)
    f_mass = float(np.trapezoid(f_vals, dx=h))
    f = f_vals / f_mass
    # trapezoid weights fold the half-weight endpoints into the kernel
    w = np.full(n, 1.0)
    w[0] = w[-1] = 0.5
    fk = f.copy()
    dens = np.zeros(n)
    coeff = 1.0 - p
    pk = p
    while pk >= tol:
        dens += coeff * pk * fk
        pk *= p
        fk = h * np.convolve(w * fk, w * f)[:n]
    cum = np.concatenate([[0.0], np.cumsum(0.5 * h * (dens[1:] + dens[:-1]))])
    return p - cum  # Gbar(x) = p - int_0^x g


def closed_form_W(model_kind: str, params: dict, q: float, x) -> np.ndarray:
    """Exact W^(q) for the two special cases with elementary transforms.

    model_kind 'brownian-drift': params {c, D}; the p = 0 compound-geometric
    form with roots gamma = Phi(q) and -beta.
    model_kind 'cramer-lundberg-exponential': params {c, rate, jump_mean};
    psi - q is rational with two real roots, inverted by partial fractions.
    """
    x = np.asarray(x, dtype=float)
    if model_kind == "brownian-drift":
        c, D = params["c"], params["D"]
        if D <= 0:
            raise DomainError("brownian-drift oracle requires D > 0")
        disc = np.sqrt(c * c + 4.0 * D * q)
        gamma = (-c + disc) / (2.0 * D)
        beta = (c + disc) / (2.0 * D)
        return (np.exp(gamma * x) - np.exp(-beta * x)) / (D * (beta + gamma))
    if model_kind == "cramer-lundberg-exponential":
        c, lam = params["c"], params["rate"]
        mu = 1.0 / params["jump_mean"]
        # c s^2 + (c mu - lam - q) s - q mu = 0
        bcoef = c * mu - lam - q
        disc = np.sqrt(bcoef * bcoef + 4.0 * c * q * mu)
        s_plus = (-bcoef + disc) / (2.0 * c)
        s_minus = (-bcoef - disc) / (2.0 * c)
        return ((mu + s_plus) * np.exp(s_plus * x) - (mu + s_minus) * np.exp(s_minus * x)) / (
            c * (s_plus - s_minus)
        )
    raise DomainError(f"unsupported closed-form kind {model_kind!r}")


def write_oracle_csv(path, x, w_talbot, w_closed, err_estimate) -> None:
    """Oracle curve dump: x, W_talbot, W_closed, err_estimate."""
    write_csv(
        path,
        ["x", "W_talbot", "W_closed", "err_estimate"],
        [x, w_talbot, w_closed, err_estimate],
    )
