"""Discretely observed trajectories under the high-frequency sampling scheme.

An observation consists of the grid samples X_{i * delta}, i = 0..n, plus the
set of jumps exceeding the threshold eps.  Large jumps are taken as directly
observed (think recorded insurance claims), never reconstructed from
increments.  Simulation is exact for compound Poisson jump parts; the
gamma subordinator is simulated exactly above a cutoff delta_sim <= eps/10
with the sub-cutoff part replaced by its mean drift.

Randomness comes from Philox (counter-based) streams keyed by the seed, so
replications parallelize reproducibly; identical (model, scheme, seed) give
bit-identical observations.  Draw order is fixed: jump count, jump times,
jump sizes, then Gaussian increments.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import special

from .exceptions import ConfigError, DomainError
from .levy import GammaSubordinator, JumpMeasure, LevyModel
from .tabular import write_csv

__all__ = [
    "SamplingScheme",
    "ObservationSet",
    "make_scheme",
    "s2_quantity",
    "simulate",
    "path_rng",
    "replication_seed",
    "save_observation",
    "load_observation",
]


@dataclass(frozen=True)
class SamplingScheme:
    """Grid size n, step delta, jump threshold eps; T = n * delta.

    `rule` records the (a, rho, c_eps) used by make_scheme when the scheme
    was derived from a horizon T, purely as metadata.
    """

    n: int
    delta: float
    eps: float
    rule: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.n < 1 or int(self.n) != self.n:
            raise ConfigError(f"n must be a positive integer, got {self.n}")
        if self.delta <= 0:
            raise ConfigError(f"delta must be > 0, got {self.delta}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")

    @property
    def T(self) -> float:
        return self.n * self.delta

    def to_dict(self) -> dict:
        d = {"n": self.n, "delta": self.delta, "eps": self.eps}
        if self.rule is not None:
            d["rule"] = {"a": self.rule[0], "rho": self.rule[1], "c_eps": self.rule[2]}
        return d

    @staticmethod
    def from_dict(d: dict) -> "SamplingScheme":
        rule = None
        if d.get("rule") is not None:
            r = d["rule"]
            rule = (float(r["a"]), float(r["rho"]), float(r["c_eps"]))
        return SamplingScheme(
            n=int(d["n"]), delta=float(d["delta"]), eps=float(d["eps"]), rule=rule
        )


def make_scheme(T: float, a: float = 1.0, rho: float = 0.49, c_eps: float = 1.0) -> SamplingScheme:
    """n = ceil(T^{1+a}), delta = T/n, eps = c_eps * delta^rho.

    a = 1 gives n = T^2 and n delta^2 = 1/T -> 0 (condition S1); rho <= 1/2
    keeps the small-jump moments o(T^{-1/2}) for our families (condition S2,
    see s2_quantity).
    """
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if not 0.0 < a <= 1.0:
        raise ConfigError(f"a must be in (0, 1], got {a}")
    if not 0.0 < rho <= 0.5:
        raise ConfigError(f"rho must be in (0, 1/2], got {rho}")
    if c_eps <= 0:
        raise ConfigError(f"c_eps must be > 0, got {c_eps}")
    n = int(math.ceil(T ** (1.0 + a)))
    delta = T / n
    eps = c_eps * delta**rho
    return SamplingScheme(n=n, delta=delta, eps=eps, rule=(a, rho, c_eps))


def s2_quantity(jumps: JumpMeasure, scheme: SamplingScheme) -> float:
    """sqrt(T) * (int_0^eps z nu(dz) + int_0^eps z^2 nu(dz)).

    Should trend to zero along a scheme family for the threshold bias to be
    negligible at the CLT scale.
    """
    m1, m2 = jumps.truncated_moments(scheme.eps)
    return math.sqrt(scheme.T) * (m1 + m2)


@dataclass(frozen=True)
class ObservationSet:
    """Grid samples, recorded jumps (> eps strictly), scheme, and seed."""

    grid: np.ndarray
    jump_times: np.ndarray
    jump_sizes: np.ndarray
    scheme: SamplingScheme
    seed: int

    def __post_init__(self):
        if len(self.grid) != self.scheme.n + 1:
            raise ValueError("grid must have n + 1 samples")
        if np.any(self.jump_sizes <= self.scheme.eps):
            raise ValueError("recorded jump sizes must exceed eps strictly")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.scheme.n + 1) * self.scheme.delta


def path_rng(seed: int) -> np.random.Generator:
    """Philox stream for one path; distinct seeds give independent streams."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def replication_seed(base_seed: int, rep: int) -> int:
    """Per-replication seed; rep 0 reproduces a direct run with base_seed."""
    return int(base_seed) + int(rep)


def _gamma_sub_sizes(
    shape: float, rate: float, delta_sim: float, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Sizes from nu restricted to (delta_sim, inf), nu(dz) = shape z^{-1} e^{-rate z} dz.

    Rejection from a shifted exponential: propose z = delta_sim + Exp(rate),
    accept with probability delta_sim / z.
    """
    accept_rate = max(
        delta_sim * rate * math.exp(rate * delta_sim) * special.exp1(rate * delta_sim), 1e-3
    )
    out = np.empty(count)
    have = 0
    while have < count:
        batch = int((count - have) / accept_rate * 1.2) + 16
        z = delta_sim + rng.exponential(1.0 / rate, size=batch)
        u = rng.uniform(size=batch)
        acc = z[u < delta_sim / z]
        take = min(len(acc), count - have)
        out[have : have + take] = acc[:take]
        have += take
    return out


def _draw_jumps(
    jumps: JumpMeasure, T: float, eps: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, float]:
    """All simulated jumps (times sorted, sizes) and the compensating drift
    for the discarded sub-cutoff mass (gamma subordinator only)."""
    if jumps.is_zero:
        return np.empty(0), np.empty(0), 0.0
    if isinstance(jumps, GammaSubordinator):
        delta_sim = eps / 10.0
        intensity = jumps.shape * special.exp1(jumps.rate * delta_sim)
        count = int(rng.poisson(intensity * T))
        times = np.sort(rng.uniform(0.0, T, size=count))
        sizes = _gamma_sub_sizes(jumps.shape, jumps.rate, delta_sim, count, rng)
        small_mean_rate = jumps.shape / jumps.rate * (-math.expm1(-jumps.rate * delta_sim))
        return times, sizes, small_mean_rate
    # compound Poisson families: exact
    count = int(rng.poisson(jumps.total_rate() * T))
    times = np.sort(rng.uniform(0.0, T, size=count))
    kind = jumps.kind
    if kind == "compound-poisson-exponential":
        sizes = rng.exponential(jumps.jump_mean, size=count)
    elif kind == "compound-poisson-gamma":
        sizes = rng.gamma(jumps.shape, jumps.scale, size=count)
    else:  # pragma: no cover - new families must register a sampler
        raise DomainError(f"no sampler for jump kind {kind!r}")
    return times, sizes, 0.0


def simulate(model: LevyModel, scheme: SamplingScheme, seed: int) -> ObservationSet:
    """Exact simulation of the observation set: grid values plus jumps > eps.

    Deterministic in (model, scheme, seed).
    """
    rng = path_rng(seed)
    n, dt, T, eps = scheme.n, scheme.delta, scheme.T, scheme.eps
    jt, js, small_drift = _draw_jumps(model.jumps, T, eps, rng)

    t = np.arange(n + 1) * dt
    if model.D > 0:
        incr = rng.normal(0.0, model.sigma * math.sqrt(dt), size=n)
        W = np.concatenate([[0.0], np.cumsum(incr)])
    else:
        W = np.zeros(n + 1)
    cum_jumps = np.concatenate([[0.0], np.cumsum(js)])
    L_on_grid = cum_jumps[np.searchsorted(jt, t, side="right")]
    X = model.x0 + (model.c - small_drift) * t + W - L_on_grid

    recorded = js > eps
    return ObservationSet(
        grid=X,
        jump_times=jt[recorded],
        jump_sizes=js[recorded],
        scheme=scheme,
        seed=int(seed),
    )


# ---------------------------------------------------------------------------
# Serialization: CSV pair plus JSON sidecar
# ---------------------------------------------------------------------------

def save_observation(obs: ObservationSet, grid_path, jumps_path, sidecar_path) -> None:
    i = np.arange(obs.scheme.n + 1)
    write_csv(grid_path, ["i", "t", "X"], [i, obs.times, obs.grid])
    write_csv(jumps_path, ["t", "size"], [obs.jump_times, obs.jump_sizes])
    sidecar = {"scheme": obs.scheme.to_dict(), "seed": obs.seed}
    Path(sidecar_path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_observation(grid_path, jumps_path, sidecar_path) -> ObservationSet:
    sidecar = json.loads(Path(sidecar_path).read_text())
    scheme = SamplingScheme.from_dict(sidecar["scheme"])
    grid_rows = np.loadtxt(grid_path, delimiter=",", skiprows=1, ndmin=2)
    jump_lines = Path(jumps_path).read_text().splitlines()[1:]
    if jump_lines:
        jumps_rows = np.loadtxt(jump_lines, delimiter=",", ndmin=2)
        jt, js = jumps_rows[:, 0], jumps_rows[:, 1]
    else:
        jt, js = np.empty(0), np.empty(0)
    return ObservationSet(
        grid=grid_rows[:, 2],
        jump_times=jt,
        jump_sizes=js,
        scheme=scheme,
        seed=int(sidecar["seed"]),
    )
