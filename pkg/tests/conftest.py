"""Shared fixtures: reference models used throughout the suite."""

from __future__ import annotations

import pytest

from qscale.laguerre import LaguerreParams
from qscale.levy import (
    CompoundPoissonExponential,
    CompoundPoissonGamma,
    GammaSubordinator,
    LevyModel,
    NoJumps,
)


@pytest.fixture
def exp_jump_model() -> LevyModel:
    """The workhorse: c = 1.5, D = 0.5, Exp(1) jumps at rate 1, q = 0.1."""
    return LevyModel(x0=0.0, c=1.5, D=0.5, jumps=CompoundPoissonExponential(1.0, 1.0), q=0.1)


@pytest.fixture
def cramer_lundberg_model() -> LevyModel:
    """D = 0 exponential-jump model (classical risk process), q = 0.1."""
    return LevyModel(x0=0.0, c=1.5, D=0.0, jumps=CompoundPoissonExponential(1.0, 1.0), q=0.1)


@pytest.fixture
def brownian_model() -> LevyModel:
    return LevyModel(x0=0.0, c=1.5, D=0.5, jumps=NoJumps(), q=0.1)


@pytest.fixture
def gamma_sub_model() -> LevyModel:
    return LevyModel(x0=0.0, c=1.5, D=0.3, jumps=GammaSubordinator(shape=0.5, rate=1.0), q=0.2)


@pytest.fixture
def cp_gamma_model() -> LevyModel:
    return LevyModel(
        x0=0.0, c=2.0, D=0.0, jumps=CompoundPoissonGamma(rate=1.0, shape=2.0, scale=0.4), q=0.05
    )


@pytest.fixture
def params20() -> LaguerreParams:
    return LaguerreParams(alpha=1.0, K=20)


@pytest.fixture
def params40() -> LaguerreParams:
    return LaguerreParams(alpha=1.0, K=40)
