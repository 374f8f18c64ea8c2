"""Experiment configuration: JSON schema, validation, and hashing.

Schema (all blocks validated before any work starts):

    {
      "model":    {"x0": 0.0, "c": 1.5, "sigma": 1.0 | "D": 0.5, "q": 0.1,
                   "jumps": {"kind": "...", ...}},
      "laguerre": {"alpha": 1.0, "K": 40},
      "scheme":   {"T": 400, "a": 1.0, "rho": 0.49, "c_eps": 1.0, "seed": 1},
      "mc":       {"replications": 200, "workers": 1, "D_window": 1.0},
      "output":   {"directory": "out", "formats": ["csv", "json"]},
      "x_grid":   {"min": 0.0, "max": 10.0, "points": 201}
    }

Commands require only the blocks they use; `model` is always required.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .laguerre import LaguerreParams
from .levy import LevyModel, model_from_dict
from .simulate import SamplingScheme, make_scheme

__all__ = ["ExperimentConfig", "load_config", "config_hash"]

_FORMATS = {"csv", "json"}


@dataclass(frozen=True)
class SchemeConfig:
    T: float
    a: float
    rho: float
    c_eps: float
    seed: int

    def build(self) -> SamplingScheme:
        return make_scheme(self.T, a=self.a, rho=self.rho, c_eps=self.c_eps)


@dataclass(frozen=True)
class McConfig:
    replications: int
    workers: int
    D_window: float | None  # None: estimator default


@dataclass(frozen=True)
class ExperimentConfig:
    model: LevyModel
    laguerre: LaguerreParams | None
    scheme: SchemeConfig | None
    mc: McConfig | None
    out_dir: str
    formats: tuple[str, ...]
    x_grid: np.ndarray | None
    raw: dict

    def require(self, *blocks: str) -> None:
        for b in blocks:
            if getattr(self, b if b != "x_grid" else "x_grid", None) is None:
                raise ConfigError(f"config block {b!r} is required for this command")


def _check_number(block: dict, key: str, blockname: str, default=None):
    if key not in block:
        if default is not None:
            return default
        raise ConfigError(f"{blockname} block missing field {key!r}")
    v = block[key]
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise ConfigError(f"{blockname}.{key} must be a number, got {v!r}")
    return v


def parse_config(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("config root must be a JSON object")
    if "model" not in d:
        raise ConfigError("config requires a 'model' block")
    model = model_from_dict(d["model"])

    laguerre = None
    if "laguerre" in d:
        lb = d["laguerre"]
        alpha = _check_number(lb, "alpha", "laguerre", default=1.0)
        K = _check_number(lb, "K", "laguerre")
        if int(K) != K:
            raise ConfigError(f"laguerre.K must be an integer, got {K}")
        try:
            laguerre = LaguerreParams(alpha=float(alpha), K=int(K))
        except Exception as exc:
            raise ConfigError(str(exc)) from exc

    scheme = None
    if "scheme" in d:
        sb = d["scheme"]
        scheme = SchemeConfig(
            T=float(_check_number(sb, "T", "scheme")),
            a=float(_check_number(sb, "a", "scheme", default=1.0)),
            rho=float(_check_number(sb, "rho", "scheme", default=0.49)),
            c_eps=float(_check_number(sb, "c_eps", "scheme", default=1.0)),
            seed=int(_check_number(sb, "seed", "scheme", default=0)),
        )
        scheme.build()  # validate ranges now, not at run time

    mc = None
    if "mc" in d:
        mb = d["mc"]
        reps = _check_number(mb, "replications", "mc")
        if int(reps) != reps or reps < 1:
            raise ConfigError(f"mc.replications must be a positive integer, got {reps}")
        workers = int(_check_number(mb, "workers", "mc", default=1))
        if workers < 1:
            raise ConfigError(f"mc.workers must be >= 1, got {workers}")
        D_window = mb.get("D_window")
        if D_window is not None:
            D_window = float(D_window)
            if D_window <= 0:
                raise ConfigError("mc.D_window must be > 0")
        mc = McConfig(replications=int(reps), workers=workers, D_window=D_window)

    out_dir = "out"
    formats: tuple[str, ...] = ("csv", "json")
    if "output" in d:
        ob = d["output"]
        out_dir = ob.get("directory", "out")
        if not isinstance(out_dir, str) or not out_dir:
            raise ConfigError("output.directory must be a non-empty string")
        fmts = ob.get("formats", ["csv", "json"])
        if not isinstance(fmts, list) or not fmts or not set(fmts) <= _FORMATS:
            raise ConfigError(f"output.formats must be a non-empty subset of {sorted(_FORMATS)}")
        formats = tuple(fmts)

    x_grid = None
    if "x_grid" in d:
        gb = d["x_grid"]
        lo = float(_check_number(gb, "min", "x_grid"))
        hi = float(_check_number(gb, "max", "x_grid"))
        pts = _check_number(gb, "points", "x_grid")
        if int(pts) != pts or pts < 1:
            raise ConfigError(f"x_grid.points must be a positive integer, got {pts}")
        if hi < lo:
            raise ConfigError(f"x_grid requires max >= min, got [{lo}, {hi}]")
        if lo < 0:
            raise ConfigError(f"x_grid.min must be >= 0, got {lo}")
        x_grid = np.linspace(lo, hi, int(pts))

    return ExperimentConfig(
        model=model, laguerre=laguerre, scheme=scheme, mc=mc,
        out_dir=out_dir, formats=formats, x_grid=x_grid, raw=d,
    )


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError:
        raise
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(d)


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonicalized raw config."""
    canon = json.dumps(cfg.raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()
