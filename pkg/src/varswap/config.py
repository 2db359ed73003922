"""Run configuration: loading, validation and hashing.

A config file (TOML or JSON) has up to five blocks::

    [model]            # family tag plus that family's parameters
    family = "BlackScholes"
    s0 = 100.0
    sigma = 0.2

    [grid]
    T = 1.0
    n = 252            # single payoff grid (price, tail)
    n_list = [4, 16]   # payoff grids for converge
    substeps = 1       # optional; scheme default otherwise

    [mc]
    n_paths = 100000
    seed = 7
    scheme = "ExactWhereAvailable"
    workers = 1

    [output]
    directory = "out"
    formats = ["csv", "json"]
    dump_paths = 0     # number of raw paths to dump, 0 for none
    timestamps = false

    [options]          # command-specific settings, see OPTION_KEYS

Unknown keys anywhere are rejected with a :class:`ConfigError` naming the key.
"""
from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

from .errors import ConfigError
from .sde_sim import Scheme

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "GridConfig",
    "McConfig",
    "OutputConfig",
    "RunConfig",
    "OPTION_KEYS",
    "load_config",
    "parse_config",
    "canonical_hash",
]

BLOCKS = ("model", "grid", "mc", "output", "options")
GRID_KEYS = ("T", "n", "n_list", "substeps")
MC_KEYS = ("n_paths", "seed", "scheme", "workers")
OUTPUT_KEYS = ("directory", "formats", "dump_paths", "timestamps")
OPTION_KEYS = (
    "annualize",    # price: also report 252/n annualized estimates
    "override",     # converge: run even if the convergence conditions fail
    "rate_column",  # converge: "auto", "gap" or "gap_cv"
    "quantity",     # tail: "integrated_variance" or "pn"
    "fraction",     # tail: Hill order-statistics fraction
    "sweep",        # tail: sensitivity fractions
    "steps",        # tail: simulation steps for the integrated variance
    "lambdas",      # laplace: transform arguments
    "orders",       # moments: orders s of E(R_t^s)
    "t",            # moments: horizon (defaults to grid.T)
    "variant",      # moments: "corrected" or "printed"
    "gamma",        # explode: measure-change strength (default: minimal)
)
FORMATS = ("csv", "json")
SEED_LIMIT = 1 << 64


def _is_int(x: Any) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_real(x: Any) -> bool:
    return (isinstance(x, (int, float)) and not isinstance(x, bool)) and math.isfinite(x)


def _int(key: str, x: Any, lo: int = 1) -> int:
    if not _is_int(x) or x < lo:
        raise ConfigError(f"{key}: integer >= {lo} required, got {x!r}")
    return x


def _real(key: str, x: Any, positive: bool = False) -> float:
    if not _is_real(x) or (positive and x <= 0):
        raise ConfigError(f"{key}: {'positive ' if positive else ''}finite number required, got {x!r}")
    return float(x)


def _check_keys(block: str, raw: Mapping[str, Any], allowed: tuple[str, ...]) -> None:
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{block}: table expected, got {type(raw).__name__}")
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"unknown key '{block}.{key}'")


@dataclass(frozen=True)
class GridConfig:
    T: Optional[float] = None
    n: Optional[int] = None
    n_list: Optional[tuple[int, ...]] = None
    substeps: Optional[int] = None

    @classmethod
    def parse(cls, raw: Mapping[str, Any]) -> "GridConfig":
        _check_keys("grid", raw, GRID_KEYS)
        T = _real("grid.T", raw["T"], positive=True) if "T" in raw else None
        n = _int("grid.n", raw["n"]) if "n" in raw else None
        n_list = None
        if "n_list" in raw:
            if not isinstance(raw["n_list"], (list, tuple)) or not raw["n_list"]:
                raise ConfigError("grid.n_list: non-empty list of integers required")
            n_list = tuple(_int("grid.n_list", v) for v in raw["n_list"])
        substeps = _int("grid.substeps", raw["substeps"]) if "substeps" in raw else None
        return cls(T, n, n_list, substeps)


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 100_000
    seed: int = 0
    scheme: Scheme = Scheme.EXACT
    workers: int = 1

    @classmethod
    def parse(cls, raw: Mapping[str, Any]) -> "McConfig":
        _check_keys("mc", raw, MC_KEYS)
        n_paths = _int("mc.n_paths", raw.get("n_paths", cls.n_paths), lo=2)
        seed = _int("mc.seed", raw.get("seed", cls.seed), lo=0)
        if seed >= SEED_LIMIT:
            raise ConfigError(f"mc.seed: must fit in 64 bits, got {seed}")
        try:
            scheme = Scheme.parse(raw.get("scheme", cls.scheme))
        except ValueError as exc:
            raise ConfigError(f"mc.scheme: {exc}") from None
        workers = _int("mc.workers", raw.get("workers", cls.workers))
        return cls(n_paths, seed, scheme, workers)


@dataclass(frozen=True)
class OutputConfig:
    directory: Optional[str] = None
    formats: tuple[str, ...] = FORMATS
    dump_paths: int = 0
    timestamps: bool = False

    @classmethod
    def parse(cls, raw: Mapping[str, Any]) -> "OutputConfig":
        _check_keys("output", raw, OUTPUT_KEYS)
        directory = raw.get("directory")
        if directory is not None and not isinstance(directory, str):
            raise ConfigError("output.directory: string required")
        formats = raw.get("formats", list(FORMATS))
        if isinstance(formats, str):
            formats = [formats]
        if not formats or any(f not in FORMATS for f in formats):
            raise ConfigError(f"output.formats: non-empty subset of {list(FORMATS)} required, got {formats!r}")
        dump = _int("output.dump_paths", raw.get("dump_paths", 0), lo=0)
        timestamps = raw.get("timestamps", False)
        if not isinstance(timestamps, bool):
            raise ConfigError("output.timestamps: boolean required")
        return cls(directory, tuple(f for f in FORMATS if f in formats), dump, timestamps)


def _check_options(raw: Mapping[str, Any]) -> dict[str, Any]:
    _check_keys("options", raw, OPTION_KEYS)
    out = dict(raw)
    for key in ("annualize", "override"):
        if key in out and not isinstance(out[key], bool):
            raise ConfigError(f"options.{key}: boolean required")
    if "fraction" in out:
        _real("options.fraction", out["fraction"], positive=True)
    for key in ("sweep", "lambdas", "orders"):
        if key in out:
            vals = out[key]
            if not isinstance(vals, (list, tuple)) or not vals:
                raise ConfigError(f"options.{key}: non-empty list of numbers required")
            out[key] = [_real(f"options.{key}", v) for v in vals]
    if "t" in out:
        out["t"] = _real("options.t", out["t"], positive=True)
    if "gamma" in out:
        out["gamma"] = _real("options.gamma", out["gamma"])
    if "steps" in out:
        _int("options.steps", out["steps"])
    choices = {
        "rate_column": ("auto", "gap", "gap_cv"),
        "quantity": ("integrated_variance", "pn"),
        "variant": ("corrected", "printed"),
    }
    for key, allowed in choices.items():
        if key in out and out[key] not in allowed:
            raise ConfigError(f"options.{key}: one of {list(allowed)} required, got {out[key]!r}")
    return out


def _jsonable(x: Any) -> Any:
    if isinstance(x, Scheme):
        return x.value
    if isinstance(x, tuple):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    return x


def canonical_hash(payload: Any) -> str:
    """First 16 hex digits of the sha256 of canonical JSON."""
    text = json.dumps(_jsonable(payload), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class RunConfig:
    model: dict[str, Any]
    grid: GridConfig = field(default_factory=GridConfig)
    mc: McConfig = field(default_factory=McConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    options: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        grid = {k: getattr(self.grid, k) for k in GRID_KEYS if getattr(self.grid, k) is not None}
        return _jsonable({
            "model": dict(self.model),
            "grid": grid,
            "mc": {k: getattr(self.mc, k) for k in MC_KEYS},
            "output": {k: getattr(self.output, k) for k in OUTPUT_KEYS},
            "options": dict(self.options),
        })

    @property
    def hash(self) -> str:
        # worker count and output location do not change results
        d = self.to_dict()
        d["mc"].pop("workers")
        d.pop("output")
        return canonical_hash(d)


def parse_config(raw: Mapping[str, Any]) -> RunConfig:
    """Validate a raw nested mapping into a :class:`RunConfig`.

    The model block is checked for shape here; parameter validation happens
    in :func:`varswap.models.build_model` when a command needs a full model.
    """
    _check_keys("config", raw, BLOCKS)
    model = raw.get("model", {})
    if not isinstance(model, Mapping):
        raise ConfigError("model: table expected")
    for key, value in model.items():
        if key != "family" and not _is_real(value):
            raise ConfigError(f"model.{key}: finite number required, got {value!r}")
    return RunConfig(
        model=dict(model),
        grid=GridConfig.parse(raw.get("grid", {})),
        mc=McConfig.parse(raw.get("mc", {})),
        output=OutputConfig.parse(raw.get("output", {})),
        options=_check_options(raw.get("options", {})),
    )


def read_raw(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        if path.suffix.lower() == ".json":
            raw = json.loads(data.decode("utf-8"))
        else:
            raw = tomllib.loads(data.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path}: top level must be a table")
    return raw


def load_config(path: str | Path) -> RunConfig:
    """Load a TOML (default) or ``.json`` config file."""
    return parse_config(read_raw(path))
