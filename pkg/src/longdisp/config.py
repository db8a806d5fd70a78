"""Run configuration: flat key=value files, flag overrides, validation.

Precedence is defaults < config file < command-line flags.  The resolved
configuration is echoed verbatim into the run manifest in the same format,
so a manifest is itself a loadable config file.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path

from .decomposition import METHODS
from .errors import ConfigError
from .kernels import KernelSpec
from .simulation import SCENARIOS

_ROLES = ("id", "group", "time", "outcome", "modifier")


@dataclass
class RunConfig:
    """Every knob of the pipeline, one flat namespace."""

    input: str | None = None
    delimiter: str = ","
    id_column: str = "id"
    group_column: str = "group"
    time_column: str = "time"
    outcome_column: str = "outcome"
    modifier_column: str = "modifier"
    covariates: tuple[str, ...] | None = None  # None: every non-role column
    majority: str = "majority"
    minority: str = "minority"
    modifier_kind: str = "continuous"
    modifier_levels: tuple[float, ...] | None = None
    method: str = "mldd"
    kernel: str = "epanechnikov"
    b1: float | None = None
    b2: float | None = None
    cv_grid: int = 8
    cv_subsample: float = 1.0
    grid_points: int = 50
    trim: float = 0.05
    boot_B: int = 500
    alpha: float = 0.05
    seed: int = 0
    zM: float | None = None
    zm: float | None = None
    workers: int = 1
    ridge: bool = False
    plots: bool = True
    out_dir: str | None = None


# config-file key -> (dataclass field, parser name)
_KEYS = {
    "input": ("input", "str"),
    "delimiter": ("delimiter", "delim"),
    "id-column": ("id_column", "str"),
    "group-column": ("group_column", "str"),
    "time-column": ("time_column", "str"),
    "outcome-column": ("outcome_column", "str"),
    "modifier-column": ("modifier_column", "str"),
    "covariates": ("covariates", "strs"),
    "majority": ("majority", "str"),
    "minority": ("minority", "str"),
    "modifier-kind": ("modifier_kind", "str"),
    "modifier-levels": ("modifier_levels", "floats"),
    "method": ("method", "str"),
    "kernel": ("kernel", "str"),
    "b1": ("b1", "float"),
    "b2": ("b2", "float"),
    "cv-grid": ("cv_grid", "int"),
    "cv-subsample": ("cv_subsample", "float"),
    "grid-points": ("grid_points", "int"),
    "trim": ("trim", "float"),
    "boot-b": ("boot_B", "int"),
    "alpha": ("alpha", "float"),
    "seed": ("seed", "int"),
    "z-majority": ("zM", "float"),
    "z-minority": ("zm", "float"),
    "workers": ("workers", "int"),
    "ridge": ("ridge", "bool"),
    "plots": ("plots", "bool"),
    "out-dir": ("out_dir", "str"),
}

_FIELD_TO_KEY = {field: key for key, (field, _) in _KEYS.items()}


def _parse_value(kind: str, raw: str, key: str):
    raw = raw.strip()
    try:
        if kind == "str":
            return raw
        if kind == "delim":
            return "\t" if raw in ("tab", "\\t") else raw
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "yes", "1"):
                return True
            if raw.lower() in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if kind == "strs":
            return tuple(part.strip() for part in raw.split(",") if part.strip())
        if kind == "floats":
            return tuple(float(part) for part in raw.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"cannot parse config value {raw!r} for key {key!r}") from None
    raise ConfigError(f"unknown value kind {kind!r}")


def read_config_file(path) -> dict:
    """Parse a flat key=value file into dataclass-field keyed values."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from None
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        field, kind = _KEYS[key]
        values[field] = _parse_value(kind, raw, key)
    return values


def resolve_config(file_values: dict, flag_values: dict) -> RunConfig:
    """Merge defaults, file values, then flags (None flags mean 'not given')."""
    cfg = RunConfig()
    for source in (file_values, flag_values):
        for field, value in source.items():
            if value is None:
                continue
            setattr(cfg, field, value)
    if isinstance(cfg.covariates, (list, tuple)):
        cfg.covariates = tuple(cfg.covariates) or None
    if isinstance(cfg.modifier_levels, (list, tuple)):
        cfg.modifier_levels = tuple(cfg.modifier_levels) or None
    return cfg


def validate_config(cfg: RunConfig, *, needs_input: bool = True) -> None:
    """Internal-consistency checks shared by every data-driven subcommand."""
    if needs_input and not cfg.input:
        raise ConfigError("no input file given (flag --input or config key 'input')")
    if cfg.method not in METHODS:
        raise ConfigError(f"unknown method {cfg.method!r}; expected one of {METHODS}")
    try:
        KernelSpec(cfg.kernel)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    if cfg.modifier_kind not in ("continuous", "discrete"):
        raise ConfigError(
            f"modifier-kind must be continuous or discrete, got {cfg.modifier_kind!r}"
        )
    if cfg.modifier_kind == "discrete" and cfg.b2 is not None:
        raise ConfigError("a discrete modifier forbids b2; the level indicator replaces it")
    if cfg.method == "ldd" and cfg.b2 is not None:
        raise ConfigError("ldd smooths in time only; b2 does not apply")
    if cfg.method == "cmldd" and (cfg.zM is None or cfg.zm is None):
        raise ConfigError("method cmldd requires both --zM and --zm")
    if (
        cfg.method != "ldd"
        and cfg.modifier_kind == "continuous"
        and (cfg.b1 is None) != (cfg.b2 is None)
    ):
        raise ConfigError("fixed-bandwidth mode needs both b1 and b2 for a continuous modifier")
    for name, value, ok in (
        ("b1", cfg.b1, lambda v: v > 0),
        ("b2", cfg.b2, lambda v: v > 0),
        ("alpha", cfg.alpha, lambda v: 0 < v < 1),
        ("trim", cfg.trim, lambda v: 0 <= v < 0.5),
        ("cv-subsample", cfg.cv_subsample, lambda v: 0 < v <= 1),
    ):
        if value is not None and not ok(value):
            raise ConfigError(f"{name} out of range: {value!r}")
    for name, value, lo in (
        ("grid-points", cfg.grid_points, 1),
        ("cv-grid", cfg.cv_grid, 1),
        ("boot-b", cfg.boot_B, 50),
        ("workers", cfg.workers, 1),
    ):
        if value < lo:
            raise ConfigError(f"{name} must be at least {lo}, got {value}")


def config_lines(cfg: RunConfig, exclude: tuple[str, ...] = ()) -> list[str]:
    """The resolved configuration as loadable 'key = value' lines.

    exclude names dataclass fields to drop, for knobs that must not affect
    artifact bytes (worker count, output directory).
    """
    lines = []
    for f in fields(RunConfig):
        if f.name in exclude:
            continue
        value = getattr(cfg, f.name)
        key = _FIELD_TO_KEY[f.name]
        if value is None:
            continue
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, tuple):
            text = ",".join(str(v) for v in value)
        elif f.name == "delimiter" and value == "\t":
            text = "tab"
        else:
            text = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{key} = {text}")
    return lines


def infer_covariates(path, cfg: RunConfig) -> tuple[str, ...]:
    """All header columns that are not role columns, in header order."""
    roles = {
        cfg.id_column,
        cfg.group_column,
        cfg.time_column,
        cfg.outcome_column,
        cfg.modifier_column,
    }
    try:
        with Path(path).open(newline="", encoding="utf-8") as fh:
            header = next(csv.reader(fh, delimiter=cfg.delimiter), None)
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err}") from None
    if header is None:
        raise ConfigError(f"{path}: file is empty, expected a header row")
    return tuple(c.strip() for c in header if c.strip() not in roles)
