"""JSON experiment configuration.

Every problem found is reported at once; a key that is not recognised is
an error rather than silently ignored.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .errors import ParseError, ValidationError
from .ncs import Box, PlantModel, TokenBucketSpec
from .presets import PRESETS, preset
from .sim import DEFAULT_GRID, DEFAULT_HORIZON, DEFAULT_TOL
from .terminal import Variant

SCHEMA_VERSION = 1
CONTROLLERS = ("rollout", "ttc", "etc")

TOP_KEYS = {
    "schema_version",
    "name",
    "plant",
    "bucket",
    "controller",
    "variant",
    "N_bar",
    "sigma_bucket",
    "sigma_trigger",
    "x0",
    "u0",
    "beta0",
    "horizon_steps",
    "convergence_tol",
    "sweep",
    "etc_search",
    "timing",
    "out_dir",
}
PLANT_KEYS = {"preset", "A", "B", "Q", "R", "state_box", "input_box"}
BOX_KEYS = {"lower", "upper"}
BUCKET_KEYS = {"g", "c", "b"}
SWEEP_KEYS = {"N_bar", "variants"}
ETC_KEYS = {"grid_size"}
TIMING_KEYS = {"N_bar", "variants", "repeats"}


@dataclass
class SweepSpec:
    N_bar: list = field(default_factory=lambda: list(range(1, 13)))
    variants: list = field(default_factory=lambda: [1, 2])


@dataclass
class TimingSpec:
    N_bar: list = field(default_factory=lambda: list(range(6, 13)))
    variants: list = field(default_factory=lambda: [2])
    repeats: int = 5


@dataclass
class ExperimentConfig:
    name: str
    plant: PlantModel
    spec: TokenBucketSpec
    controller: str
    variant: Variant
    N_bar: int
    sigma_bucket: float
    sigma_trigger: float
    x0: np.ndarray
    u0: np.ndarray
    beta0: int
    horizon_steps: int = DEFAULT_HORIZON
    convergence_tol: float = DEFAULT_TOL
    sweep: SweepSpec = field(default_factory=SweepSpec)
    etc_grid_size: int = DEFAULT_GRID
    timing: TimingSpec = field(default_factory=TimingSpec)
    out_dir: Optional[str] = None


def _line_of(text: str, key: str) -> Optional[int]:
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    if m is None:
        return None
    return text.count("\n", 0, m.start()) + 1


class _Collector:
    def __init__(self, text: str):
        self.text = text
        self.problems: list[str] = []

    def add(self, key: str, message: str):
        line = _line_of(self.text, key.split(".")[-1])
        where = f"line {line}, " if line is not None else ""
        self.problems.append(f"{where}field {key!r}: {message}")

    def unknown(self, obj: dict, allowed: set, prefix: str):
        for k in obj:
            if k not in allowed:
                self.add(prefix + k, f"unknown key (allowed: {', '.join(sorted(allowed))})")


def _matrix(col: _Collector, key: str, value: Any, vector: bool = False) -> Optional[np.ndarray]:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        col.add(key, "must be a numeric array")
        return None
    if vector:
        if arr.ndim > 1:
            col.add(key, "must be a flat list of numbers")
            return None
        return arr.reshape(-1)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        col.add(key, "must be a list of equal-length rows")
        return None
    if not np.all(np.isfinite(arr)):
        col.add(key, "entries must be finite")
        return None
    return arr


def _integer(col: _Collector, key: str, value: Any, lo: Optional[int] = None) -> Optional[int]:
    if isinstance(value, bool) or not isinstance(value, int):
        col.add(key, f"must be an integer, got {value!r}")
        return None
    if lo is not None and value < lo:
        col.add(key, f"must be >= {lo}, got {value}")
        return None
    return value


def _number(col: _Collector, key: str, value: Any) -> Optional[float]:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        col.add(key, f"must be a number, got {value!r}")
        return None
    return float(value)


def _int_list(col: _Collector, key: str, value: Any, lo: int = 1) -> Optional[list]:
    if not isinstance(value, list) or not value:
        col.add(key, "must be a non-empty list of integers")
        return None
    out = [_integer(col, key, v, lo) for v in value]
    return None if any(v is None for v in out) else out


def _box(col: _Collector, key: str, value: Any) -> Optional[Box]:
    if not isinstance(value, dict):
        col.add(key, "must be an object with 'lower' and 'upper'")
        return None
    col.unknown(value, BOX_KEYS, key + ".")
    if set(value) != BOX_KEYS:
        col.add(key, "needs both 'lower' and 'upper'")
        return None
    lo = _matrix(col, key + ".lower", value["lower"], vector=True)
    hi = _matrix(col, key + ".upper", value["upper"], vector=True)
    if lo is None or hi is None:
        return None
    if lo.shape != hi.shape:
        col.add(key, "lower and upper differ in length")
        return None
    return Box(lo, hi)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, column=exc.colno) from None
    if not isinstance(raw, dict):
        raise ParseError("top level must be a JSON object", line=1, column=1)

    col = _Collector(text)
    col.unknown(raw, TOP_KEYS, "")
    if "schema_version" not in raw:
        col.add("schema_version", "missing")
    elif raw["schema_version"] != SCHEMA_VERSION:
        col.add("schema_version", f"unsupported version {raw['schema_version']!r}, expected {SCHEMA_VERSION}")

    preset_defaults = None
    plant = None
    plant_raw = raw.get("plant")
    if plant_raw is None:
        col.add("plant", "missing")
    elif not isinstance(plant_raw, dict):
        col.add("plant", "must be an object")
    else:
        col.unknown(plant_raw, PLANT_KEYS, "plant.")
        if "preset" in plant_raw:
            extra = set(plant_raw) - {"preset"}
            if extra:
                col.add("plant", f"a preset cannot be combined with {', '.join(sorted(extra))}")
            elif plant_raw["preset"] not in PRESETS:
                col.add("plant.preset", f"unknown preset {plant_raw['preset']!r}; choose one of {', '.join(sorted(PRESETS))}")
            else:
                preset_defaults = preset(plant_raw["preset"])
                plant = preset_defaults[0]
        else:
            mats = {}
            for key in ("A", "B", "Q", "R"):
                if key not in plant_raw:
                    col.add("plant." + key, "missing")
                else:
                    mats[key] = _matrix(col, "plant." + key, plant_raw[key])
            boxes = {}
            for key in ("state_box", "input_box"):
                if key in plant_raw:
                    boxes[key] = _box(col, "plant." + key, plant_raw[key])
            if len(mats) == 4 and all(v is not None for v in mats.values()) and all(
                v is not None for v in boxes.values()
            ):
                try:
                    plant = PlantModel(name=raw.get("name", "plant"), **mats, **boxes)
                except ValidationError as exc:
                    for v in exc.violations:
                        col.add("plant", v)

    spec = None
    if "bucket" in raw:
        b_raw = raw["bucket"]
        if not isinstance(b_raw, dict):
            col.add("bucket", "must be an object with g, c, b")
        else:
            col.unknown(b_raw, BUCKET_KEYS, "bucket.")
            vals = {}
            for key in ("g", "c", "b"):
                if key not in b_raw:
                    col.add("bucket." + key, "missing")
                else:
                    vals[key] = _integer(col, "bucket." + key, b_raw[key])
            if len(vals) == 3 and None not in vals.values():
                try:
                    spec = TokenBucketSpec(**vals)
                except ValidationError as exc:
                    for v in exc.violations:
                        col.add("bucket", v)
    elif preset_defaults is not None:
        spec = preset_defaults[1]
    else:
        col.add("bucket", "missing (required unless the plant is a preset)")

    controller = raw.get("controller", "rollout")
    if controller not in CONTROLLERS:
        col.add("controller", f"must be one of {', '.join(CONTROLLERS)}, got {controller!r}")

    variant = Variant.V1
    if "variant" in raw:
        if raw["variant"] in (1, 2) and not isinstance(raw["variant"], bool):
            variant = Variant(raw["variant"])
        else:
            col.add("variant", f"must be 1 or 2, got {raw['variant']!r}")

    N_bar = _integer(col, "N_bar", raw.get("N_bar", 8), lo=1)
    sigma_bucket = _number(col, "sigma_bucket", raw.get("sigma_bucket", 0.0))
    if sigma_bucket is not None and sigma_bucket < 0:
        col.add("sigma_bucket", f"must be >= 0, got {sigma_bucket}")
    sigma_trigger = _number(col, "sigma_trigger", raw.get("sigma_trigger", 0.5))
    if sigma_trigger is not None and not 0.0 <= sigma_trigger <= 1.0:
        col.add("sigma_trigger", f"must lie in [0, 1], got {sigma_trigger}")

    def initial(key, idx):
        if key in raw:
            return raw[key]
        if preset_defaults is not None:
            return preset_defaults[idx]
        col.add(key, "missing (required unless the plant is a preset)")
        return None

    x0 = initial("x0", 2)
    u0 = initial("u0", 3)
    beta0 = initial("beta0", 4)
    if x0 is not None:
        x0 = _matrix(col, "x0", x0, vector=True)
    if u0 is not None:
        u0 = _matrix(col, "u0", u0, vector=True)
    if beta0 is not None:
        beta0 = _integer(col, "beta0", beta0, lo=0)
    if plant is not None:
        if x0 is not None and x0.size != plant.n:
            col.add("x0", f"must have {plant.n} entries, got {x0.size}")
        if u0 is not None and u0.size != plant.m:
            col.add("u0", f"must have {plant.m} entries, got {u0.size}")
    if spec is not None and beta0 is not None and beta0 > spec.b:
        col.add("beta0", f"must lie in [0, {spec.b}], got {beta0}")
    if spec is not None and N_bar is not None and variant == Variant.V1 and controller == "rollout":
        M = -(-spec.c // spec.g)
        if N_bar < M:
            col.add("N_bar", f"Variant 1 needs N_bar >= M = {M}, got {N_bar}")

    horizon_steps = _integer(col, "horizon_steps", raw.get("horizon_steps", DEFAULT_HORIZON), lo=1)
    tol = _number(col, "convergence_tol", raw.get("convergence_tol", DEFAULT_TOL))
    if tol is not None and tol <= 0:
        col.add("convergence_tol", f"must be > 0, got {tol}")

    sweep = SweepSpec()
    if "sweep" in raw:
        s_raw = raw["sweep"]
        if not isinstance(s_raw, dict):
            col.add("sweep", "must be an object")
        else:
            col.unknown(s_raw, SWEEP_KEYS, "sweep.")
            if "N_bar" in s_raw:
                sweep.N_bar = _int_list(col, "sweep.N_bar", s_raw["N_bar"]) or sweep.N_bar
            if "variants" in s_raw:
                v = _int_list(col, "sweep.variants", s_raw["variants"])
                if v and any(x not in (1, 2) for x in v):
                    col.add("sweep.variants", "entries must be 1 or 2")
                sweep.variants = v or sweep.variants

    grid = DEFAULT_GRID
    if "etc_search" in raw:
        e_raw = raw["etc_search"]
        if not isinstance(e_raw, dict):
            col.add("etc_search", "must be an object")
        else:
            col.unknown(e_raw, ETC_KEYS, "etc_search.")
            if "grid_size" in e_raw:
                grid = _integer(col, "etc_search.grid_size", e_raw["grid_size"], lo=2) or grid

    timing = TimingSpec()
    if "timing" in raw:
        t_raw = raw["timing"]
        if not isinstance(t_raw, dict):
            col.add("timing", "must be an object")
        else:
            col.unknown(t_raw, TIMING_KEYS, "timing.")
            if "N_bar" in t_raw:
                timing.N_bar = _int_list(col, "timing.N_bar", t_raw["N_bar"]) or timing.N_bar
            if "variants" in t_raw:
                v = _int_list(col, "timing.variants", t_raw["variants"])
                if v and any(x not in (1, 2) for x in v):
                    col.add("timing.variants", "entries must be 1 or 2")
                timing.variants = v or timing.variants
            if "repeats" in t_raw:
                timing.repeats = _integer(col, "timing.repeats", t_raw["repeats"], lo=1) or timing.repeats

    name = raw.get("name", Path(source).stem)
    if not isinstance(name, str) or not name:
        col.add("name", "must be a non-empty string")
    out_dir = raw.get("out_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        col.add("out_dir", "must be a string")

    if col.problems:
        raise ValidationError(col.problems)
    return ExperimentConfig(
        name=name,
        plant=plant,
        spec=spec,
        controller=controller,
        variant=variant,
        N_bar=N_bar,
        sigma_bucket=sigma_bucket,
        sigma_trigger=sigma_trigger,
        x0=x0,
        u0=u0,
        beta0=beta0,
        horizon_steps=horizon_steps,
        convergence_tol=tol,
        sweep=sweep,
        etc_grid_size=grid,
        timing=timing,
        out_dir=out_dir,
    )


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read config {str(p)!r}: {exc.strerror}") from None
    return parse_config(text, source=str(p))
