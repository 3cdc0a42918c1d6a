"""Run configuration: TOML file + defaults + command-line overrides."""

from __future__ import annotations

import copy
import math
import sys

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigurationError
from .geometry import Box, GuidingFieldSet, example_system, polynomial_hamiltonian, quadratic_system
from .planner import CurveSpec
from .symbolic import FastStateModel, ReducedMapParams

OUTPUT_ENV = "GEOSHADOW_OUTPUT_DIR"

DEFAULTS: dict = {
    "seed": 0,
    "output_dir": "results",
    "fields": {"preset": "example", "mu": 0.1, "periods": [1.0, 1.0, 1.0],
               "base_actions": [0.0, 0.0, 0.0], "half_width": 1.0},
    "model": {"r": 1.0, "lambda": 0.5, "eta": 0.05, "epsilon": 1e-2, "fast_dim": 2},
    "curve": {"kind": "circle", "center": [0.0, 0.0], "radius": 0.5, "omega": 1.0, "phase": 0.0},
    "planner": {"L": 1.0, "t_end": 2 * math.pi, "a3_grid": 9, "samples": 10, "stay_horizon": 10.0},
    "verify": {"experiments": ["uniform_closeness", "same_code_drift", "endpoint_accuracy", "shadowing"],
               "trials": 200, "endpoint_trials": 100, "N": [5, 10, 20, 30], "K0": 1.0,
               "closeness_epsilon": 1e-3, "closeness_phi_norm": 1.0, "drift_fields": "quadratic"},
    "sweep": {"epsilons": [1e-2, 5e-3, 2.5e-3], "slope_min": 0.75, "slope_max": 1.25},
}

# keys that may appear without a default
OPTIONAL: dict = {
    "fields": {"action", "domain", "lo", "hi", "d"},
    "model": {"M", "coupling", "direction", "eps_bias"},
    "curve": {"start", "velocity", "point", "points", "speed", "amplitudes", "frequencies"},
    "planner": {"horizon"},
    "verify": set(),
    "sweep": set(),
}

EXPERIMENTS = ("uniform_closeness", "same_code_drift", "endpoint_accuracy", "shadowing")


def _merge(base: dict, extra: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        where = f"{path}{key}"
        if path == "" and key not in DEFAULTS:
            raise ConfigurationError(f"unknown config key {where!r}")
        if isinstance(out.get(key), dict):
            if not isinstance(val, dict):
                raise ConfigurationError(f"config key {where!r} must be a table")
            allowed = set(DEFAULTS[key]) | OPTIONAL.get(key, set())
            unknown = sorted(set(val) - allowed)
            if unknown:
                raise ConfigurationError(f"unknown key(s) {unknown} in [{key}]")
            out[key].update(copy.deepcopy(val))
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path: str | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the TOML file at ``path``, then ``overrides``."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
        if "curve" in raw and "kind" in raw["curve"] and raw["curve"]["kind"] != cfg["curve"]["kind"]:
            cfg["curve"] = {}
        if "fields" in raw and raw["fields"].get("preset", "example") != "example":
            cfg["fields"] = {"preset": raw["fields"]["preset"]}
        cfg = _merge(cfg, raw)
    for dotted, value in (overrides or {}).items():
        set_dotted(cfg, dotted, value)
    return cfg


def parse_override(text: str) -> tuple[str, object]:
    """``section.key=value`` with ``value`` read as a TOML literal when possible."""
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} is not of the form key=value")
    key, raw = (s.strip() for s in text.split("=", 1))
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key, value


def set_dotted(cfg: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    if len(parts) == 1:
        if parts[0] not in DEFAULTS or isinstance(DEFAULTS[parts[0]], dict):
            raise ConfigurationError(f"unknown config key {dotted!r}")
        cfg[parts[0]] = value
        return
    if len(parts) != 2 or parts[0] not in DEFAULTS or not isinstance(DEFAULTS[parts[0]], dict):
        raise ConfigurationError(f"unknown config key {dotted!r}")
    section, key = parts
    if key not in DEFAULTS[section] and key not in OPTIONAL.get(section, set()):
        raise ConfigurationError(f"unknown key {key!r} in [{section}]")
    cfg[section][key] = value


def _get(section: dict, key: str, name: str):
    if key not in section:
        raise ConfigurationError(f"missing [{name}] key {key!r}")
    return section[key]


def _domain(spec: dict, d_default: int = 1) -> Box:
    if "domain" in spec:
        dom = spec["domain"]
        return Box(np.array(_get(dom, "lo", "fields.domain"), float), np.array(_get(dom, "hi", "fields.domain"), float))
    if "lo" in spec or "hi" in spec:
        return Box(np.array(_get(spec, "lo", "fields"), float), np.array(_get(spec, "hi", "fields"), float))
    return Box.symmetric(float(spec.get("half_width", 1.0)), int(spec.get("d", d_default)))


def build_fields(cfg: dict, allow_underdetermined: bool = False) -> GuidingFieldSet:
    spec = cfg["fields"]
    preset = spec.get("preset", "example")
    try:
        if preset == "example":
            return example_system(float(spec.get("mu", 0.1)), spec.get("base_actions", (0.0, 0.0, 0.0)),
                                  spec.get("periods", (1.0, 1.0, 1.0)), _domain(spec))
        if preset == "quadratic":
            return quadratic_system(float(spec.get("mu", 0.1)), _domain(spec))
        if preset != "custom":
            raise ConfigurationError(f"unknown field preset {preset!r}")
        actions = spec.get("action")
        if not actions:
            raise ConfigurationError("custom field set needs at least one [[fields.action]]")
        domain = _domain(spec)
        hs = []
        for k, act in enumerate(actions):
            label = act.get("label", f"c{k + 1}")
            lin = act.get("linear")
            quad = act.get("quadratic")
            hs.append(polynomial_hamiltonian(
                label, float(act.get("constant", 0.0)),
                None if lin is None else np.array(lin, float),
                None if quad is None else np.array(quad, float),
                float(act.get("period", 1.0)), d=domain.dim))
        for h in hs:
            if h.grad(domain.center).shape != (2 * domain.dim,):
                raise ConfigurationError(f"action {h.label} does not match the domain dimension")
        return GuidingFieldSet(tuple(hs), domain, allow_underdetermined, {"preset": "custom"})
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"[fields]: {exc}") from None


def build_params(cfg: dict, fields: GuidingFieldSet | None = None) -> ReducedMapParams:
    fields = build_fields(cfg) if fields is None else fields
    m = cfg["model"]
    try:
        fast = FastStateModel.default(fields.n, float(m["r"]), float(m["lambda"]), int(m["fast_dim"]),
                                      m.get("M"), m.get("eps_bias"))
        return ReducedMapParams(fields, fast, float(m["epsilon"]), float(m["eta"]),
                                m.get("coupling"), m.get("direction"))
    except (TypeError, KeyError) as exc:
        raise ConfigurationError(f"[model]: {exc}") from None


def build_curve(cfg: dict) -> CurveSpec:
    c = cfg["curve"]
    kind = c.get("kind")
    try:
        if kind == "circle":
            return CurveSpec.circle(_get(c, "center", "curve"), float(_get(c, "radius", "curve")),
                                    float(c.get("omega", 1.0)), float(c.get("phase", 0.0)))
        if kind == "line":
            return CurveSpec.line(_get(c, "start", "curve"), _get(c, "velocity", "curve"))
        if kind == "constant":
            return CurveSpec.constant(_get(c, "point", "curve"))
        if kind == "lissajous":
            return CurveSpec.lissajous(_get(c, "center", "curve"), _get(c, "amplitudes", "curve"),
                                       _get(c, "frequencies", "curve"), float(c.get("phase", math.pi / 2)))
        if kind == "polyline":
            return CurveSpec.polyline(_get(c, "points", "curve"), float(c.get("speed", 1.0)))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"[curve]: {exc}") from None
    raise ConfigurationError(f"unknown curve kind {kind!r}")


def planner_window(cfg: dict) -> tuple[int | None, float | None]:
    """``(horizon, t_end)``; an explicit horizon overrides the default end time."""
    p = cfg["planner"]
    horizon = p.get("horizon")
    t_end = p.get("t_end")
    if horizon is not None:
        horizon = int(horizon)
        if t_end == DEFAULTS["planner"]["t_end"]:
            t_end = None
    return horizon, None if t_end is None else float(t_end)
