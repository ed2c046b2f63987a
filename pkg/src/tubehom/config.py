"""Run configuration: schema validation, defaults and the resolved config object."""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import yaml

from .geometry import CurveSpec


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats without a dot (1e-10) as floats."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^[-+]?(?:[0-9][0-9_]*(?:\.[0-9_]*)?(?:[eE][-+]?[0-9]+)?|\.[0-9_]+(?:[eE][-+]?[0-9]+)?"""
               r"""|[-+]?\.(?:inf|Inf|INF)|\.(?:nan|NaN|NAN))$"""),
    list("-+0123456789."))

DEFAULTS: dict = {
    "curve": {"radius": 1.0, "a": 2.0, "b": 1.0, "ambient_dim": 2},
    "frame": "parallel",
    "grid": {"ns": 256, "nw": 201, "nr": 16, "ntheta": 16},
    "epsilons": [0.4, 0.3, 0.2, 0.15, 0.1, 0.07, 0.05],
    "times": [0.5, 1.0, 2.0],
    "solver": {"tol": 1e-10, "truncation_tol": 1e-10, "count": 40, "max_count": 640},
    "renorm": "discrete",
    "potential": {"convention": "auto", "metric": "auto", "eps": 0.1,
                  "oracle_epsilons": [0.1, 0.05, 0.025], "tolerance": 0.02},
    "initial": {"mode": 1, "fiber_mode": 0, "perturbation": 0.0},
    "boundary": {"epsilons": [0.1, 0.07, 0.05, 0.035, 0.025], "t": 1.0, "n": 1},
    "refinement": {"enabled": True, "factor": 1.5, "threshold": 0.2},
    "curvature": {"sectional": 0.0},
    "suites": {"kato_states": 100, "regularity": True, "boundary": True, "uniform": True},
    "seed": 0,
    "output": "out",
}


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every violation."""

    def __init__(self, errors: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(errors))
        self.errors = errors


def load_schema() -> dict:
    text = resources.files("tubehom").joinpath("schema/config.schema.json").read_text()
    return json.loads(text)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _describe(err: jsonschema.ValidationError) -> str:
    path = ".".join(str(p) for p in err.absolute_path) or "<root>"
    if err.validator in ("exclusiveMinimum", "maximum") and "eps" in path:
        return f"{path}: {err.instance!r}: ε must be in (0,1]"
    if err.validator == "enum":
        return f"{path}: {err.instance!r} is not one of {err.validator_value}"
    return f"{path}: {err.message}"


def _semantic_errors(cfg: dict) -> list[str]:
    errs = []
    g = cfg["grid"]
    if g["nw"] % 2 == 0:
        errs.append("grid.nw: must be odd so that the zero section is a grid node")
    if g["ntheta"] % 2:
        errs.append("grid.ntheta: must be even")
    c = cfg["curve"]
    if c["kind"] == "sampled" and not c.get("points"):
        errs.append("curve.points: required for a sampled curve")
    if c["kind"] == "sampled" and c.get("points") and any(len(p) != c["ambient_dim"] for p in c["points"]):
        errs.append("curve.points: every point needs ambient_dim coordinates")
    if cfg["solver"]["count"] > cfg["solver"]["max_count"]:
        errs.append("solver.count: exceeds solver.max_count")
    return errs


def validate(raw: dict) -> dict:
    """Validate a raw mapping, fill defaults, and return the resolved config dict."""
    if not isinstance(raw, dict):
        raise ConfigError(["<root>: configuration must be a mapping"])
    validator = jsonschema.Draft7Validator(load_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: [str(p) for p in e.absolute_path])
    msgs = [_describe(e) for e in errors]
    if msgs:
        raise ConfigError(msgs)
    cfg = _merge(DEFAULTS, raw)
    more = [_describe(e) for e in validator.iter_errors(cfg)] + _semantic_errors(cfg)
    if more:
        raise ConfigError(more)
    return cfg


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration.  ``data`` is the full dict that a manifest records."""

    data: dict

    def __getitem__(self, key):
        return self.data[key]

    @property
    def curve(self) -> CurveSpec:
        c = self.data["curve"]
        pts = tuple(tuple(p) for p in c["points"]) if c.get("points") else None
        return CurveSpec(kind=c["kind"], radius=c["radius"], a=c["a"], b=c["b"], points=pts,
                         ambient_dim=c["ambient_dim"], ns=self.data["grid"]["ns"])

    @property
    def epsilons(self) -> list[float]:
        return list(self.data["epsilons"])

    @property
    def times(self) -> list[float]:
        return list(self.data["times"])

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def replace(self, **changes) -> RunConfig:
        return RunConfig(validate(_merge(self.data, changes)))

    def canonical_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))


def from_dict(raw: dict) -> RunConfig:
    return RunConfig(validate(raw))


def parse_config(path) -> RunConfig:
    """Read a YAML or JSON config (or a run manifest, whose recorded config is used)."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError([f"{p}: file not found"])
    try:
        raw = yaml.load(p.read_text(), Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError([f"{p}: not valid YAML/JSON ({exc})"]) from exc
    if isinstance(raw, dict) and "config" in raw and "manifest_version" in raw:
        raw = raw["config"]
    return from_dict(raw if raw is not None else {})
