"""Experiment configuration: one JSON document, validated into plain objects.

Every validation error is a :class:`ConfigurationError` whose message starts
with the dotted path of the offending field.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .exceptions import ConfigurationError
from .loss import CF_KINDS, LOSS_KINDS, LossSpec
from .model import (BUILTIN_MODELS, DISCREPANCIES, ParameterBox, RngStream,
                    deterministic_from_name, make_deterministic_model)
from .weights import WeightFunction, weight_from_config

SCHEMA_VERSION = 1
METHODS = ("grid", "rejection", "pm_mcmc", "surrogate_mh", "calibrate")
TOP_LEVEL = {
    "schema", "name", "description", "seed", "method", "model", "grid", "field", "posteriors",
    "rejection", "sampler", "histogram", "calibration", "output_dir",
}


def bundled_config_names() -> List[str]:
    root = resources.files("abcgbi") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_config_path(name_or_path: str) -> Path:
    """A path on disk, or the name of a bundled config."""
    p = Path(name_or_path)
    if p.exists():
        return p
    stem = p.name[:-5] if p.name.endswith(".json") else p.name
    bundled = resources.files("abcgbi") / "configs" / f"{stem}.json"
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigurationError(f"config: no such file or bundled config {name_or_path!r}")


def load_json(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigurationError("config: top level must be an object")
    return doc


def derive_stream(seed: int, tag: str) -> RngStream:
    """Independent stream for one component of a run, keyed by a fixed tag."""
    return RngStream(int(seed), zlib.crc32(tag.encode("utf-8")))


def _require(d: dict, key: str, path: str):
    if key not in d:
        raise ConfigurationError(f"{path}.{key}: required")
    return d[key]


def _check_keys(d: Any, allowed: set, path: str):
    if not isinstance(d, dict):
        raise ConfigurationError(f"{path}: must be an object")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigurationError(f"{path}: unknown field(s) {sorted(unknown)}")


def _positive_int(d: dict, key: str, path: str, default=None) -> int:
    v = d.get(key, default)
    if v is None:
        raise ConfigurationError(f"{path}.{key}: required")
    if isinstance(v, float) and v.is_integer():
        v = int(v)
    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
        raise ConfigurationError(f"{path}.{key}: positive integer required, got {v!r}")
    return v


def _box(d: dict, path: str) -> ParameterBox:
    try:
        return ParameterBox(_require(d, "lower", path), _require(d, "upper", path))
    except ValueError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None


@dataclass
class PosteriorSpec:
    """One posterior in a comparison: a loss evaluated on the grid, or rejection ABC."""

    label: str
    kind: str
    loss: Optional[LossSpec] = None
    weight: Optional[WeightFunction] = None
    const_variance: Any = None
    n_prior_draws: int = 0


@dataclass
class ExperimentConfig:
    raw: dict
    name: str
    seed: int
    method: str
    model_spec: dict
    box: Optional[ParameterBox] = None
    resolution: Any = None
    field_spec: Optional[dict] = None
    posteriors: List[PosteriorSpec] = field(default_factory=list)
    rejection: dict = field(default_factory=dict)
    sampler: dict = field(default_factory=dict)
    histogram: dict = field(default_factory=dict)
    calibration: dict = field(default_factory=dict)
    output_dir: Optional[str] = None


def parse_posterior(d: dict, path: str) -> PosteriorSpec:
    _check_keys(d, {"label", "loss", "weight", "const_variance", "n_prior_draws"}, path)
    loss = _require(d, "loss", path)
    _check_keys(loss, {"kind", "w_scale", "n_sim"}, f"{path}.loss")
    kind = _require(loss, "kind", f"{path}.loss")
    label = str(d.get("label", kind))
    weight = weight_or_error(d["weight"], f"{path}.weight") if "weight" in d else None
    if kind == "rejection":
        if weight is None:
            raise ConfigurationError(f"{path}.weight: rejection needs a uniform-onesided weight")
        return PosteriorSpec(label, kind, weight=weight,
                             n_prior_draws=_positive_int(d, "n_prior_draws", path))
    if kind not in LOSS_KINDS:
        raise ConfigurationError(f"{path}.loss.kind: unknown loss kind {kind!r}; expected one of {list(LOSS_KINDS) + ['rejection']}")
    if kind in ("abc_error_model", "schmon_generalized"):
        raise ConfigurationError(f"{path}.loss.kind: {kind!r} needs Python callables and is library-only")
    try:
        spec = LossSpec(kind, weight, w_scale=float(loss.get("w_scale", 1.0)),
                        n_sim=_positive_int(loss, "n_sim", f"{path}.loss", 1))
    except ConfigurationError as exc:
        raise ConfigurationError(f"{path}.loss: {exc}") from None
    cv = d.get("const_variance")
    if kind in ("cf_exponential_constvar", "cf_gaussian_constvar") and cv is None:
        cv = "at_min_mean"
    if cv is not None and not (cv == "at_min_mean" or (isinstance(cv, (int, float)) and cv > 0)):
        raise ConfigurationError(f"{path}.const_variance: 'at_min_mean' or a positive number")
    return PosteriorSpec(label, kind, loss=spec, weight=weight, const_variance=cv)


def parse_config(doc: dict) -> ExperimentConfig:
    _check_keys(doc, TOP_LEVEL, "config")
    if doc.get("schema") != SCHEMA_VERSION:
        raise ConfigurationError(f"schema: expected {SCHEMA_VERSION}, got {doc.get('schema')!r}")
    seed = doc.get("seed")
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ConfigurationError("seed: non-negative integer required (no wall-clock default)")
    method = doc.get("method")
    if method not in METHODS:
        raise ConfigurationError(f"method: expected one of {list(METHODS)}, got {method!r}")
    cfg = ExperimentConfig(raw=doc, name=str(doc.get("name", "experiment")), seed=seed,
                           method=method, model_spec=doc.get("model", {}),
                           output_dir=doc.get("output_dir"))
    if method != "calibrate" or "model" in doc:
        _check_model(cfg.model_spec)
    if "grid" in doc:
        g = doc["grid"]
        _check_keys(g, {"lower", "upper", "resolution"}, "grid")
        cfg.box = _box(g, "grid")
        res = g.get("resolution", 201)
        if isinstance(res, list):
            if len(res) != cfg.box.dim or any(not isinstance(r, int) or r < 2 for r in res):
                raise ConfigurationError("grid.resolution: one integer >= 2 per dimension")
        elif not isinstance(res, int) or res < 2:
            raise ConfigurationError("grid.resolution: integer >= 2 required")
        cfg.resolution = res
    if "field" in doc:
        f = doc["field"]
        _check_keys(f, {"source", "n", "resolution", "n_design", "n_per_point", "training",
                        "variance_mode", "transform"}, "field")
        if f.get("source") not in ("analytic", "monte_carlo", "surrogate"):
            raise ConfigurationError(f"field.source: expected analytic, monte_carlo or surrogate, got {f.get('source')!r}")
        if f.get("transform", "identity") not in ("identity", "log"):
            raise ConfigurationError("field.transform: 'identity' or 'log'")
        if f.get("training", "mean") not in ("mean", "draws"):
            raise ConfigurationError("field.training: 'mean' or 'draws'")
        cfg.field_spec = f
    for i, p in enumerate(doc.get("posteriors", [])):
        cfg.posteriors.append(parse_posterior(p, f"posteriors[{i}]"))
    labels = [p.label for p in cfg.posteriors]
    if len(set(labels)) != len(labels):
        raise ConfigurationError("posteriors: labels must be unique")
    if "histogram" in doc:
        _check_keys(doc["histogram"], {"bins"}, "histogram")
        b = doc["histogram"].get("bins", "fd")
        if not (b == "fd" or (isinstance(b, int) and b >= 1)):
            raise ConfigurationError("histogram.bins: 'fd' or a positive integer")
        cfg.histogram = doc["histogram"]
    if "sampler" in doc:
        _check_keys(doc["sampler"], {"n_steps", "proposal_sd", "n_sim_per_step", "burn_in", "thin",
                                     "theta0", "label", "weight", "loss"}, "sampler")
        cfg.sampler = doc["sampler"]
    if "rejection" in doc:
        _check_keys(doc["rejection"], {"n_prior_draws", "weight", "label"}, "rejection")
        cfg.rejection = doc["rejection"]
    if "calibration" in doc:
        _check_keys(doc["calibration"], {"m_star", "sd_star", "epsilon", "theta_star", "z", "quantile",
                                         "nonnegative", "n", "expect_w"}, "calibration")
        cfg.calibration = doc["calibration"]
    _check_method_sections(cfg)
    return cfg


def _check_model(m: dict):
    _check_keys(m, {"builtin", "params", "map", "x_obs", "discrepancy", "lower", "upper",
                    "external", "observed"}, "model")
    if "external" in m:
        if "builtin" in m:
            raise ConfigurationError("model: give either builtin or external, not both")
        _require(m, "observed", "model")
        _box(m, "model")
        return
    name = _require(m, "builtin", "model")
    if name == "deterministic":
        try:
            deterministic_from_name(m.get("map", "identity"))
        except ValueError as exc:
            raise ConfigurationError(f"model.map: {exc}") from None
        _require(m, "x_obs", "model")
        if m.get("discrepancy", "abs") not in DISCREPANCIES:
            raise ConfigurationError(f"model.discrepancy: unknown discrepancy {m.get('discrepancy')!r}")
        return
    if name not in BUILTIN_MODELS:
        raise ConfigurationError(f"model.builtin: unknown model {name!r}; expected one of {sorted(BUILTIN_MODELS) + ['deterministic']}")


def _check_method_sections(cfg: ExperimentConfig):
    m = cfg.method
    if m in ("grid", "pm_mcmc", "surrogate_mh") and cfg.box is None:
        raise ConfigurationError(f"grid: required for method {m!r}")
    if m == "grid" and not cfg.posteriors:
        raise ConfigurationError("posteriors: at least one posterior required for method 'grid'")
    if m == "rejection":
        _positive_int(cfg.rejection, "n_prior_draws", "rejection")
        _require(cfg.rejection, "weight", "rejection")
    if m in ("pm_mcmc", "surrogate_mh"):
        _positive_int(cfg.sampler, "n_steps", "sampler")
        _require(cfg.sampler, "proposal_sd", "sampler")
        if m == "pm_mcmc":
            _require(cfg.sampler, "weight", "sampler")
            _positive_int(cfg.sampler, "n_sim_per_step", "sampler", 1)
        else:
            _require(cfg.sampler, "loss", "sampler")
            if cfg.field_spec is None:
                raise ConfigurationError("field: required for method 'surrogate_mh'")
    if m == "calibrate":
        _require(cfg.calibration, "epsilon", "calibration")
        has_ms = "m_star" in cfg.calibration and "sd_star" in cfg.calibration
        if not has_ms and cfg.field_spec is None and not cfg.model_spec:
            raise ConfigurationError("calibration: give m_star and sd_star, or a model/field")
    needs_field = any(p.kind in CF_KINDS for p in cfg.posteriors)
    if needs_field and cfg.field_spec is None:
        raise ConfigurationError("field: required by closed-form posteriors")


def build_model(spec: dict):
    """``(model, command_spec)``; the command spec is None unless the simulator is external."""
    if "external" in spec:
        from .external import CommandSpec, make_external_model

        cmd = CommandSpec.from_config(spec["external"])
        model = make_external_model(cmd, spec["observed"], _box(spec, "model"),
                                    spec.get("discrepancy", "abs"))
        return model, cmd
    name = spec["builtin"]
    if name == "deterministic":
        bounds = _box(spec, "model") if "lower" in spec else None
        model = make_deterministic_model(deterministic_from_name(spec.get("map", "identity")),
                                         spec["x_obs"], spec.get("discrepancy", "abs"), bounds)
        return model, None
    try:
        return BUILTIN_MODELS[name](**spec.get("params", {})), None
    except TypeError as exc:
        raise ConfigurationError(f"model.params: {exc}") from None


def load_config(name_or_path: str) -> ExperimentConfig:
    return parse_config(load_json(resolve_config_path(name_or_path)))


def weight_or_error(d: Dict, path: str) -> WeightFunction:
    try:
        return weight_from_config(d)
    except ConfigurationError as exc:
        msg = str(exc)
        raise ConfigurationError(msg.replace("weight", path, 1) if msg.startswith("weight") else f"{path}: {msg}") from None


def theta_or_none(v, dim: int) -> Optional[np.ndarray]:
    if v is None:
        return None
    t = np.atleast_1d(np.asarray(v, dtype=float))
    if t.shape != (dim,):
        raise ConfigurationError(f"theta: expected {dim} values")
    return t
