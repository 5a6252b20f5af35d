"""Kernels and weight functions ``K_h(r)`` over a scalar discrepancy, in log space.

Families and their fixed normalisation (so constants cancel in posteriors):

==========================  ==============================================  =============
family                      ``log K_h(r)``                                  ∫ K_h
==========================  ==============================================  =============
``uniform_symmetric``       ``-log h`` on ``|r| <= h``                      1 on r >= 0
``uniform_onesided``        ``-log h`` on ``r <= h``                        not integrable
``exponential_symmetric``   ``-log h - |r|/h``                              1 on r >= 0
``exponential_onesided``    ``-log h - r/h``                                not integrable
``gaussian``                ``log Normal(r; m_h, h^2)``                     1
``power_law``               ``-(1/h) log r``, r > 0                         not integrable
``log_gaussian``            normalised log-normal-shaped weight, r > 0      1
==========================  ==============================================  =============

The symmetric families are normalised over ``r >= 0`` since discrepancies are
non-negative.  The one-sided families exist precisely so that a Gaussian model
of the discrepancy may put mass below zero, hence their support is the real line.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import integrate

from .exceptions import ConfigurationError, DomainError

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

FAMILIES = (
    "uniform_symmetric",
    "uniform_onesided",
    "exponential_symmetric",
    "exponential_onesided",
    "gaussian",
    "power_law",
    "log_gaussian",
    "error_model",
)

# Names accepted in config files.
FAMILY_ALIASES = {
    "uniform": "uniform_symmetric",
    "uniform-onesided": "uniform_onesided",
    "exponential": "exponential_symmetric",
    "exponential-onesided": "exponential_onesided",
    "gaussian": "gaussian",
    "power-law": "power_law",
    "log-gaussian": "log_gaussian",
    "error-model": "error_model",
}

# Bounded on r >= 0, where discrepancies live.
_BOUNDED = {
    "uniform_symmetric", "uniform_onesided", "exponential_symmetric", "exponential_onesided",
    "gaussian", "log_gaussian",
}


@dataclass(frozen=True)
class Transform:
    """Strictly increasing map given as a (forward, inverse) pair."""

    forward: Callable[[np.ndarray], np.ndarray]
    inverse: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"

    def inverted(self) -> "Transform":
        return Transform(self.inverse, self.forward, f"inv({self.name})")


def _checked_log(r):
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise DomainError("log transform requires r > 0")
    return np.log(r)


LOG = Transform(_checked_log, np.exp, "log")
EXP = Transform(np.exp, _checked_log, "exp")
IDENTITY = Transform(lambda r: np.asarray(r, dtype=float), lambda r: np.asarray(r, dtype=float), "identity")


def affine(scale: float = 1.0, shift: float = 0.0) -> Transform:
    if scale <= 0:
        raise ValueError("affine transform must be strictly increasing (scale > 0)")
    return Transform(
        lambda r: scale * np.asarray(r, dtype=float) + shift,
        lambda r: (np.asarray(r, dtype=float) - shift) / scale,
        f"affine({scale},{shift})",
    )


@dataclass(frozen=True)
class WeightFunction:
    family: str
    h: float
    m_h: float = 0.0
    log_density_model: Optional[Callable] = None
    transforms: Tuple[Transform, ...] = ()

    def __post_init__(self):
        family = FAMILY_ALIASES.get(self.family, self.family)
        if family not in FAMILIES:
            raise ConfigurationError(
                f"unknown weight family {self.family!r}; expected one of {sorted(FAMILY_ALIASES)}"
            )
        object.__setattr__(self, "family", family)
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValueError(f"bandwidth h must be positive and finite, got {self.h!r}")
        if not math.isfinite(self.m_h):
            raise ValueError("m_h must be finite")
        if family == "error_model" and self.log_density_model is None:
            raise ConfigurationError("error_model weight needs log_density_model")

    @property
    def is_bounded(self) -> bool:
        return not self.transforms and self.family in _BOUNDED

    @property
    def is_density(self) -> bool:
        """Whether the weight may be read as a probability density in r."""
        return bool(np.isfinite(log_weight_normalizer(self)))

    def eval_log(self, r):
        return eval_log_weight(self, r)


def _base_log_weight(w: WeightFunction, r: np.ndarray) -> np.ndarray:
    h, fam = w.h, w.family
    log_h = math.log(h)
    if fam == "uniform_symmetric":
        return np.where(np.abs(r) <= h, -log_h, -np.inf)
    if fam == "uniform_onesided":
        return np.where(r <= h, -log_h, -np.inf)
    if fam == "exponential_symmetric":
        return -log_h - np.abs(r) / h
    if fam == "exponential_onesided":
        return -log_h - r / h
    if fam == "gaussian":
        return -_LOG_SQRT_2PI - log_h - 0.5 * ((r - w.m_h) / h) ** 2
    if fam == "power_law":
        if np.any(r <= 0):
            raise DomainError("power_law weight is defined only for r > 0")
        return -np.log(r) / h
    if fam == "log_gaussian":
        out = np.full(r.shape, -np.inf)
        pos = r > 0
        log_norm = w.m_h + 0.5 * h * h + _LOG_SQRT_2PI + log_h
        out[pos] = -0.5 * ((np.log(r[pos]) - w.m_h) / h) ** 2 - log_norm
        return out
    raise TypeError("error_model weights are evaluated on datasets; use eval_log_data")


def eval_log_weight(w: WeightFunction, r):
    """``log K_h(r)``; scalar in, float out, array in, array out."""
    scalar = np.ndim(r) == 0
    arr = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("weight functions take finite arguments")
    for t in w.transforms:
        arr = np.asarray(t.forward(arr), dtype=float)
    out = _base_log_weight(w, np.atleast_1d(arr)).reshape(arr.shape)
    return float(out) if scalar else out


def eval_log_data(w: WeightFunction, x_obs, x) -> float:
    """``log π(x_o | x)`` for the error_model family."""
    if w.family != "error_model":
        raise TypeError("eval_log_data is only defined for error_model weights")
    return float(w.log_density_model(x_obs, x))


def transform_weight(w: WeightFunction, g: Transform) -> WeightFunction:
    """Weight for the original discrepancy equivalent to ``w`` placed on ``g(Δ)``.

    The result evaluates ``w(g(r))``.  Passing ``g.inverted()`` gives the other
    direction, the weight on ``g(Δ)`` equivalent to ``w`` on Δ.
    """
    if w.family == "error_model":
        raise TypeError("error_model weights act on datasets and cannot be transformed")
    return replace(w, transforms=(g,) + w.transforms)


_NORMALIZERS = {
    "uniform_symmetric": 0.0,
    "uniform_onesided": math.inf,
    "exponential_symmetric": 0.0,
    "exponential_onesided": math.inf,
    "gaussian": 0.0,
    "power_law": math.inf,
    "log_gaussian": 0.0,
    "error_model": 0.0,
}


def log_weight_normalizer(w: WeightFunction) -> float:
    """``log ∫ K_h(r) dr`` over the family's support; ``inf`` means not integrable.

    Transformed weights are integrated numerically over ``r > 0``.
    """
    if not w.transforms:
        return _NORMALIZERS[w.family]

    def integrand(r):
        try:
            return math.exp(eval_log_weight(w, r))
        except DomainError:
            return 0.0

    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(integrand, 0.0, math.inf, limit=200)
        except (integrate.IntegrationWarning, OverflowError):
            return math.inf
    if not math.isfinite(val) or val <= 0:
        return math.inf
    return math.log(val)


def weight_from_config(spec: dict, log_density_model: Optional[Callable] = None) -> WeightFunction:
    """Build a weight from ``{"family": ..., "h": ..., "m_h": ...}``."""
    if not isinstance(spec, dict):
        raise ConfigurationError("weight must be an object")
    unknown = set(spec) - {"family", "h", "m_h", "transform"}
    if unknown:
        raise ConfigurationError(f"weight: unknown field(s) {sorted(unknown)}")
    name = spec.get("family")
    if name not in FAMILY_ALIASES:
        raise ConfigurationError(
            f"weight.family: unknown weight family {name!r}; expected one of {sorted(FAMILY_ALIASES)}"
        )
    try:
        h = float(spec["h"])
    except (KeyError, TypeError, ValueError):
        raise ConfigurationError("weight.h: positive number required") from None
    try:
        w = WeightFunction(name, h, float(spec.get("m_h", 0.0)), log_density_model)
    except ValueError as exc:
        raise ConfigurationError(f"weight: {exc}") from None
    tname = spec.get("transform")
    if tname is not None:
        if tname not in ("log", "exp"):
            raise ConfigurationError(f"weight.transform: unknown transform {tname!r}")
        w = transform_weight(w, LOG if tname == "log" else EXP)
    return w
