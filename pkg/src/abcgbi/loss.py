"""ABC log-likelihoods and GBI losses, by Monte Carlo and in closed form.

Monte Carlo estimators draw their simulations from ``rng`` afresh on each call,
so handing two estimators the same :class:`~abcgbi.model.RngStream` couples them
on the identical simulation batch.

The closed forms assume the discrepancy at each θ is ``Normal(m(θ), v(θ))``,
supplied by a :class:`GaussianDiscrepancyField`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import log_ndtr, logsumexp

from .exceptions import ConfigurationError, SimulationError
from .model import RngLike, SimulatorModel, as_generator, as_theta
from .weights import WeightFunction, eval_log_weight

VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class GaussianDiscrepancyField:
    """θ ↦ (m(θ), v(θ)), the mean and variance of a Gaussian model of Δ_θ.

    ``mean_fn``/``var_fn`` take a point of shape ``(p,)`` or a stack ``(n, p)``.
    With ``transform="log"`` the moments describe ``log Δ_θ``; the closed-form
    losses then act on the log scale and :meth:`expected_discrepancy` returns the
    log-normal back-transformed mean.
    """

    mean_fn: Callable
    var_fn: Callable
    source: str = "analytic"
    transform: str = "identity"
    const_variance: Optional[float] = None
    clamp_count: list = field(default_factory=lambda: [0], compare=False, repr=False)

    def __post_init__(self):
        if self.source not in ("analytic", "monte_carlo", "surrogate"):
            raise ValueError(f"unknown field source {self.source!r}")
        if self.transform not in ("identity", "log"):
            raise ValueError(f"unknown field transform {self.transform!r}")

    def mean(self, theta):
        return _as_output(self.mean_fn(np.asarray(theta, dtype=float)))

    def var(self, theta):
        v = _as_output(self.var_fn(np.asarray(theta, dtype=float)))
        low = np.asarray(v) < VAR_FLOOR
        if np.any(low):
            self.clamp_count[0] += int(np.sum(low))
            v = np.maximum(v, VAR_FLOOR)
            v = float(v) if np.ndim(v) == 0 else v
        return v

    def expected_discrepancy(self, theta):
        """E(Δ_θ) on the natural scale."""
        m = self.mean(theta)
        if self.transform == "log":
            return np.exp(m + 0.5 * self.var(theta))
        return m

    def expected_squared_discrepancy(self, theta):
        """E(Δ_θ²) on the natural scale."""
        m, v = self.mean(theta), self.var(theta)
        if self.transform == "log":
            return np.exp(2.0 * m + 2.0 * v)
        return v + m * m


def _as_output(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def analytic_field(model: SimulatorModel) -> GaussianDiscrepancyField:
    """Field from a model's exact discrepancy moments."""
    if model.moments is None:
        raise ConfigurationError(f"model {model.name!r} has no analytic discrepancy moments")

    def mean_fn(theta):
        return model.moments(theta)[0]

    def var_fn(theta):
        return model.moments(theta)[1]

    return GaussianDiscrepancyField(mean_fn, var_fn, source="analytic")


def constant_variance_field(base: GaussianDiscrepancyField, variance: float) -> GaussianDiscrepancyField:
    """Keep ``base``'s mean, replace its variance by the constant ``variance``."""
    if not variance > 0:
        raise ValueError("constant variance must be positive")

    def var_fn(theta):
        theta = np.asarray(theta, dtype=float)
        return np.full(theta.shape[:-1], variance) if theta.ndim > 1 else variance

    return GaussianDiscrepancyField(
        base.mean_fn, var_fn, source=base.source, transform=base.transform,
        const_variance=float(variance),
    )


def tabulated_field(points, means, variances, source: str = "monte_carlo") -> GaussianDiscrepancyField:
    """Field interpolating moments tabulated at ``points`` (shape ``(n, p)``).

    Exact at the tabulated points; linear in between for p = 1, nearest
    tabulated point otherwise.
    """
    points = np.asarray(points, dtype=float)
    points = points.reshape(points.shape[0], -1)
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    p = points.shape[1]
    if p == 1:
        order = np.argsort(points[:, 0])
        xs = points[order, 0]

        def make(values):
            ys = values[order]

            def fn(theta):
                theta = np.asarray(theta, dtype=float)
                return np.interp(theta[..., 0], xs, ys)
            return fn
    else:
        from scipy.spatial import cKDTree

        tree = cKDTree(points)

        def make(values):
            def fn(theta):
                theta = np.asarray(theta, dtype=float)
                _, idx = tree.query(theta)
                return values[idx]
            return fn

    return GaussianDiscrepancyField(make(means), make(variances), source=source)


def mc_field(model: SimulatorModel, points, n: int, rng: RngLike) -> GaussianDiscrepancyField:
    """Monte Carlo moments at each row of ``points`` (stream ``i`` for row ``i``)."""
    from .model import as_stream, estimate_discrepancy_moments

    base = as_stream(rng)
    points = np.asarray(points, dtype=float).reshape(-1, model.dim)
    moments = np.array([
        estimate_discrepancy_moments(model, t, n, base.substream(i)) for i, t in enumerate(points)
    ])
    return tabulated_field(points, moments[:, 0], moments[:, 1], source="monte_carlo")


# --- Monte Carlo estimators --------------------------------------------------

def _log_mean_exp(log_values: np.ndarray) -> float:
    if np.all(np.isneginf(log_values)):
        return -math.inf
    return float(logsumexp(log_values) - math.log(log_values.size))


def _simulated_datasets(model: SimulatorModel, theta, n: int, rng: RngLike) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    theta = as_theta(theta, model.dim)
    return model.simulate_many(np.broadcast_to(theta, (n, model.dim)), as_generator(rng))


def _checked(values, what: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if np.any(np.isnan(values)) or np.any(np.isposinf(values)):
        raise SimulationError(f"non-finite {what}")
    return values


def log_mean_weight(w: WeightFunction, discrepancies) -> float:
    """``log((1/n) Σ K_h(Δ_i))`` for already simulated discrepancies."""
    d = np.asarray(discrepancies, dtype=float)
    return _log_mean_exp(_checked(eval_log_weight(w, d), "log weight"))


def mc_abc_log_likelihood(model: SimulatorModel, w: WeightFunction, theta, n: int, rng: RngLike) -> float:
    """Log of the unbiased estimate ``(1/n) Σ K_h(Δ(x_o, x_i))``; -inf if every weight is 0."""
    if w.family == "error_model":
        return error_model_log_likelihood(model, w.log_density_model, theta, n, rng)
    return log_mean_weight(w, model.discrepancy_draws(theta, n, rng))


def expected_discrepancy_loss(model: SimulatorModel, theta, n: int, rng: RngLike,
                              squared: bool = False) -> float:
    """Monte Carlo estimate of ``E Δ(x_o, x)`` (or ``E Δ²``), x ~ π(·|θ)."""
    d = model.discrepancy_draws(theta, n, rng)
    return float(np.mean(d * d if squared else d))


def error_model_log_likelihood(model: SimulatorModel, log_error_density: Callable, theta,
                               n: int, rng: RngLike) -> float:
    """Log of ``(1/n) Σ π(x_o | x_i)`` under a user-supplied error density."""
    xs = _simulated_datasets(model, theta, n, rng)
    logs = np.array([log_error_density(model.observed, x) for x in xs], dtype=float)
    return _log_mean_exp(_checked(logs, "error-model log density"))


def schmon_log_likelihood(model: SimulatorModel, data_loss: Callable, w_scale: float, theta,
                          n: int, rng: RngLike) -> float:
    """Log of ``(1/n) Σ exp(-w · l(x_o, x_i))``."""
    if not w_scale > 0:
        raise ValueError("w_scale must be positive")
    xs = _simulated_datasets(model, theta, n, rng)
    losses = np.array([data_loss(model.observed, x) for x in xs], dtype=float)
    if not np.all(np.isfinite(losses)):
        raise SimulationError("non-finite data loss")
    return _log_mean_exp(-w_scale * losses)


# --- closed forms under the Gaussian discrepancy model -----------------------

def _moments(field: GaussianDiscrepancyField, theta):
    m = field.mean(theta)
    v = field.var(theta)
    if np.any(np.asarray(v) <= 0):
        raise ValueError("field variance must be positive")
    return m, v


def cf_loss_uniform(field: GaussianDiscrepancyField, h: float, theta):
    """``-log Φ((h - m(θ)) / sqrt(v(θ)))``; one-sided uniform weight."""
    if not math.isfinite(h):
        raise ValueError("h must be finite")
    m, v = _moments(field, theta)
    return _as_output(-log_ndtr((h - m) / np.sqrt(v)))


def cf_loss_exponential(field: GaussianDiscrepancyField, h: float, theta, const_var: bool = False):
    """``m/h - v/(2h²)``; ``m/h`` when the variance is taken as constant."""
    if not h > 0:
        raise ValueError("h must be positive")
    if const_var:
        return _as_output(field.mean(theta) / h)
    m, v = _moments(field, theta)
    return _as_output(m / h - v / (2.0 * h * h))


def cf_loss_gaussian(field: GaussianDiscrepancyField, sigma_h: float, m_h: float, theta,
                     const_var: bool = False):
    """Gaussian-weight ABC loss.

    Full form ``½ log(v + σ_h²) + ½ (m - m_h)² / (v + σ_h²)``.  The constant
    variance form is ``E((Δ - m_h)²) / (2(σ_Δ² + σ_h²))`` and needs a field with
    ``const_variance`` set.
    """
    if not sigma_h > 0:
        raise ValueError("sigma_h must be positive")
    s2 = sigma_h * sigma_h
    if const_var:
        if field.const_variance is None:
            raise ConfigurationError("constant-variance Gaussian loss needs a constant-variance field")
        m = field.mean(theta)
        second = field.const_variance + (m - m_h) ** 2
        return _as_output(second / (2.0 * (field.const_variance + s2)))
    m, v = _moments(field, theta)
    total = v + s2
    return _as_output(0.5 * np.log(total) + 0.5 * (m - m_h) ** 2 / total)


# --- loss specifications ------------------------------------------------------

GBI_KINDS = ("expected_discrepancy", "expected_squared_discrepancy")
MC_ABC_KINDS = ("abc_mc", "abc_error_model", "schmon_generalized")
CF_KINDS = (
    "cf_uniform",
    "cf_exponential",
    "cf_exponential_constvar",
    "cf_gaussian",
    "cf_gaussian_constvar",
)
LOSS_KINDS = MC_ABC_KINDS + GBI_KINDS + CF_KINDS

_CF_FAMILIES = {
    "cf_uniform": ("uniform_onesided", "uniform_symmetric"),
    "cf_exponential": ("exponential_onesided", "exponential_symmetric"),
    "cf_exponential_constvar": ("exponential_onesided", "exponential_symmetric"),
    "cf_gaussian": ("gaussian",),
    "cf_gaussian_constvar": ("gaussian",),
}


@dataclass(frozen=True)
class LossSpec:
    """Which loss or log-likelihood to evaluate, and its settings.

    ``w_scale`` multiplies the GBI losses (and the Schmon loss).  ABC kinds are
    log-likelihoods and are added to the log prior as-is.  For GBI kinds
    ``use_field=None`` means: use the field's moments when a field is supplied,
    Monte Carlo otherwise.
    """

    kind: str
    weight: Optional[WeightFunction] = None
    w_scale: float = 1.0
    n_sim: int = 1
    data_loss: Optional[Callable] = None
    log_error_density: Optional[Callable] = None
    use_field: Optional[bool] = None

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigurationError(f"unknown loss kind {self.kind!r}; expected one of {list(LOSS_KINDS)}")
        if not (self.w_scale > 0 and math.isfinite(self.w_scale)):
            raise ConfigurationError("w_scale must be positive and finite")
        if self.kind in MC_ABC_KINDS + GBI_KINDS and self.n_sim < 1:
            raise ConfigurationError("n_sim must be >= 1 for Monte Carlo kinds")
        if self.kind == "abc_mc" and self.weight is None:
            raise ConfigurationError("abc_mc needs a weight function")
        if self.kind in CF_KINDS:
            if self.weight is None:
                raise ConfigurationError(f"{self.kind} needs a weight function")
            if self.weight.family not in _CF_FAMILIES[self.kind]:
                raise ConfigurationError(
                    f"{self.kind} needs a weight of family {_CF_FAMILIES[self.kind]}, got {self.weight.family!r}"
                )
        if self.kind == "schmon_generalized" and self.data_loss is None:
            raise ConfigurationError("schmon_generalized needs data_loss")
        if self.kind == "abc_error_model" and self.log_error_density is None:
            if self.weight is None or self.weight.family != "error_model":
                raise ConfigurationError("abc_error_model needs log_error_density")

    @property
    def is_gbi(self) -> bool:
        return self.kind in GBI_KINDS

    @property
    def needs_field(self) -> bool:
        return self.kind in CF_KINDS


def field_log_term(spec: LossSpec, field: GaussianDiscrepancyField, theta):
    """Deterministic term added to the log prior, evaluated through ``field``.

    Vectorised over a stack of points when the field is.
    """
    k, w = spec.kind, spec.weight
    if k == "expected_discrepancy":
        return -spec.w_scale * field.expected_discrepancy(theta)
    if k == "expected_squared_discrepancy":
        return -spec.w_scale * field.expected_squared_discrepancy(theta)
    if k == "cf_uniform":
        return -cf_loss_uniform(field, w.h, theta)
    if k == "cf_exponential":
        return -cf_loss_exponential(field, w.h, theta)
    if k == "cf_exponential_constvar":
        return -cf_loss_exponential(field, w.h, theta, const_var=True)
    if k == "cf_gaussian":
        return -cf_loss_gaussian(field, w.h, w.m_h, theta)
    if k == "cf_gaussian_constvar":
        return -cf_loss_gaussian(field, w.h, w.m_h, theta, const_var=True)
    raise ConfigurationError(f"loss kind {k!r} is not evaluated through a field")


def uses_field(spec: LossSpec, field: Optional[GaussianDiscrepancyField]) -> bool:
    if spec.needs_field:
        if field is None:
            raise ConfigurationError(f"loss kind {spec.kind!r} requires a Gaussian discrepancy field")
        return True
    if spec.is_gbi:
        if spec.use_field:
            if field is None:
                raise ConfigurationError("use_field=True but no field supplied")
            return True
        return field is not None and spec.use_field is None
    return False


def mc_log_term(model: SimulatorModel, spec: LossSpec, theta, rng: RngLike) -> float:
    """Monte Carlo term added to the log prior at a single θ."""
    k, n = spec.kind, spec.n_sim
    if k == "abc_mc":
        return mc_abc_log_likelihood(model, spec.weight, theta, n, rng)
    if k == "abc_error_model":
        dens = spec.log_error_density or spec.weight.log_density_model
        return error_model_log_likelihood(model, dens, theta, n, rng)
    if k == "schmon_generalized":
        return schmon_log_likelihood(model, spec.data_loss, spec.w_scale, theta, n, rng)
    if k in GBI_KINDS:
        loss = expected_discrepancy_loss(model, theta, n, rng, squared=k == "expected_squared_discrepancy")
        return -spec.w_scale * loss
    raise ConfigurationError(f"loss kind {k!r} has no Monte Carlo estimator")


def log_likelihood_term(model: SimulatorModel, spec: LossSpec,
                        field: Optional[GaussianDiscrepancyField], theta, rng: RngLike) -> float:
    """``-w·loss(θ)`` for GBI kinds, the ABC log-likelihood otherwise."""
    if uses_field(spec, field):
        return float(field_log_term(spec, field, as_theta(theta, model.dim)))
    return mc_log_term(model, spec, theta, rng)
