"""Inference-problem definition: RNG streams, parameter boxes, simulator models.

A :class:`SimulatorModel` bundles a prior, a stochastic forward simulator and a
scalar discrepancy against fixed observed data.  Everything downstream (losses,
grids, samplers) only ever sees discrepancy draws, so the batch helpers here are
the one place where simulation happens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import ndtr

from .exceptions import SimulationError

_UINT64 = 2**64


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    Each call to :meth:`generator` starts the stream from the beginning, so two
    estimators handed the same stream consume identical random numbers.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or not 0 <= value < _UINT64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {value!r}")

    def generator(self) -> np.random.Generator:
        key = int(self.seed) | (int(self.stream_id) << 64)
        return np.random.Generator(np.random.Philox(key=key))

    def substream(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)


RngLike = Union[RngStream, int, np.random.Generator]


def as_stream(rng: RngLike) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng))
    raise TypeError(f"expected RngStream or integer seed, got {type(rng).__name__}")


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return as_stream(rng).generator()


@dataclass(frozen=True)
class ParameterBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower and upper must be 1-D vectors of equal length")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ValueError("box bounds must be finite")
        if np.any(lower >= upper):
            raise ValueError("lower[i] < upper[i] required for every dimension")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return np.all((theta >= self.lower) & (theta <= self.upper), axis=-1)


def as_theta(theta, dim: Optional[int] = None) -> np.ndarray:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.ndim != 1:
        raise ValueError(f"parameter point must be a vector, got shape {theta.shape}")
    if dim is not None and theta.size != dim:
        raise ValueError(f"expected {dim} parameters, got {theta.size}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("parameter point must be finite")
    return theta


def uniform_prior(box: ParameterBox):
    """Log-density, single sampler and batch sampler of a uniform prior on ``box``."""
    log_vol = -math.log(box.volume)

    def log_density(theta):
        return log_vol if bool(box.contains(theta)) else -math.inf

    def sampler(gen):
        return gen.uniform(box.lower, box.upper)

    def batch_sampler(n, gen):
        return gen.uniform(box.lower, box.upper, size=(n, box.dim))

    return log_density, sampler, batch_sampler


def abs_discrepancy(x_obs, x):
    """L1 distance; equals ``|x_o - x|`` for scalar data."""
    return float(np.sum(np.abs(np.asarray(x_obs, dtype=float) - np.asarray(x, dtype=float))))


def euclidean_discrepancy(x_obs, x):
    return float(np.linalg.norm(np.asarray(x_obs, dtype=float) - np.asarray(x, dtype=float)))


def _abs_batch(x_obs, xs):
    return np.sum(np.abs(xs - x_obs), axis=1)


def _euclidean_batch(x_obs, xs):
    return np.linalg.norm(xs - x_obs, axis=1)


DISCREPANCIES = {
    "abs": (abs_discrepancy, _abs_batch),
    "l1": (abs_discrepancy, _abs_batch),
    "euclidean": (euclidean_discrepancy, _euclidean_batch),
}


@dataclass(frozen=True)
class SimulatorModel:
    """Prior, forward simulator and discrepancy for a fixed observed dataset.

    ``simulate(theta, gen)`` returns one dataset; ``simulate_batch(thetas, gen)``
    (optional) returns one dataset per row of ``thetas`` and is used whenever
    present.  ``moments`` optionally gives the exact ``(E[Δ_θ], Var[Δ_θ])``.
    """

    simulate: Callable[[np.ndarray, np.random.Generator], np.ndarray]
    discrepancy: Callable[[np.ndarray, np.ndarray], float]
    observed: np.ndarray
    prior_log_density: Callable[[np.ndarray], float]
    prior_sampler: Optional[Callable[[np.random.Generator], np.ndarray]] = None
    bounds: Optional[ParameterBox] = None
    simulate_batch: Optional[Callable[[np.ndarray, np.random.Generator], np.ndarray]] = None
    discrepancy_batch: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    prior_sampler_batch: Optional[Callable[[int, np.random.Generator], np.ndarray]] = None
    moments: Optional[Callable[[np.ndarray], tuple]] = None
    deterministic: bool = False
    name: str = "custom"
    dim: int = field(default=0)

    def __post_init__(self):
        object.__setattr__(
            self, "observed", np.atleast_1d(np.asarray(self.observed, dtype=float))
        )
        if self.dim == 0:
            dim = self.bounds.dim if self.bounds is not None else 1
            object.__setattr__(self, "dim", dim)

    def log_prior(self, theta) -> float:
        return float(self.prior_log_density(as_theta(theta, self.dim)))

    def sample_prior(self, n: int, gen: np.random.Generator) -> np.ndarray:
        if self.prior_sampler_batch is not None:
            out = np.asarray(self.prior_sampler_batch(n, gen), dtype=float)
        elif self.prior_sampler is not None:
            out = np.array([np.atleast_1d(self.prior_sampler(gen)) for _ in range(n)], dtype=float)
        else:
            raise ValueError(f"model {self.name!r} has no prior sampler")
        return out.reshape(n, self.dim)

    def simulate_many(self, thetas, gen: np.random.Generator) -> np.ndarray:
        """One simulated dataset per row of ``thetas``, shape ``(n, d)``."""
        thetas = np.asarray(thetas, dtype=float).reshape(-1, self.dim)
        if self.simulate_batch is not None:
            xs = np.asarray(self.simulate_batch(thetas, gen), dtype=float)
        else:
            xs = np.array([np.atleast_1d(self.simulate(t, gen)) for t in thetas], dtype=float)
        return xs.reshape(thetas.shape[0], -1)

    def discrepancies(self, thetas, gen: np.random.Generator) -> np.ndarray:
        """One discrepancy draw per row of ``thetas``; raises on non-finite values."""
        xs = self.simulate_many(thetas, gen)
        if self.discrepancy_batch is not None:
            d = np.asarray(self.discrepancy_batch(self.observed, xs), dtype=float)
        else:
            d = np.array([self.discrepancy(self.observed, x) for x in xs], dtype=float)
        bad = ~np.isfinite(d)
        if bad.any():
            i = int(np.argmax(bad))
            raise SimulationError(
                f"non-finite discrepancy {d[i]!r} at theta={np.asarray(thetas).reshape(-1, self.dim)[i].tolist()}"
            )
        return d

    def discrepancy_draws(self, theta, n: int, rng: RngLike) -> np.ndarray:
        """``n`` i.i.d. draws of Δ(x_o, x), x ~ π(·|θ)."""
        if n < 1:
            raise ValueError("n must be >= 1")
        theta = as_theta(theta, self.dim)
        return self.discrepancies(np.broadcast_to(theta, (n, self.dim)), as_generator(rng))


def estimate_discrepancy_moments(model: SimulatorModel, theta, n: int, rng: RngLike):
    """Sample mean and unbiased sample variance of ``n`` discrepancy draws."""
    if n < 2:
        raise ValueError("n must be >= 2")
    d = model.discrepancy_draws(theta, n, rng)
    if d.min() == d.max():
        # constant draws (deterministic simulators): exact, free of summation rounding
        return float(d[0]), 0.0
    return float(np.mean(d)), float(np.var(d, ddof=1))


# --- built-in models -------------------------------------------------------

def folded_normal_moments(mu, sigma2):
    """Mean and variance of ``|Z|`` for ``Z ~ Normal(mu, sigma2)``."""
    mu = np.asarray(mu, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    sigma = np.sqrt(sigma2)
    mean = sigma * np.sqrt(2.0 / np.pi) * np.exp(-0.5 * mu**2 / sigma2) + mu * (
        1.0 - 2.0 * ndtr(-mu / sigma)
    )
    var = mu**2 + sigma2 - mean**2
    return mean, np.maximum(var, 0.0)


def make_example1_model(x_obs: float = 3.0, slope: float = 0.2, intercept: float = 0.01,
                        lower: float = 0.0, upper: float = 10.0) -> SimulatorModel:
    """Heteroscedastic Gaussian model ``x | θ ~ Normal(θ, slope·θ + intercept)``.

    Uniform prior on ``[lower, upper]``, discrepancy ``|x_o - x|``.  Defaults are
    the illustrative example (x_o = 3, θ ~ Uniform[0, 10]).
    """
    box = ParameterBox([lower], [upper])
    log_density, sampler, batch_sampler = uniform_prior(box)

    def _sd(theta):
        var = slope * theta + intercept
        if np.any(var <= 0):
            raise SimulationError(f"simulator variance non-positive at theta={theta}")
        return np.sqrt(var)

    def simulate(theta, gen):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return theta + _sd(theta) * gen.standard_normal(1)

    def simulate_batch(thetas, gen):
        t = thetas[:, 0]
        return (t + _sd(t) * gen.standard_normal(t.size))[:, None]

    def moments(theta):
        t = np.asarray(theta, dtype=float)[..., 0]
        m, v = folded_normal_moments(x_obs - t, slope * t + intercept)
        return m, v

    return SimulatorModel(
        simulate=simulate,
        discrepancy=abs_discrepancy,
        observed=np.array([x_obs]),
        prior_log_density=log_density,
        prior_sampler=sampler,
        bounds=box,
        simulate_batch=simulate_batch,
        discrepancy_batch=_abs_batch,
        prior_sampler_batch=batch_sampler,
        moments=moments,
        name="example1",
    )


def make_deterministic_model(f: Callable, x_obs, discrepancy: Union[str, Callable] = "abs",
                             bounds: Optional[ParameterBox] = None) -> SimulatorModel:
    """Model whose simulator ignores the RNG and always returns ``f(θ)``.

    With ``bounds`` the prior is uniform on the box; without, it is flat and
    improper (sampling from it is an error).
    """
    x_obs = np.atleast_1d(np.asarray(x_obs, dtype=float))
    if isinstance(discrepancy, str):
        disc, disc_batch = DISCREPANCIES[discrepancy]
    else:
        disc, disc_batch = discrepancy, None

    def simulate(theta, gen):
        return np.atleast_1d(np.asarray(f(np.asarray(theta, dtype=float)), dtype=float))

    def simulate_batch(thetas, gen):
        unique, inverse = np.unique(thetas, axis=0, return_inverse=True)
        rows = np.array([simulate(t, gen) for t in unique])
        return rows[np.asarray(inverse).reshape(-1)]

    if bounds is not None:
        log_density, sampler, batch_sampler = uniform_prior(bounds)
    else:
        log_density, sampler, batch_sampler = (lambda theta: 0.0), None, None

    def moments(theta):
        return disc(x_obs, simulate(theta, None)), 0.0

    return SimulatorModel(
        simulate=simulate,
        discrepancy=disc,
        observed=x_obs,
        prior_log_density=log_density,
        prior_sampler=sampler,
        bounds=bounds,
        simulate_batch=simulate_batch,
        discrepancy_batch=disc_batch,
        prior_sampler_batch=batch_sampler,
        moments=moments,
        deterministic=True,
        name="deterministic",
    )


def with_discrepancy(model: SimulatorModel, transform: Callable[[np.ndarray], np.ndarray],
                     name: Optional[str] = None) -> SimulatorModel:
    """Same simulator, discrepancy replaced by ``transform(Δ)``.

    Used for translated (Δ - c) and log-transformed discrepancies.  Draws stay
    coupled: under a shared stream the transformed model sees exactly the
    transformed values of the original draws.
    """
    base_single, base_batch = model.discrepancy, model.discrepancy_batch

    def disc(x_obs, x):
        return float(transform(np.asarray(base_single(x_obs, x))))

    batch = None
    if base_batch is not None:
        def batch(x_obs, xs):
            return transform(base_batch(x_obs, xs))

    return replace(model, discrepancy=disc, discrepancy_batch=batch, moments=None,
                   name=name or f"{model.name}-transformed")


BUILTIN_MODELS = {
    "example1": make_example1_model,
}


def deterministic_from_name(fname: str) -> Callable:
    funcs = {
        "identity": lambda t: t,
        "square": lambda t: t**2,
    }
    try:
        return funcs[fname]
    except KeyError:
        raise ValueError(f"unknown deterministic map {fname!r}; choose from {sorted(funcs)}") from None


def dataset(values: Sequence[float]) -> np.ndarray:
    out = np.atleast_1d(np.asarray(values, dtype=float))
    if not np.all(np.isfinite(out)):
        raise ValueError("datasets must be finite")
    return out
