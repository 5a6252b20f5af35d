"""Monte Carlo samplers for ABC and generalized posteriors.

* :func:`rejection_abc`: prior draws kept when Δ <= h.
* :func:`pm_abc_mcmc`: pseudo-marginal random-walk Metropolis-Hastings with the
  unbiased ABC likelihood estimate; the current state's estimate is recycled.
* :func:`surrogate_mh`: plain Metropolis-Hastings on
  ``log π(θ) + term(θ)`` with the term read off a Gaussian discrepancy field.

There is deliberately no pseudo-marginal sampler for GBI targets: Monte Carlo
gives an unbiased estimate of the *log* density there, not of the density.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .exceptions import ConfigurationError, SimulationError, ZeroAcceptanceError
from .loss import GaussianDiscrepancyField, LossSpec, field_log_term, log_mean_weight, uses_field
from .model import RngLike, SimulatorModel, as_stream, as_theta
from .weights import WeightFunction, eval_log_weight


@dataclass
class SampleChain:
    draws: np.ndarray
    log_target_values: np.ndarray
    acceptance_rate: float
    seed_record: tuple
    n_proposed: int = 0
    n_accepted: int = 0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float).reshape(len(self.draws), -1)
        self.log_target_values = np.asarray(self.log_target_values, dtype=float)
        if self.draws.shape[0] == 0:
            raise ValueError("a chain needs at least one draw")

    @property
    def dim(self) -> int:
        return self.draws.shape[1]

    def post_process(self, burn_in: float = 0.2, thin: int = 1) -> np.ndarray:
        """Draws after discarding the leading ``burn_in`` fraction and thinning."""
        if not 0 <= burn_in < 1:
            raise ValueError("burn_in must be a fraction in [0, 1)")
        if thin < 1:
            raise ValueError("thin must be >= 1")
        start = int(math.floor(burn_in * self.draws.shape[0]))
        return self.draws[start::thin]

    def write_csv(self, path) -> None:
        header = ["step"] + [f"theta_{i + 1}" for i in range(self.dim)] + ["log_target"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for step, (row, lt) in enumerate(zip(self.draws, self.log_target_values)):
                writer.writerow([step] + [repr(float(v)) for v in row] + [repr(float(lt))])

    def sidecar(self) -> dict:
        return {
            "acceptance_rate": self.acceptance_rate,
            "n_proposed": self.n_proposed,
            "n_accepted": self.n_accepted,
            "seed_record": {"seed": int(self.seed_record[0]), "stream_id": int(self.seed_record[1])},
            **self.diagnostics,
        }

    def write_sidecar(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def rejection_abc(model: SimulatorModel, w: WeightFunction, n_prior_draws: int,
                  rng: RngLike) -> SampleChain:
    """Keep prior draws whose single simulated discrepancy is within ``w.h``.

    ``w`` may carry increasing transforms; the acceptance region is then
    ``g(Δ) <= h``, which is how thresholds at or below zero are expressed.
    """
    if w.family != "uniform_onesided":
        raise ConfigurationError("rejection ABC needs a uniform_onesided weight (threshold h)")
    if n_prior_draws < 1:
        raise ValueError("n_prior_draws must be >= 1")
    stream = as_stream(rng)
    gen = stream.generator()
    thetas = model.sample_prior(n_prior_draws, gen)
    d = model.discrepancies(thetas, gen)
    keep = d <= w.h if not w.transforms else np.isfinite(eval_log_weight(w, d))
    n_acc = int(keep.sum())
    if n_acc == 0:
        raise ZeroAcceptanceError(_threshold_of(w), float(d.min()))
    log_t = np.array([model.log_prior(t) for t in thetas[keep]])
    return SampleChain(
        draws=thetas[keep],
        log_target_values=log_t,
        acceptance_rate=n_acc / n_prior_draws,
        seed_record=(stream.seed, stream.stream_id),
        n_proposed=n_prior_draws,
        n_accepted=n_acc,
        diagnostics={"min_discrepancy": float(d.min())},
    )


def _threshold_of(w: WeightFunction) -> float:
    """Threshold on the Δ scale: the h for which g(h) equals the weight's bandwidth."""
    h = w.h
    for t in reversed(w.transforms):
        h = float(t.inverse(np.asarray(h)))
    return h


def _check_proposal(proposal_sd, dim) -> np.ndarray:
    sd = np.broadcast_to(np.asarray(proposal_sd, dtype=float), (dim,)).copy()
    if not np.all(np.isfinite(sd)) or np.any(sd <= 0):
        raise ValueError("proposal_sd must be positive")
    return sd


def _initial_state(model: SimulatorModel, theta0, gen) -> np.ndarray:
    if theta0 is not None:
        return as_theta(theta0, model.dim)
    return model.sample_prior(1, gen)[0]


def metropolis_hastings(log_target: Callable[[np.ndarray], float], theta0, n_steps: int,
                        propose: Callable[[np.ndarray, np.random.Generator], np.ndarray],
                        gen: np.random.Generator):
    """Generic MH with a symmetric proposal.

    Returns ``(draws, log_target_values, n_accepted)``; ``draws[0]`` is the
    first post-transition state.
    """
    current = np.asarray(theta0, dtype=float)
    current_lt = float(log_target(current))
    if math.isnan(current_lt):
        raise SimulationError("log target is NaN at the initial state")
    draws = np.empty((n_steps, current.size))
    lts = np.empty(n_steps)
    accepted = 0
    for i in range(n_steps):
        prop = propose(current, gen)
        prop_lt = float(log_target(prop))
        if math.isnan(prop_lt) or prop_lt == math.inf:
            raise SimulationError(f"non-finite log target {prop_lt!r} at {prop.tolist()}")
        log_u = math.log(gen.uniform())
        if prop_lt > -math.inf and (current_lt == -math.inf or log_u < prop_lt - current_lt):
            current, current_lt = prop, prop_lt
            accepted += 1
        draws[i] = current
        lts[i] = current_lt
    return draws, lts, accepted


def _rw_proposal(sd: np.ndarray):
    def propose(theta, gen):
        return theta + sd * gen.standard_normal(sd.size)
    return propose


def pm_abc_mcmc(model: SimulatorModel, w: WeightFunction, n_sim_per_step: int, n_steps: int,
                proposal_sd, rng: RngLike, theta0=None) -> SampleChain:
    """Pseudo-marginal ABC-MCMC with Gaussian random-walk proposals.

    The likelihood estimate ``(1/n) Σ K_h(Δ_i)`` is computed once per proposed
    state that has positive prior density and then carried with the state.
    """
    if not w.is_bounded:
        raise ConfigurationError(
            f"pseudo-marginal ABC needs a bounded, non-negative weight; {w.family!r} is not supported"
        )
    if n_sim_per_step < 1 or n_steps < 1:
        raise ValueError("n_sim_per_step and n_steps must be >= 1")
    sd = _check_proposal(proposal_sd, model.dim)
    stream = as_stream(rng)
    gen = stream.generator()
    counter = {"estimates": 0}

    def estimate(theta):
        counter["estimates"] += 1
        d = model.discrepancies(np.broadcast_to(theta, (n_sim_per_step, model.dim)), gen)
        val = log_mean_weight(w, d)
        if math.isnan(val) or val == math.inf:
            raise SimulationError(f"non-finite likelihood estimate at {theta.tolist()}")
        return val

    def log_target(theta):
        lp = model.log_prior(theta)
        if lp == -math.inf:
            return -math.inf
        return lp + estimate(theta)

    current = _initial_state(model, theta0, gen)
    draws, lts, accepted = metropolis_hastings(log_target, current, n_steps, _rw_proposal(sd), gen)
    return SampleChain(
        draws=draws,
        log_target_values=lts,
        acceptance_rate=accepted / n_steps,
        seed_record=(stream.seed, stream.stream_id),
        n_proposed=n_steps,
        n_accepted=accepted,
        diagnostics={"likelihood_estimates": counter["estimates"]},
    )


def surrogate_mh(model: SimulatorModel, field: GaussianDiscrepancyField, spec: LossSpec,
                 n_steps: int, proposal_sd, rng: RngLike, w_scale: Optional[float] = None,
                 theta0=None) -> SampleChain:
    """Metropolis-Hastings on ``log π(θ) + term(θ)`` with no simulations.

    ``spec`` is a closed-form kind or a GBI kind read through the field mean;
    ``w_scale`` overrides ``spec.w_scale`` for the GBI kinds.
    """
    if not uses_field(spec, field):
        raise ConfigurationError(f"loss kind {spec.kind!r} cannot be evaluated through a field")
    if w_scale is not None:
        spec = replace(spec, w_scale=w_scale)
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    sd = _check_proposal(proposal_sd, model.dim)
    stream = as_stream(rng)
    gen = stream.generator()

    def log_target(theta):
        lp = model.log_prior(theta)
        if lp == -math.inf:
            return -math.inf
        return lp + float(field_log_term(spec, field, theta))

    current = _initial_state(model, theta0, gen)
    draws, lts, accepted = metropolis_hastings(log_target, current, n_steps, _rw_proposal(sd), gen)
    return SampleChain(
        draws=draws,
        log_target_values=lts,
        acceptance_rate=accepted / n_steps,
        seed_record=(stream.seed, stream.stream_id),
        n_proposed=n_steps,
        n_accepted=accepted,
    )


__all__ = [
    "SampleChain",
    "metropolis_hastings",
    "pm_abc_mcmc",
    "rejection_abc",
    "surrogate_mh",
]
