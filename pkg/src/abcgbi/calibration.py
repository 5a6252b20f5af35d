"""Bandwidth and scaling-constant calibration between ABC and GBI.

Matching an Exponential kernel ``e^{-Δ/h}/h`` to the uniform kernel
``1{Δ <= ε}/ε`` in L1 reduces, with ``a = h/ε``, to the scale-free root of
``a² log a + e^{-1/a} = 0`` on (0, 1).  The root (≈ 0.5901) is solved once at
import and reused, so downstream arithmetic carries no rounding.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import norm

from .exceptions import CalibrationError
from .loss import GaussianDiscrepancyField
from .model import ParameterBox, RngLike, SimulatorModel, as_theta, estimate_discrepancy_moments


def g_prime(a: float) -> float:
    """d/da of the L1 matching objective ``g(a) = 2(1 - a + a log a + e^{-1/a})``."""
    return 2.0 * (math.log(a) + math.exp(-1.0 / a) / (a * a))


def g_second(a: float) -> float:
    return 2.0 / a + 2.0 * math.exp(-1.0 / a) * (1.0 - 2.0 * a) / a**4


def g_scaled(a: float) -> float:
    """The matching objective as a function of ``a = h/ε`` (valid for a <= 1)."""
    return 2.0 * (1.0 - a + a * math.log(a) + math.exp(-1.0 / a))


def _bisect_root(lo: float = 0.4, hi: float = 1.0, tol: float = 1e-12, max_iter: int = 200):
    f_lo, f_hi = g_prime(lo), g_prime(hi)
    if not (f_lo < 0 < f_hi):
        raise RuntimeError("matching root is not bracketed")
    it = 0
    mid = 0.5 * (lo + hi)
    while it < max_iter:
        it += 1
        mid = 0.5 * (lo + hi)
        f_mid = g_prime(mid)
        if abs(f_mid) < tol or hi - lo < 4 * np.finfo(float).eps:
            break
        if f_mid < 0:
            lo = mid
        else:
            hi = mid
    return mid, it


MATCH_RATIO, _MATCH_ITERS = _bisect_root()


@dataclass(frozen=True)
class MatchResult:
    ratio_a: float
    h: float
    objective_value: float
    iterations: int


def g_epsilon(h: float, eps: float) -> float:
    """``∫_0^∞ |1{Δ<=ε}/ε - e^{-Δ/h}/h| dΔ`` in closed form."""
    if not (h > 0 and eps > 0):
        raise ValueError("h and eps must be positive")
    if eps <= h:
        return 2.0 * math.exp(-eps / h)
    b = h * math.log(eps / h)
    return 2.0 * ((eps - h - b) / eps + math.exp(-eps / h))


def match_exponential_to_uniform(eps: float) -> MatchResult:
    """Exponential bandwidth closest in L1 to the uniform kernel with threshold ``eps``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    a = MATCH_RATIO
    if g_second(a) <= 0:
        raise RuntimeError("matching root is not a minimum")
    h = a * eps
    return MatchResult(a, h, g_epsilon(h, eps), _MATCH_ITERS)


# --- standardisation and w --------------------------------------------------

Source = Union[GaussianDiscrepancyField, SimulatorModel, Tuple[float, float]]


def minimize_mean(field: GaussianDiscrepancyField, box: ParameterBox, resolution: int = 2001,
                  n_starts: int = 8, seed: int = 0):
    """``(θ*, m(θ*))`` minimising the field mean over ``box``.

    Grid scan for p <= 3; for larger p, coordinate descent with golden-section
    line searches from ``n_starts`` deterministic starts.
    """
    from scipy.optimize import minimize_scalar

    if box.dim <= 3:
        from .grid import make_grid

        res = resolution if box.dim == 1 else max(2, int(round(resolution ** (1.0 / box.dim))) * 4)
        points, _, _ = make_grid(box, res)
        m = np.asarray(field.expected_discrepancy(points), dtype=float).reshape(-1)
        i = int(np.argmin(m))
        return points[i].copy(), float(m[i])

    gen = np.random.Generator(np.random.Philox(key=seed))
    starts = gen.uniform(box.lower, box.upper, size=(n_starts, box.dim))
    best_t, best_m = None, math.inf
    for t in starts:
        t = t.copy()
        cur = float(field.expected_discrepancy(t))
        for _ in range(50):
            prev = cur
            for j in range(box.dim):
                def f(x, j=j):
                    s = t.copy()
                    s[j] = x
                    return float(field.expected_discrepancy(s))
                r = minimize_scalar(f, bounds=(box.lower[j], box.upper[j]), method="bounded")
                if r.fun < cur:
                    t[j], cur = r.x, float(r.fun)
            if prev - cur < 1e-12:
                break
        if cur < best_m:
            best_t, best_m = t, cur
    return best_t, best_m


def _gaussian_moments(source: Source, theta_star, n: int, rng: RngLike):
    if isinstance(source, tuple):
        m, sd = source
        return float(m), float(sd)
    if theta_star is None:
        raise ValueError("theta_star is required for fields and models")
    if isinstance(source, GaussianDiscrepancyField):
        t = np.asarray(theta_star, dtype=float)
        return float(source.expected_discrepancy(t)), math.sqrt(float(source.var(t)))
    m, v = estimate_discrepancy_moments(source, theta_star, n, rng)
    return m, math.sqrt(v)


def estimate_delta0(source: Source, theta_star=None, quantile: Optional[float] = None,
                    z: float = 1.96, nonnegative: bool = True, empirical: bool = False,
                    n: int = 100_000, rng: RngLike = 0) -> float:
    """Smallest practically attainable discrepancy at ``theta_star``.

    Gaussian rule ``m(θ*) - z·sd(θ*)``; ``quantile`` (lower-tail probability)
    overrides ``z`` with the matching normal quantile.  With ``empirical=True``
    and a model, the empirical ``quantile`` (default 0.025) of ``n`` simulated
    discrepancies is used instead.
    """
    if quantile is not None and not 0 < quantile <= 0.5:
        raise ValueError("quantile must lie in (0, 0.5]")
    if empirical:
        if not isinstance(source, SimulatorModel):
            raise ValueError("empirical Δ0 needs a simulator model")
        q = 0.025 if quantile is None else quantile
        d = source.discrepancy_draws(as_theta(theta_star, source.dim), n, rng)
        delta0 = float(np.quantile(d, q))
    else:
        if quantile is not None:
            z = float(norm.ppf(1.0 - quantile))
        m, sd = _gaussian_moments(source, theta_star, n, rng)
        delta0 = m - z * sd
    return max(delta0, 0.0) if nonnegative else delta0


@dataclass(frozen=True)
class CalibrationReport:
    theta_star: Optional[list]
    m_star: float
    sd_star: float
    delta0: float
    epsilon: float
    epsilon_std: float
    ratio_a: float
    h: float
    w: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        rows = [
            ("theta*", "-" if self.theta_star is None else ", ".join(f"{v:.6g}" for v in self.theta_star)),
            ("E[Δ] at θ*", f"{self.m_star:.6g}"),
            ("sd[Δ] at θ*", f"{self.sd_star:.6g}"),
            ("Δ0", f"{self.delta0:.6g}"),
            ("ε", f"{self.epsilon:.6g}"),
            ("ε - Δ0", f"{self.epsilon_std:.6g}"),
            ("h/ε ratio", f"{self.ratio_a:.10f}"),
            ("h", f"{self.h:.6g}"),
            ("w = 1/h", f"{self.w:.6g}"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def calibrate_w(source: Source, eps: float, theta_star=None, z: float = 1.96,
                quantile: Optional[float] = None, nonnegative: bool = True,
                box: Optional[ParameterBox] = None, resolution: int = 2001,
                n: int = 100_000, rng: RngLike = 0) -> CalibrationReport:
    """Exponential bandwidth ``h = a(ε - Δ0)`` and GBI scale ``w = 1/h``.

    ``source`` is ``(m*, sd*)``, a field (θ* found on ``box`` when not given),
    or a model (θ* required; moments by Monte Carlo).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if isinstance(source, GaussianDiscrepancyField) and theta_star is None:
        if box is None:
            raise ValueError("need theta_star or a box to locate it")
        theta_star, _ = minimize_mean(source, box, resolution)
    m, sd = _gaussian_moments(source, theta_star, n, rng)
    if quantile is not None:
        z = float(norm.ppf(1.0 - quantile))
    delta0 = max(m - z * sd, 0.0) if nonnegative else m - z * sd
    eps_std = eps - delta0
    if eps_std <= 0:
        raise CalibrationError(f"threshold below minimal discrepancy: eps={eps} <= Δ0={delta0}")
    match = match_exponential_to_uniform(eps_std)
    ts = None if theta_star is None else np.atleast_1d(np.asarray(theta_star, dtype=float)).tolist()
    return CalibrationReport(ts, m, sd, delta0, float(eps), eps_std, match.ratio_a, match.h, 1.0 / match.h)


def select_delta_thomas(field: GaussianDiscrepancyField, sim_discrepancies: Sequence[float],
                        box: ParameterBox, resolution: int = 2001) -> float:
    """``max(min_θ E(Δ_θ), min_i Δ^(i))``; use ``w = 1/δ`` downstream."""
    d = np.asarray(sim_discrepancies, dtype=float).ravel()
    if d.size == 0:
        raise ValueError("need at least one recorded discrepancy")
    _, m_min = minimize_mean(field, box, resolution)
    return max(m_min, float(d.min()))


def implied_abc_epsilon(delta: float, delta0: float = 0.0) -> float:
    """Uniform threshold whose matched Exponential bandwidth is ``delta``: ``δ/a + Δ0``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    return delta / MATCH_RATIO + delta0
