"""Posterior densities tabulated on tensor-product grids (p <= 3).

Quadrature is trapezoidal on uniform grids; normalisation goes through
log-sum-exp so that very peaked posteriors do not underflow.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .exceptions import ConfigurationError, ImproperPosteriorError
from .loss import (
    GaussianDiscrepancyField,
    LossSpec,
    field_log_term,
    mc_log_term,
    uses_field,
)
from .model import ParameterBox, RngLike, SimulatorModel, as_stream

MAX_GRID_DIM = 3


@dataclass(frozen=True)
class PosteriorGrid:
    points: np.ndarray
    log_unnormalized: np.ndarray
    quadrature_weights: np.ndarray
    density: Optional[np.ndarray] = None
    label: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        pts = pts.reshape(pts.shape[0], -1)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "log_unnormalized", np.asarray(self.log_unnormalized, dtype=float))
        object.__setattr__(self, "quadrature_weights", np.asarray(self.quadrature_weights, dtype=float))
        n = pts.shape[0]
        if self.log_unnormalized.shape != (n,) or self.quadrature_weights.shape != (n,):
            raise ValueError("points, log_unnormalized and quadrature_weights must align")
        if np.any(self.quadrature_weights <= 0):
            raise ValueError("quadrature weights must be positive")
        if np.any(np.isnan(self.log_unnormalized)) or np.any(np.isposinf(self.log_unnormalized)):
            raise ValueError("log_unnormalized must be finite or -inf")
        if self.density is not None:
            object.__setattr__(self, "density", np.asarray(self.density, dtype=float))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def is_normalized(self) -> bool:
        return self.density is not None

    def mass(self) -> np.ndarray:
        """Probability attached to each grid point (density × weight)."""
        _require_normalized(self)
        return self.density * self.quadrature_weights


def trapezoid_weights(axis: np.ndarray) -> np.ndarray:
    dx = np.diff(axis)
    w = np.zeros_like(axis)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return w


def make_grid(box: ParameterBox, resolution):
    """Tensor-product grid over ``box``: ``(points, trapezoid weights, axes)``."""
    if box.dim > MAX_GRID_DIM:
        raise ConfigurationError(f"grids are limited to p <= {MAX_GRID_DIM}; use a sampler")
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (box.dim,))
    if np.any(res < 2):
        raise ConfigurationError("grid resolution must be >= 2 per dimension")
    axes = [np.linspace(lo, hi, int(r)) for lo, hi, r in zip(box.lower, box.upper, res)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    wmesh = np.meshgrid(*[trapezoid_weights(a) for a in axes], indexing="ij")
    weights = np.prod(np.stack([w.ravel() for w in wmesh], axis=1), axis=1)
    return points, weights, axes


def evaluate_on_grid(model: SimulatorModel, spec: LossSpec,
                     field: Optional[GaussianDiscrepancyField], box: ParameterBox,
                     resolution, rng: RngLike = 0, label: str = "") -> PosteriorGrid:
    """Unnormalised log posterior ``log π(θ) + term(θ)`` at every grid point.

    Monte Carlo kinds use stream ``i`` of ``rng``'s seed at point ``i`` so that
    grids of different loss kinds built from the same seed share simulations.
    """
    points, weights, _ = make_grid(box, resolution)
    log_prior = np.array([model.log_prior(t) for t in points])
    log_u = np.full(points.shape[0], -np.inf)
    inside = np.isfinite(log_prior)
    if uses_field(spec, field):
        terms = _field_terms(spec, field, points[inside])
        log_u[inside] = log_prior[inside] + terms
    else:
        base = as_stream(rng)
        for i in np.flatnonzero(inside):
            log_u[i] = log_prior[i] + mc_log_term(model, spec, points[i], base.substream(int(i)))
    return PosteriorGrid(points, log_u, weights, label=label or spec.kind)


def _field_terms(spec, field, points):
    try:
        terms = np.asarray(field_log_term(spec, field, points), dtype=float)
        if terms.shape == (points.shape[0],):
            return terms
    except (ValueError, TypeError, IndexError):
        pass
    return np.array([float(field_log_term(spec, field, t)) for t in points])


def prior_grid(model: SimulatorModel, box: ParameterBox, resolution, label: str = "prior") -> PosteriorGrid:
    points, weights, _ = make_grid(box, resolution)
    log_prior = np.array([model.log_prior(t) for t in points])
    return PosteriorGrid(points, log_prior, weights, label=label)


def grid_from_log_density(points, log_density, weights, label: str = "") -> PosteriorGrid:
    return PosteriorGrid(points, log_density, weights, label=label)


def normalize(grid: PosteriorGrid) -> PosteriorGrid:
    log_u = grid.log_unnormalized
    finite = np.isfinite(log_u)
    if not finite.any():
        raise ImproperPosteriorError("posterior improper on grid: every log density is -inf")
    log_z = logsumexp(log_u[finite] + np.log(grid.quadrature_weights[finite]))
    density = np.zeros_like(log_u)
    density[finite] = np.exp(log_u[finite] - log_z)
    return replace(grid, density=density)


def _require_normalized(grid: PosteriorGrid):
    if grid.density is None:
        raise ValueError("grid is not normalised; call normalize() first")


def _check_same_grid(a: PosteriorGrid, b: PosteriorGrid):
    if a.points.shape != b.points.shape or not np.allclose(a.points, b.points, rtol=0, atol=1e-12):
        raise ValueError("grid mismatch: posteriors live on different points")
    if not np.allclose(a.quadrature_weights, b.quadrature_weights, rtol=1e-12, atol=0):
        raise ValueError("grid mismatch: quadrature weights differ")


def distance(a: PosteriorGrid, b: PosteriorGrid, metric: str = "tv") -> float:
    """Total-variation or Hellinger distance under the shared quadrature measure."""
    _require_normalized(a)
    _require_normalized(b)
    _check_same_grid(a, b)
    w = a.quadrature_weights
    if metric == "tv":
        d = 0.5 * float(np.sum(np.abs(a.density - b.density) * w))
    elif metric == "hellinger":
        # ½∫(√a − √b)² equals 1 − BC for normalised densities and is exactly 0 for a = b
        d = math.sqrt(0.5 * float(np.sum((np.sqrt(a.density) - np.sqrt(b.density)) ** 2 * w)))
    else:
        raise ValueError(f"unknown metric {metric!r}; use 'tv' or 'hellinger'")
    return min(max(d, 0.0), 1.0)


def summarize(grid: PosteriorGrid):
    """Quadrature mean and sd per dimension, and the grid point of highest density."""
    _require_normalized(grid)
    mass = grid.mass()
    total = mass.sum()
    mean = (grid.points * mass[:, None]).sum(axis=0) / total
    var = (((grid.points - mean) ** 2) * mass[:, None]).sum(axis=0) / total
    mode = grid.points[int(np.argmax(grid.density))]
    return mean, np.sqrt(np.maximum(var, 0.0)), mode.copy()


# --- histograms and binning ---------------------------------------------------

def freedman_diaconis_edges(samples: np.ndarray, lower: float, upper: float) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    q75, q25 = np.percentile(samples, [75, 25])
    iqr = q75 - q25
    if iqr <= 0:
        return np.linspace(lower, upper, 11)
    width = 2.0 * iqr / samples.size ** (1.0 / 3.0)
    nbins = int(min(max(math.ceil((upper - lower) / width), 1), 10_000))
    return np.linspace(lower, upper, nbins + 1)


def _as_edges(edges, dim):
    if dim == 1 and np.ndim(edges[0]) == 0:
        return [np.asarray(edges, dtype=float)]
    if len(edges) != dim:
        raise ValueError("need one edge vector per dimension")
    return [np.asarray(e, dtype=float) for e in edges]


def _bin_cells(edges):
    centers = [0.5 * (e[1:] + e[:-1]) for e in edges]
    widths = [np.diff(e) for e in edges]
    cmesh = np.meshgrid(*centers, indexing="ij")
    wmesh = np.meshgrid(*widths, indexing="ij")
    points = np.stack([c.ravel() for c in cmesh], axis=1)
    volume = np.prod(np.stack([w.ravel() for w in wmesh], axis=1), axis=1)
    return points, volume


def histogram_grid(samples, edges, label: str = "histogram") -> PosteriorGrid:
    """Normalised histogram as a grid on bin centres with midpoint weights."""
    samples = np.asarray(samples, dtype=float)
    samples = samples.reshape(samples.shape[0], -1)
    edges = _as_edges(edges, samples.shape[1])
    counts, _ = np.histogramdd(samples, bins=edges)
    points, volume = _bin_cells(edges)
    counts = counts.ravel()
    total = counts.sum()
    if total == 0:
        raise ValueError("no samples fall inside the histogram range")
    density = counts / (total * volume)
    with np.errstate(divide="ignore"):
        log_d = np.log(density)
    return PosteriorGrid(points, log_d, volume, density=density, label=label)


def bin_grid(grid: PosteriorGrid, edges, label: Optional[str] = None) -> PosteriorGrid:
    """Integrate a normalised grid density over histogram bins.

    In 1-D the piecewise-linear interpolant is integrated exactly; in higher
    dimensions each point's mass goes to the bin containing it.
    """
    _require_normalized(grid)
    edges = _as_edges(edges, grid.dim)
    points, volume = _bin_cells(edges)
    if grid.dim == 1:
        x = grid.points[:, 0]
        order = np.argsort(x)
        x, f = x[order], grid.density[order]
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(x))])

        def cdf(t):
            t = np.clip(t, x[0], x[-1])
            j = np.clip(np.searchsorted(x, t, side="right") - 1, 0, x.size - 2)
            dx = t - x[j]
            slope = (f[j + 1] - f[j]) / (x[j + 1] - x[j])
            return cum[j] + f[j] * dx + 0.5 * slope * dx * dx

        masses = np.diff(cdf(edges[0]))
    else:
        masses, _ = np.histogramdd(grid.points, bins=edges, weights=grid.mass())
        masses = masses.ravel()
    total = masses.sum()
    density = masses / (total * volume)
    with np.errstate(divide="ignore"):
        log_d = np.log(density)
    return PosteriorGrid(points, log_d, volume, density=density,
                         label=grid.label if label is None else label)


# --- CSV ----------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv(grid: PosteriorGrid, path) -> None:
    """Columns ``theta_1..theta_p, log_unnormalized, density``."""
    header = [f"theta_{i + 1}" for i in range(grid.dim)] + ["log_unnormalized", "density"]
    density = grid.density if grid.density is not None else np.full(grid.points.shape[0], np.nan)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for pt, lu, d in zip(grid.points, grid.log_unnormalized, density):
            writer.writerow([_fmt(v) for v in pt] + [_fmt(lu), _fmt(d)])


def read_csv(path, quadrature: str = "trapezoid", label: str = "") -> PosteriorGrid:
    """Load a grid CSV; weights are rebuilt from the point layout.

    ``quadrature="trapezoid"`` for evaluated grids, ``"midpoint"`` for
    histograms (bin centres).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    if not header or header[-2:] != ["log_unnormalized", "density"]:
        raise ValueError(f"{path}: not a posterior grid CSV")
    data = np.array(rows, dtype=float)
    p = len(header) - 2
    points = data[:, :p]
    weights = _rebuild_weights(points, quadrature)
    density = data[:, -1]
    return PosteriorGrid(points, data[:, -2], weights,
                         density=None if np.all(np.isnan(density)) else density, label=label)


def _rebuild_weights(points: np.ndarray, quadrature: str) -> np.ndarray:
    axes = [np.unique(points[:, j]) for j in range(points.shape[1])]
    per_axis = []
    for j, ax in enumerate(axes):
        if quadrature == "trapezoid":
            w = trapezoid_weights(ax)
        elif quadrature == "midpoint":
            if ax.size == 1:
                raise ValueError("cannot infer bin width from a single bin")
            edges = np.concatenate([[ax[0] - (ax[1] - ax[0]) / 2], (ax[1:] + ax[:-1]) / 2,
                                    [ax[-1] + (ax[-1] - ax[-2]) / 2]])
            w = np.diff(edges)
        else:
            raise ValueError(f"unknown quadrature {quadrature!r}")
        idx = np.searchsorted(ax, points[:, j])
        per_axis.append(w[idx])
    return np.prod(np.stack(per_axis, axis=1), axis=1)


def grids_equal(a: PosteriorGrid, b: PosteriorGrid, atol: float = 0.0) -> bool:
    _check_same_grid(a, b)
    return bool(np.allclose(a.density, b.density, rtol=0, atol=atol))


def tv_matrix(grids: Sequence[PosteriorGrid], metric: str = "tv") -> np.ndarray:
    n = len(grids)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = distance(grids[i], grids[j], metric)
    return out
