"""Gaussian-process regression of discrepancy values over parameter space.

:class:`GPSurrogate` is a scikit-learn compatible regressor with a constant mean
and a squared-exponential ARD kernel.  Hyperparameters are either fixed or chosen
by exhaustive search over a log-spaced grid maximising the marginal likelihood,
which keeps fits deterministic.  :func:`to_field` turns a fitted surrogate into a
:class:`~abcgbi.loss.GaussianDiscrepancyField`.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import FactorizationError
from .loss import GaussianDiscrepancyField

JITTER_START = 1e-10
JITTER_MAX = 1e-4
# E[log χ²₁] = ψ(1/2) + log 2; undoes the bias of averaging log squared residuals.
_LOG_CHI2_1_MEAN = -1.2703628454614782


@dataclass(frozen=True)
class TrainingSet:
    inputs: np.ndarray
    outputs: np.ndarray
    transform: str = "identity"

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float)
        x = x.reshape(x.shape[0], -1)
        y = np.asarray(self.outputs, dtype=float).ravel()
        if x.shape[0] != y.size or y.size < 2:
            raise ValueError("need at least two (input, output) pairs of matching length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("training data must be finite")
        if self.transform not in ("identity", "log"):
            raise ValueError(f"unknown transform {self.transform!r}")
        if self.transform == "log" and np.any(y <= 0):
            raise ValueError("log transform needs strictly positive discrepancies")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "outputs", y)

    @property
    def targets(self) -> np.ndarray:
        """Outputs on the regression scale."""
        return np.log(self.outputs) if self.transform == "log" else self.outputs

    @classmethod
    def from_csv(cls, path, transform: str = "identity") -> "TrainingSet":
        """Columns ``theta_1..theta_p, delta`` with a header row."""
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in row] for row in reader if row]
        if not header or header[-1] != "delta":
            raise ValueError(f"{path}: last column must be 'delta'")
        data = np.array(rows, dtype=float)
        return cls(data[:, :-1], data[:, -1], transform)

    def to_csv(self, path) -> None:
        header = [f"theta_{i + 1}" for i in range(self.inputs.shape[1])] + ["delta"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for x, y in zip(self.inputs, self.outputs):
                writer.writerow([repr(float(v)) for v in x] + [repr(float(y))])


def _sq_dists(a: np.ndarray, b: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    a = a / lengthscales
    b = b / lengthscales
    d = np.sum(a * a, 1)[:, None] + np.sum(b * b, 1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def _factorize(K: np.ndarray):
    jitter = JITTER_START
    eye = np.eye(K.shape[0])
    while jitter <= JITTER_MAX:
        try:
            return cholesky(K + jitter * eye, lower=True), jitter
        except LinAlgError:
            jitter *= 2.0
    raise FactorizationError(f"covariance not positive definite even with jitter {JITTER_MAX}")


class GPSurrogate(RegressorMixin, BaseEstimator):
    """GP regressor, constant mean, squared-exponential ARD kernel.

    Leave any of ``signal_variance``, ``lengthscales``, ``noise_variance`` as
    ``None`` to have it searched over ``grid_points`` log-spaced values spanning
    the corresponding ``*_range`` (relative to the output variance, or to the
    input span per dimension for lengthscales).  Each of the ``refine`` extra
    rounds re-grids the searched hyperparameters over one coarse step either
    side of the incumbent.  ``mean_value=None`` uses the sample mean of the
    targets.
    """

    def __init__(self, signal_variance=None, lengthscales=None, noise_variance=None,
                 mean_value=None, grid_points=7, signal_range=(1e-2, 1e2),
                 lengthscale_range=(1e-2, 1e2), noise_range=(1e-5, 1e-1), refine=1):
        self.signal_variance = signal_variance
        self.lengthscales = lengthscales
        self.noise_variance = noise_variance
        self.mean_value = mean_value
        self.grid_points = grid_points
        self.signal_range = signal_range
        self.lengthscale_range = lengthscale_range
        self.noise_range = noise_range
        self.refine = refine

    def _candidates(self, X, y):
        p = X.shape[1]
        scale_y = float(np.var(y)) if np.var(y) > 0 else 1.0
        span = np.ptp(X, axis=0)
        span = np.where(span > 0, span, 1.0)

        def grid(lo, hi):
            return np.logspace(math.log10(lo), math.log10(hi), self.grid_points)

        if self.signal_variance is None:
            sig = scale_y * grid(*self.signal_range)
        else:
            sig = [float(self.signal_variance)]
        if self.noise_variance is None:
            noise = scale_y * grid(*self.noise_range)
        else:
            noise = [float(self.noise_variance)]
        if self.lengthscales is None:
            ls_axes = [span[j] * grid(*self.lengthscale_range) for j in range(p)]
        else:
            ls = np.broadcast_to(np.asarray(self.lengthscales, dtype=float), (p,))
            ls_axes = [[v] for v in ls]
        return sig, ls_axes, noise

    def _log_marginal(self, X, yc, s2, ls, noise):
        K = s2 * np.exp(-0.5 * _sq_dists(X, X, ls)) + noise * np.eye(X.shape[0])
        L, jitter = _factorize(K)
        alpha = cho_solve((L, True), yc)
        lml = -0.5 * yc @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * yc.size * math.log(2 * math.pi)
        return float(lml), L, alpha, jitter

    def _search(self, X, yc, sig, ls_axes, noise, evaluated, best):
        for s2 in sig:
            for ls in itertools.product(*ls_axes):
                ls = np.asarray(ls, dtype=float)
                for nv in noise:
                    try:
                        lml, L, alpha, jitter = self._log_marginal(X, yc, s2, ls, nv)
                    except FactorizationError:
                        continue
                    evaluated.append((float(s2), ls.tolist(), float(nv), lml))
                    if best is None or lml > best[0]:
                        best = (lml, float(s2), ls, float(nv), L, alpha, jitter)
        return best

    def _refined(self, values, centre):
        if len(values) < 2:
            return values
        step = math.log10(values[1] / values[0])
        c = math.log10(centre)
        return np.logspace(c - step, c + step, self.grid_points)

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        if X.shape[0] < 2:
            raise ValueError("need at least two training points")
        self.mean_ = float(np.mean(y)) if self.mean_value is None else float(self.mean_value)
        yc = y - self.mean_
        sig, ls_axes, noise = self._candidates(X, y)
        for v in [*sig, *noise, *itertools.chain(*ls_axes)]:
            if not v > 0:
                raise ValueError("hyperparameters must be strictly positive")
        evaluated = []
        best = self._search(X, yc, sig, ls_axes, noise, evaluated, None)
        for _ in range(self.refine):
            if best is None:
                break
            sig = self._refined(sig, best[1])
            noise = self._refined(noise, best[3])
            ls_axes = [self._refined(ax, c) for ax, c in zip(ls_axes, best[2])]
            best = self._search(X, yc, sig, ls_axes, noise, evaluated, best)
        if best is None:
            raise FactorizationError("no hyperparameter candidate gave a positive-definite covariance")
        (self.log_marginal_likelihood_, self.signal_variance_, self.lengthscales_,
         self.noise_variance_, self.L_, self.alpha_, self.jitter_) = best
        self.search_log_ = evaluated
        self.X_train_ = X
        self.y_train_ = y
        return self

    def predict(self, X, return_std=False, return_var=False):
        check_is_fitted(self, "alpha_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        Ks = self.signal_variance_ * np.exp(-0.5 * _sq_dists(X, self.X_train_, self.lengthscales_))
        mean = self.mean_ + Ks @ self.alpha_
        if not (return_std or return_var):
            return mean
        v = solve_triangular(self.L_, Ks.T, lower=True)
        var = np.maximum(self.signal_variance_ - np.sum(v * v, axis=0), 0.0)
        return (mean, np.sqrt(var)) if return_std else (mean, var)

    def hyperparameters(self) -> dict:
        check_is_fitted(self, "alpha_")
        return {
            "signal_variance": self.signal_variance_,
            "lengthscales": np.asarray(self.lengthscales_).tolist(),
            "noise_variance": self.noise_variance_,
            "mean_value": self.mean_,
        }

    def to_json(self) -> str:
        """Hyperparameters plus training data; coefficients are recomputed on load."""
        return json.dumps({
            "kernel": "squared_exponential_ard",
            "hyperparameters": self.hyperparameters(),
            "X": self.X_train_.tolist(),
            "y": self.y_train_.tolist(),
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GPSurrogate":
        doc = json.loads(text)
        hp = doc["hyperparameters"]
        gp = cls(signal_variance=hp["signal_variance"], lengthscales=hp["lengthscales"],
                 noise_variance=hp["noise_variance"], mean_value=hp["mean_value"])
        return gp.fit(np.asarray(doc["X"], dtype=float), np.asarray(doc["y"], dtype=float))


def fit(ts: TrainingSet, hyper: Union[str, dict] = "maximize_likelihood", **search) -> GPSurrogate:
    """Fit on ``ts.targets``; ``hyper`` is ``"maximize_likelihood"`` or a dict of fixed values."""
    if hyper == "maximize_likelihood":
        gp = GPSurrogate(**search)
    elif isinstance(hyper, dict):
        unknown = set(hyper) - {"signal_variance", "lengthscales", "noise_variance", "mean_value"}
        if unknown:
            raise ValueError(f"unknown hyperparameter(s) {sorted(unknown)}")
        gp = GPSurrogate(**hyper, **search)
    else:
        raise ValueError("hyper must be 'maximize_likelihood' or a dict of fixed values")
    return gp.fit(ts.inputs, ts.targets)


def predict(gp: GPSurrogate, theta):
    """Predictive ``(mean, variance)`` at a single point."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float)).reshape(1, -1)
    m, v = gp.predict(theta, return_var=True)
    return float(m[0]), float(v[0])


def _stacked(theta):
    theta = np.asarray(theta, dtype=float)
    return theta.reshape(1, -1) if theta.ndim == 1 else theta


def to_field(gp: GPSurrogate, ts: TrainingSet, variance_mode: str = "constant",
             constant: Optional[float] = None, residual_gp: Optional[GPSurrogate] = None
             ) -> GaussianDiscrepancyField:
    """Gaussian discrepancy field from a fitted surrogate.

    ``variance_mode="constant"`` uses the pooled variance of the training
    residuals (or ``constant``).  ``"heteroscedastic_residual"`` regresses the
    log squared residuals on θ with a second GP.  Moments live on the scale of
    ``ts.transform``.
    """
    check_is_fitted(gp, "alpha_")

    def mean_fn(theta):
        out = gp.predict(_stacked(theta))
        return out[0] if np.ndim(theta) == 1 else out

    resid = ts.targets - gp.predict(ts.inputs)
    if variance_mode == "constant":
        sigma2 = float(np.var(resid, ddof=1)) if constant is None else float(constant)
        if not sigma2 > 0:
            raise ValueError("pooled residual variance is zero; pass constant= explicitly")

        def var_fn(theta):
            return sigma2 if np.ndim(theta) == 1 else np.full(np.shape(theta)[0], sigma2)

        return GaussianDiscrepancyField(mean_fn, var_fn, source="surrogate",
                                        transform=ts.transform, const_variance=sigma2)
    if variance_mode == "heteroscedastic_residual":
        log_r2 = np.log(resid * resid + 1e-300)
        rgp = residual_gp if residual_gp is not None else GPSurrogate()
        rgp.fit(ts.inputs, log_r2)

        def var_fn(theta):
            out = np.exp(rgp.predict(_stacked(theta)) - _LOG_CHI2_1_MEAN)
            return out[0] if np.ndim(theta) == 1 else out

        return GaussianDiscrepancyField(mean_fn, var_fn, source="surrogate", transform=ts.transform)
    raise ValueError(f"unknown variance_mode {variance_mode!r}")
