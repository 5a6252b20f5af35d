"""Execute an :class:`~abcgbi.config.ExperimentConfig` and write its artifacts.

Artifacts of a run directory:

* ``posterior_<label>.csv``: evaluated grid (trapezoid) or histogram (midpoint)
* ``binned_<label>.csv``: evaluated grids integrated onto the histogram bins,
  written only when sample-based posteriors take part in the comparison
* ``samples_<label>.csv`` and ``samples_<label>.json``: draws and sidecar
* ``distances.csv``: pairwise TV and Hellinger distances
* ``calibration.json``, ``training.csv``, ``surrogate.json`` where relevant
* ``manifest.json``: config echo, seed, versions, runtime and the artifact list
"""

from __future__ import annotations

import csv
import json
import platform
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .calibration import calibrate_w, minimize_mean
from .config import (ExperimentConfig, PosteriorSpec, build_model, derive_stream, parse_posterior,
                     theta_or_none, weight_or_error)
from .exceptions import ConfigurationError, SimulationError
from .grid import (bin_grid, distance, evaluate_on_grid, freedman_diaconis_edges, histogram_grid,
                   make_grid, normalize, write_csv)
from .loss import (CF_KINDS, GBI_KINDS, GaussianDiscrepancyField, analytic_field,
                   constant_variance_field, mc_field)
from .model import SimulatorModel, as_theta
from .samplers import SampleChain, pm_abc_mcmc, rejection_abc, surrogate_mh

MANIFEST = "manifest.json"


class CheckFailed(SimulationError):
    """A config-level numerical assertion (e.g. ``expect_w``) did not hold."""


@dataclass
class PosteriorResult:
    label: str
    grid: object  # normalised PosteriorGrid, histogram for sample-based results
    sample_based: bool
    chain: Optional[SampleChain] = None


def _slug(label: str) -> str:
    s = re.sub(r"[^A-Za-z0-9_.-]+", "_", label).strip("_")
    return s or "posterior"


# --- fields ------------------------------------------------------------------

def _design_points(box, n: int) -> np.ndarray:
    if box.dim == 1:
        return np.linspace(box.lower[0], box.upper[0], n)[:, None]
    from scipy.stats import qmc

    u = qmc.Halton(d=box.dim, scramble=False).random(n)
    return qmc.scale(u, box.lower, box.upper)


def build_field(cfg: ExperimentConfig, model: SimulatorModel, out: Path, written: list
                ) -> Optional[GaussianDiscrepancyField]:
    f = cfg.field_spec
    if f is None:
        return None
    source = f["source"]
    box = cfg.box if cfg.box is not None else model.bounds
    if source == "analytic":
        return analytic_field(model)
    if box is None:
        raise ConfigurationError("grid: a parameter box is needed to build a Monte Carlo or surrogate field")
    if source == "monte_carlo":
        points, _, _ = make_grid(box, f.get("resolution", 201))
        return mc_field(model, points, int(f.get("n", 10_000)), derive_stream(cfg.seed, "field"))

    from .surrogate import TrainingSet, fit, to_field

    n_design = int(f.get("n_design", 50))
    n_per = int(f.get("n_per_point", 1))
    transform = f.get("transform", "identity")
    X = _design_points(box, n_design)
    base = derive_stream(cfg.seed, "surrogate")
    natural = np.array([model.discrepancy_draws(t, n_per, base.substream(i)) for i, t in enumerate(X)])
    if transform == "log" and np.any(natural <= 0):
        raise SimulationError("log-transformed surrogate needs strictly positive discrepancies")
    # moments are pooled on the regression scale; the TrainingSet stores natural-scale outputs
    draws = np.log(natural) if transform == "log" else natural
    if f.get("training", "mean") == "mean":
        if n_per < 2:
            raise ConfigurationError("field.n_per_point: need >= 2 draws per point to pool a variance")
        means = draws.mean(axis=1)
        ts = TrainingSet(X, np.exp(means) if transform == "log" else means, transform)
        pooled = float(np.mean(draws.var(axis=1, ddof=1)))
        gp = fit(ts)
        field = to_field(gp, ts, "constant", constant=pooled)
    else:
        ts = TrainingSet(np.repeat(X, n_per, axis=0), natural.ravel(), transform)
        gp = fit(ts)
        field = to_field(gp, ts, f.get("variance_mode", "constant"))
    ts.to_csv(out / "training.csv")
    (out / "surrogate.json").write_text(gp.to_json() + "\n", encoding="utf-8")
    written += ["training.csv", "surrogate.json"]
    return field


def _field_for(p: PosteriorSpec, field, cfg: ExperimentConfig, box):
    if p.kind not in CF_KINDS + GBI_KINDS:
        return None
    if field is None:
        if p.kind in CF_KINDS:
            raise ConfigurationError(f"field: required by closed-form posterior {p.label!r}")
        return None
    cv = p.const_variance
    if cv is None:
        return field
    if cv == "at_min_mean":
        theta_star, _ = minimize_mean(field, box, cfg.resolution if isinstance(cfg.resolution, int) else 2001)
        cv = float(field.var(theta_star))
    return constant_variance_field(field, float(cv))


# --- posteriors ----------------------------------------------------------------

def _evaluate(p: PosteriorSpec, cfg, model, field, box) -> PosteriorResult:
    if p.kind == "rejection":
        chain = rejection_abc(model, p.weight, p.n_prior_draws, derive_stream(cfg.seed, f"rejection:{p.label}"))
        return PosteriorResult(p.label, None, True, chain)
    g = evaluate_on_grid(model, p.loss, _field_for(p, field, cfg, box), box, cfg.resolution,
                         rng=derive_stream(cfg.seed, "grid"), label=p.label)
    return PosteriorResult(p.label, normalize(g), False)


def _hist_edges(cfg: ExperimentConfig, samples: np.ndarray, box):
    bins = cfg.histogram.get("bins", "fd")
    if bins == "fd":
        edges = [freedman_diaconis_edges(samples[:, j], box.lower[j], box.upper[j]) for j in range(box.dim)]
    else:
        edges = [np.linspace(box.lower[j], box.upper[j], int(bins) + 1) for j in range(box.dim)]
    return edges[0] if box.dim == 1 else edges


def _sampler_spec(cfg: ExperimentConfig) -> PosteriorSpec:
    s = cfg.sampler
    d = {"label": s.get("label", cfg.method), "loss": s["loss"]}
    if "weight" in s:
        d["weight"] = s["weight"]
    return parse_posterior(d, "sampler")


def _run_sampler(cfg: ExperimentConfig, model, field, box) -> PosteriorResult:
    s = cfg.sampler
    theta0 = theta_or_none(s.get("theta0"), model.dim)
    rng = derive_stream(cfg.seed, "chain")
    if cfg.method == "pm_mcmc":
        w = weight_or_error(s["weight"], "sampler.weight")
        chain = pm_abc_mcmc(model, w, int(s.get("n_sim_per_step", 1)), int(s["n_steps"]),
                            s["proposal_sd"], rng, theta0=theta0)
        label = s.get("label", "pm_mcmc")
    else:
        spec = _sampler_spec(cfg)
        f = _field_for(spec, field, cfg, box)
        if f is None:
            raise ConfigurationError("sampler.loss.kind: surrogate_mh needs a closed-form or GBI kind")
        chain = surrogate_mh(model, f, spec.loss, int(s["n_steps"]), s["proposal_sd"], rng, theta0=theta0)
        label = spec.label
    return PosteriorResult(label, None, True, chain)


def _write_distances(results: List[PosteriorResult], compare, path: Path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["posterior_a", "posterior_b", "tv", "hellinger"])
        for i in range(len(results)):
            for j in range(i + 1, len(results)):
                a, b = compare[i], compare[j]
                w.writerow([results[i].label, results[j].label,
                            repr(distance(a, b, "tv")), repr(distance(a, b, "hellinger"))])


def _comparison(cfg, results: List[PosteriorResult], out: Path, written: list, box) -> list:
    entries = []
    sample_sets = [r for r in results if r.sample_based]
    edges = None
    if sample_sets:
        first = sample_sets[0]
        draws = first.chain.draws if cfg.method in ("grid", "rejection") else first.chain.post_process(
            float(cfg.sampler.get("burn_in", 0.2)), int(cfg.sampler.get("thin", 1)))
        edges = _hist_edges(cfg, draws, box)
    compare = []
    for r in results:
        slug = _slug(r.label)
        entry = {"label": r.label}
        if r.sample_based:
            chain = r.chain
            if cfg.method in ("pm_mcmc", "surrogate_mh"):
                draws = chain.post_process(float(cfg.sampler.get("burn_in", 0.2)), int(cfg.sampler.get("thin", 1)))
            else:
                draws = chain.draws
            r.grid = histogram_grid(draws, edges, label=r.label)
            chain.write_csv(out / f"samples_{slug}.csv")
            chain.write_sidecar(out / f"samples_{slug}.json")
            write_csv(r.grid, out / f"posterior_{slug}.csv")
            written += [f"samples_{slug}.csv", f"samples_{slug}.json", f"posterior_{slug}.csv"]
            entry.update(file=f"posterior_{slug}.csv", quadrature="midpoint",
                         compare_file=f"posterior_{slug}.csv", compare_quadrature="midpoint",
                         samples=f"samples_{slug}.csv", n_draws=int(draws.shape[0]))
            compare.append(r.grid)
        else:
            write_csv(r.grid, out / f"posterior_{slug}.csv")
            written.append(f"posterior_{slug}.csv")
            entry.update(file=f"posterior_{slug}.csv", quadrature="trapezoid")
            if edges is not None:
                b = bin_grid(r.grid, edges)
                write_csv(b, out / f"binned_{slug}.csv")
                written.append(f"binned_{slug}.csv")
                entry.update(compare_file=f"binned_{slug}.csv", compare_quadrature="midpoint")
                compare.append(b)
            else:
                entry.update(compare_file=f"posterior_{slug}.csv", compare_quadrature="trapezoid")
                compare.append(r.grid)
        entries.append(entry)
    if len(results) > 1:
        _write_distances(results, compare, out / "distances.csv")
        written.append("distances.csv")
    return entries


def run_calibration(cfg: ExperimentConfig, model: Optional[SimulatorModel] = None,
                    field: Optional[GaussianDiscrepancyField] = None):
    c = cfg.calibration
    kw = dict(z=float(c.get("z", 1.96)), quantile=c.get("quantile"),
              nonnegative=bool(c.get("nonnegative", True)))
    eps = float(c["epsilon"])
    if "m_star" in c and "sd_star" in c:
        report = calibrate_w((float(c["m_star"]), float(c["sd_star"])), eps,
                             theta_star=c.get("theta_star"), **kw)
    elif field is not None:
        report = calibrate_w(field, eps, theta_star=c.get("theta_star"), box=cfg.box, **kw)
    else:
        if "theta_star" not in c:
            raise ConfigurationError("calibration.theta_star: required when moments come from the model")
        report = calibrate_w(model, eps, theta_star=as_theta(c["theta_star"], model.dim),
                             n=int(c.get("n", 100_000)), rng=derive_stream(cfg.seed, "calibration"), **kw)
    lo_hi = c.get("expect_w")
    if lo_hi is not None and not (float(lo_hi[0]) <= report.w <= float(lo_hi[1])):
        raise CheckFailed(f"calibration.expect_w: w = {report.w!r} outside [{lo_hi[0]}, {lo_hi[1]}]")
    return report


def _versions() -> dict:
    import scipy
    import sklearn

    return {"abcgbi": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "scikit-learn": sklearn.__version__}


def run(cfg: ExperimentConfig, output_dir) -> dict:
    """Run the experiment and return the manifest (also written to disk)."""
    t0 = time.perf_counter()
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    old = out / MANIFEST
    if old.exists():
        # stale artifacts from a previous run would break manifest completeness
        for name in json.loads(old.read_text(encoding="utf-8")).get("artifacts", []):
            (out / name).unlink(missing_ok=True)
        old.unlink()
    written: list = []
    needs_model = cfg.method != "calibrate" or bool(cfg.model_spec)
    model, cmd = build_model(cfg.model_spec) if needs_model else (None, None)
    box = cfg.box if cfg.box is not None else (model.bounds if model is not None else None)
    field = build_field(cfg, model, out, written) if model is not None else None
    manifest = {"schema": 1, "name": cfg.name, "method": cfg.method, "seed": cfg.seed,
                "config": cfg.raw, "versions": _versions()}

    if cfg.method == "calibrate":
        report = run_calibration(cfg, model, field)
        (out / "calibration.json").write_text(report.to_json() + "\n", encoding="utf-8")
        written.append("calibration.json")
        manifest["calibration"] = report.to_dict()
    else:
        if box is None:
            raise ConfigurationError("grid: a parameter box is required")
        results: List[PosteriorResult] = []
        if cfg.method == "rejection":
            r = cfg.rejection
            w = weight_or_error(r["weight"], "rejection.weight")
            chain = rejection_abc(model, w, int(r["n_prior_draws"]), derive_stream(cfg.seed, "rejection"))
            results.append(PosteriorResult(r.get("label", "rejection"), None, True, chain))
        elif cfg.method in ("pm_mcmc", "surrogate_mh"):
            results.append(_run_sampler(cfg, model, field, box))
        for p in cfg.posteriors:
            results.append(_evaluate(p, cfg, model, field, box))
        manifest["posteriors"] = _comparison(cfg, results, out, written, box)

    diag = {"variance_clamps": int(field.clamp_count[0]) if field is not None else 0}
    if cmd is not None:
        diag.update(simulator_calls=cmd.calls, nondeterministic_simulator_calls=cmd.nondeterministic_count)
    manifest["diagnostics"] = diag
    manifest["artifacts"] = sorted(written)
    manifest["runtime_seconds"] = time.perf_counter() - t0
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest

