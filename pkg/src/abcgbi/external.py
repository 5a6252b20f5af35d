"""Subprocess bridge for user simulators written in any language.

Protocol: the simulator receives θ and a seed either as one JSON line on stdin,
``{"theta": [...], "seed": n}``, or through ``{theta}``/``{seed}`` placeholders
in its argument list, and prints one JSON line ``{"data": [...]}`` to stdout.
"""

from __future__ import annotations

import json
import os
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ConfigurationError, SimulationError
from .model import DISCREPANCIES, ParameterBox, SimulatorModel, uniform_prior

_SEED_LIMIT = 2**63 - 1


@dataclass
class CommandSpec:
    command: List[str]
    mode: str = "stdin"
    timeout: float = 60.0
    max_workers: Optional[int] = None
    check_determinism: bool = True
    # determinism bookkeeping, shared across calls
    _seen: Dict[Tuple, Tuple] = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    nondeterministic_count: int = 0
    calls: int = 0

    def __post_init__(self):
        if isinstance(self.command, str) or not self.command:
            raise ConfigurationError("model.external.command: non-empty list of strings required")
        if self.mode not in ("stdin", "args"):
            raise ConfigurationError(f"model.external.mode: expected 'stdin' or 'args', got {self.mode!r}")
        if not self.timeout > 0:
            raise ConfigurationError("model.external.timeout: must be positive")
        if self.mode == "args" and not any("{theta}" in a for a in self.command):
            raise ConfigurationError("model.external.command: args mode needs a {theta} placeholder")
        if self.max_workers is None:
            self.max_workers = os.cpu_count() or 1

    @classmethod
    def from_config(cls, spec: dict) -> "CommandSpec":
        unknown = set(spec) - {"command", "mode", "timeout", "max_workers", "check_determinism"}
        if unknown:
            raise ConfigurationError(f"model.external: unknown field(s) {sorted(unknown)}")
        if "command" not in spec:
            raise ConfigurationError("model.external.command: required")
        return cls(
            command=[str(c) for c in spec["command"]],
            mode=spec.get("mode", "stdin"),
            timeout=float(spec.get("timeout", 60.0)),
            max_workers=spec.get("max_workers"),
            check_determinism=bool(spec.get("check_determinism", True)),
        )


def _invoke(spec: CommandSpec, theta: np.ndarray, seed: int) -> subprocess.CompletedProcess:
    theta_list = [float(v) for v in np.atleast_1d(theta)]
    if spec.mode == "stdin":
        argv, stdin = list(spec.command), json.dumps({"theta": theta_list, "seed": seed}) + "\n"
    else:
        theta_str = ",".join(repr(v) for v in theta_list)
        argv = [a.replace("{theta}", theta_str).replace("{seed}", str(seed)) for a in spec.command]
        stdin = ""
    try:
        return subprocess.run(argv, input=stdin, capture_output=True, text=True,
                              timeout=spec.timeout, check=False)
    except subprocess.TimeoutExpired as exc:
        err = exc.stderr.decode() if isinstance(exc.stderr, bytes) else (exc.stderr or "")
        raise SimulationError(f"simulator timed out after {spec.timeout}s at theta={theta_list}; stderr: {err.strip()}") from None
    except OSError as exc:
        raise SimulationError(f"could not start simulator {argv[0]!r}: {exc}") from None


def _parse(proc: subprocess.CompletedProcess, theta) -> np.ndarray:
    if proc.returncode != 0:
        raise SimulationError(
            f"simulator exited with status {proc.returncode} at theta={np.atleast_1d(theta).tolist()}; "
            f"stderr: {proc.stderr.strip()}"
        )
    lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
    if len(lines) != 1:
        raise SimulationError(f"simulator must print exactly one JSON line, got {len(lines)}; stderr: {proc.stderr.strip()}")
    try:
        doc = json.loads(lines[0])
        data = np.atleast_1d(np.asarray(doc["data"], dtype=float))
    except (ValueError, KeyError, TypeError):
        raise SimulationError(f"malformed simulator output {lines[0][:200]!r}") from None
    if data.ndim != 1 or not np.all(np.isfinite(data)):
        raise SimulationError("simulator data must be a flat list of finite numbers")
    return data


def run_external_simulator(spec: CommandSpec, theta, seed: int) -> np.ndarray:
    """Run the simulator once and return its dataset.

    A repeat of an earlier ``(θ, seed)`` that yields different data bumps
    ``spec.nondeterministic_count``; the first result is kept.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    data = _parse(_invoke(spec, theta, int(seed)), theta)
    key = (tuple(theta.tolist()), int(seed))
    with spec._lock:
        spec.calls += 1
        if spec.check_determinism:
            prev = spec._seen.get(key)
            if prev is None:
                spec._seen[key] = tuple(data.tolist())
            elif prev != tuple(data.tolist()):
                spec.nondeterministic_count += 1
    return data


def run_batch(spec: CommandSpec, thetas, seeds: Sequence[int]) -> np.ndarray:
    """Simulate each row of ``thetas`` on a bounded thread pool; output order follows input."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if len(seeds) != thetas.shape[0]:
        raise ValueError("need one seed per theta")
    if spec.max_workers <= 1 or thetas.shape[0] == 1:
        rows = [run_external_simulator(spec, t, s) for t, s in zip(thetas, seeds)]
    else:
        with ThreadPoolExecutor(max_workers=spec.max_workers) as pool:
            rows = list(pool.map(lambda ts: run_external_simulator(spec, *ts), zip(thetas, seeds)))
    widths = {r.size for r in rows}
    if len(widths) != 1:
        raise SimulationError("simulator returned datasets of different lengths")
    return np.stack(rows)


def make_external_model(spec: CommandSpec, observed, bounds: ParameterBox,
                        discrepancy: str = "abs") -> SimulatorModel:
    """Wrap an external simulator as a :class:`SimulatorModel`.

    Per-call seeds are drawn from the caller's generator, so the usual stream
    discipline gives reproducible runs.
    """
    if discrepancy not in DISCREPANCIES:
        raise ConfigurationError(f"model.discrepancy: unknown discrepancy {discrepancy!r}")
    disc, disc_batch = DISCREPANCIES[discrepancy]
    log_density, sampler, batch_sampler = uniform_prior(bounds)

    def simulate(theta, gen):
        return run_external_simulator(spec, theta, int(gen.integers(_SEED_LIMIT)))

    def simulate_batch(thetas, gen):
        seeds = gen.integers(_SEED_LIMIT, size=thetas.shape[0]).tolist()
        return run_batch(spec, thetas, seeds)

    return SimulatorModel(
        simulate=simulate,
        discrepancy=disc,
        observed=observed,
        prior_log_density=log_density,
        prior_sampler=sampler,
        bounds=bounds,
        simulate_batch=simulate_batch,
        discrepancy_batch=disc_batch,
        prior_sampler_batch=batch_sampler,
        name="external",
    )
