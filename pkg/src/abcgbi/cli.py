"""Command-line entry point: ``abcgbi run|report|calibrate|match-kernel``.

Exit codes: 0 success, 2 configuration or missing-artifact error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .exceptions import ABCGBIError, ConfigurationError

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _cmd_run(args) -> int:
    from .config import load_config
    from .runner import run

    cfg = load_config(args.config)
    out = args.out or cfg.output_dir or str(Path("runs") / cfg.name)
    manifest = run(cfg, out)
    print(f"{cfg.name}: {len(manifest['artifacts'])} artifacts written to {out} "
          f"({manifest['runtime_seconds']:.1f} s)")
    return 0


def report_data(run_dir) -> dict:
    """Per-posterior summaries and distance matrices of a finished run."""
    from .grid import distance, read_csv, summarize

    run_dir = Path(run_dir)
    mpath = run_dir / "manifest.json"
    if not mpath.is_file():
        raise ConfigurationError(f"report: no manifest.json in {run_dir}")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    missing = [a for a in manifest.get("artifacts", []) if not (run_dir / a).is_file()]
    if missing:
        raise ConfigurationError(f"report: missing artifact(s) {missing}")
    doc = {"name": manifest.get("name"), "method": manifest.get("method"), "seed": manifest.get("seed")}
    if "calibration" in manifest:
        doc["calibration"] = manifest["calibration"]
    entries = manifest.get("posteriors", [])
    rows, compare = [], []
    for e in entries:
        g = read_csv(run_dir / e["file"], quadrature=e["quadrature"], label=e["label"])
        mean, sd, mode = summarize(g)
        rows.append({"label": e["label"], "mean": mean.tolist(), "sd": sd.tolist(), "mode": mode.tolist()})
        compare.append(read_csv(run_dir / e["compare_file"], quadrature=e["compare_quadrature"]))
    n = len(compare)
    tv, hel = np.zeros((n, n)), np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            tv[i, j] = tv[j, i] = distance(compare[i], compare[j], "tv")
            hel[i, j] = hel[j, i] = distance(compare[i], compare[j], "hellinger")
    doc.update(posteriors=rows, labels=[e["label"] for e in entries], tv=tv.tolist(), hellinger=hel.tolist())
    return doc


def _fmt_vec(v) -> str:
    return ", ".join(f"{x:.4f}" for x in v)


def _cmd_report(args) -> int:
    doc = report_data(args.run_dir)
    if args.json:
        print(json.dumps(doc, indent=2))
        return 0
    print(f"run {doc['name']} (method {doc['method']}, seed {doc['seed']})")
    if "calibration" in doc:
        for k, v in doc["calibration"].items():
            print(f"  {k:<12} {v}")
    if doc["posteriors"]:
        width = max(len(r["label"]) for r in doc["posteriors"])
        print(f"\n{'posterior':<{width}}  {'mean':>10}  {'sd':>10}  {'mode':>10}")
        for r in doc["posteriors"]:
            print(f"{r['label']:<{width}}  {_fmt_vec(r['mean']):>10}  {_fmt_vec(r['sd']):>10}  {_fmt_vec(r['mode']):>10}")
        if len(doc["labels"]) > 1:
            print("\nTV distance")
            short = [f"[{i}]" for i in range(len(doc["labels"]))]
            print(" " * (width + 5) + "".join(f"{s:>8}" for s in short))
            for i, lab in enumerate(doc["labels"]):
                cells = "".join(f"{x:8.4f}" for x in doc["tv"][i])
                print(f"{short[i]:>4} {lab:<{width}}{cells}")
    return 0


def _cmd_calibrate(args) -> int:
    from .config import build_model, load_config
    from .runner import build_field, run_calibration

    cfg = load_config(args.config)
    if not cfg.calibration:
        raise ConfigurationError("calibration: section required")
    model = field = None
    c = cfg.calibration
    if not ("m_star" in c and "sd_star" in c):
        model, _ = build_model(cfg.model_spec)
        if cfg.field_spec is not None and cfg.field_spec["source"] == "analytic":
            field = build_field(cfg, model, Path("."), [])
        elif cfg.field_spec is not None:
            raise ConfigurationError("field.source: the calibrate verb supports analytic fields only; use run")
    report = run_calibration(cfg, model, field)
    print(report.to_json() if args.json else report.table())
    return 0


def _cmd_match_kernel(args) -> int:
    from .calibration import match_exponential_to_uniform

    res = match_exponential_to_uniform(args.epsilon)
    doc = {"epsilon": args.epsilon, "ratio_a": res.ratio_a, "h": res.h,
           "objective_value": res.objective_value, "iterations": res.iterations}
    if args.json:
        print(json.dumps(doc, indent=2))
    else:
        for k, v in doc.items():
            print(f"{k:<16} {v}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abcgbi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment config (path or bundled name)")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default: config output_dir or runs/<name>)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("report", help="summarise a finished run directory")
    p.add_argument("run_dir")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("calibrate", help="print the calibration table of a config")
    p.add_argument("config")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("match-kernel", help="Exponential bandwidth matching a uniform threshold")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_match_kernel)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ABCGBIError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"numerical error in {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
