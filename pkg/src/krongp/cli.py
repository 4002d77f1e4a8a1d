"""Command-line interface: ``krongp {simulate,fit,cv,report}``.

Exit codes: 0 on success, 2 when a fit finished but its diagnostics raise
warnings, 1 on any error (including invalid arguments).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

EXIT_OK, EXIT_ERROR, EXIT_WARN = 0, 1, 2

logger = logging.getLogger("krongp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be a non-negative integer")
    return v


def _nonneg_float(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return v


def _fold_count(text: str) -> int:
    v = int(text)
    if v < 2:
        raise argparse.ArgumentTypeError("need at least 2 folds")
    return v


def _model_name(text: str) -> str:
    from .model import MODEL_NAMES

    key = text.lower()
    if key not in MODEL_NAMES:
        raise argparse.ArgumentTypeError(f"unknown model {text!r}; choose from {', '.join(MODEL_NAMES)}")
    return key


def _method_list(text: str) -> list[str]:
    names = [_model_name(t.strip()) for t in text.split(",") if t.strip()]
    if len(names) < 2 or len(set(names)) != len(names):
        raise argparse.ArgumentTypeError("give at least two distinct methods, comma separated")
    return names


def _add_sampler_flags(p: argparse.ArgumentParser, warmup: int = 500, samples: int = 500):
    p.add_argument("--chains", type=_positive_int, default=4)
    p.add_argument("--warmup", type=_nonneg_int, default=warmup)
    p.add_argument("--samples", type=_positive_int, default=samples)
    p.add_argument("--target-accept", type=float, default=0.8)
    p.add_argument("--max-tree-depth", type=_positive_int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--standardize",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="fit on standardized covariates and Gaussian outputs (default: on)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="krongp", description="Kronecker-structured multi-output GP models for repeated measures.")
    parser.add_argument("--threads", type=_positive_int, default=None, help="worker processes (default: $KRONGP_THREADS or all cores)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write the synthetic benchmark dataset")
    p.add_argument("--n1", type=_positive_int, default=20)
    p.add_argument("--n2", type=_positive_int, default=7)
    p.add_argument("--n3", type=_positive_int, default=3)
    p.add_argument("--noise-sd", type=_nonneg_float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit", help="sample the posterior of one model")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--model", type=_model_name, default="gp.f")
    _add_sampler_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("cv", help="cross-validate and compare methods")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--k", type=_fold_count, default=10)
    p.add_argument("--methods", type=_method_list, default=["gp.f", "lin.f"])
    p.add_argument("--folds", default=None, help="comma-separated 1-based folds to run (default: all)")
    _add_sampler_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="print comparison tables of a cv bundle")
    p.add_argument("--bundle", required=True)
    return parser


# --------------------------------------------------------------------------
# helpers


def _digest(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()


def _versions() -> dict:
    import pandas
    import scipy

    from . import __version__

    return {
        "krongp": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pandas.__version__,
        "python": platform.python_version(),
    }


def _write_manifest(out: Path, command: str, config: dict, seed: int, started: float, outputs: list, extra: Optional[dict] = None):
    manifest = {
        "command": command,
        "config": config,
        "config_digest": _digest(config),
        "seed": seed,
        "timestamps": {
            "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
            "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
        },
        "versions": _versions(),
        "outputs": sorted(str(Path(p).name) for p in outputs),
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def _prepare_out(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise OSError(f"output directory {out} is not writable")
    return out


def _sampler_settings(args):
    from .sampler import SamplerSettings

    return SamplerSettings(
        chains=args.chains,
        warmup=args.warmup,
        samples=args.samples,
        target_accept=args.target_accept,
        max_tree_depth=args.max_tree_depth,
        seed=args.seed,
        threads=args.threads,
    )


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    from .simulate import SimConfig, write_dataset

    started = time.time()
    cfg = SimConfig(n1=args.n1, n2=args.n2, n3=args.n3, noise_sd=args.noise_sd, seed=args.seed)
    out = _prepare_out(args.out)
    csv_path, schema_path = write_dataset(cfg, out)
    config = asdict(cfg)
    _write_manifest(out, "simulate", config, cfg.seed, started, [csv_path, schema_path])
    print(f"wrote {csv_path} and {schema_path}")
    return EXIT_OK


def cmd_fit(args) -> int:
    from .diagnostics import check_diagnostics
    from .fit import fit_model
    from .grid import ingest_long_csv
    from .sampler import write_draws

    started = time.time()
    design, y = ingest_long_csv(args.data, args.schema)
    out = _prepare_out(args.out)
    settings = _sampler_settings(args)
    res = fit_model(design, y, args.model, settings, record_latent=True, standardized=args.standardize)
    paths = write_draws(res.draws, out)
    summary = res.summary()
    summary_path = out / "summary.csv"
    summary.to_csv(summary_path, float_format="%.10g", lineterminator="\n")
    f_path = out / "latent_mean.csv"
    np.savetxt(f_path, res.f_mean(), delimiter=",", fmt="%.17g")
    paths += [summary_path, f_path]

    live = summary[~summary["degenerate"]]
    max_rhat = float(live["Rhat"].max()) if len(live) else float("nan")
    msgs = check_diagnostics(summary, res.draws.divergence_rate())
    status = EXIT_OK if (np.isfinite(max_rhat) and max_rhat < 1.1) or not len(live) else EXIT_WARN
    config = {
        "data": str(args.data),
        "schema": str(args.schema),
        "model": args.model,
        "standardize": args.standardize,
        "sampler": {k: v for k, v in settings.to_dict().items() if k != "threads"},
    }
    extra = {
        "divergences": res.draws.divergent.sum(axis=1).tolist(),
        "warmup_divergences": res.draws.warmup_divergences.tolist(),
        "step_size": res.draws.step_size.tolist(),
        "max_rhat": max_rhat,
        "warnings": msgs,
    }
    _write_manifest(out, "fit", config, args.seed, started, paths, extra)
    print(summary.drop(columns="degenerate").to_string(float_format=lambda v: f"{v:.3f}"))
    if status == EXIT_WARN:
        print("fit completed with diagnostics warnings", file=sys.stderr)
    return status


def cmd_cv(args) -> int:
    from .evaluate import ExperimentSettings, format_comparison, run_experiment
    from .grid import ingest_long_csv

    started = time.time()
    design, y = ingest_long_csv(args.data, args.schema)
    out = _prepare_out(args.out)
    folds = None
    if args.folds:
        folds = sorted({int(t) - 1 for t in args.folds.split(",")})
        if folds[0] < 0 or folds[-1] >= args.k:
            raise UsageError(f"--folds must lie in 1..{args.k}")
    settings = ExperimentSettings(
        k=args.k, seed=args.seed, sampler=_sampler_settings(args), folds=folds, standardized=args.standardize
    )
    report = run_experiment(design, y, args.methods, settings)
    report.manifest.update(
        {
            "data": str(args.data),
            "schema": str(args.schema),
            "timestamps": {
                "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
                "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
            },
        }
    )
    report.manifest["config_digest"] = _digest({k: v for k, v in report.manifest.items() if k != "timestamps"})
    report.write(out)
    for output, cm in report.comparisons.items():
        print(f"{output}\n{format_comparison(cm)}\n")
    return EXIT_WARN if report.manifest["failures"] else EXIT_OK


def cmd_report(args) -> int:
    from .evaluate import format_comparison, read_report

    for output, cm in read_report(args.bundle).items():
        print(f"{output}\n{format_comparison(cm)}\n")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "cv": cmd_cv, "report": cmd_report}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.threads is None and os.environ.get("KRONGP_THREADS"):
        try:
            args.threads = _positive_int(os.environ["KRONGP_THREADS"])
        except (ValueError, argparse.ArgumentTypeError):
            print("usage error: KRONGP_THREADS must be a positive integer", file=sys.stderr)
            return EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - report and exit non-zero
        logger.debug("command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
