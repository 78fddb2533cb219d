"""Command-line entry point: ``mvssm {run,convergence,stability,bench,plot}``.

Exit codes: 0 success, 2 bad configuration or input, 3 numerical failure of
the implicit solver.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from pydantic import ValidationError

from . import experiments as ex
from .config import ExperimentConfig, load_config, preset_names
from .engine import EngineError
from .implicit import ImplicitSolverError, StepSizeError
from .model import ModelError
from .noise import GridError
from .report import PlotError, plot_csv, write_csv
from .schemes import SchemeError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_CONFIG_ERRORS = (
    ValidationError,
    ModelError,
    SchemeError,
    EngineError,
    GridError,
    StepSizeError,
    PlotError,
    FileNotFoundError,
    json.JSONDecodeError,
)


class ConfigMismatch(ValueError):
    pass


def _sidecar(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def _load(args, kind: str) -> ExperimentConfig:
    cfg = load_config(args.config, seed=args.seed, threads=args.threads)
    if cfg.experiment != kind:
        raise ConfigMismatch(f"config describes a {cfg.experiment!r} experiment, not {kind!r}")
    return cfg


def _out_path(args, cfg: ExperimentConfig | None, default: str) -> Path:
    if args.out:
        return Path(args.out)
    if cfg is not None and cfg.output:
        return Path(cfg.output)
    return Path(default)


def cmd_run(args) -> Path:
    cfg = _load(args, "run")
    trajs = ex.do_run(cfg)
    out = _out_path(args, cfg, "run.csv")
    write_csv(out, ex.run_header(len(cfg.initial.mean)), ex.run_rows(trajs))
    # wall-clock times differ between invocations, so they live beside the
    # deterministic table instead of inside it
    write_csv(_sidecar(out, ".timing.csv"), ex.RUN_TIMING_HEADER, ex.timing_rows(trajs))
    return out


def cmd_convergence(args) -> Path:
    cfg = _load(args, "convergence")
    result = ex.do_convergence(cfg)
    out = _out_path(args, cfg, "convergence.csv")
    write_csv(out, ex.CONVERGENCE_HEADER, ex.convergence_rows(result.report))
    return out


def cmd_stability(args) -> Path:
    cfg = _load(args, "stability")
    rep = ex.do_stability(cfg)
    out = _out_path(args, cfg, "stability.csv")
    write_csv(out, ex.STABILITY_HEADER, ex.stability_rows(rep))
    meta = {k: _json_safe(v) for k, v in ex.stability_meta(rep).items()}
    _sidecar(out, ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def cmd_bench(args) -> Path:
    cfg = _load(args, "bench")
    out = _out_path(args, cfg, "bench.csv")
    write_csv(out, ex.BENCH_HEADER, ex.do_bench(cfg))
    return out


def cmd_plot(args) -> Path:
    svg = plot_csv(args.csv, args.kind)
    out = Path(args.out) if args.out else Path(args.csv).with_suffix(".svg")
    out.write_text(svg, encoding="utf-8", newline="")
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvssm",
        description="Particle simulations of McKean-Vlasov SDEs with split-step and explicit schemes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    handlers = {
        "run": (cmd_run, "simulate and write per-snapshot moment summaries"),
        "convergence": (cmd_convergence, "strong and weak errors against a fine reference"),
        "stability": (cmd_stability, "mean-square gap between two initial laws"),
        "bench": (cmd_bench, "wall-clock timing per scheme, N and thread count"),
    }
    for name, (fn, help_) in handlers.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument(
            "--config",
            required=True,
            help=f"JSON config path or preset name ({', '.join(preset_names())})",
        )
        p.add_argument("--threads", type=int, default=None, help="worker threads (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="64-bit seed (overrides config)")
        p.add_argument("--out", default=None, help="output CSV path")
        p.set_defaults(func=fn)
    p = sub.add_parser("plot", help="render a CSV written by this tool as SVG")
    p.add_argument("csv")
    p.add_argument("--kind", choices=["convergence", "stability", "run", "bench"], default=None)
    p.add_argument("--out", default=None, help="output SVG path (default: CSV path with .svg)")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        out = args.func(args)
    except ImplicitSolverError as exc:
        print(f"mvssm: implicit solver failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (*_CONFIG_ERRORS, ConfigMismatch) as exc:
        print(f"mvssm: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
