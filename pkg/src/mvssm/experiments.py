"""Experiment drivers shared by the command line and the acceptance suite.

Each driver takes a validated :class:`~mvssm.config.ExperimentConfig` and
returns plain rows ready for :func:`mvssm.report.write_csv`.
"""

from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass

import numpy as np

from .analysis import ErrorReport, compute_beta, contractivity_series, fit_rate, strong_weak_errors
from .config import BenchConfig, ExperimentConfig
from .engine import SnapshotPolicy, Trajectory, run, run_coupled, run_two_state
from .noise import NoiseTable, sample_initial

__all__ = [
    "RUN_TIMING_HEADER",
    "CONVERGENCE_HEADER",
    "STABILITY_HEADER",
    "BENCH_HEADER",
    "run_header",
    "run_rows",
    "timing_rows",
    "do_run",
    "do_convergence",
    "convergence_rows",
    "do_stability",
    "stability_rows",
    "stability_meta",
    "do_bench",
]

RUN_TIMING_HEADER = ("scheme", "n", "wall_s")
CONVERGENCE_HEADER = ("scheme", "h", "eps1", "eps2", "slope_weak", "slope_strong")
STABILITY_HEADER = ("n", "t", "D_n", "envelope", "beta", "alpha")
BENCH_HEADER = ("scheme", "N", "threads", "total_s", "per_step_ms")


def _noise(cfg: ExperimentConfig, N: int | None = None) -> NoiseTable:
    spec = cfg.model.build()
    return NoiseTable(cfg.seed, N or cfg.N, spec.noise_dim, cfg.h_fine, cfg.T)


def _schemes(cfg: ExperimentConfig):
    return [entry.build(h) for entry, h in zip(cfg.schemes, cfg.steps_for_run())]


def run_header(dim: int) -> list[str]:
    return (
        ["scheme", "t"]
        + [f"mean_{k}" for k in range(dim)]
        + [f"m2_{k}" for k in range(dim)]
        + ["max_abs", "nonfinite"]
    )


def _summary(states: np.ndarray):
    # A cloud holding a blown-up particle has no meaningful moments; report
    # them as non-finite and count the offenders.
    bad = int(np.count_nonzero(~np.all(np.isfinite(states), axis=1)))
    dim = states.shape[1]
    if bad:
        return [math.nan] * dim, [math.nan] * dim, math.inf, bad
    mean = states.mean(axis=0)
    m2 = (states * states).mean(axis=0)
    return list(mean), list(m2), float(np.max(np.abs(states))), 0


def run_rows(trajectories: list[Trajectory]) -> list[list]:
    rows = []
    for traj in trajectories:
        for cloud in traj.clouds:
            mean, m2, max_abs, bad = _summary(cloud.states)
            rows.append([traj.scheme.label, cloud.t, *mean, *m2, max_abs, bad])
    return rows


def timing_rows(trajectories: list[Trajectory]) -> list[list]:
    rows = []
    for traj in trajectories:
        rows.extend([traj.scheme.label, n, w] for n, w in enumerate(traj.step_wall))
        rows.append([traj.scheme.label, "total", traj.total_wall])
    return rows


def do_run(cfg: ExperimentConfig) -> list[Trajectory]:
    spec = cfg.model.build()
    return run_coupled(
        spec,
        _schemes(cfg),
        cfg.N,
        cfg.T,
        cfg.initial.sampler(),
        _noise(cfg),
        snapshots=cfg.snapshot.policy(),
        threads=cfg.threads,
        chunk=cfg.chunk_size,
    )


@dataclass
class ConvergenceResult:
    report: ErrorReport
    reference: Trajectory
    runs: dict[str, list[Trajectory]]


def _fit(h, errs):
    pairs = [(x, abs(e)) for x, e in zip(h, errs) if math.isfinite(e) and e != 0]
    if len(pairs) < 3 or len(pairs) < len(h):
        return None, None
    slope, _, resid = fit_rate([p[0] for p in pairs], [p[1] for p in pairs])
    return slope, resid


def do_convergence(cfg: ExperimentConfig) -> ConvergenceResult:
    """Every scheme at every grid step against the reference, all on one noise table."""
    spec = cfg.model.build()
    noise = _noise(cfg)
    x0 = sample_initial(cfg.initial.sampler(), cfg.N, cfg.seed)
    ref = run(
        spec,
        cfg.reference_entry().build(cfg.reference_h()),
        cfg.N,
        cfg.T,
        x0,
        noise,
        threads=cfg.threads,
        chunk=cfg.chunk_size,
    )
    grid = sorted(cfg.h_grid)
    report = ErrorReport(grid, {}, {}, {}, {}, reference=ref.scheme.label)
    runs = {}
    for entry in cfg.schemes:
        trajs = [
            run(spec, entry.build(h), cfg.N, cfg.T, x0, noise, threads=cfg.threads, chunk=cfg.chunk_size)
            for h in grid
        ]
        label = trajs[0].scheme.label
        e1, e2 = zip(*(strong_weak_errors(ref, tr, cfg.component) for tr in trajs))
        report.eps1[label], report.eps2[label] = list(e1), list(e2)
        report.slope_weak[label], report.residual_weak[label] = _fit(grid, e1)
        report.slope_strong[label], report.residual_strong[label] = _fit(grid, e2)
        runs[label] = trajs
    return ConvergenceResult(report, ref, runs)


def convergence_rows(report: ErrorReport) -> list[list]:
    rows = []
    for label in report.eps2:
        for h, e1, e2 in zip(report.h, report.eps1[label], report.eps2[label]):
            rows.append([label, h, e1, e2, None, None])
        sw, ss = report.slope_weak[label], report.slope_strong[label]
        rows.append([label, None, None, None, math.nan if sw is None else sw, math.nan if ss is None else ss])
    return rows


def do_stability(cfg: ExperimentConfig):
    spec = cfg.model.build()
    entry = cfg.schemes[0]
    scheme = entry.build(cfg.steps_for_run()[0])
    # Fail on the step-size precondition before spending time on the runs.
    compute_beta(spec.constants, scheme.h)
    noise = _noise(cfg)
    z_law = cfg.initial_z.sampler()
    if cfg.initial_z.kind == "normal" and cfg.initial.kind == "normal" and z_law.offset == cfg.initial.offset:
        # keep the two families' initial draws independent
        z_law = type(z_law)(z_law.mean, z_law.var, z_law.kind, z_law.offset + 1)
    pair = run_two_state(
        spec,
        scheme,
        cfg.N,
        cfg.T,
        cfg.initial.sampler(),
        z_law,
        noise,
        snapshots=SnapshotPolicy(every=1),
        threads=cfg.threads,
        chunk=cfg.chunk_size,
    )
    return contractivity_series(pair, spec.constants)


def stability_rows(rep) -> list[list]:
    return [
        [int(n), float(t), float(d), float(e), rep.beta, rep.alpha]
        for n, t, d, e in zip(rep.steps, rep.times, rep.D, rep.envelope)
    ]


def stability_meta(rep) -> dict:
    D0, DT = float(rep.D[0]), float(rep.D[-1])
    return {
        "alpha": rep.alpha,
        "beta": rep.beta,
        "contractive": rep.contractive,
        "h_max": rep.h_max,
        "D_T_over_D_0": DT / D0 if D0 > 0 else None,
    }


def do_bench(cfg: ExperimentConfig) -> list[list]:
    """Median wall time over ``repeats`` for every (scheme, N, threads) cell."""
    bench = cfg.bench or BenchConfig()
    spec = cfg.model.build()
    rows = []
    for entry, h in zip(cfg.schemes, cfg.steps_for_run()):
        scheme = entry.build(h)
        M = scheme.steps(cfg.T)
        for N in bench.N:
            noise = NoiseTable(cfg.seed, N, spec.noise_dim, cfg.h_fine, cfg.T)
            for threads in bench.threads:
                walls = []
                for _ in range(bench.repeats):
                    start = time.perf_counter()
                    run(spec, scheme, N, cfg.T, cfg.initial.sampler(), noise, threads=threads, chunk=cfg.chunk_size)
                    walls.append(time.perf_counter() - start)
                total = statistics.median(walls)
                rows.append([scheme.label, N, threads, total, 1000.0 * total / M])
    return rows
