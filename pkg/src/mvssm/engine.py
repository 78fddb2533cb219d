"""Multi-step simulation of the particle system for any scheme.

Particle-wise phases run on a :class:`~mvssm.parallel.ChunkRunner`; the
empirical measure is a barrier computed with a fixed-order reduction.  With
counter-addressed noise this makes every trajectory bit-identical for any
thread count.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import ModelSpec, ParticleCloud
from .noise import GridError, InitialSampler, NoiseTable, sample_initial
from .parallel import ChunkRunner
from .schemes import (
    SchemeConfig,
    adaptive_step,
    explicit_euler_step,
    frozen_ssm_step,
    ssm_step,
    tamed_step,
)

__all__ = ["SnapshotPolicy", "Trajectory", "EngineError", "run", "run_coupled", "run_two_state"]


class EngineError(ValueError):
    """Inconsistent run configuration."""


@dataclass(frozen=True)
class SnapshotPolicy:
    """Which coarse steps to keep.  ``t = 0`` and the terminal step are always kept.

    ``every=k`` keeps every k-th step; ``times`` keeps the listed grid times;
    neither means terminal only.
    """

    every: int | None = None
    times: tuple[float, ...] = ()

    def wanted(self, M: int, h: float) -> set[int]:
        keep = {0, M}
        if self.every:
            keep.update(range(0, M + 1, self.every))
        for t in self.times:
            n = round(t / h)
            if abs(n * h - t) > 1e-9 * max(h, abs(t)) or not 0 <= n <= M:
                raise EngineError(f"snapshot time {t!r} is not on the coarse grid")
            keep.add(n)
        return keep


@dataclass
class Trajectory:
    scheme: SchemeConfig
    seed: int
    steps: list[int]
    clouds: list[ParticleCloud]
    step_wall: np.ndarray = field(repr=False)
    substeps: np.ndarray | None = field(default=None, repr=False)

    @property
    def times(self) -> list[float]:
        return [c.t for c in self.clouds]

    @property
    def terminal(self) -> ParticleCloud:
        return self.clouds[-1]

    @property
    def total_wall(self) -> float:
        return float(np.sum(self.step_wall))


def _initial_states(spec, initial, n, seed):
    if isinstance(initial, InitialSampler):
        if initial.dim != spec.dim:
            raise EngineError(f"initial law has dimension {initial.dim}, model has {spec.dim}")
        return sample_initial(initial, n, seed)
    x0 = np.atleast_2d(np.asarray(initial, dtype=float))
    if x0.shape != (n, spec.dim):
        raise EngineError(f"initial cloud has shape {x0.shape}, expected {(n, spec.dim)}")
    return x0.copy()


def _check_noise(spec, noise, n, T):
    if noise.n_particles != n:
        raise EngineError(f"noise table has {noise.n_particles} particles, run has {n}")
    if noise.noise_dim != spec.noise_dim:
        raise EngineError(f"noise table has dimension {noise.noise_dim}, model needs {spec.noise_dim}")
    if noise.index(T) > noise.n_fine:
        raise EngineError("noise table horizon is shorter than T")


def run(
    spec: ModelSpec,
    scheme: SchemeConfig,
    N: int,
    T: float,
    initial,
    noise: NoiseTable,
    snapshots: SnapshotPolicy = SnapshotPolicy(),
    threads: int = 1,
    chunk: int = 4096,
    record_substeps: bool = False,
) -> Trajectory:
    """Advance ``N`` particles from ``t = 0`` to ``T`` with ``scheme``.

    ``initial`` is an :class:`InitialSampler` (drawn under ``noise.seed``) or an
    explicit ``(N, d)`` array.  Increments for coarse step ``n`` are the fine
    increments of ``[n h, (n + 1) h)`` summed in ascending order.
    """
    if N < 1:
        raise EngineError("N must be >= 1")
    M = scheme.steps(T)
    _check_noise(spec, noise, N, T)
    try:
        m = noise.steps_per(scheme.h)
    except GridError as exc:
        raise EngineError(str(exc)) from None
    h = scheme.h
    x = _initial_states(spec, initial, N, noise.seed)
    keep = snapshots.wanted(M, h)
    steps, clouds = [0], [ParticleCloud(0.0, x.copy())]
    wall = np.zeros(M)
    substeps = np.zeros(N, dtype=np.int64) if record_substeps else None
    with ChunkRunner(threads, chunk) as runner:
        for n in range(M):
            start = time.perf_counter()
            t = n * h
            if scheme.kind == "adaptive":
                rec = adaptive_step(spec, x, t, h, scheme.h_delta, noise, runner)
                x = rec.cloud_next
                if substeps is not None:
                    substeps += rec.substeps
            else:
                k0 = n * m
                dW = runner.concat(
                    lambda s: noise.block_increments(k0, k0 + m, np.arange(s.start, s.stop)), N
                )
                if scheme.kind == "ssm":
                    x = ssm_step(spec, x, t, h, dW, runner).cloud_next
                elif scheme.kind == "frozen_ssm":
                    x = frozen_ssm_step(spec, x, t, h, dW, runner).cloud_next
                elif scheme.kind == "tamed":
                    x = tamed_step(spec, x, t, h, M, scheme.alpha, dW, runner)
                else:
                    x = explicit_euler_step(spec, x, t, h, dW, runner)
            wall[n] = time.perf_counter() - start
            if n + 1 in keep:
                steps.append(n + 1)
                clouds.append(ParticleCloud((n + 1) * h, x.copy()))
    return Trajectory(scheme, noise.seed, steps, clouds, wall, substeps)


def run_coupled(
    spec: ModelSpec,
    schemes: Sequence[SchemeConfig],
    N: int,
    T: float,
    initial,
    noise: NoiseTable,
    **kwargs,
) -> list[Trajectory]:
    """Run several schemes on the same Brownian paths and the same initial cloud."""
    for sc in schemes:
        try:
            noise.steps_per(sc.h)
        except GridError as exc:
            raise EngineError(f"{sc.label} at h={sc.h!r}: {exc}") from None
    x0 = _initial_states(spec, initial, N, noise.seed)
    return [run(spec, sc, N, T, x0, noise, **kwargs) for sc in schemes]


def run_two_state(
    spec: ModelSpec,
    scheme: SchemeConfig,
    N: int,
    T: float,
    initial_x,
    initial_z,
    noise: NoiseTable,
    **kwargs,
) -> tuple[Trajectory, Trajectory]:
    """Two particle families with different initial laws driven by the same noise."""
    x0 = _initial_states(spec, initial_x, N, noise.seed)
    z0 = _initial_states(spec, initial_z, N, noise.seed)
    kwargs.setdefault("snapshots", SnapshotPolicy(every=1))
    return (
        run(spec, scheme, N, T, x0, noise, **kwargs),
        run(spec, scheme, N, T, z0, noise, **kwargs),
    )
