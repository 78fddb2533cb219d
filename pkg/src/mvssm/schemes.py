"""One-step advancement rules for the N-particle system.

Fixed-step schemes receive the Brownian increments ``dW`` of shape ``(N, l)``
for the current coarse step; the adaptive scheme reads the fine increments of
the coarse interval directly from the :class:`~mvssm.noise.NoiseTable`.
States are ``(N, d)`` arrays.  Rows that are already non-finite are carried
through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .implicit import require_stepsize, solve_implicit
from .model import MeasureStats, ModelSpec, eval_stats
from .noise import NoiseTable
from .parallel import SERIAL, ChunkRunner

__all__ = [
    "SCHEME_KINDS",
    "SchemeConfig",
    "SchemeError",
    "StepRecord",
    "ADAPTIVE_RULES",
    "ssm_step",
    "frozen_ssm_step",
    "tamed_step",
    "tamed_drift",
    "adaptive_step",
    "proposed_substep",
    "explicit_euler_step",
    "diffusion_term",
]

SCHEME_KINDS = ("ssm", "frozen_ssm", "tamed", "adaptive", "euler")


class SchemeError(ValueError):
    pass


def _inv_sq(spec, t, x, stats, h):
    r2 = np.sum(x * x, axis=-1)
    with np.errstate(divide="ignore"):
        return h * np.minimum(1.0, 1.0 / r2)


def _drift_ratio(spec, t, x, stats, h):
    bhat = spec.drift(t, x, stats)
    r2 = np.sum(x * x, axis=-1)
    b2 = np.sum(bhat * bhat, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(b2 > 0, r2 / b2, np.inf)
    return h * np.minimum(1.0, ratio)


# h * min(1, |x|^-2) and h * min(1, |x|^2 / |v + b|^2)
ADAPTIVE_RULES: dict[str, Callable] = {"inv_sq": _inv_sq, "drift_ratio": _drift_ratio}


@dataclass(frozen=True)
class SchemeConfig:
    kind: str
    h: float
    alpha: float | None = None
    h_delta: str | None = None

    def __post_init__(self):
        if self.kind not in SCHEME_KINDS:
            raise SchemeError(f"unknown scheme {self.kind!r}; choose from {SCHEME_KINDS}")
        if not self.h > 0:
            raise SchemeError("h must be positive")
        if self.kind == "tamed":
            if self.alpha is None or not 0 < self.alpha <= 1:
                raise SchemeError("tamed scheme needs alpha in (0, 1]")
        if self.kind == "adaptive" and self.h_delta not in ADAPTIVE_RULES:
            raise SchemeError(f"adaptive scheme needs h_delta rule in {sorted(ADAPTIVE_RULES)}")

    def with_h(self, h: float) -> "SchemeConfig":
        return SchemeConfig(self.kind, h, self.alpha, self.h_delta)

    @property
    def label(self) -> str:
        if self.kind == "tamed":
            return f"tamed(alpha={self.alpha:g})"
        if self.kind == "adaptive":
            return f"adaptive({self.h_delta})"
        return self.kind

    def steps(self, T: float) -> int:
        M = round(T / self.h)
        if M < 1 or abs(M * self.h - T) > 1e-9 * T:
            raise SchemeError(f"T={T!r} is not an integer multiple of h={self.h!r}")
        return M


@dataclass
class StepRecord:
    cloud_next: np.ndarray
    ystar: np.ndarray | None = None
    substeps: np.ndarray | None = field(default=None)


def diffusion_term(spec: ModelSpec, t, x, stats, dW) -> np.ndarray:
    """``sigma(t, x, stats) @ dW`` row-wise."""
    sig = spec.sigma(t, x, stats)
    return np.sum(sig * dW[..., None, :], axis=-1)


def _keep_flagged(new, old):
    bad = ~np.all(np.isfinite(old), axis=1)
    if np.any(bad):
        new[bad] = old[bad]
    return new


def _split_step(spec, states, t, h, dW, implicit_stats, runner):
    def phase1(s):
        return solve_implicit(spec, t, states[s], h, implicit_stats, check_stepsize=False).solution

    ystar = runner.concat(phase1, states.shape[0])
    ystats = eval_stats(ystar)

    def phase3(s):
        y = ystar[s]
        return y + spec.b(t, y, ystats) * h + diffusion_term(spec, t, y, ystats, dW[s])

    with np.errstate(over="ignore", invalid="ignore"):
        nxt = runner.concat(phase3, states.shape[0])
    return StepRecord(_keep_flagged(nxt, states), ystar=ystar)


def ssm_step(spec: ModelSpec, states, t: float, h: float, dW, runner: ChunkRunner = SERIAL) -> StepRecord:
    """Split-step update: implicit solve in ``v``, then explicit ``b``/``sigma`` at ``Y*``
    with the empirical measure of the ``Y*`` cloud."""
    if spec.frozen_measure:
        raise SchemeError(f"{spec.name} has a measure-dependent v; use the frozen_ssm scheme")
    require_stepsize(spec.constants.L_v, h)
    return _split_step(spec, np.asarray(states, dtype=float), t, h, np.asarray(dW), None, runner)


def frozen_ssm_step(spec: ModelSpec, states, t: float, h: float, dW, runner: ChunkRunner = SERIAL) -> StepRecord:
    """Split-step update whose implicit solve uses the measure of the current cloud.

    The explicit half still evaluates ``b`` and ``sigma`` against the ``Y*`` cloud.
    """
    require_stepsize(spec.constants.L_v, h)
    states = np.asarray(states, dtype=float)
    return _split_step(spec, states, t, h, np.asarray(dW), eval_stats(states), runner)


def tamed_drift(bhat, M: int, alpha: float):
    """``bhat / (1 + M^-alpha |bhat|)`` row-wise."""
    norm = np.sqrt(np.sum(bhat * bhat, axis=-1, keepdims=True))
    return bhat / (1.0 + M ** (-alpha) * norm)


def tamed_step(
    spec: ModelSpec, states, t: float, h: float, M: int, alpha: float, dW, runner: ChunkRunner = SERIAL
) -> np.ndarray:
    """Explicit Euler with the full drift ``v + b`` tamed by ``1 + M^-alpha |v + b|``."""
    if not 0 < alpha <= 1:
        raise SchemeError("alpha must lie in (0, 1]")
    states = np.asarray(states, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        stats = eval_stats(states)

        def update(s):
            x = states[s]
            drift = tamed_drift(spec.drift(t, x, stats), M, alpha)
            return x + drift * h + diffusion_term(spec, t, x, stats, dW[s])

        nxt = runner.concat(update, states.shape[0])
    return _keep_flagged(nxt, states)


def explicit_euler_step(spec: ModelSpec, states, t: float, h: float, dW, runner: ChunkRunner = SERIAL) -> np.ndarray:
    """Untamed Euler-Maruyama; overflow is propagated, not raised."""
    states = np.asarray(states, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        stats = eval_stats(states)

        def update(s):
            x = states[s]
            return x + spec.drift(t, x, stats) * h + diffusion_term(spec, t, x, stats, dW[s])

        nxt = runner.concat(update, states.shape[0])
    return _keep_flagged(nxt, states)


def _masked_fold(fine, start, stop):
    # ascending left fold of fine[:, start:stop] per row; zeros outside the window
    acc = np.zeros((fine.shape[0], fine.shape[2]))
    lo, hi = int(start.min()), int(stop.max())
    for j in range(lo, hi):
        inside = (start <= j) & (j < stop)
        acc = acc + np.where(inside[:, None], fine[:, j, :], 0.0)
    return acc


def quantize_substep(proposal, h: float, h_fine: float, remaining):
    """Whole fine steps for a proposed substep: ``min(proposal, h)`` rounded down,
    at least one, and never past the end of the coarse interval (``remaining``
    fine steps)."""
    q = np.floor(np.minimum(proposal, h) / h_fine * (1 + 1e-12)).astype(np.int64)
    return np.clip(q, 1, remaining)


def _adaptive_chunk(spec, x, t, h, h_fine, m, fine, stats, rule):
    x = x.copy()
    n = x.shape[0]
    pos = np.zeros(n, dtype=np.int64)
    count = np.zeros(n, dtype=np.int64)
    done = ~np.all(np.isfinite(x), axis=1)
    pos[done] = m
    while np.any(pos < m):
        act = np.flatnonzero(pos < m)
        xa = x[act]
        with np.errstate(over="ignore", invalid="ignore"):
            proposal = rule(spec, t, xa, stats, h)
        if np.any(~(proposal > 0)):
            raise SchemeError("h_delta rule returned a non-positive or non-finite step")
        q = quantize_substep(proposal, h, h_fine, m - pos[act])
        dW = _masked_fold(fine[act], pos[act], pos[act] + q)
        ta = t + pos[act] * h_fine
        with np.errstate(over="ignore", invalid="ignore"):
            xa = xa + spec.drift(ta[:, None], xa, stats) * (q * h_fine)[:, None] + diffusion_term(
                spec, ta[:, None], xa, stats, dW
            )
        x[act] = xa
        pos[act] += q
        count[act] += 1
        blown = ~np.all(np.isfinite(xa), axis=1)
        pos[act[blown]] = m
    return x, count


def adaptive_step(
    spec: ModelSpec,
    states,
    t: float,
    h: float,
    rule: str,
    noise: NoiseTable,
    runner: ChunkRunner = SERIAL,
) -> StepRecord:
    """Advance every particle over ``[t, t + h)`` with its own explicit Euler sub-steps.

    The measure is frozen at ``t``.  Sub-steps are ``min(h_delta(x), time left)``
    rounded down to whole fine steps (at least one), and each uses the sum of
    the fine Brownian increments it covers.
    """
    try:
        rule_fn = ADAPTIVE_RULES[rule]
    except KeyError:
        raise SchemeError(f"unknown h_delta rule {rule!r}") from None
    states = np.asarray(states, dtype=float)
    k0 = noise.index(t)
    m = noise.steps_per(h)
    h_fine = noise.h_fine
    with np.errstate(over="ignore", invalid="ignore"):
        stats = eval_stats(states)

    def chunk(s):
        ids = np.arange(s.start, s.stop)
        fine = noise.fine_block(k0, k0 + m, ids)
        return _adaptive_chunk(spec, states[s], t, h, h_fine, m, fine, stats, rule_fn)

    parts = runner.map(chunk, states.shape[0])
    nxt = np.concatenate([p[0] for p in parts])
    counts = np.concatenate([p[1] for p in parts])
    return StepRecord(nxt, substeps=counts)


def proposed_substep(spec: ModelSpec, rule: str, t: float, x, stats: MeasureStats, h: float):
    """Raw ``h_delta`` proposal before clamping and quantisation."""
    return ADAPTIVE_RULES[rule](spec, t, np.atleast_2d(np.asarray(x, dtype=float)), stats, h)
