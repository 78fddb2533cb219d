"""Error metrics, rate fits, contractivity diagnostics and OU oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .engine import Trajectory
from .implicit import StepSizeError
from .model import ModelConstants

__all__ = [
    "BetaInfo",
    "ContractivityReport",
    "ErrorReport",
    "compute_beta",
    "strong_weak_errors",
    "fit_rate",
    "ou_moments",
    "contractivity_series",
    "wasserstein2_1d",
]


@dataclass(frozen=True)
class BetaInfo:
    alpha: float
    beta: float
    contractive: bool
    h_max: float | None


def compute_beta(consts: ModelConstants, h: float) -> BetaInfo:
    """Growth factor ``1 + beta h`` of the mean-square gap between two SSM runs.

    ``h_max`` is the step bound keeping ``beta < 0`` when ``L_v < alpha``;
    ``math.inf`` when ``L_b + L_bhat = 0`` (every step qualifies) and ``None``
    when ``L_v >= alpha`` (no step does).
    """
    if not 1.0 - 2.0 * h * consts.L_v > 0:
        raise StepSizeError(f"1 - 2 h L_v must be positive (h={h!r}, L_v={consts.L_v!r})")
    lb = consts.L_b + consts.L_bhat
    alpha = -0.5 * (1.0 + consts.L_sigma + consts.L_sigmahat + lb)
    with np.errstate(invalid="ignore"):
        beta = (2.0 * (consts.L_v - alpha) + h * lb) / (1.0 - 2.0 * h * consts.L_v)
    if consts.L_v < alpha:
        h_max = math.inf if lb == 0 else -2.0 * (consts.L_v - alpha) / lb
    else:
        h_max = None
    contractive = h_max is not None and alpha <= -0.5 and 0 < h < h_max
    return BetaInfo(alpha, float(beta), contractive, h_max)


def _states(obj):
    if isinstance(obj, Trajectory):
        return obj.terminal.states
    if hasattr(obj, "states"):
        return obj.states
    arr = np.asarray(obj, dtype=float)
    return arr[:, None] if arr.ndim == 1 else arr


def strong_weak_errors(reference, approx, component: int | None = None) -> tuple[float, float]:
    """Weak and strong terminal errors ``(eps1, eps2)`` between coupled particles.

    ``eps1 = mean(X - Xhat)`` (signed) and ``eps2 = sqrt(mean |X - Xhat|^2)``.
    For ``d > 1`` without ``component``, ``eps1`` is the norm of the mean
    difference vector.  Any non-finite particle makes both values non-finite.
    """
    if isinstance(reference, Trajectory) and isinstance(approx, Trajectory):
        if not math.isclose(reference.terminal.t, approx.terminal.t, rel_tol=1e-9):
            raise ValueError("trajectories end at different times")
    a, b = _states(reference), _states(approx)
    if a.shape != b.shape:
        raise ValueError(f"mismatched clouds {a.shape} vs {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        diff = a - b
        if component is not None:
            diff = diff[:, component : component + 1]
        mean = diff.mean(axis=0)
        eps1 = float(mean[0]) if diff.shape[1] == 1 else float(np.sqrt(np.sum(mean * mean)))
        eps2 = float(np.sqrt(np.mean(np.sum(diff * diff, axis=1))))
    if not (math.isfinite(eps1) and math.isfinite(eps2)):
        return math.nan if not math.isfinite(eps1) else eps1, math.inf
    return eps1, eps2


def fit_rate(h: Sequence[float], errors: Sequence[float]) -> tuple[float, float, float]:
    """OLS fit of ``log err = slope log h + intercept``; returns ``(slope, intercept, max |residual|)``."""
    h = np.asarray(h, dtype=float)
    e = np.asarray(errors, dtype=float)
    if h.size < 3 or h.shape != e.shape:
        raise ValueError("need at least three (h, error) pairs")
    if not (np.all(np.isfinite(e)) and np.all(e > 0)):
        raise ValueError("errors must be positive and finite")
    lx, ly = np.log(h), np.log(e)
    A = np.column_stack([lx, np.ones_like(lx)])
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * lx + intercept)
    return float(slope), float(intercept), float(np.max(np.abs(resid)))


def ou_moments(rho, lam, nu, mean0, second0, t):
    """Mean and second moment of ``dX = (rho X + lam E X) dt + nu dW``.

    Var evolves as ``dVar = 2 rho Var + nu^2``, so the initial variance
    ``second0 - mean0^2`` decays at rate ``2 rho`` while the mean part grows at
    ``2 (rho + lam)``.  ``rho = 0`` uses the limit ``nu^2 t``.
    """
    mean = mean0 * math.exp((rho + lam) * t)
    var0 = second0 - mean0 * mean0
    noise = nu * nu * t if rho == 0 else nu * nu / (2 * rho) * math.expm1(2 * rho * t)
    second = var0 * math.exp(2 * rho * t) + mean0 * mean0 * math.exp(2 * (rho + lam) * t) + noise
    return mean, second


@dataclass
class ErrorReport:
    h: list[float]
    eps1: dict[str, list[float]]
    eps2: dict[str, list[float]]
    slope_weak: dict[str, float | None]
    slope_strong: dict[str, float | None]
    residual_weak: dict[str, float | None] = field(default_factory=dict)
    residual_strong: dict[str, float | None] = field(default_factory=dict)
    reference: str = ""


@dataclass
class ContractivityReport:
    steps: np.ndarray
    times: np.ndarray
    D: np.ndarray
    envelope: np.ndarray
    beta: float
    alpha: float
    contractive: bool
    h_max: float | None


def contractivity_series(pair: tuple[Trajectory, Trajectory], consts: ModelConstants) -> ContractivityReport:
    """``D_n = mean_i |X_n^i - Z_n^i|^2`` with the envelope ``D_0 (1 + beta h)^n``."""
    tx, tz = pair
    M = tx.scheme.steps(tx.terminal.t)
    if tx.steps != list(range(M + 1)) or tz.steps != tx.steps:
        raise ValueError("contractivity needs snapshots at every step of both runs")
    D = np.array(
        [np.mean(np.sum((cx.states - cz.states) ** 2, axis=1)) for cx, cz in zip(tx.clouds, tz.clouds)]
    )
    info = compute_beta(consts, tx.scheme.h)
    n = np.arange(M + 1)
    envelope = D[0] * (1.0 + info.beta * tx.scheme.h) ** n
    return ContractivityReport(
        n, np.array(tx.times), D, envelope, info.beta, info.alpha, info.contractive, info.h_max
    )


def wasserstein2_1d(a, b) -> float:
    """W2 between two equal-size 1-d empirical measures via the sorted coupling."""
    a = np.sort(np.ravel(np.asarray(a, dtype=float)))
    b = np.sort(np.ravel(np.asarray(b, dtype=float)))
    if a.size != b.size:
        raise ValueError("samples must have equal size")
    return float(np.sqrt(np.mean((a - b) ** 2)))
