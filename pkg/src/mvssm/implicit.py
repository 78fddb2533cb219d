"""Solvers for the implicit sub-step ``c = d + h v(t, c)``.

The induced maps are ``F_h(t, d) = c`` and ``v_h(t, d) = v(t, F_h(t, d))``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .model import MeasureStats, ModelSpec, SolverHint

__all__ = [
    "ImplicitSolveReport",
    "ImplicitSolverError",
    "SolveMethod",
    "StepSizeError",
    "validate_stepsize",
    "require_stepsize",
    "solve_cubic_monotone",
    "solve_implicit",
    "f_h",
    "v_h",
    "f_h_lipschitz_witness",
    "TOL_RESIDUAL",
    "MAX_ITER",
]

TOL_RESIDUAL = 1e-12
MAX_ITER = 100


class StepSizeError(ValueError):
    pass


class ImplicitSolverError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class SolveMethod(enum.Enum):
    CUBIC_CLOSED_FORM = "cubic_closed_form"
    LINEAR_CLOSED_FORM = "linear_closed_form"
    NEWTON_BISECTION = "newton_bisection"


@dataclass
class ImplicitSolveReport:
    """Solution rows ``c`` with per-row residual ``|c - d - h v(t, c)|``."""

    solution: np.ndarray
    residual_norm: np.ndarray
    iterations: int
    method_used: SolveMethod


def validate_stepsize(L_v: float, h: float) -> str | None:
    """Return ``None`` if ``h`` is admissible for one-sided constant ``L_v``, else a reason."""
    if not h > 0:
        raise StepSizeError(f"step size must be positive, got {h!r}")
    if L_v > -0.5:
        bound = 1.0 / (1.0 + 2.0 * L_v)
        if h > bound:
            return f"h={h!r} exceeds 1/(1+2L_v)={bound!r} for L_v={L_v!r}"
    if not 1.0 - 2.0 * h * L_v > 0:
        return f"1-2hL_v={1.0 - 2.0 * h * L_v!r} is not positive"
    return None


def require_stepsize(L_v: float, h: float) -> None:
    problem = validate_stepsize(L_v, h)
    if problem is not None:
        raise StepSizeError(problem)


def solve_cubic_monotone(a3, a1, rhs):
    """Real root of ``a3 y^3 + a1 y = rhs`` for ``a3 >= 0``, ``a1 > 0``.

    Uses the hyperbolic form of the single-real-root Cardano solution,
    ``y = 2 sqrt(p/3) sinh(asinh(3 q sqrt(3/p) / (2 p)) / 3)`` with
    ``p = a1/a3``, ``q = rhs/a3``, which has no cancellation when ``a3`` is
    small, followed by one Newton polish.  Broadcasts over its arguments.
    """
    a3, a1, rhs = np.broadcast_arrays(
        np.asarray(a3, dtype=float), np.asarray(a1, dtype=float), np.asarray(rhs, dtype=float)
    )
    if np.any(a3 < 0):
        raise ValueError("a3 must be >= 0")
    if np.any(a1 <= 0):
        raise ValueError("a1 must be > 0 for a strictly increasing cubic")
    # below this ratio the cubic term is under one ulp of the linear one
    cubic = a3 > 1e-300 * a1
    safe_a3 = np.where(cubic, a3, 1.0)
    p = a1 / safe_a3
    q = rhs / safe_a3
    with np.errstate(over="ignore", invalid="ignore"):
        s = np.sqrt(p / 3.0)
        y = 2.0 * s * np.sinh(np.arcsinh(1.5 * q / (p * s)) / 3.0)
    # the hyperbolic form overflows for huge p; the linear root is exact there
    y = np.where(cubic & np.isfinite(y), y, rhs / a1)
    with np.errstate(over="ignore", invalid="ignore"):
        f = (a3 * y * y + a1) * y - rhs
        df = 3.0 * a3 * y * y + a1
        polished = y - f / df
    y = np.where(np.isfinite(polished), polished, y)
    return y[()] if y.ndim == 0 else y


def _residual(spec, t, c, d, h, stats):
    r = c - d - h * spec.drift_v(t, c, stats)
    return np.sqrt(np.sum(r * r, axis=-1))


def _tolerance(d, tol):
    return tol * (1.0 + np.sqrt(np.sum(d * d, axis=-1)))


def _closed_form(spec, t, d, h, stats):
    c1, c3 = spec.implicit_coeffs(stats)
    a1 = 1.0 - h * np.asarray(c1, dtype=float)
    a3 = -h * np.asarray(c3, dtype=float)
    if spec.solver_hint is SolverHint.LINEAR or not np.any(a3):
        if np.any(a3):
            raise ValueError(f"{spec.name}: linear solver hint with a cubic coefficient")
        return d / a1, SolveMethod.LINEAR_CLOSED_FORM
    return solve_cubic_monotone(a3, a1, d), SolveMethod.CUBIC_CLOSED_FORM


def _jacobian(spec, t, u, stats, eps=1e-7):
    n, dim = u.shape
    jac = np.empty((n, dim, dim))
    for k in range(dim):
        step = eps * (1.0 + np.abs(u[:, k]))
        up, um = u.copy(), u.copy()
        up[:, k] += step
        um[:, k] -= step
        jac[:, :, k] = (spec.drift_v(t, up, stats) - spec.drift_v(t, um, stats)) / (2 * step[:, None])
    return jac


def _bisect_scalar(spec, t, d, h, stats, tol):
    # g(u) = u - h v(t, u) - d is strictly increasing when 1 - h L_v > 0
    def g(u):
        return u - h * spec.drift_v(t, u, stats) - d

    width = np.abs(d) + 1.0
    lo, hi = d - width, d + width
    for _ in range(200):
        grow = (g(lo) > 0) | (g(hi) < 0)
        if not np.any(grow):
            break
        lo = np.where(g(lo) > 0, lo - 2 * width, lo)
        hi = np.where(g(hi) < 0, hi + 2 * width, hi)
        width = 2 * width
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        lo = np.where(gm <= 0, mid, lo)
        hi = np.where(gm > 0, mid, hi)
        if np.all(np.abs(g(mid)) <= tol[:, None]) or np.all(hi - lo <= 0):
            break
    return 0.5 * (lo + hi)


def _newton(spec, t, d, h, stats, tol, max_iter):
    n, dim = d.shape
    eye = np.eye(dim)
    u = d.copy()
    res = u - h * spec.drift_v(t, u, stats) - d
    norm = np.sqrt(np.sum(res * res, axis=-1))
    it = 0
    for it in range(1, max_iter + 1):
        active = norm > tol
        if not np.any(active):
            break
        ua, ra = u[active], res[active]
        jac = eye - h * _jacobian(spec, t, ua, stats)
        delta = np.linalg.solve(jac, ra[..., None])[..., 0]
        lam = np.ones(ua.shape[0])
        best_u, best_r = ua.copy(), ra.copy()
        best_n = norm[active].copy()
        pending = np.ones(ua.shape[0], dtype=bool)
        for _ in range(31):
            trial = ua - lam[:, None] * delta
            tr = trial - h * spec.drift_v(t, trial, stats) - d[active]
            tn = np.sqrt(np.sum(tr * tr, axis=-1))
            better = pending & (tn < best_n)
            best_u[better], best_r[better], best_n[better] = trial[better], tr[better], tn[better]
            pending &= ~better
            if not np.any(pending):
                break
            lam = np.where(pending, 0.5 * lam, lam)
        u[active], res[active], norm[active] = best_u, best_r, best_n
        if np.any(pending):
            stuck = np.flatnonzero(active)[pending]
            if dim == 1:
                u[stuck] = _bisect_scalar(spec, t, d[stuck], h, stats, tol[stuck])
                res[stuck] = u[stuck] - h * spec.drift_v(t, u[stuck], stats) - d[stuck]
                norm[stuck] = np.abs(res[stuck, 0])
            elif np.all(norm[stuck] > tol[stuck]):
                raise ImplicitSolverError("damped Newton stalled", float(np.max(norm[stuck])))
    return u, it


def solve_implicit(
    spec: ModelSpec,
    t: float,
    d,
    h: float,
    frozen_stats: MeasureStats | None = None,
    tol: float = TOL_RESIDUAL,
    max_iter: int = MAX_ITER,
    check_stepsize: bool = True,
) -> ImplicitSolveReport:
    """Solve ``c = d + h v(t, c)`` row-wise for ``d`` of shape ``(N, dim)`` or ``(dim,)``.

    Non-finite rows are passed through untouched and excluded from the
    residual contract.
    """
    if check_stepsize:
        require_stepsize(spec.constants.L_v, h)
    if spec.frozen_measure and frozen_stats is None:
        raise ValueError(f"{spec.name} needs frozen measure statistics for its implicit step")
    d = np.asarray(d, dtype=float)
    single = d.ndim == 1
    d2 = np.atleast_2d(d)
    ok = np.all(np.isfinite(d2), axis=1)
    c = d2.copy()
    limit = _tolerance(d2, tol)
    iterations = 0
    if spec.solver_hint is SolverHint.GENERAL_MONOTONE:
        method = SolveMethod.NEWTON_BISECTION
        if np.any(ok):
            c[ok], iterations = _newton(spec, t, d2[ok], h, frozen_stats, limit[ok], max_iter)
    else:
        sol, method = _closed_form(spec, t, d2[ok], h, frozen_stats)
        c[ok] = sol
    residual = np.zeros(d2.shape[0])
    if np.any(ok):
        with np.errstate(over="ignore", invalid="ignore"):
            residual[ok] = _residual(spec, t, c[ok], d2[ok], h, frozen_stats)
        bad = ok & ~(residual <= limit)
        if np.any(bad):
            raise ImplicitSolverError(
                f"{spec.name}: implicit solve missed tolerance on {int(bad.sum())} rows",
                float(np.max(residual[bad])),
            )
    residual[~ok] = np.nan
    if single:
        return ImplicitSolveReport(c[0], residual, iterations, method)
    return ImplicitSolveReport(c, residual, iterations, method)


def f_h(spec: ModelSpec, t: float, x, h: float, frozen_stats=None) -> np.ndarray:
    return solve_implicit(spec, t, x, h, frozen_stats).solution


def v_h(spec: ModelSpec, t: float, x, h: float, frozen_stats=None) -> np.ndarray:
    return spec.drift_v(t, f_h(spec, t, x, h, frozen_stats), frozen_stats)


def f_h_lipschitz_witness(spec: ModelSpec, t: float, x, y, h: float, frozen_stats=None):
    """``(|F_h(x) - F_h(y)|^2, |x - y|^2 / (1 - 2 h L_v))`` row-wise."""
    require_stepsize(spec.constants.L_v, h)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    fx = f_h(spec, t, x, h, frozen_stats)
    fy = f_h(spec, t, y, h, frozen_stats)
    lhs = np.sum((fx - fy) ** 2, axis=-1)
    rhs = np.sum((x - y) ** 2, axis=-1) / (1.0 - 2.0 * h * spec.constants.L_v)
    return lhs, rhs
