"""MV-SDE coefficient triples, empirical-measure statistics and built-in models.

Coefficients are written for batched input: ``x`` has shape ``(..., d)`` and a
single state is just the ``d``-vector case.  ``v`` and ``b`` return ``(..., d)``,
``sigma`` returns ``(..., d, l)``.  The measure enters only through
:class:`MeasureStats`, so interaction terms cost O(N) per step.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Callable, Mapping

import numpy as np

__all__ = [
    "ModelConstants",
    "MeasureStats",
    "ModelSpec",
    "ParticleCloud",
    "SolverHint",
    "BUILTIN_MODELS",
    "ModelError",
    "make_builtin",
    "eval_stats",
    "check_one_sided_lipschitz",
    "REDUCTION_CHUNK",
]

# fixed reduction chunk; partials never depend on the thread count
REDUCTION_CHUNK = 1024


class ModelError(ValueError):
    """Unknown model name or invalid model parameters."""


class SolverHint(enum.Enum):
    COMPONENTWISE_CUBIC = "componentwise_cubic"
    LINEAR = "linear"
    GENERAL_MONOTONE = "general_monotone"


@dataclass(frozen=True)
class ModelConstants:
    """Structural constants of the coefficients.

    ``L_b``/``L_bhat`` (and the sigma pair) bound squared increments in space
    and in the measure separately.  ``math.inf`` marks a constant that does not
    exist for the model (no global Lipschitz bound).
    """

    L_v: float
    L_b: float = 0.0
    L_bhat: float = 0.0
    L_sigma: float = 0.0
    L_sigmahat: float = 0.0
    q: int = 2
    C_T: float = 0.0

    def __post_init__(self):
        for name in ("L_b", "L_bhat", "L_sigma", "L_sigmahat", "C_T"):
            if getattr(self, name) < 0:
                raise ModelError(f"{name} must be non-negative")
        if self.q < 1:
            raise ModelError("q must be a positive integer")

    @property
    def Lhat_v(self) -> float:
        return self.L_v + 0.5


@dataclass(frozen=True)
class MeasureStats:
    """Statistics of an empirical measure consumed by the coefficients."""

    mean: np.ndarray
    second_moment_by_coord: np.ndarray
    cloud: np.ndarray | None = None

    def marginal_mean(self, k: int) -> float:
        return self.mean[k]

    @property
    def second_moment(self) -> float:
        """Mean of ``|x|^2`` over the cloud."""
        return float(np.sum(self.second_moment_by_coord))


@dataclass
class ParticleCloud:
    """Particle states at one grid time.  ``finite[i]`` is False once particle i blew up."""

    t: float
    states: np.ndarray
    finite: np.ndarray | None = None

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.states.shape[0] < 1:
            raise ValueError("a cloud needs at least one particle")
        if self.finite is None:
            self.finite = np.all(np.isfinite(self.states), axis=1)

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]


Coefficient = Callable[..., np.ndarray]


@dataclass(frozen=True)
class ModelSpec:
    """Coefficient triple ``(v, b, sigma)`` of ``dX = (v + b) dt + sigma dW``.

    ``v`` carries the superlinear part and is called as ``v(t, x)``, or as
    ``v(t, x, stats)`` when ``frozen_measure`` is set.  For the cubic and
    linear solver hints, ``implicit_coeffs(stats)`` returns per-coordinate
    ``(c1, c3)`` with ``v_k(x) = c1_k x_k + c3_k x_k**3``.
    """

    name: str
    dim: int
    noise_dim: int
    v: Coefficient
    b: Coefficient
    sigma: Coefficient
    constants: ModelConstants
    solver_hint: SolverHint = SolverHint.GENERAL_MONOTONE
    implicit_coeffs: Callable[[MeasureStats | None], tuple[np.ndarray, np.ndarray]] | None = None
    stat_descriptor: tuple[str, ...] = ("mean", "second_moment")
    frozen_measure: bool = False
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1 or self.noise_dim < 1:
            raise ModelError("dim and noise_dim must be >= 1")
        if self.solver_hint is not SolverHint.GENERAL_MONOTONE and self.implicit_coeffs is None:
            raise ModelError("closed-form solver hints need implicit_coeffs")
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))

    def drift_v(self, t, x, stats=None):
        if self.frozen_measure:
            if stats is None:
                raise ModelError(f"{self.name}: v needs frozen measure statistics")
            return self.v(t, x, stats)
        return self.v(t, x)

    def drift(self, t, x, stats):
        """Full drift ``v + b``."""
        return self.drift_v(t, x, stats) + self.b(t, x, stats)


def _chunked_sum(x: np.ndarray, chunk: int = REDUCTION_CHUNK) -> np.ndarray:
    # sequential within each chunk, chunk partials combined in ascending order
    total = np.zeros(x.shape[1:])
    for start in range(0, x.shape[0], chunk):
        total = total + np.add.accumulate(x[start : start + chunk], axis=0)[-1]
    return total


def eval_stats(cloud, descriptor=("mean", "second_moment")) -> MeasureStats:
    """Empirical statistics of a cloud (a :class:`ParticleCloud` or ``(N, d)`` array).

    Reductions use a fixed chunked order, so the result does not depend on how
    the caller parallelises.  Sums run over sorted values per coordinate, which
    makes the statistics a function of the multiset of states alone.
    """
    states = cloud.states if isinstance(cloud, ParticleCloud) else np.asarray(cloud, dtype=float)
    states = np.atleast_2d(states)
    if states.shape[0] == 0:
        raise ValueError("cannot compute statistics of an empty cloud")
    n = states.shape[0]
    ordered = np.sort(states, axis=0)
    mean = _chunked_sum(ordered) / n
    second = _chunked_sum(ordered * ordered) / n
    pairwise = states if "pairwise" in descriptor else None
    return MeasureStats(mean=mean, second_moment_by_coord=second, cloud=pairwise)


def check_one_sided_lipschitz(
    spec: ModelSpec, samples: int, rng_seed: int = 0, box: float = 10.0, T: float = 1.0
) -> float:
    """Largest sampled ``<x - x', v(t,x) - v(t,x')> / |x - x'|^2``.

    Draws ``t ~ U[0, T]`` and ``x, x' ~ U[-box, box]^d``.  Frozen-measure models
    get random statistics with means in the box and second moments in
    ``[0, box^2]``.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(rng_seed)
    d = spec.dim
    t = rng.uniform(0.0, T, size=(samples, 1))
    x = rng.uniform(-box, box, size=(samples, d))
    y = rng.uniform(-box, box, size=(samples, d))
    stats = None
    if spec.frozen_measure:
        stats = MeasureStats(
            mean=rng.uniform(-box, box, size=(samples, d)),
            second_moment_by_coord=rng.uniform(0.0, box * box / d, size=(samples, d)),
        )
    dx = x - y
    dv = spec.drift_v(t, x, stats) - spec.drift_v(t, y, stats)
    num = np.sum(dx * dv, axis=-1)
    den = np.sum(dx * dx, axis=-1)
    ok = den > 0
    return float(np.max(num[ok] / den[ok])) if np.any(ok) else 0.0


# ---------------------------------------------------------------- built-ins


def _require(params: Mapping[str, Any], *names: str) -> list[float]:
    missing = [n for n in names if n not in params]
    if missing:
        raise ModelError(f"missing required parameters: {', '.join(missing)}")
    return [float(params[n]) for n in names]


def _check_known(params: Mapping[str, Any], allowed: set[str]):
    extra = set(params) - allowed
    if extra:
        raise ModelError(f"unknown parameters: {', '.join(sorted(extra))}")


def _ginzburg_landau(params):
    _check_known(params, {"sigma", "c"})
    s, c = _require(params, "sigma", "c")
    if s < 0:
        raise ModelError("sigma must be >= 0")
    half_s2 = 0.5 * s * s

    def v(t, x):
        return -(x**3)

    def b(t, x, stats):
        return half_s2 * x + c * stats.mean

    def sigma(t, x, stats):
        return (s * x)[..., None]

    zero = np.zeros(1)
    return ModelSpec(
        name="GinzburgLandau",
        dim=1,
        noise_dim=1,
        v=v,
        b=b,
        sigma=sigma,
        constants=ModelConstants(
            L_v=0.0, L_b=2 * half_s2**2, L_bhat=2 * c * c, L_sigma=s * s, q=2
        ),
        solver_hint=SolverHint.COMPONENTWISE_CUBIC,
        implicit_coeffs=lambda stats: (zero, -np.ones(1)),
        stat_descriptor=("mean",),
        params=params,
    )


def _ginzburg_landau_stability(params):
    _check_known(params, {"gamma"})
    (g,) = _require(params, "gamma")

    def v(t, x):
        return (-2.5 + g) * x - 0.25 * x**3

    def b(t, x, stats):
        return stats.mean - g * x

    def sigma(t, x, stats):
        return x[..., None]

    if g == 0:
        L_b, L_bhat = 0.0, 1.0
    else:
        L_b, L_bhat = 2 * g * g, 2.0
    return ModelSpec(
        name="GinzburgLandauStability",
        dim=1,
        noise_dim=1,
        v=v,
        b=b,
        sigma=sigma,
        constants=ModelConstants(L_v=-2.5 + g, L_b=L_b, L_bhat=L_bhat, L_sigma=1.0, q=2),
        solver_hint=SolverHint.COMPONENTWISE_CUBIC,
        implicit_coeffs=lambda stats: (np.array([-2.5 + g]), np.array([-0.25])),
        stat_descriptor=("mean",),
        params=params,
    )


def _ornstein_uhlenbeck(params):
    _check_known(params, {"rho", "lam", "nu"})
    rho, lam, nu = _require(params, "rho", "lam", "nu")

    def v(t, x):
        return rho * x

    def b(t, x, stats):
        return np.broadcast_to(lam * stats.mean, np.shape(x)).copy()

    def sigma(t, x, stats):
        return np.full(np.shape(x) + (1,), nu)

    return ModelSpec(
        name="OrnsteinUhlenbeckMV",
        dim=1,
        noise_dim=1,
        v=v,
        b=b,
        sigma=sigma,
        constants=ModelConstants(L_v=rho, L_bhat=lam * lam, q=1),
        solver_hint=SolverHint.LINEAR,
        implicit_coeffs=lambda stats: (np.array([rho]), np.zeros(1)),
        stat_descriptor=("mean",),
        params=params,
    )


def _polynomial_drift(params):
    _check_known(params, {"gamma"})
    (g,) = _require(params, "gamma")

    def v(t, x, stats):
        return g * x - x * stats.second_moment_by_coord

    def b(t, x, stats):
        return np.broadcast_to(stats.mean, np.shape(x)).copy()

    def sigma(t, x, stats):
        return x[..., None]

    def coeffs(stats):
        return np.array([g]) - stats.second_moment_by_coord, np.zeros(1)

    return ModelSpec(
        name="PolynomialDrift",
        dim=1,
        noise_dim=1,
        v=v,
        b=b,
        sigma=sigma,
        # one-sided constant holds for any frozen measure since m2 >= 0
        constants=ModelConstants(L_v=g, L_bhat=1.0, L_sigma=1.0, q=1),
        solver_hint=SolverHint.LINEAR,
        implicit_coeffs=coeffs,
        stat_descriptor=("mean", "second_moment"),
        frozen_measure=True,
        params=params,
    )


def _cucker_smale(params):
    _check_known(params, {"lam", "sigma"})
    lam, s = _require(params, "lam", "sigma")
    if s < 0:
        raise ModelError("sigma must be >= 0")

    def v(t, x):
        out = np.zeros(np.shape(x))
        out[..., 0] = -x[..., 0] ** 3
        return out

    def b(t, x, stats):
        out = np.empty(np.shape(x))
        out[..., 0] = lam * (stats.mean[..., 0] - x[..., 0])
        out[..., 1] = x[..., 0]
        return out

    def sigma(t, x, stats):
        out = np.zeros(np.shape(x) + (1,))
        out[..., 0, 0] = s * (stats.mean[..., 0] - x[..., 0])
        return out

    return ModelSpec(
        name="CuckerSmale",
        dim=2,
        noise_dim=1,
        v=v,
        b=b,
        sigma=sigma,
        constants=ModelConstants(
            L_v=0.0,
            L_b=2 * lam * lam + 1,
            L_bhat=2 * lam * lam,
            L_sigma=2 * s * s,
            L_sigmahat=2 * s * s,
            q=2,
        ),
        solver_hint=SolverHint.COMPONENTWISE_CUBIC,
        implicit_coeffs=lambda stats: (np.zeros(2), np.array([-1.0, 0.0])),
        stat_descriptor=("mean",),
        params=params,
    )


_FHN_PARAMS = (
    "I", "J", "V_rev", "V_T", "T_max", "a", "b", "c", "a_r", "a_d",
    "lam", "Gamma", "Lambda", "sigma_ext", "sigma_J",
)


def _fitzhugh_nagumo(params):
    _check_known(params, set(_FHN_PARAMS))
    (I, J, V_rev, V_T, T_max, a, bb, c, a_r, a_d, lam, Gamma, Lambda, s_ext, s_J) = _require(
        params, *_FHN_PARAMS
    )

    def rate(x1, x3):
        return a_r * T_max * (1 - x3) / (1 + np.exp(-lam * (x1 - V_T)))

    def v(t, x):
        out = np.zeros(np.shape(x))
        out[..., 0] = -(x[..., 0] ** 3) / 3
        return out

    def b(t, x, stats):
        x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
        m3 = stats.mean[..., 2]
        out = np.empty(np.shape(x))
        out[..., 0] = x1 - x2 + I - J * (x1 - V_rev) * m3
        out[..., 1] = c * (x1 + a - bb * x2)
        with np.errstate(over="ignore"):
            out[..., 2] = rate(x1, x3) - a_d * x3
        return out

    def sigma(t, x, stats):
        x1, x3 = x[..., 0], x[..., 2]
        m3 = stats.mean[..., 2]
        out = np.zeros(np.shape(x) + (3,))
        out[..., 0, 0] = s_ext
        out[..., 0, 2] = -s_J * (x1 - V_rev) * m3
        inside = (x3 > 0) & (x3 < 1)
        x3c = np.where(inside, x3, 0.5)
        with np.errstate(over="ignore", invalid="ignore"):
            chi = np.sqrt(np.maximum(rate(x1, x3c) + a_d * x3c, 0.0))
            bump = Gamma * np.exp(-Lambda / (1 - (2 * x3c - 1) ** 2))
        out[..., 2, 1] = np.where(inside, chi * bump, 0.0)
        return out

    inf = math.inf
    return ModelSpec(
        name="FitzHughNagumo",
        dim=3,
        noise_dim=3,
        v=v,
        b=b,
        sigma=sigma,
        # b and sigma are not globally Lipschitz (x1 times a marginal mean)
        constants=ModelConstants(L_v=0.0, L_b=inf, L_bhat=inf, L_sigma=inf, L_sigmahat=inf, q=2),
        solver_hint=SolverHint.COMPONENTWISE_CUBIC,
        implicit_coeffs=lambda stats: (np.zeros(3), np.array([-1.0 / 3.0, 0.0, 0.0])),
        stat_descriptor=("mean",),
        params=params,
    )


BUILTIN_MODELS: dict[str, Callable[[Mapping[str, Any]], ModelSpec]] = {
    "GinzburgLandau": _ginzburg_landau,
    "FitzHughNagumo": _fitzhugh_nagumo,
    "PolynomialDrift": _polynomial_drift,
    "OrnsteinUhlenbeckMV": _ornstein_uhlenbeck,
    "GinzburgLandauStability": _ginzburg_landau_stability,
    "CuckerSmale": _cucker_smale,
}


def make_builtin(name: str, params: Mapping[str, Any] | None = None) -> ModelSpec:
    """Build one of the benchmark models by name.

    Parameter names: GinzburgLandau ``sigma, c``; GinzburgLandauStability
    ``gamma``; OrnsteinUhlenbeckMV ``rho, lam, nu``; PolynomialDrift ``gamma``;
    CuckerSmale ``lam, sigma``; FitzHughNagumo ``I, J, V_rev, V_T, T_max, a, b,
    c, a_r, a_d, lam, Gamma, Lambda, sigma_ext, sigma_J``.  All are required.
    """
    try:
        factory = BUILTIN_MODELS[name]
    except KeyError:
        raise ModelError(f"unknown model {name!r}; choose from {sorted(BUILTIN_MODELS)}") from None
    return factory(dict(params or {}))
