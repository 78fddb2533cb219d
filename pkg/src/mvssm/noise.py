"""Counter-addressed Brownian increments and initial-condition sampling.

Every normal variate is a pure function of ``(seed, particle, fine step,
component)``: the tuple is packed into a Philox4x32-10 counter/key pair and
the block output is mapped through the inverse normal CDF.  Nothing is
stored, so any subset of the increment table can be regenerated in any order
and from any number of threads with identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

__all__ = [
    "philox4x32",
    "counter_normals",
    "NoiseTable",
    "InitialSampler",
    "sample_initial",
    "GridError",
]

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

# top byte of the fourth counter word selects the stream family
_DOMAIN_BROWNIAN = 0
_DOMAIN_INITIAL = 1


class GridError(ValueError):
    """A time is not an integer multiple of the fine step."""


def philox4x32(c0, c1, c2, c3, k0, k1, rounds: int = 10):
    """Vectorised Philox4x32 block function.

    All arguments are broadcastable integer arrays holding 32-bit values.
    Returns the four 32-bit output words as ``uint64`` arrays.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK32 for c in (c0, c1, c2, c3))
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    k0 = np.asarray(k0, dtype=np.uint64) & _MASK32
    k1 = np.asarray(k1, dtype=np.uint64) & _MASK32
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & _MASK32
            k1 = (k1 + _W1) & _MASK32
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _SHIFT32, p0 & _MASK32
        hi1, lo1 = p1 >> _SHIFT32, p1 & _MASK32
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


def _uniform53(hi, lo):
    # 53 bits -> open interval (0, 1); never exactly 0 or 1
    bits = (hi << np.uint64(21)) | (lo >> np.uint64(11))
    return (bits.astype(np.float64) + 0.5) * 2.0**-53


def counter_normals(seed: int, domain: int, step, particle, component):
    """Standard normals addressed by ``(seed, domain, step, particle, component)``.

    ``step`` may use the full 64-bit range, ``particle`` 32 bits and
    ``component`` 24 bits.  Arguments broadcast against each other.
    """
    step = np.asarray(step, dtype=np.uint64)
    component = np.asarray(component, dtype=np.uint64)
    c3 = (np.uint64(domain) << np.uint64(24)) | (component >> np.uint64(1))
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    w0, w1, w2, w3 = philox4x32(
        step & _MASK32, step >> _SHIFT32, particle, c3, seed & 0xFFFFFFFF, seed >> 32
    )
    odd = (component & np.uint64(1)).astype(bool)
    u = np.where(odd, _uniform53(w2, w3), _uniform53(w0, w1))
    return ndtri(u)


def _as_index(t: float, h_fine: float, what: str) -> int:
    k = round(t / h_fine)
    if abs(k * h_fine - t) > 1e-9 * max(abs(t), h_fine):
        raise GridError(f"{what}={t!r} is not a multiple of h_fine={h_fine!r}")
    return int(k)


@dataclass(frozen=True)
class NoiseTable:
    """Brownian increments on a fine grid of width ``h_fine`` over ``[0, horizon]``.

    ``increment(i, k, j)`` is ``sqrt(h_fine)`` times the counter normal for
    particle ``i``, fine step ``k`` and component ``j``.  Coarse increments are
    left-fold sums of fine increments in ascending step order, so a coarse
    step of ``m`` fine steps reproduces exactly what a run at ``h_fine`` would
    accumulate over the same ``m`` steps.
    """

    seed: int
    n_particles: int
    noise_dim: int
    h_fine: float
    horizon: float
    n_fine: int = field(init=False)

    def __post_init__(self):
        if self.n_particles < 1 or self.noise_dim < 1:
            raise ValueError("n_particles and noise_dim must be >= 1")
        if not self.h_fine > 0:
            raise ValueError("h_fine must be positive")
        object.__setattr__(self, "n_fine", _as_index(self.horizon, self.h_fine, "horizon"))

    def index(self, t: float) -> int:
        """Fine-step index of time ``t``; raises :class:`GridError` if off-grid."""
        return _as_index(t, self.h_fine, "t")

    def steps_per(self, h: float) -> int:
        m = _as_index(h, self.h_fine, "h")
        if m < 1:
            raise GridError(f"h={h!r} is smaller than h_fine={self.h_fine!r}")
        return m

    def fine_block(self, k_start: int, k_stop: int, particles=None) -> np.ndarray:
        """Fine increments for steps ``[k_start, k_stop)``, shape ``(P, m, l)``."""
        if not 0 <= k_start <= k_stop <= self.n_fine:
            raise GridError(f"fine range [{k_start}, {k_stop}) outside [0, {self.n_fine}]")
        if particles is None:
            particles = np.arange(self.n_particles, dtype=np.uint64)
        p = np.asarray(particles, dtype=np.uint64)[:, None, None]
        k = np.arange(k_start, k_stop, dtype=np.uint64)[None, :, None]
        j = np.arange(self.noise_dim, dtype=np.uint64)[None, None, :]
        z = counter_normals(self.seed, _DOMAIN_BROWNIAN, k, p, j)
        return math.sqrt(self.h_fine) * z

    def block_increments(self, k_start: int, k_stop: int, particles=None) -> np.ndarray:
        """Summed increments over fine steps ``[k_start, k_stop)``, shape ``(P, l)``."""
        fine = self.fine_block(k_start, k_stop, particles)
        return left_fold(fine)

    def coarse_increment(self, i: int, t_a: float, t_b: float) -> np.ndarray:
        """Brownian increment of particle ``i`` over ``[t_a, t_b)``."""
        ka, kb = self.index(t_a), self.index(t_b)
        if not ka < kb:
            raise GridError(f"empty or reversed interval [{t_a}, {t_b})")
        return self.block_increments(ka, kb, [i])[0]


def left_fold(fine: np.ndarray) -> np.ndarray:
    """Sum axis 1 of a ``(P, m, l)`` block strictly left to right."""
    acc = np.zeros((fine.shape[0], fine.shape[2]))
    for k in range(fine.shape[1]):
        acc = acc + fine[:, k, :]
    return acc


@dataclass(frozen=True)
class InitialSampler:
    """Law of the initial condition.

    ``kind="point"`` puts every particle at ``mean``; ``kind="normal"`` draws
    independent normal coordinates with the given means and variances.
    ``offset`` separates independent families drawn under the same seed.
    """

    mean: tuple[float, ...]
    var: tuple[float, ...] | None = None
    kind: str = "point"
    offset: int = 0

    def __post_init__(self):
        if self.kind not in ("point", "normal"):
            raise ValueError(f"unknown initial law {self.kind!r}")
        if self.kind == "normal":
            if self.var is None or len(self.var) != len(self.mean):
                raise ValueError("normal initial law needs one variance per coordinate")
            if any(v < 0 for v in self.var):
                raise ValueError("variances must be non-negative")

    @property
    def dim(self) -> int:
        return len(self.mean)


def sample_initial(sampler: InitialSampler, n: int, seed: int) -> np.ndarray:
    """Draw an ``(n, d)`` initial cloud, reproducible given ``seed``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    mean = np.asarray(sampler.mean, dtype=float)
    if sampler.kind == "point":
        return np.tile(mean, (n, 1))
    z = counter_normals(
        seed,
        _DOMAIN_INITIAL,
        np.uint64(sampler.offset),
        np.arange(n, dtype=np.uint64)[:, None],
        np.arange(mean.size, dtype=np.uint64)[None, :],
    )
    return mean + np.sqrt(np.asarray(sampler.var, dtype=float)) * z
