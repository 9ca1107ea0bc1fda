"""White-noise and smoothed Gaussian measures on truncated field spaces.

Convention: at scale ``t`` every Fourier coefficient of a white-noise sample
is ``(a + i b) / t`` with ``a, b`` independent standard normals, so
``E|c_k|^2 = 2/t^2``.  With the pairing ``Re <phi, sigma>`` this gives
``E exp(i Re <phi, sigma>) = exp(-|phi|^2 / (2 t^2))`` exactly; the more
common ``E|c|^2 = 1`` normalisation would be off by a factor of two.

Monte Carlo estimators draw samples in fixed-size blocks.  Block ``b`` of
stream ``tag`` is generated by a Philox generator keyed on
``(seed, tag, b)``, so any partition of the blocks among workers reproduces
the same numbers, and block sums are combined with ``math.fsum``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .spectral import SpectralField, laplacian_multiplier, sobolev_norm

__all__ = [
    "GaussianSpec",
    "McEstimate",
    "BLOCK_SIZE",
    "block_generator",
    "noise_block",
    "sample_white_noise",
    "sample_smoothed",
    "mc_mean",
    "characteristic_functional_mc",
    "characteristic_functional_mc_batch",
    "characteristic_functional_exact",
    "cameron_martin_density",
    "cameron_martin_check",
]

BLOCK_SIZE = 4096

# stream tags keep estimators that share a seed statistically independent
STREAM_CHARFUN = 1
STREAM_CM_SHIFTED = 2
STREAM_CM_WEIGHTED = 3


@dataclass(frozen=True)
class GaussianSpec:
    N: int
    t: float = 1.0
    s: float = 0.0
    rank: int = 1

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be an integer >= 1, got {self.N}")
        if not self.t > 0:
            raise ValueError(f"scale t must be > 0, got {self.t}")
        if not self.s >= 0:
            raise ValueError(f"smoothing exponent s must be >= 0, got {self.s}")
        if int(self.rank) != self.rank or self.rank < 1:
            raise ValueError(f"rank must be an integer >= 1, got {self.rank}")

    @property
    def mode_std(self) -> np.ndarray:
        """Standard deviation of Re and Im of each coefficient."""
        return laplacian_multiplier(self.N, -self.s) / self.t


@dataclass(frozen=True)
class McEstimate:
    mean: complex
    stderr: float
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("an estimate needs at least one sample")
        if self.stderr < 0:
            raise ValueError("stderr must be non-negative")

    def within(self, target: complex, k: float = 3.0, floor: float = 0.0) -> bool:
        return abs(self.mean - target) <= k * self.stderr + floor

    def as_dict(self) -> dict:
        return {
            "mean_re": float(np.real(self.mean)),
            "mean_im": float(np.imag(self.mean)),
            "stderr": float(self.stderr),
            "n": int(self.n),
        }

    @classmethod
    def from_samples(cls, x) -> McEstimate:
        x = np.asarray(x, dtype=complex).ravel()
        return _combine([_block_sums(x)])


def _block_sums(x: np.ndarray) -> tuple[int, complex, float]:
    return x.size, complex(np.sum(x)), float(np.sum(np.abs(x) ** 2))


def _combine(parts) -> McEstimate:
    parts = list(parts)
    n = sum(p[0] for p in parts)
    s_re = math.fsum(p[1].real for p in parts)
    s_im = math.fsum(p[1].imag for p in parts)
    s2 = math.fsum(p[2] for p in parts)
    mean = complex(s_re, s_im) / n
    if n < 2:
        return McEstimate(mean, 0.0, n)
    var = max(s2 - n * abs(mean) ** 2, 0.0) / (n - 1)
    return McEstimate(mean, math.sqrt(var / n), n)


def block_generator(seed: int, tag: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(tag), int(block)))
    return np.random.Generator(np.random.Philox(ss))


def noise_block(spec: GaussianSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    """Coefficient arrays of shape ``(size, rank, 2N+1, 2N+1)`` from ``spec``."""
    side = 2 * spec.N + 1
    z = rng.standard_normal((size, spec.rank, side, side, 2))
    return (z[..., 0] + 1j * z[..., 1]) * spec.mode_std


def sample_white_noise(spec: GaussianSpec, rng: np.random.Generator) -> list[SpectralField]:
    if spec.s != 0:
        raise ValueError("white noise requires s = 0; use sample_smoothed")
    return sample_smoothed(spec, rng)


def sample_smoothed(spec: GaussianSpec, rng: np.random.Generator) -> list[SpectralField]:
    c = noise_block(spec, rng, 1)[0]
    return [SpectralField(spec.N, comp) for comp in c]


def mc_mean(
    spec: GaussianSpec,
    fn: Callable[[np.ndarray], np.ndarray],
    n: int,
    seed: int,
    tag: int,
    block_size: int = BLOCK_SIZE,
) -> McEstimate:
    """Estimate ``E fn(sigma)``; ``fn`` maps a noise block to per-sample values."""
    if n < 2:
        raise ValueError("Monte Carlo estimate needs n >= 2")
    parts = []
    for b, start in enumerate(range(0, n, block_size)):
        size = min(block_size, n - start)
        sigma = noise_block(spec, block_generator(seed, tag, b), size)
        parts.append(_block_sums(np.asarray(fn(sigma), dtype=complex)))
    return _combine(parts)


def _pairing_re(phi: SpectralField, sigma: np.ndarray) -> np.ndarray:
    # Re <phi, sigma> against the first component, vectorised over samples
    return np.real(np.sum(np.conj(phi.coeffs) * sigma[:, 0], axis=(-2, -1)))


def characteristic_functional_mc(
    spec: GaussianSpec, phi: SpectralField, n: int, seed: int = 0
) -> McEstimate:
    """Monte Carlo estimate of ``E exp(i Re <phi, sigma>)``."""
    return characteristic_functional_mc_batch(spec, [phi], n, seed)[0]


def characteristic_functional_mc_batch(
    spec: GaussianSpec, phis, n: int, seed: int = 0, block_size: int = BLOCK_SIZE
) -> list[McEstimate]:
    """One estimate per field in ``phis``, all from a single shared sample stream."""
    if n < 2:
        raise ValueError("Monte Carlo estimate needs n >= 2")
    phis = list(phis)
    if any(phi.N != spec.N for phi in phis):
        raise ValueError("phi must share the truncation N of the GaussianSpec")
    Phi = np.array([phi.coeffs.ravel() for phi in phis]).reshape(len(phis), -1)
    live = np.flatnonzero(np.any(Phi != 0, axis=1))
    parts: list[list] = [[] for _ in phis]
    if live.size:
        for b, start in enumerate(range(0, n, block_size)):
            size = min(block_size, n - start)
            sig = noise_block(spec, block_generator(seed, STREAM_CHARFUN, b), size)[:, 0].reshape(size, -1)
            vals = np.exp(1j * np.real(sig @ np.conj(Phi[live]).T))
            for col, j in enumerate(live):
                parts[j].append(_block_sums(vals[:, col]))
    # phi = 0 gives exp(0) = 1 on every sample
    return [_combine(parts[j]) if parts[j] else McEstimate(1.0 + 0j, 0.0, n) for j in range(len(phis))]


def characteristic_functional_exact(spec: GaussianSpec, phi: SpectralField) -> float:
    std = spec.mode_std
    return float(np.exp(-0.5 * np.sum((std * np.abs(phi.coeffs)) ** 2)))


def cameron_martin_density(spec: GaussianSpec, v: SpectralField, a) -> float | np.ndarray:
    """Density of the law translated by ``v`` against the law of ``spec``.

    ``a`` may be a field or a stack of coefficient arrays ``(..., 2N+1, 2N+1)``.
    """
    if v.N != spec.N:
        raise ValueError("v must share the truncation N of the GaussianSpec")
    coeffs = a.coeffs if isinstance(a, SpectralField) else np.asarray(a)
    w = laplacian_multiplier(spec.N, 2 * spec.s)
    pairing = np.real(np.sum(np.conj(w * v.coeffs) * coeffs, axis=(-2, -1)))
    t2 = spec.t**2
    out = np.exp(t2 * pairing - 0.5 * t2 * sobolev_norm(v, 2 * spec.s) ** 2)
    return float(out) if np.ndim(out) == 0 else out


def cameron_martin_check(
    spec: GaussianSpec, v: SpectralField, phi: SpectralField, n: int, seed: int = 0
) -> tuple[McEstimate, McEstimate]:
    """``E g(sigma + v)`` and ``E g(sigma) * density(v, sigma)`` for ``g = exp(i Re <phi, .>)``.

    The two estimates use independent streams.
    """
    shifted = mc_mean(
        spec,
        lambda sig: np.exp(1j * _pairing_re(phi, sig + v.coeffs[None, None])),
        n,
        seed,
        STREAM_CM_SHIFTED,
    )
    weighted = mc_mean(
        spec,
        lambda sig: np.exp(1j * _pairing_re(phi, sig)) * cameron_martin_density(spec, v, sig[:, 0]),
        n,
        seed,
        STREAM_CM_WEIGHTED,
    )
    return shifted, weighted
