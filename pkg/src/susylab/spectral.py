"""Truncated Fourier fields on the flat torus (R/2piZ)^2.

A field is stored by its Fourier-series coefficients, ``f(x) = sum_k c_k
exp(i k.x)`` over the square ``|k1|, |k2| <= N``.  The pairing used
throughout is ``<f, g> = sum_k conj(f_k) g_k``, i.e. the L2 pairing for the
normalised area measure, under which the modes are orthonormal.

Real-linear operators (anything involving complex conjugation) are
represented as dense real matrices acting on the stacked coordinates
``(Re c, Im c)``, each block in row-major ``(k1, k2)`` order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as npoly

__all__ = [
    "SpectralField",
    "wavenumbers",
    "laplacian_power",
    "laplacian_multiplier",
    "del_",
    "delbar",
    "del_multiplier",
    "conjugate_field",
    "apply_polynomial",
    "polynomial_coefficients",
    "l2_inner",
    "sobolev_norm",
    "multiplication_operator",
    "convolution_matrix",
    "realify",
    "conjugation_matrix",
    "to_real",
    "from_real",
]


def wavenumbers(N: int) -> tuple[np.ndarray, np.ndarray]:
    """Return the ``(k1, k2)`` grids of shape ``(2N+1, 2N+1)``."""
    k = np.arange(-N, N + 1)
    return np.meshgrid(k, k, indexing="ij")


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Complex field on T^2 truncated to ``|k_i| <= N``.

    ``coeffs[k1 + N, k2 + N]`` is the coefficient of ``exp(i(k1 x + k2 y))``.
    """

    N: int
    coeffs: np.ndarray

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"truncation must be an integer >= 1, got {self.N}")
        c = np.array(self.coeffs, dtype=complex)
        shape = (2 * self.N + 1, 2 * self.N + 1)
        if c.size != shape[0] * shape[1]:
            raise ValueError(f"expected {shape[0] * shape[1]} coefficients, got {c.size}")
        c = c.reshape(shape)
        if not np.all(np.isfinite(c)):
            raise ValueError("field coefficients must be finite")
        c.flags.writeable = False
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "coeffs", c)

    @property
    def n_modes(self) -> int:
        return (2 * self.N + 1) ** 2

    @classmethod
    def zeros(cls, N: int) -> SpectralField:
        return cls(N, np.zeros((2 * N + 1, 2 * N + 1), dtype=complex))

    @classmethod
    def constant(cls, N: int, value: complex) -> SpectralField:
        c = np.zeros((2 * N + 1, 2 * N + 1), dtype=complex)
        c[N, N] = value
        return cls(N, c)

    @classmethod
    def mode(cls, N: int, k: tuple[int, int], value: complex = 1.0) -> SpectralField:
        if abs(k[0]) > N or abs(k[1]) > N:
            raise ValueError(f"mode {k} outside truncation N={N}")
        c = np.zeros((2 * N + 1, 2 * N + 1), dtype=complex)
        c[k[0] + N, k[1] + N] = value
        return cls(N, c)

    def __getitem__(self, k: tuple[int, int]) -> complex:
        return complex(self.coeffs[k[0] + self.N, k[1] + self.N])

    def __add__(self, other: SpectralField) -> SpectralField:
        _check_same(self, other)
        return SpectralField(self.N, self.coeffs + other.coeffs)

    def __sub__(self, other: SpectralField) -> SpectralField:
        _check_same(self, other)
        return SpectralField(self.N, self.coeffs - other.coeffs)

    def __mul__(self, scalar: complex) -> SpectralField:
        return SpectralField(self.N, self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> SpectralField:
        return SpectralField(self.N, -self.coeffs)

    def allclose(self, other: SpectralField, rtol=1e-12, atol=1e-12) -> bool:
        return self.N == other.N and np.allclose(self.coeffs, other.coeffs, rtol=rtol, atol=atol)

    def evaluate(self, points) -> np.ndarray:
        """Point values at ``points`` of shape ``(..., 2)``."""
        pts = np.asarray(points, dtype=float)
        k1, k2 = wavenumbers(self.N)
        phase = np.exp(1j * (pts[..., 0, None, None] * k1 + pts[..., 1, None, None] * k2))
        return np.sum(phase * self.coeffs, axis=(-2, -1))

    def to_json(self) -> str:
        flat = self.coeffs.ravel()
        return json.dumps({"N": self.N, "coeffs": [[z.real, z.imag] for z in flat]})

    @classmethod
    def from_json(cls, text: str) -> SpectralField:
        data = json.loads(text)
        pairs = np.asarray(data["coeffs"], dtype=float)
        if pairs.ndim != 2 or pairs.shape[1] != 2:
            raise ValueError("coeffs must be a list of [re, im] pairs")
        return cls(int(data["N"]), pairs[:, 0] + 1j * pairs[:, 1])


def _check_same(f: SpectralField, g: SpectralField) -> None:
    if f.N != g.N:
        raise ValueError(f"truncation mismatch: {f.N} vs {g.N}")


def laplacian_multiplier(N: int, p: float) -> np.ndarray:
    k1, k2 = wavenumbers(N)
    return (1.0 + k1**2 + k2**2) ** float(p)


def laplacian_power(f: SpectralField, p: float) -> SpectralField:
    """Apply ``(1 - Delta)^p``."""
    return SpectralField(f.N, f.coeffs * laplacian_multiplier(f.N, p))


def del_multiplier(N: int) -> np.ndarray:
    # d = (d_x - i d_y)/2 acting on exp(i k.x)
    k1, k2 = wavenumbers(N)
    return 0.5j * (k1 - 1j * k2)


def del_(f: SpectralField) -> SpectralField:
    """Holomorphic derivative ``d = (d_x - i d_y)/2``."""
    return SpectralField(f.N, f.coeffs * del_multiplier(f.N))


def delbar(f: SpectralField) -> SpectralField:
    """Antiholomorphic derivative ``(d_x + i d_y)/2``."""
    k1, k2 = wavenumbers(f.N)
    return SpectralField(f.N, f.coeffs * (0.5j * (k1 + 1j * k2)))


def conjugate_field(f: SpectralField) -> SpectralField:
    """Pointwise complex conjugate: ``c_k -> conj(c_{-k})``."""
    return SpectralField(f.N, np.conj(f.coeffs[::-1, ::-1]))


def _check_poly(poly) -> np.ndarray:
    p = np.atleast_1d(np.asarray(poly, dtype=complex))
    if p.size == 0:
        raise ValueError("polynomial needs at least one coefficient")
    if not np.all(np.isfinite(p)):
        raise ValueError("polynomial coefficients must be finite")
    return p


def _grid_size(N: int, d: int, band: int) -> int:
    return max(d * (2 * N + 1), d * N + band + 1)


def polynomial_coefficients(coeffs: np.ndarray, poly, band: int) -> np.ndarray:
    """Exact Fourier coefficients ``|k_i| <= band`` of ``poly(f)``.

    ``coeffs`` has shape ``(..., 2N+1, 2N+1)``; leading axes are a batch.
    ``poly`` lists ascending coefficients.  The collocation grid is large
    enough that no alias of the degree-``d`` product reaches the returned
    band.
    """
    p = _check_poly(poly)
    coeffs = np.asarray(coeffs)
    N = (coeffs.shape[-1] - 1) // 2
    if len(p) == 1 or (coeffs.ndim == 2 and np.count_nonzero(coeffs) == (coeffs[N, N] != 0)):
        # constant result: evaluate directly so it carries no transform rounding
        out = np.zeros(coeffs.shape[:-2] + (2 * band + 1, 2 * band + 1), dtype=complex)
        out[..., band, band] = npoly.polyval(coeffs[..., N, N].astype(complex), p) if len(p) > 1 else p[0]
        return out
    G = _grid_size(N, max(len(p) - 1, 1), band)
    grid = np.zeros(coeffs.shape[:-2] + (G, G), dtype=complex)
    # modes -N..N sit at the two ends of each FFT axis
    grid[..., : N + 1, : N + 1] = coeffs[..., N:, N:]
    grid[..., : N + 1, G - N :] = coeffs[..., N:, :N]
    grid[..., G - N :, : N + 1] = coeffs[..., :N, N:]
    grid[..., G - N :, G - N :] = coeffs[..., :N, :N]
    values = np.fft.ifft2(grid) * (G * G)
    out = np.fft.fft2(npoly.polyval(values, p)) / (G * G)
    idx = np.r_[G - band : G, 0 : band + 1] if band > 0 else np.array([0])
    return out[..., idx[:, None], idx[None, :]]


def apply_polynomial(f: SpectralField, poly) -> SpectralField:
    """Alias-free projection of the pointwise polynomial ``poly(f)``."""
    return SpectralField(f.N, polynomial_coefficients(f.coeffs, poly, f.N))


def l2_inner(f: SpectralField, g: SpectralField) -> complex:
    _check_same(f, g)
    return complex(np.vdot(f.coeffs, g.coeffs))


def sobolev_norm(f: SpectralField, lam: float) -> float:
    w = laplacian_multiplier(f.N, lam)
    return float(np.sqrt(np.sum(w * np.abs(f.coeffs) ** 2)))


def to_real(f: SpectralField) -> np.ndarray:
    c = f.coeffs.ravel()
    return np.concatenate([c.real, c.imag])


def from_real(x: np.ndarray, N: int) -> SpectralField:
    M = (2 * N + 1) ** 2
    x = np.asarray(x, dtype=float)
    if x.shape != (2 * M,):
        raise ValueError(f"expected a real vector of length {2 * M}, got shape {x.shape}")
    return SpectralField(N, x[:M] + 1j * x[M:])


def realify(A: np.ndarray) -> np.ndarray:
    """Real ``2M x 2M`` matrix of the complex-linear map ``A``."""
    A = np.asarray(A, dtype=complex)
    return np.block([[A.real, -A.imag], [A.imag, A.real]])


def conjugation_matrix(N: int) -> np.ndarray:
    """Realified matrix of :func:`conjugate_field`."""
    M = (2 * N + 1) ** 2
    P = np.eye(M)[::-1]  # row-major (k1, k2) reversal is k -> -k
    Z = np.zeros((M, M))
    return np.block([[P, Z], [Z, -P]])


def convolution_matrix(psi: np.ndarray, N: int) -> np.ndarray:
    """Complex ``M x M`` matrix of ``delta -> proj_N(psi * delta)``.

    ``psi`` is a coefficient array of any odd side ``2B+1``.
    """
    psi = np.asarray(psi, dtype=complex)
    B = (psi.shape[0] - 1) // 2
    k1, k2 = wavenumbers(N)
    k1, k2 = k1.ravel(), k2.ravel()
    d1 = k1[:, None] - k1[None, :]
    d2 = k2[:, None] - k2[None, :]
    inside = (np.abs(d1) <= B) & (np.abs(d2) <= B)
    C = np.zeros(d1.shape, dtype=complex)
    C[inside] = psi[d1[inside] + B, d2[inside] + B]
    return C


def multiplication_operator(psi: SpectralField, conjugate_argument: bool = False) -> np.ndarray:
    """Realified matrix of ``delta -> psi*delta`` or ``delta -> psi*conj(delta)``.

    The product is projected back onto ``|k_i| <= N`` exactly.
    """
    R = realify(convolution_matrix(psi.coeffs, psi.N))
    if conjugate_argument:
        R = R @ conjugation_matrix(psi.N)
    return R
