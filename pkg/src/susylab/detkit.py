"""Schatten norms, Fredholm determinants and regularised determinants.

Matrices are plain square numpy arrays, real or complex.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

__all__ = [
    "NearZeroDeterminant",
    "schatten_norm",
    "schatten_sum",
    "fredholm_det",
    "fredholm_det_series",
    "r_k",
    "det_k",
    "det_k_via_rk",
    "det_k_trace_formula",
    "slogdet_k",
    "slogdet_k_via_rk",
    "phase",
    "default_phase_tol",
]


class NearZeroDeterminant(ArithmeticError):
    """Determinant too close to zero for its phase to be meaningful."""


def _square(K) -> np.ndarray:
    K = np.asarray(K)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {K.shape}")
    if not np.all(np.isfinite(K)):
        raise ValueError("matrix entries must be finite")
    return K


def schatten_sum(K, k: int) -> float:
    """``tr (K*K)^{k/2}``, the unrooted Schatten functional."""
    if k < 1:
        raise ValueError("Schatten index must be >= 1")
    sv = np.linalg.svd(_square(K), compute_uv=False)
    return float(np.sum(sv**k))


def schatten_norm(K, k: int) -> float:
    """Schatten ``k``-norm ``(sum sigma_i^k)^{1/k}``."""
    return schatten_sum(K, k) ** (1.0 / k)


def fredholm_det(K) -> complex:
    """``det(1 + K)`` as the product of ``1 + lambda_i``."""
    lam = np.linalg.eigvals(_square(K))
    return complex(np.prod(1.0 + lam))


def fredholm_det_series(K) -> complex:
    """``sum_n tr Lambda^n K`` through Newton's identities.

    The elementary symmetric polynomials of the eigenvalues are generated
    from the power traces ``tr K^j``; no eigen-decomposition is used.
    """
    K = _square(K).astype(complex)
    n = K.shape[0]
    p = np.empty(n + 1, dtype=complex)
    P = np.eye(n, dtype=complex)
    for j in range(1, n + 1):
        P = P @ K
        p[j] = np.trace(P)
    e = np.zeros(n + 1, dtype=complex)
    e[0] = 1.0
    for m in range(1, n + 1):
        e[m] = sum((-1) ** (j - 1) * e[m - j] * p[j] for j in range(1, m + 1)) / m
    return complex(np.sum(e))


def _log_correction(K: np.ndarray, k: int) -> np.ndarray:
    # sum_{n=1}^{k-1} (-K)^n / n
    S = np.zeros_like(K, dtype=np.result_type(K, float))
    P = np.eye(K.shape[0], dtype=S.dtype)
    for n in range(1, k):
        P = P @ (-K)
        S = S + P / n
    return S


def r_k(K, k: int) -> np.ndarray:
    """``(1 + K) exp(sum_{n<k} (-K)^n / n) - 1``."""
    if k < 1:
        raise ValueError("regularisation order must be >= 1")
    K = _square(K)
    one = np.eye(K.shape[0])
    return (one + K) @ scipy.linalg.expm(_log_correction(K, k)) - one


def det_k(K, k: int) -> complex:
    """Regularised determinant ``det_k(1 + K)`` from the eigenvalues of ``K``."""
    if k < 1:
        raise ValueError("regularisation order must be >= 1")
    lam = np.linalg.eigvals(_square(K)).astype(complex)
    expo = np.zeros_like(lam)
    for n in range(1, k):
        expo += (-lam) ** n / n
    return complex(np.prod((1.0 + lam) * np.exp(expo)))


def det_k_via_rk(K, k: int) -> complex:
    return fredholm_det(r_k(K, k))


def slogdet_k(K, k: int, tol: float | None = None) -> tuple[complex, float]:
    """``(phase, log|det_k(1 + K)|)`` accumulated in log space.

    ``det_k`` of a large operator easily under- or overflows through its
    exponential factor even far from the singular set, so the product is
    never formed.  Raises :class:`NearZeroDeterminant` when some
    ``|1 + lambda_i| <= tol``, i.e. when ``1 + K`` is numerically singular.
    """
    if k < 1:
        raise ValueError("regularisation order must be >= 1")
    K = _square(K)
    tol = default_phase_tol(K.shape[0]) if tol is None else tol
    lam = np.linalg.eigvals(K).astype(complex)
    one = 1.0 + lam
    if np.min(np.abs(one), initial=np.inf) <= tol:
        raise NearZeroDeterminant(f"min |1 + lambda| = {np.min(np.abs(one)):.3e} <= tol = {tol:.3e}")
    expo = np.zeros_like(lam)
    for n in range(1, k):
        expo += (-lam) ** n / n
    logabs = float(np.sum(np.log(np.abs(one))) + np.sum(expo.real))
    angle = float(np.sum(np.angle(one)) + np.sum(expo.imag))
    return complex(np.exp(1j * angle)), logabs


def slogdet_k_via_rk(K, k: int, tol: float | None = None) -> tuple[complex, float]:
    """Same as :func:`slogdet_k` but through ``det(1 + R_k(K))``."""
    K = _square(K)
    tol = default_phase_tol(K.shape[0]) if tol is None else tol
    sign, logabs = np.linalg.slogdet(np.eye(K.shape[0]) + r_k(K, k))
    if not np.isfinite(logabs) or logabs < np.log(tol) * K.shape[0]:
        raise NearZeroDeterminant("1 + R_k(K) is numerically singular")
    return complex(sign), float(logabs)


def det_k_trace_formula(K, k: int) -> complex:
    """``det(1 + K) exp(sum_{n<k} (-1)^n tr K^n / n)``, valid in finite dimension."""
    K = _square(K)
    expo = 0j
    P = np.eye(K.shape[0])
    for n in range(1, k):
        P = P @ K
        expo += (-1) ** n * np.trace(P) / n
    return complex(np.linalg.det(np.eye(K.shape[0]) + K) * np.exp(expo))


def default_phase_tol(dim: int) -> float:
    return 1e-10 * max(int(dim), 1)


def phase(z: complex, tol: float = 1e-10) -> complex:
    """``z / |z|``; raises :class:`NearZeroDeterminant` if ``|z| <= tol``."""
    r = abs(z)
    if not r > tol:
        raise NearZeroDeterminant(f"|det| = {r:.3e} <= tol = {tol:.3e}")
    return complex(z) / r
