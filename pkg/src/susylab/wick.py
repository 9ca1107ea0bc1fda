"""Wick combinatorics and the Frenkel-Zhu correlation identity on the torus.

Two independent evaluations of the Gaussian correlator

    E[ conj(f_{v,z}) f_{v',w} H_{x_1,z_1} ... H_{x_n,z_n} ]

are provided.  :func:`frenkel_zhu_rhs` sums closed-form contributions over
partitions of ``{1..n}`` into cycles and one chain.
:func:`gaussian_moment_oracle` expands every factor in explicit
(Lie-basis x Fourier-mode) coordinates and sums complete Isserlis pairings
by brute force, handling the centring of each ``H`` by inclusion-exclusion.

Conventions on the torus surrogate:

* ``B = (1 - Delta)^{-s} A`` with ``A`` white noise valued in ``gl(n)`` or
  ``sl(n)``, expanded in a basis orthonormal for ``(a, b) -> tr(a* b)``;
* ``H_{x,p} = tr(B(p)* x B(p)) - E[...]`` and
  ``f_{v,p} = xi * tr(B(p)* phi)``, i.e. linear in ``v = phi xi``;
* contraction kernel ``C(p, q) = E[B^a(p) conj(B^a(q))]`` for any single
  basis component, which is ``2 (2 pi)^2 / t^2`` times :func:`torus_kernel`.
"""

from __future__ import annotations

import itertools
import math
import string
from dataclasses import dataclass

import numpy as np

from .gaussian import GaussianSpec, McEstimate, _block_sums, _combine, block_generator, noise_block
from .spectral import SpectralField, laplacian_multiplier, wavenumbers

__all__ = [
    "PairingPartition",
    "CyclesChainPartition",
    "KernelTable",
    "LieBasisSpec",
    "VData",
    "enumerate_pairings",
    "wick_expectation",
    "wick_moment_mc",
    "measured_covariance",
    "enumerate_cycles_chain",
    "torus_kernel",
    "covariance_kernel",
    "kernel_table",
    "frenkel_zhu_rhs",
    "gaussian_moment_oracle",
    "wick_contraction_count",
    "fz_monte_carlo",
]

STREAM_WICK = 31
STREAM_FZ = 32
TERM_CAP = 10**7


@dataclass(frozen=True)
class PairingPartition:
    """Bijection ``a -> k + targets[a-1]`` from ``{1..k}`` onto ``{k+1..2k}``."""

    k: int
    targets: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.targets) != list(range(1, self.k + 1)):
            raise ValueError("targets must be a permutation of 1..k")

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        return tuple((a + 1, self.k + b) for a, b in enumerate(self.targets))


def enumerate_pairings(k: int) -> list[PairingPartition]:
    if not 0 <= k <= 8:
        raise ValueError(f"k must lie in 0..8, got {k}")
    return [PairingPartition(k, p) for p in itertools.permutations(range(1, k + 1))]


def wick_expectation(holo, anti, cov) -> complex:
    """``E[prod_i L_{holo_i} prod_j conj(L_{anti_j})]`` for a centred complex Gaussian.

    ``cov(a, b)`` must return ``E[L_a conj(L_b)]``.
    """
    if len(holo) != len(anti):
        raise ValueError("need as many holomorphic as antiholomorphic factors")
    k = len(holo)
    C = np.array([[cov(a, b) for b in anti] for a in holo], dtype=complex).reshape(k, k)
    total = 0j
    for q in enumerate_pairings(k):
        total += np.prod([C[a - 1, b - k - 1] for a, b in q.pairs])
    return complex(total)


def measured_covariance(spec: GaussianSpec):
    """``(phi, psi) -> E[L_phi conj(L_psi)]`` under ``spec`` with ``L_phi = <phi, .>``.

    Equals ``2 <phi, psi> / t^2`` at ``s = 0``.
    """
    var = 2.0 * spec.mode_std**2

    def cov(phi: SpectralField, psi: SpectralField) -> complex:
        return complex(np.sum(np.conj(phi.coeffs) * psi.coeffs * var))

    return cov


def wick_moment_mc(spec: GaussianSpec, holo, anti, n: int, seed: int = 0) -> McEstimate:
    """Monte Carlo estimate of the moment computed by :func:`wick_expectation`."""
    H = np.array([f.coeffs for f in holo]).reshape(len(holo), -1)
    A = np.array([f.coeffs for f in anti]).reshape(len(anti), -1)
    parts = []
    block = 8192
    for b, start in enumerate(range(0, n, block)):
        size = min(block, n - start)
        sig = noise_block(spec, block_generator(seed, STREAM_WICK, b), size)[:, 0].reshape(size, -1)
        Lh = sig @ np.conj(H).T
        La = sig @ np.conj(A).T
        vals = np.prod(Lh, axis=1) * np.prod(np.conj(La), axis=1)
        parts.append(_block_sums(vals))
    return _combine(parts)


@dataclass(frozen=True)
class CyclesChainPartition:
    """Cycles (rotation-normalised, smallest element first) plus one ordered chain."""

    cycles: tuple[tuple[int, ...], ...]
    chain: tuple[int, ...]

    def elements(self) -> list[int]:
        return sorted([a for c in self.cycles for a in c] + list(self.chain))


def _cycles_of(perm: dict[int, int]) -> tuple[tuple[int, ...], ...]:
    seen = set()
    out = []
    for start in sorted(perm):
        if start in seen:
            continue
        cyc = [start]
        seen.add(start)
        nxt = perm[start]
        while nxt != start:
            cyc.append(nxt)
            seen.add(nxt)
            nxt = perm[nxt]
        out.append(tuple(cyc))
    return tuple(out)


def enumerate_cycles_chain(n: int, min_cycle_len: int = 2) -> list[CyclesChainPartition]:
    """All partitions of ``{1..n}`` into cycles and exactly one (possibly empty) chain.

    Cycles are taken up to rotation only; a cycle and its reverse are
    different configurations.
    """
    if not 0 <= n <= 7:
        raise ValueError(f"n must lie in 0..7, got {n}")
    if min_cycle_len not in (1, 2):
        raise ValueError("min_cycle_len must be 1 or 2")
    A = range(1, n + 1)
    out = []
    for m in range(n + 1):
        for chain_set in itertools.combinations(A, m):
            rest = [a for a in A if a not in chain_set]
            cycle_sets = []
            for image in itertools.permutations(rest):
                cycles = _cycles_of(dict(zip(rest, image)))
                if all(len(c) >= min_cycle_len for c in cycles):
                    cycle_sets.append(cycles)
            for chain in itertools.permutations(chain_set):
                for cycles in cycle_sets:
                    out.append(CyclesChainPartition(cycles, chain))
    return out


@dataclass(frozen=True)
class LieBasisSpec:
    n: int
    algebra: str = "gl"

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("matrix size must be >= 2")
        if self.algebra not in ("gl", "sl"):
            raise ValueError("algebra must be 'gl' or 'sl'")

    @property
    def level(self) -> int:
        """Factor each closed cycle picks up from the free matrix index."""
        return self.n

    def basis(self) -> np.ndarray:
        """Basis orthonormal for ``tr(a* b)``, shape ``(dim, n, n)``."""
        n = self.n
        mats = []
        for i in range(n):
            for j in range(n):
                if i != j or self.algebra == "gl":
                    E = np.zeros((n, n), dtype=complex)
                    E[i, j] = 1.0
                    mats.append(E)
        if self.algebra == "sl":
            for m in range(1, n):
                d = np.zeros(n)
                d[:m] = 1.0
                d[m] = -m
                mats.append(np.diag(d / math.sqrt(m * (m + 1))).astype(complex))
        return np.array(mats)


@dataclass(frozen=True)
class VData:
    """Matrix parts ``phi(z), phi'(w)`` and scalar form factors of ``v, v'``."""

    phi_z: np.ndarray
    phi_w: np.ndarray
    xi_z: complex = 1.0
    xi_w: complex = 1.0


@dataclass(frozen=True)
class KernelTable:
    """Contraction kernel on ``points = [z, z_1, ..., z_n, w]``."""

    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if not np.all(np.isfinite(v)):
            raise ValueError("kernel values must be finite")
        if not np.allclose(v, np.conj(v.T), rtol=1e-12, atol=1e-14 * np.abs(v).max(initial=1.0)):
            raise ValueError("kernel must be Hermitian: c(p, q) = conj(c(q, p))")

    @property
    def n(self) -> int:
        return len(self.points) - 2


def torus_kernel(s: float, N: int, z, zp) -> complex:
    """``(2 pi)^{-2} sum_{|k_i|<=N} (1+|k|^2)^{-2s} exp(i k.(z - z'))``."""
    if not s > 0.5:
        raise ValueError("torus kernel needs s > 1/2")
    k1, k2 = wavenumbers(N)
    d = np.asarray(z, dtype=float) - np.asarray(zp, dtype=float)
    w = laplacian_multiplier(N, -2 * s)
    return complex(np.sum(w * np.exp(1j * (k1 * d[0] + k2 * d[1]))) / (2 * np.pi) ** 2)


def covariance_kernel(spec: GaussianSpec, z, zp) -> complex:
    """``E[B(z) conj(B(z'))]`` for one component of ``B`` distributed per ``spec``."""
    return 2.0 * (2 * np.pi) ** 2 / spec.t**2 * torus_kernel(spec.s, spec.N, z, zp)


def kernel_table(spec: GaussianSpec, z, w, zs) -> KernelTable:
    pts = np.array([z, *zs, w], dtype=float).reshape(-1, 2)
    vals = np.array([[covariance_kernel(spec, p, q) for q in pts] for p in pts])
    return KernelTable(pts, vals)


def _check_hermitian(x) -> list[np.ndarray]:
    out = []
    for xi in x:
        xi = np.asarray(xi, dtype=complex)
        if not np.allclose(xi, xi.conj().T, atol=1e-10):
            raise ValueError("insertion matrices must be Hermitian")
        out.append(xi)
    return out


def frenkel_zhu_rhs(x, kernel: KernelTable, vdata: VData, basis: LieBasisSpec, min_cycle_len: int = 2) -> complex:
    """Sum over cycles-and-chain partitions of trace and kernel contractions."""
    x = _check_hermitian(x)
    n = len(x)
    if kernel.n != n:
        raise ValueError(f"kernel covers {kernel.n} insertion points, need {n}")
    C = kernel.values
    z, w = 0, n + 1
    eye = np.eye(basis.n)
    total = 0j
    for alpha in enumerate_cycles_chain(n, min_cycle_len):
        term = complex(vdata.xi_z * vdata.xi_w)
        for cyc in alpha.cycles:
            prod = eye
            kern = 1.0 + 0j
            for p, a in enumerate(cyc):
                prod = prod @ x[a - 1]
                kern *= C[a, cyc[(p + 1) % len(cyc)]]
            term *= basis.level * np.trace(prod) * kern
        prod = vdata.phi_z.conj().T
        kern = 1.0 + 0j
        prev = z
        for b in alpha.chain:
            prod = prod @ x[b - 1]
            kern *= C[prev, b]
            prev = b
        kern *= C[prev, w]
        term *= np.trace(prod @ vdata.phi_w) * kern
        total += term
    return complex(total)


def _coordinates(spec: GaussianSpec, basis: LieBasisSpec, points):
    """Mode weights ``e[p, k] = std_k exp(i k.p)`` and the basis matrices."""
    k1, k2 = wavenumbers(spec.N)
    std = spec.mode_std.ravel()
    P = np.asarray(points, dtype=float).reshape(-1, 2)
    e = std[None, :] * np.exp(1j * (P[:, :1] * k1.ravel()[None, :] + P[:, 1:] * k2.ravel()[None, :]))
    return e, basis.basis()


def _factor_tensors(x, points, vdata, spec, basis):
    z, w, zs = points
    e, T = _coordinates(spec, basis, [z, w, *zs])
    Tstar = np.conj(np.transpose(T, (0, 2, 1)))
    # holomorphic leg of conj(f_{v,z}) = xi_z tr(phi_z* B(z))
    u = vdata.xi_z * np.kron(np.einsum("ij,aji->a", np.conj(vdata.phi_z).T, T), e[0])
    # antiholomorphic leg of f_{v',w} = xi_w tr(B(w)* phi_w)
    v = vdata.xi_w * np.kron(np.einsum("aij,ji->a", Tstar, vdata.phi_w), np.conj(e[1]))
    Q = []
    for i, xi in enumerate(x):
        X = np.einsum("aij,jk,bki->ab", Tstar, xi, T)
        Q.append(np.kron(X, np.outer(np.conj(e[2 + i]), e[2 + i])))
    return u, v, Q


def _full_wick(u, v, Qs, kappa: float) -> complex:
    """``E[L_u conj-leg(v) prod_i (conj(A) Q_i A)]`` over all complete pairings."""
    m = len(Qs)
    letters = string.ascii_letters
    total = 0j
    # holo legs: 0 -> u, 1+i -> column of Q_i; anti legs: 0 -> v, 1+i -> row of Q_i
    for perm in itertools.permutations(range(m + 1)):
        # holo leg h is contracted with anti leg perm[h]; share letter per holo leg
        anti_letter = {perm[h]: letters[h] for h in range(m + 1)}
        subs = [letters[0], anti_letter[0]]
        ops = [u, v]
        for i, Q in enumerate(Qs):
            subs.append(anti_letter[1 + i] + letters[1 + i])
            ops.append(Q)
        total += np.einsum(",".join(subs) + "->", *ops, optimize="greedy")
    return complex(total * kappa ** (m + 1))


def gaussian_moment_oracle(
    x, points, vdata: VData, spec: GaussianSpec, basis: LieBasisSpec, centered: bool = True
) -> complex:
    """Exact Isserlis evaluation of the correlator in explicit coordinates.

    ``points = (z, w, [z_1, ..., z_n])``.  Each centred factor
    ``H_i = Hhat_i - E Hhat_i`` is expanded by inclusion-exclusion, and every
    resulting moment is summed over all complete pairings.
    """
    x = _check_hermitian(x)
    n = len(x)
    if n > 4:
        raise ValueError("oracle limited to n <= 4 insertions")
    if spec.N > 6:
        raise ValueError("oracle limited to N <= 6")
    terms = sum(math.comb(n, j) * math.factorial(j + 1) for j in range(n + 1))
    if terms > TERM_CAP:
        raise ValueError(f"{terms} pairings exceed the cap {TERM_CAP}")
    u, v, Q = _factor_tensors(x, points, vdata, spec, basis)
    kappa = 2.0  # E[zeta conj(zeta)] for zeta = a + i b; scale already in the mode weights
    means = [kappa * np.trace(Qi) for Qi in Q]
    if not centered:
        return _full_wick(u, v, Q, kappa)
    total = 0j
    for mask in itertools.product((0, 1), repeat=n):
        keep = [Q[i] for i in range(n) if mask[i]]
        pref = np.prod([-means[i] for i in range(n) if not mask[i]])
        total += pref * _full_wick(u, v, keep, kappa)
    return complex(total)


def wick_contraction_count(n: int, centered: bool = True) -> int:
    """Number of pairings of the correlator's legs that survive centring."""
    count = 0
    for perm in itertools.permutations(range(n + 1)):
        # holo leg h (0: linear factor, 1+i: H_i) -> anti leg perm[h]
        if centered and any(perm[h] == h for h in range(1, n + 1)):
            continue
        count += 1
    return count


def fz_monte_carlo(
    x, points, vdata: VData, spec: GaussianSpec, basis: LieBasisSpec, n: int, seed: int = 0, block: int = 4096
) -> McEstimate:
    """Monte Carlo estimate of the correlator with exact centring constants."""
    x = _check_hermitian(x)
    z, w, zs = points
    e, T = _coordinates(spec, basis, [z, w, *zs])
    dim = T.shape[0]
    M = e.shape[1]
    means = []
    for i, xi in enumerate(x):
        # E tr(B* x B) = sum_a sum_k 2 |e_k|^2 tr(T_a* x T_a)
        means.append(2.0 * np.sum(np.abs(e[2 + i]) ** 2) * np.einsum("aji,jk,aki->", np.conj(T), xi, T))
    parts = []
    unit = GaussianSpec(spec.N, 1.0, 0.0, dim)
    for b, start in enumerate(range(0, n, block)):
        size = min(block, n - start)
        zeta = noise_block(unit, block_generator(seed, STREAM_FZ, b), size).reshape(size, dim, M)
        amp = np.einsum("sak,pk->spa", zeta, e)  # component amplitudes at each point
        B = np.einsum("spa,aij->spij", amp, T)
        Bs = np.conj(np.transpose(B, (0, 1, 3, 2)))
        val = vdata.xi_z * np.einsum("ij,sji->s", np.conj(vdata.phi_z).T, B[:, 0])
        val = val * vdata.xi_w * np.einsum("sij,ji->s", Bs[:, 1], vdata.phi_w)
        for i, xi in enumerate(x):
            H = np.einsum("sij,jk,ski->s", Bs[:, 2 + i], xi, B[:, 2 + i]) - means[i]
            val = val * H
        parts.append(_block_sums(val))
    return _combine(parts)
