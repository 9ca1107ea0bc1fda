"""Wess-Zumino-Landau-Ginzburg map on truncated torus fields.

``F(phi) = (1 - Delta)^s (d phi + conj(P'(phi)))`` with ``d`` the
holomorphic derivative.  Because of the conjugation ``F`` is only
real-linear in its derivative, so derivatives, ``K`` operators and
determinants live on the realified space of dimension ``2M``.

Two derivative variants are available:

``frechet``
    the true derivative ``delta -> (1-Delta)^s (d delta + conj(P''(phi)) conj(delta))``;
``literal``
    ``delta -> (1-Delta)^s (d delta + conj(P''(phi)) delta)``, which drops the
    conjugation of the argument.

Pulled-back samples are produced by solving ``F(phi) = eta`` for white-noise
``eta`` with multistart damped Newton.  Branch completeness is heuristic.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.linalg.lapack import dgesv as _dgesv
from numpy.polynomial import polynomial as npoly

from . import detkit
from .gaussian import GaussianSpec, McEstimate, block_generator, noise_block
from .spectral import (
    SpectralField,
    conjugate_field,
    del_,
    del_multiplier,
    laplacian_multiplier,
    laplacian_power,
    polynomial_coefficients,
    realify,
)

__all__ = [
    "WzlgModel",
    "SingularBasePoint",
    "VARIANTS",
    "apply_F",
    "derivative_operator",
    "k_operator",
    "psi_phase",
    "NewtonReport",
    "Branch",
    "solve_branches",
    "pullback_sample",
    "PullbackRun",
    "run_pullback",
    "estimate_mass",
    "estimate_phase_integral",
]

log = logging.getLogger(__name__)

VARIANTS = ("frechet", "literal")

STREAM_ETA = 21
STREAM_STARTS = 22

RESIDUAL_TOL = 1e-9
DEDUP_TOL = 1e-6
MAX_ITER = 60
MAX_HALVINGS = 40
# a Newton iterate this close to a known branch is attributed to it
JOIN_TOL = 1e-4
STALL_WINDOW = 6


class SingularBasePoint(ArithmeticError):
    """The derivative at the base point is not safely invertible."""


@dataclass(frozen=True)
class WzlgModel:
    """``P`` (ascending coefficients), smoothing ``s``, scale ``t``, truncation ``N``, base ``y``."""

    poly: tuple
    s: float = 2.0
    t: float = 1.0
    N: int = 6
    base: complex | None = None
    dP: tuple = field(init=False, repr=False)
    d2P: tuple = field(init=False, repr=False)

    def __post_init__(self):
        p = np.trim_zeros(np.asarray(self.poly, dtype=complex), "b")
        if p.size < 3:
            raise ValueError("P must have degree >= 2")
        if not np.all(np.isfinite(p)):
            raise ValueError("polynomial coefficients must be finite")
        if not self.s > 0 or not self.t > 0:
            raise ValueError("need s > 0 and t > 0")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be an integer >= 1")
        dP = npoly.polyder(p)
        d2P = npoly.polyder(dP)
        base = self.base
        if base is None:
            base = _default_base(dP, d2P)
        base = complex(base)
        if abs(npoly.polyval(base, d2P)) <= 1e-8:
            raise ValueError(f"P''(base) vanishes at base = {base}")
        h = 1e-6
        fd = (npoly.polyval(base + h, dP) - npoly.polyval(base - h, dP)) / (2 * h)
        if abs(fd - npoly.polyval(base, d2P)) > 1e-5 * max(1.0, abs(fd)):
            raise ValueError("derivative polynomials inconsistent with P")
        object.__setattr__(self, "poly", tuple(p))
        object.__setattr__(self, "dP", tuple(dP))
        object.__setattr__(self, "d2P", tuple(d2P))
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "N", int(self.N))

    @property
    def degree(self) -> int:
        return len(self.poly) - 1

    @property
    def dim(self) -> int:
        return 2 * (2 * self.N + 1) ** 2

    def constant(self, value: complex) -> SpectralField:
        return SpectralField.constant(self.N, value)

    def critical_points(self) -> np.ndarray:
        """Roots of ``P'``, Newton-polished."""
        return _polished_roots(self.dP, self.d2P)


def _polished_roots(dP, d2P) -> np.ndarray:
    roots = np.asarray(npoly.polyroots(np.asarray(dP)), dtype=complex)
    for i, r in enumerate(roots):
        for _ in range(3):
            d = npoly.polyval(r, d2P)
            if d == 0:
                break
            nxt = r - npoly.polyval(r, dP) / d
            if not abs(npoly.polyval(nxt, dP)) < abs(npoly.polyval(r, dP)):
                break
            r = nxt
        roots[i] = r
    return roots


def _default_base(dP, d2P) -> complex:
    # a transversal zero of P' if there is one, else any point with P'' != 0
    for r in _polished_roots(dP, d2P):
        if abs(npoly.polyval(r, d2P)) > 1e-8:
            return complex(r)
    for y in (0.0, 1.0, 1j):
        if abs(npoly.polyval(y, d2P)) > 1e-8:
            return complex(y)
    raise ValueError("no admissible base point")


def apply_F(model: WzlgModel, phi: SpectralField) -> SpectralField:
    """``(1-Delta)^s (d phi + conj(P'(phi)))``."""
    if phi.N != model.N:
        raise ValueError("field truncation differs from the model")
    inner = del_(phi) + conjugate_field(SpectralField(phi.N, polynomial_coefficients(phi.coeffs, model.dP, phi.N)))
    return laplacian_power(inner, model.s)


class _Kernel:
    """Per-model precomputed pieces for fast realified Jacobians."""

    def __init__(self, model: WzlgModel):
        N = model.N
        self.N = N
        self.M = (2 * N + 1) ** 2
        self.mult = del_multiplier(N)
        self.lap_s = laplacian_multiplier(N, model.s)
        self.D_del = realify(np.diag(self.mult.ravel()))
        self.dP = np.asarray(model.dP)
        self.d2P = np.asarray(model.d2P)
        self.band2 = max(len(model.d2P) - 1, 0) * N
        k = np.arange(-N, N + 1)
        k1, k2 = np.meshgrid(k, k, indexing="ij")
        k1, k2 = k1.ravel(), k2.ravel()
        d1 = k1[:, None] - k1[None, :]
        d2 = k2[:, None] - k2[None, :]
        B = self.band2
        # gather indices into the (2B+1)^2 coefficients of conj(P''(phi)), reversed
        self.inside = (np.abs(d1) <= B) & (np.abs(d2) <= B)
        self.gather = np.where(self.inside, (B - d1) * (2 * B + 1) + (B - d2), 0)
        self._base = {}

    def G(self, c: np.ndarray) -> np.ndarray:
        """``d phi + conj(P'(phi))`` on a (batch of) coefficient arrays."""
        p = polynomial_coefficients(c, self.dP, self.N)
        return self.mult * c + np.conj(p[..., ::-1, ::-1])

    def conv(self, c: np.ndarray) -> np.ndarray:
        """Complex matrix of ``delta -> proj(conj(P''(phi)) delta)``; exact, full band."""
        q = np.conj(polynomial_coefficients(c, self.d2P, self.band2)).ravel()
        return np.where(self.inside, q[self.gather], 0)

    def jacobian(self, c: np.ndarray, variant: str) -> np.ndarray:
        """Realified derivative of ``G`` (without the ``(1-Delta)^s`` factor)."""
        C = self.conv(c)
        M = self.M
        R = self.D_del.copy()
        if variant == "frechet":
            # realify(C) @ conjugation: the column reversal implements k -> -k
            Cr = C[:, ::-1]
            R[:M, :M] += Cr.real
            R[:M, M:] += Cr.imag
            R[M:, :M] += Cr.imag
            R[M:, M:] -= Cr.real
        elif variant == "literal":
            R[:M, :M] += C.real
            R[:M, M:] -= C.imag
            R[M:, :M] += C.imag
            R[M:, M:] += C.real
        else:
            raise ValueError(f"unknown variant {variant!r}; use one of {VARIANTS}")
        return R

    def base_factor(self, base: complex, variant: str):
        """LU factors and Jacobian at the constant base, cached per variant."""
        hit = self._base.get(variant)
        if hit is None:
            side = 2 * self.N + 1
            c0 = np.zeros((side, side), dtype=complex)
            c0[self.N, self.N] = base
            A0 = self.jacobian(c0, variant)
            cond = np.linalg.cond(A0)
            if cond <= 1e12:
                hit = (A0, scipy.linalg.lu_factor(A0))
            else:
                hit = SingularBasePoint(f"{variant} derivative at base {base} has condition number {cond:.2e}")
            self._base[variant] = hit
        if isinstance(hit, SingularBasePoint):
            raise hit
        return hit


_KERNELS: dict[WzlgModel, _Kernel] = {}


def _kernel(model: WzlgModel) -> _Kernel:
    k = _KERNELS.get(model)
    if k is None:
        if len(_KERNELS) > 16:
            _KERNELS.clear()
        k = _KERNELS[model] = _Kernel(model)
    return k


def derivative_operator(model: WzlgModel, phi: SpectralField, variant: str = "frechet") -> np.ndarray:
    """Realified matrix of the derivative of ``F`` at ``phi``."""
    ker = _kernel(model)
    A = ker.jacobian(phi.coeffs, variant)
    w = np.tile(ker.lap_s.ravel(), 2)
    return w[:, None] * A


def k_operator(model: WzlgModel, phi: SpectralField, variant: str = "frechet") -> np.ndarray:
    """``D_{phi0}^{-1} D_phi - 1`` at the constant base ``phi0 = model.base``."""
    ker = _kernel(model)
    # the (1-Delta)^s factors cancel; leave them out to keep conditioning tight
    A0, lu = ker.base_factor(model.base, variant)
    A = ker.jacobian(phi.coeffs, variant)
    return scipy.linalg.lu_solve(lu, A - A0)


def psi_phase(model: WzlgModel, phi: SpectralField, variant: str = "frechet", route: str = "eig") -> complex:
    """Phase of ``det_3(1 + K(phi0, phi))``; ``+-1`` for the frechet variant."""
    K = k_operator(model, phi, variant)
    if route == "eig":
        ph, _ = detkit.slogdet_k(K, 3)
    elif route == "rk":
        ph, _ = detkit.slogdet_k_via_rk(K, 3)
    else:
        raise ValueError("route must be 'eig' or 'rk'")
    if variant == "frechet":
        # real determinant: drop the rounding left in the imaginary part
        return complex(np.sign(ph.real))
    return ph


@dataclass
class NewtonReport:
    converged: bool
    iterations: int
    residual: float
    reason: str = ""


@dataclass(frozen=True)
class Branch:
    phi: SpectralField
    report: NewtonReport


def _newton_solve(ker: _Kernel, c0: np.ndarray, rhs: np.ndarray, lap_s: np.ndarray, known):
    """Damped Newton for ``G(c) = rhs``; returns ``(c, report, joined_index)``.

    Steps are halved (at most ``MAX_HALVINGS`` times) until the residual
    decreases.  A start whose residual falls by less than 1% over
    ``STALL_WINDOW`` iterations is abandoned as stagnating.
    """
    c = c0.copy()
    r = ker.G(c) - rhs
    nr = np.linalg.norm(r)
    M = ker.M
    history = [nr]
    lams = 0.5 ** np.arange(1, MAX_HALVINGS + 1)
    res_F = float(np.linalg.norm(lap_s * r))
    if res_F <= RESIDUAL_TOL:
        return c, NewtonReport(True, 0, res_F), None
    for it in range(1, MAX_ITER + 1):
        J = ker.jacobian(c, "frechet")
        rr = np.concatenate([r.real.ravel(), r.imag.ravel()])
        _, _, dx, info = _dgesv(J, rr)
        if info != 0:
            return c, NewtonReport(False, it, float(nr), "singular jacobian"), None
        step = -(dx[:M] + 1j * dx[M:]).reshape(c.shape)
        cn = c + step
        rn = ker.G(cn) - rhs
        nrn = np.linalg.norm(rn)
        if not nrn < nr:
            # all halvings in one batched evaluation; take the longest that descends
            cand = c + lams[:, None, None] * step
            rc = ker.G(cand) - rhs
            norms = np.linalg.norm(rc.reshape(len(lams), -1), axis=1)
            ok = np.flatnonzero(norms < nr)
            if ok.size == 0:
                return c, NewtonReport(False, it, float(nr), "line search stalled"), None
            j = ok[0]
            cn, rn, nrn = cand[j], rc[j], norms[j]
        c, r, nr = cn, rn, nrn
        history.append(nr)
        res_F = float(np.linalg.norm(lap_s * r))
        if res_F <= RESIDUAL_TOL:
            return c, NewtonReport(True, it, res_F), None
        for j, b in enumerate(known):
            if np.linalg.norm(c - b) <= JOIN_TOL * (1 + np.linalg.norm(b)):
                return c, NewtonReport(True, it, res_F, "joined known branch"), j
        if not np.isfinite(nr):
            break
        if it >= STALL_WINDOW and nr > 0.99 * history[-1 - STALL_WINDOW]:
            return c, NewtonReport(False, it, float(nr), "stagnation"), None
    return c, NewtonReport(False, MAX_ITER, float(nr), "iteration limit"), None


def _start_fields(model: WzlgModel, rng: np.random.Generator, n_starts: int) -> list[np.ndarray]:
    N = model.N
    starts = []
    for y in model.critical_points():
        starts.append(model.constant(complex(y)).coeffs.copy())
    # smooth random perturbations of the base of unit size
    decay = laplacian_multiplier(N, -1.0)
    side = 2 * N + 1
    for _ in range(n_starts):
        z = rng.standard_normal((side, side, 2))
        c = (z[..., 0] + 1j * z[..., 1]) * decay
        c[N, N] += model.base
        starts.append(c)
    return starts


def solve_branches(
    model: WzlgModel, eta: SpectralField, rng: np.random.Generator, n_starts: int = 64
) -> tuple[list[Branch], list[NewtonReport]]:
    """All solutions of ``F(phi) = eta`` reached from the start set, deduplicated."""
    ker = _kernel(model)
    lap_s = ker.lap_s
    rhs = eta.coeffs / lap_s
    found: list[np.ndarray] = []
    found_reports: list[NewtonReport] = []
    reports = []
    for c0 in _start_fields(model, rng, n_starts):
        c, rep, joined = _newton_solve(ker, c0, rhs, lap_s, found)
        reports.append(rep)
        if not rep.converged or joined is not None:
            continue
        if any(np.linalg.norm(c - b) <= DEDUP_TOL * (1 + np.linalg.norm(b)) for b in found):
            continue
        found.append(c)
        found_reports.append(rep)
    return [Branch(SpectralField(model.N, c), rep) for c, rep in zip(found, found_reports)], reports


def _eta_block(model: WzlgModel, seed: int, index: int) -> SpectralField:
    rng = block_generator(seed, STREAM_ETA, index)
    c = noise_block(GaussianSpec(model.N, model.t), rng, 1)[0, 0]
    return SpectralField(model.N, c)


def pullback_sample(
    model: WzlgModel, rng: np.random.Generator, n_starts: int = 64
) -> list[tuple[SpectralField, NewtonReport]]:
    """Draw one white-noise ``eta`` and return every branch of ``F^{-1}(eta)`` found."""
    c = noise_block(GaussianSpec(model.N, model.t), rng, 1)[0, 0]
    branches, _ = solve_branches(model, SpectralField(model.N, c), rng, n_starts)
    return [(b.phi, b.report) for b in branches]


@dataclass
class PullbackRun:
    """Per-draw branch counts and phase sums of a pullback experiment.

    ``undefined[v]`` holds the reason when variant ``v`` has no phase at all
    (its derivative at the base point is singular); its sums are then empty.
    """

    model: WzlgModel
    seed: int
    n_starts: int
    variants: tuple
    counts: list = field(default_factory=list)
    phase_sums: dict = field(default_factory=dict)
    singular_branches: dict = field(default_factory=dict)
    undefined: dict = field(default_factory=dict)
    newton_failures: int = 0
    newton_starts: int = 0
    min_distance_to_constants: list = field(default_factory=list)

    @property
    def mass(self) -> McEstimate:
        return McEstimate.from_samples(self.counts)

    def phase_integral(self, variant: str = "frechet") -> McEstimate:
        if variant in self.undefined:
            raise SingularBasePoint(self.undefined[variant])
        return McEstimate.from_samples(self.phase_sums[variant])

    @property
    def branch_histogram(self) -> dict[int, int]:
        return dict(sorted(Counter(self.counts).items()))


def _phase_sum(model: WzlgModel, branches, variant: str):
    """``(sum of phases, singular count)``; ``(None, reason)`` if the base is singular."""
    try:
        _kernel(model).base_factor(model.base, variant)
    except SingularBasePoint as exc:
        return None, str(exc)
    total = 0j
    singular = 0
    for b in branches:
        try:
            total += psi_phase(model, b.phi, variant)
        except detkit.NearZeroDeterminant:
            singular += 1
    return total, singular


def _draw(model: WzlgModel, seed: int, index: int, n_starts: int, variants):
    eta = _eta_block(model, seed, index)
    rng = block_generator(seed, STREAM_STARTS, index)
    branches, reports = solve_branches(model, eta, rng, n_starts)
    phases = {v: _phase_sum(model, branches, v) for v in variants}
    consts = [model.constant(complex(y)).coeffs for y in model.critical_points()]
    dist = min(
        (np.linalg.norm(b.phi.coeffs - c) for b in branches for c in consts),
        default=math.inf,
    )
    failures = sum(not r.converged for r in reports)
    return len(branches), phases, failures, len(reports), dist


def run_pullback(
    model: WzlgModel,
    n_samples: int,
    seed: int = 0,
    n_starts: int = 64,
    variants=("frechet",),
    workers: int = 1,
) -> PullbackRun:
    """Solve for branches over ``n_samples`` independent ``eta`` draws.

    Draw ``i`` depends only on ``(seed, i)``, so the result does not depend
    on ``workers``.
    """
    variants = tuple(variants)
    run = PullbackRun(
        model,
        seed,
        n_starts,
        variants,
        phase_sums={v: [] for v in variants},
        singular_branches={v: 0 for v in variants},
    )
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            results = list(
                pool.map(
                    _draw,
                    [model] * n_samples,
                    [seed] * n_samples,
                    range(n_samples),
                    [n_starts] * n_samples,
                    [variants] * n_samples,
                )
            )
    else:
        results = (_draw(model, seed, i, n_starts, variants) for i in range(n_samples))
    for i, (count, phases, failures, starts, dist) in enumerate(results):
        run.counts.append(count)
        for v, (total, extra) in phases.items():
            if total is None:
                run.undefined[v] = extra
            else:
                run.phase_sums[v].append(total)
                run.singular_branches[v] += extra
        run.newton_failures += failures
        run.newton_starts += starts
        run.min_distance_to_constants.append(dist)
        log.debug("draw %d: %d branches", i, count)
    return run


def estimate_mass(model: WzlgModel, n_samples: int, seed: int = 0, n_starts: int = 64) -> McEstimate:
    """Mean number of branches per ``eta`` draw."""
    return run_pullback(model, n_samples, seed, n_starts, variants=()).mass


def estimate_phase_integral(
    model: WzlgModel, n_samples: int, seed: int = 0, variant: str = "frechet", n_starts: int = 64
) -> McEstimate:
    """Mean over ``eta`` of the sum of ``psi_phase`` over branches."""
    return run_pullback(model, n_samples, seed, n_starts, variants=(variant,)).phase_integral(variant)

