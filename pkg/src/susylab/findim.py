"""Finite-dimensional pullback measures, degrees and phases.

For a proper map ``f: R^n -> R^n`` the signed density
``(2 pi)^{-n/2} exp(-|f|^2/2) det(grad f)`` integrates to the degree of
``f``, and summing a test function over the local inverses of a standard
Gaussian sample gives the unsigned pullback measure.  Everything here works
on small ``n`` (the quadrature side needs ``n <= 2``) and is vectorised over
batches of points with shape ``(..., n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .gaussian import McEstimate, _block_sums, _combine, block_generator

__all__ = [
    "SmoothMap",
    "Preimage",
    "DegenerateRoot",
    "InsufficientDecay",
    "identity_map",
    "complex_poly_map",
    "cubic1d_map",
    "REGISTRY",
    "get_map",
    "pullback_density",
    "degree_quadrature",
    "preimages",
    "degree_zero_count",
    "pushforward_expectation",
    "phase_relation_check",
    "phase_relation_holds",
]

DEGENERATE_TOL = 1e-10
RESIDUAL_TOL = 1e-10
QUADRATURE_TOL = 1e-6

STREAM_PUSHFORWARD = 11
STREAM_STARTS = 12


class DegenerateRoot(ArithmeticError):
    """A preimage where the Jacobian determinant vanishes."""


class InsufficientDecay(ValueError):
    """The quadrature box does not contain the bulk of the density."""


@dataclass(frozen=True)
class SmoothMap:
    """A map ``R^n -> R^n`` with its Jacobian, both vectorised over ``(..., n)``.

    The Jacobian is checked against central differences at construction.
    """

    name: str
    dim: int
    eval: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    jacobian: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    box: float = 10.0

    def __post_init__(self):
        rng = np.random.default_rng(12345)
        x = rng.uniform(-2.0, 2.0, size=(10, self.dim))
        h = 1e-6
        J = self.jacobian(x)
        fd = np.empty_like(J)
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = h
            fd[..., :, j] = (self.eval(x + e) - self.eval(x - e)) / (2 * h)
        scale = np.maximum(np.abs(J).max(axis=(-2, -1)), 1.0)
        err = np.abs(J - fd).max(axis=(-2, -1)) / scale
        if np.any(err > 1e-5):
            raise ValueError(f"{self.name}: jacobian disagrees with finite differences ({err.max():.2e})")


def identity_map(dim: int = 2) -> SmoothMap:
    eye = np.eye(dim)
    return SmoothMap(
        f"identity{dim}",
        dim,
        lambda x: np.array(x, dtype=float),
        lambda x: np.broadcast_to(eye, np.shape(x)[:-1] + (dim, dim)).copy(),
    )


def complex_poly_map(name: str, coeffs, conjugate: bool = False) -> SmoothMap:
    """Realified ``z -> p(z)`` (or ``conj(p(z))``) on ``R^2``; ``coeffs`` ascending."""
    p = np.polynomial.Polynomial(np.asarray(coeffs, dtype=complex))
    dp = p.deriv()
    sgn = -1.0 if conjugate else 1.0

    def ev(x):
        w = p(x[..., 0] + 1j * x[..., 1])
        return np.stack([w.real, sgn * w.imag], axis=-1)

    def jac(x):
        # Cauchy-Riemann: [[a, -b], [b, a]] for p'(z) = a + i b
        d = dp(x[..., 0] + 1j * x[..., 1])
        a, b = d.real, d.imag
        return np.stack([np.stack([a, -b], -1), np.stack([sgn * b, sgn * a], -1)], -2)

    return SmoothMap(name, 2, ev, jac)


def cubic1d_map() -> SmoothMap:
    return SmoothMap(
        "cubic1d",
        1,
        lambda x: x**3 - x,
        lambda x: (3 * x**2 - 1)[..., None],
    )


REGISTRY: dict[str, Callable[[], SmoothMap]] = {
    "identity": lambda: identity_map(2),
    "zsq": lambda: complex_poly_map("zsq", [0, 0, 1]),
    "zcube": lambda: complex_poly_map("zcube", [0, 0, 0, 1]),
    "zbar": lambda: complex_poly_map("zbar", [0, 1], conjugate=True),
    "zsq_m1": lambda: complex_poly_map("zsq_m1", [-1, 0, 1]),
    "cubic1d": cubic1d_map,
}


def get_map(name: str) -> SmoothMap:
    try:
        return REGISTRY[name]()
    except KeyError:
        raise KeyError(f"unknown map {name!r}; known: {sorted(REGISTRY)}") from None


def pullback_density(m: SmoothMap, x, y=None) -> np.ndarray | float:
    """Signed density ``(2 pi)^{-n/2} exp(-|f(x) - y|^2 / 2) det grad f(x)``."""
    x = np.asarray(x, dtype=float)
    fx = m.eval(x)
    if y is not None:
        fx = fx - np.asarray(y, dtype=float)
    dens = (2 * np.pi) ** (-m.dim / 2) * np.exp(-0.5 * np.sum(fx**2, axis=-1))
    out = dens * np.linalg.det(m.jacobian(x))
    return float(out) if np.ndim(out) == 0 else out


def _grid(dim: int, radius: float, points: int):
    ax = np.linspace(-radius, radius, points)
    mesh = np.meshgrid(*([ax] * dim), indexing="ij")
    return np.stack(mesh, axis=-1), (ax[1] - ax[0]) ** dim


def degree_quadrature(
    m: SmoothMap,
    radius: float = 8.0,
    points: int = 801,
    g: Callable | None = None,
    y=None,
) -> float:
    """Tensor-grid quadrature of ``g`` times the signed pullback density.

    With ``g = None`` this is the degree of the map.
    """
    if m.dim > 2:
        raise ValueError("quadrature is limited to dim <= 2")
    X, vol = _grid(m.dim, radius, points)
    dens = pullback_density(m, X, y)
    boundary = np.zeros(dens.shape, dtype=bool)
    for ax in range(m.dim):
        idx = [slice(None)] * m.dim
        for end in (0, -1):
            idx[ax] = end
            boundary[tuple(idx)] = True
    if np.abs(dens[boundary]).max() > 1e-12:
        raise InsufficientDecay(f"{m.name}: density {np.abs(dens[boundary]).max():.1e} at |x| = {radius}")
    if g is not None:
        dens = dens * g(X)
    # uniform weights: the integrand is negligible on the boundary
    return float(np.sum(dens) * vol)


@dataclass(frozen=True)
class Preimage:
    x: np.ndarray
    det: float

    @property
    def sign(self) -> int:
        if abs(self.det) <= DEGENERATE_TOL:
            return 0
        return 1 if self.det > 0 else -1

    @property
    def degenerate(self) -> bool:
        return abs(self.det) <= DEGENERATE_TOL


def _newton(m: SmoothMap, x0: np.ndarray, y: np.ndarray, max_iter: int = 100):
    """Undamped Newton on ``f(x) = y`` for a batch of starts ``(..., n)``.

    Iterates until the step stalls so that double roots are driven close
    enough to show a vanishing determinant.
    """
    shape = x0.shape
    x = x0.reshape(-1, shape[-1]).copy()
    y = y.reshape(-1, shape[-1])
    active = np.ones(x.shape[0], dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        xa = x[active]
        r = m.eval(xa) - y[active]
        J = m.jacobian(xa)
        det = np.linalg.det(J)
        ok = np.abs(det) > 1e-300
        step = np.zeros_like(xa)
        if ok.any():
            step[ok] = np.linalg.solve(J[ok], r[ok][..., None])[..., 0]
        xa = xa - step
        x[active] = xa
        size = np.linalg.norm(step, axis=-1)
        done = (size <= 1e-15 * (1 + np.linalg.norm(xa, axis=-1))) | ~ok | ~np.isfinite(size)
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    with np.errstate(invalid="ignore", over="ignore"):
        res = np.linalg.norm(m.eval(x) - y, axis=-1)
    conv = np.isfinite(res) & (res <= RESIDUAL_TOL)
    return x.reshape(shape), conv.reshape(shape[:-1])


def _dedup(points: np.ndarray, tol: float) -> list[np.ndarray]:
    kept: list[np.ndarray] = []
    for p in points:
        if all(np.linalg.norm(p - q) > tol for q in kept):
            kept.append(p)
    return kept


def preimages(
    m: SmoothMap,
    y,
    n_starts: int = 200,
    dedup_tol: float = 1e-6,
    rng: np.random.Generator | None = None,
) -> list[Preimage]:
    """All preimages of ``y`` found by multistart Newton in the map's box.

    Degenerate roots are returned with ``sign == 0``; starts that fail to
    converge are simply discarded.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x0 = rng.uniform(-m.box, m.box, size=(n_starts, m.dim))
    x, conv = _newton(m, x0, np.broadcast_to(y, x0.shape).copy())
    roots = _dedup(x[conv], dedup_tol)
    return [Preimage(r, float(np.linalg.det(m.jacobian(r)))) for r in roots]


def degree_zero_count(m: SmoothMap, y_regular, **kw) -> int:
    """Signed count of preimages of a regular value."""
    pre = preimages(m, y_regular, **kw)
    if any(p.degenerate for p in pre):
        raise DegenerateRoot(f"{m.name}: {np.asarray(y_regular)} is not a regular value")
    return sum(p.sign for p in pre)


def _pushforward_block(m, g, weight_sign, y, n_starts, dedup_tol, rng):
    n = y.shape[0]
    x0 = rng.uniform(-m.box, m.box, size=(n, n_starts, m.dim))
    yy = np.broadcast_to(y[:, None, :], x0.shape).copy()
    x, conv = _newton(m, x0, yy)
    out = np.zeros(n, dtype=complex)
    for i in range(n):
        roots = _dedup(x[i][conv[i]], dedup_tol)
        if not roots:
            continue
        R = np.array(roots)
        det = np.linalg.det(m.jacobian(R))
        keep = np.abs(det) > DEGENERATE_TOL
        vals = np.asarray(g(R[keep]), dtype=complex)
        if weight_sign:
            vals = vals * np.sign(det[keep])
        out[i] = np.sum(vals)
    return out


def pushforward_expectation(
    m: SmoothMap,
    g: Callable | None = None,
    n_samples: int = 2000,
    seed: int = 0,
    n_starts: int = 200,
    dedup_tol: float = 1e-6,
    block_size: int = 500,
    weight_sign: bool = False,
) -> McEstimate:
    """Monte Carlo ``E_y sum_{x in f^{-1}(y)} g(x)`` for ``y`` standard Gaussian.

    With ``weight_sign`` each preimage is weighted by the sign of its
    Jacobian determinant.
    """
    if g is None:
        g = lambda x: np.ones(x.shape[:-1])  # noqa: E731
    parts = []
    for b, start in enumerate(range(0, n_samples, block_size)):
        size = min(block_size, n_samples - start)
        rng = block_generator(seed, STREAM_PUSHFORWARD, b)
        y = rng.standard_normal((size, m.dim))
        vals = _pushforward_block(m, g, weight_sign, y, n_starts, dedup_tol, rng)
        parts.append(_block_sums(vals))
    return _combine(parts)


def phase_relation_check(
    m: SmoothMap,
    g: Callable | None = None,
    n_samples: int = 2000,
    seed: int = 0,
    radius: float = 8.0,
    points: int = 801,
    **kw,
) -> tuple[float, McEstimate]:
    """Signed-density quadrature of ``g`` against the pullback measure of ``g * sign det``."""
    lhs = degree_quadrature(m, radius, points, g=g)
    rhs = pushforward_expectation(m, g, n_samples, seed, weight_sign=True, **kw)
    return lhs, rhs


def phase_relation_holds(lhs: float, rhs: McEstimate, k: float = 3.0) -> bool:
    # the quadrature carries its own (tiny) error; the MC side can have zero variance
    return rhs.within(lhs, k=k, floor=QUADRATURE_TOL)


def gaussian_ball_mass(radius: float = 1.0) -> float:
    """Standard 2D Gaussian mass of a centred disc."""
    return 1.0 - math.exp(-0.5 * radius**2)
