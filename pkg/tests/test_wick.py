import itertools
import math

import numpy as np
import pytest

from conftest import random_coeffs
from susylab.gaussian import GaussianSpec
from susylab.spectral import SpectralField
from susylab.wick import (
    CyclesChainPartition,
    KernelTable,
    LieBasisSpec,
    PairingPartition,
    VData,
    covariance_kernel,
    enumerate_cycles_chain,
    enumerate_pairings,
    frenkel_zhu_rhs,
    fz_monte_carlo,
    gaussian_moment_oracle,
    kernel_table,
    measured_covariance,
    torus_kernel,
    wick_contraction_count,
    wick_expectation,
    wick_moment_mc,
)

TWO_PI = 2 * np.pi


def herm(rng, n):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return (a + a.conj().T) / 2


def cmat(rng, n):
    return rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))


def scenario(rng, n, m):
    x = [herm(rng, m) for _ in range(n)]
    pts = rng.uniform(0, TWO_PI, (n + 2, 2))
    vd = VData(cmat(rng, m), cmat(rng, m), complex(*rng.standard_normal(2)), complex(*rng.standard_normal(2)))
    return x, (pts[0], pts[1], list(pts[2:])), vd


class TestPairings:
    def test_counts(self):
        assert [len(enumerate_pairings(k)) for k in (0, 1, 3)] == [1, 1, 6]
        assert enumerate_pairings(0)[0].pairs == ()

    def test_range(self):
        with pytest.raises(ValueError):
            enumerate_pairings(9)

    def test_bijection_enforced(self):
        with pytest.raises(ValueError):
            PairingPartition(2, (1, 1))
        assert PairingPartition(2, (2, 1)).pairs == ((1, 4), (2, 3))


class TestWickExpectation:
    def test_k1(self):
        assert wick_expectation(["a"], ["b"], lambda a, b: 2.5 + 1j) == 2.5 + 1j

    def test_k2_unit(self):
        assert wick_expectation([0, 1], [0, 1], lambda a, b: 1.0) == 2

    def test_mismatch(self):
        with pytest.raises(ValueError):
            wick_expectation([0], [0, 1], lambda a, b: 1)

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_against_monte_carlo(self, rng, k):
        spec = GaussianSpec(2, 1.0)
        holo = [SpectralField(2, random_coeffs(rng, 2) / 5) for _ in range(k)]
        anti = [SpectralField(2, random_coeffs(rng, 2) / 5) for _ in range(k)]
        exact = wick_expectation(holo, anti, measured_covariance(spec))
        est = wick_moment_mc(spec, holo, anti, 10**6, seed=k)
        assert est.within(exact)


class TestMeasuredCovariance:
    def test_examples(self):
        e = SpectralField.mode(2, (1, 0))
        assert measured_covariance(GaussianSpec(2, 1.0))(e, e) == 2
        assert measured_covariance(GaussianSpec(2, 1.0))(e, SpectralField.mode(2, (0, 1))) == 0
        assert measured_covariance(GaussianSpec(2, 2.0))(e, e) == 0.5

    def test_smoothing(self):
        e = SpectralField.mode(2, (1, 0))
        assert measured_covariance(GaussianSpec(2, 1.0, 1.0))(e, e) == pytest.approx(0.5)

    def test_single_factor_mc(self, rng):
        spec = GaussianSpec(3, 1.5)
        a, b = SpectralField(3, random_coeffs(rng, 3) / 7), SpectralField(3, random_coeffs(rng, 3) / 7)
        assert wick_moment_mc(spec, [a], [b], 200_000, seed=4).within(measured_covariance(spec)(a, b))


class TestCyclesChain:
    def test_small_counts(self):
        assert len(enumerate_cycles_chain(0)) == 1
        (only,) = enumerate_cycles_chain(1)
        assert only == CyclesChainPartition((), (1,))
        two = enumerate_cycles_chain(2)
        assert set(two) == {
            CyclesChainPartition((), (1, 2)),
            CyclesChainPartition((), (2, 1)),
            CyclesChainPartition(((1, 2),), ()),
        }

    def test_partition_property(self):
        for n in range(5):
            for a in enumerate_cycles_chain(n, 1):
                assert a.elements() == list(range(1, n + 1))
                assert all(c[0] == min(c) for c in a.cycles)

    def test_reflections_distinct(self):
        cyc = {a.cycles for a in enumerate_cycles_chain(3) if not a.chain}
        assert {((1, 2, 3),), ((1, 3, 2),)} == cyc

    def test_counts_match_contraction_patterns(self):
        for n in range(6):
            assert len(enumerate_cycles_chain(n, 2)) == wick_contraction_count(n, centered=True)
            assert len(enumerate_cycles_chain(n, 1)) == wick_contraction_count(n, centered=False) == math.factorial(n + 1)

    def test_range(self):
        with pytest.raises(ValueError):
            enumerate_cycles_chain(8)
        with pytest.raises(ValueError):
            enumerate_cycles_chain(2, 3)


class TestKernel:
    def test_diagonal_positive(self):
        v = torus_kernel(2.0, 4, [0.3, 0.1], [0.3, 0.1])
        assert v.imag == 0 and v.real > 0

    def test_hermitian(self, rng):
        z, w = rng.uniform(0, 6, 2), rng.uniform(0, 6, 2)
        assert torus_kernel(1.0, 5, z, w) == np.conj(torus_kernel(1.0, 5, w, z))

    def test_large_s_dominated_by_zero_mode(self):
        v = torus_kernel(4.0, 8, [0.0, 0.0], [1.0, 2.0])
        assert abs(v - (2 * np.pi) ** -2) <= 0.01 * (2 * np.pi) ** -2

    def test_needs_summability_margin(self):
        with pytest.raises(ValueError):
            torus_kernel(0.5, 3, [0, 0], [0, 0])

    def test_table_rejects_non_hermitian(self):
        with pytest.raises(ValueError):
            KernelTable(np.zeros((2, 2)), np.array([[1.0, 1j], [1j, 1.0]]))

    def test_covariance_kernel_is_field_covariance(self, rng):
        # B(p) is the linear functional <f_p, sigma> with f_p = exp(-i k.p)
        spec = GaussianSpec(2, 1.3, 1.0)
        z, w = rng.uniform(0, 6, 2), rng.uniform(0, 6, 2)
        k1, k2 = np.meshgrid(np.arange(-2, 3), np.arange(-2, 3), indexing="ij")
        fz = SpectralField(2, np.exp(-1j * (k1 * z[0] + k2 * z[1])))
        fw = SpectralField(2, np.exp(-1j * (k1 * w[0] + k2 * w[1])))
        assert np.isclose(covariance_kernel(spec, z, w), measured_covariance(spec)(fz, fw))


class TestFrenkelZhu:
    def test_n0_closed_form(self, rng):
        spec = GaussianSpec(3, 1.0, 2.0)
        x, pts, vd = scenario(rng, 0, 2)
        K = kernel_table(spec, pts[0], pts[1], [])
        want = vd.xi_z * vd.xi_w * np.trace(vd.phi_z.conj().T @ vd.phi_w) * K.values[0, 1]
        basis = LieBasisSpec(2, "gl")
        assert np.isclose(frenkel_zhu_rhs([], K, vd, basis), want, rtol=1e-12)
        assert np.isclose(gaussian_moment_oracle([], pts, vd, spec, basis), want, rtol=1e-12)

    def test_n1_single_chain(self, rng):
        spec = GaussianSpec(3, 1.0, 2.0)
        x, pts, vd = scenario(rng, 1, 3)
        K = kernel_table(spec, pts[0], pts[1], pts[2])
        C = K.values
        want = vd.xi_z * vd.xi_w * np.trace(vd.phi_z.conj().T @ x[0] @ vd.phi_w) * C[0, 1] * C[1, 2]
        assert np.isclose(frenkel_zhu_rhs(x, K, vd, LieBasisSpec(3)), want, rtol=1e-12)

    def test_zero_insertion_kills(self, rng):
        spec = GaussianSpec(2, 1.0, 2.0)
        x, pts, vd = scenario(rng, 1, 2)
        assert gaussian_moment_oracle([np.zeros((2, 2))], pts, vd, spec, LieBasisSpec(2)) == 0

    @pytest.mark.parametrize("n", [0, 1, 2, 3])
    @pytest.mark.parametrize("m", [2, 3])
    def test_identity_gl(self, rng, n, m):
        spec = GaussianSpec(3, 1.0, 2.0)
        x, pts, vd = scenario(rng, n, m)
        basis = LieBasisSpec(m, "gl")
        rhs = frenkel_zhu_rhs(x, kernel_table(spec, pts[0], pts[1], pts[2]), vd, basis)
        ora = gaussian_moment_oracle(x, pts, vd, spec, basis)
        assert abs(rhs - ora) <= 1e-8 * abs(ora)

    def test_sl_differs(self, rng):
        spec = GaussianSpec(3, 1.0, 2.0)
        x, pts, vd = scenario(rng, 2, 2)
        basis = LieBasisSpec(2, "sl")
        rhs = frenkel_zhu_rhs(x, kernel_table(spec, pts[0], pts[1], pts[2]), vd, basis)
        ora = gaussian_moment_oracle(x, pts, vd, spec, basis)
        assert abs(rhs - ora) > 1e-3 * abs(ora)

    def test_sl_traceless_projection(self, rng):
        # with traceless phi the sl and gl oracles agree at n = 0
        spec = GaussianSpec(2, 1.0, 2.0)
        x, pts, vd = scenario(rng, 0, 2)
        a, b = vd.phi_z - np.trace(vd.phi_z) / 2 * np.eye(2), vd.phi_w - np.trace(vd.phi_w) / 2 * np.eye(2)
        vd0 = VData(a, b, vd.xi_z, vd.xi_w)
        gl = gaussian_moment_oracle([], pts, vd0, spec, LieBasisSpec(2, "gl"))
        sl = gaussian_moment_oracle([], pts, vd0, spec, LieBasisSpec(2, "sl"))
        assert np.isclose(gl, sl)

    def test_uncentered_matches_min_cycle_one(self, rng):
        spec = GaussianSpec(2, 1.0, 2.0)
        x, pts, vd = scenario(rng, 2, 2)
        basis = LieBasisSpec(2)
        K = kernel_table(spec, pts[0], pts[1], pts[2])
        rhs = frenkel_zhu_rhs(x, K, vd, basis, min_cycle_len=1)
        ora = gaussian_moment_oracle(x, pts, vd, spec, basis, centered=False)
        assert abs(rhs - ora) <= 1e-10 * abs(ora)

    def test_permutation_covariance(self, rng):
        spec = GaussianSpec(3, 1.0, 2.0)
        x, (z, w, zs), vd = scenario(rng, 3, 2)
        basis = LieBasisSpec(2)
        ref_r = frenkel_zhu_rhs(x, kernel_table(spec, z, w, zs), vd, basis)
        ref_o = gaussian_moment_oracle(x, (z, w, zs), vd, spec, basis)
        for perm in itertools.permutations(range(3)):
            xp, zp = [x[i] for i in perm], [zs[i] for i in perm]
            assert frenkel_zhu_rhs(xp, kernel_table(spec, z, w, zp), vd, basis) == pytest.approx(ref_r, rel=1e-12)
            assert gaussian_moment_oracle(xp, (z, w, zp), vd, spec, basis) == pytest.approx(ref_o, rel=1e-12)

    def test_rejects_non_hermitian(self, rng):
        spec = GaussianSpec(2, 1.0, 2.0)
        x, pts, vd = scenario(rng, 1, 2)
        with pytest.raises(ValueError):
            frenkel_zhu_rhs([cmat(rng, 2)], kernel_table(spec, pts[0], pts[1], pts[2]), vd, LieBasisSpec(2))

    def test_oracle_limits(self, rng):
        spec = GaussianSpec(2, 1.0, 2.0)
        x, pts, vd = scenario(rng, 5, 2)
        with pytest.raises(ValueError):
            gaussian_moment_oracle(x, pts, vd, spec, LieBasisSpec(2))
        with pytest.raises(ValueError):
            gaussian_moment_oracle(x[:1], (pts[0], pts[1], pts[2][:1]), vd, GaussianSpec(7, 1.0, 2.0), LieBasisSpec(2))

    def test_lie_basis(self):
        with pytest.raises(ValueError):
            LieBasisSpec(1)
        for alg, dim in (("gl", 9), ("sl", 8)):
            T = LieBasisSpec(3, alg).basis()
            assert T.shape == (dim, 3, 3)
            gram = np.einsum("aji,bji->ab", T.conj(), T)
            assert np.allclose(gram, np.eye(dim))
        assert np.allclose(np.einsum("aii->a", LieBasisSpec(3, "sl").basis()), 0)

    def test_monte_carlo_n1(self, rng):
        spec = GaussianSpec(3, 1.0, 2.0)
        x, pts, vd = scenario(rng, 1, 2)
        basis = LieBasisSpec(2)
        ora = gaussian_moment_oracle(x, pts, vd, spec, basis)
        est = fz_monte_carlo(x, pts, vd, spec, basis, 10**6, seed=1)
        assert est.within(ora)
