import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import linalg

from samglm.domain import build_regular_grid
from samglm.errors import SingularKernelError
from samglm.kernels import (KroneckerGram, Matern32Kernel, ProductKernel, SqExpKernel,
                            gram_dense, kron_apply, kron_logdet, kron_matvec, kron_solve,
                            matern32, matern32_dl, sqexp)


def random_spd(rng, n):
    a = rng.normal(size=(n, n))
    return a @ a.T / n + 0.1 * np.eye(n)


class TestMatern:
    def test_zero_distance(self):
        assert matern32(2.3, 0.0) == 1.0

    def test_unit(self):
        assert matern32(1.0, 1.0) == pytest.approx((1 + np.sqrt(3)) * np.exp(-np.sqrt(3)),
                                                   abs=1e-15)
        assert matern32(1.0, 1.0) == pytest.approx(0.48335, abs=1e-5)

    def test_monotone_decay(self):
        r = np.linspace(0, 50, 500)
        k = matern32(1.5, r)
        assert np.all(np.diff(k) < 0)
        assert k[-1] < 1e-20

    @given(st.floats(1e-2, 1e2), st.floats(0, 1e2))
    def test_lengthscale_derivative(self, ell, r):
        h = 1e-6 * ell
        fd = (matern32(ell + h, r) - matern32(ell - h, r)) / (2 * h)
        assert abs(matern32_dl(ell, r) - fd) <= 1e-5 * max(abs(fd), 1e-3)

    @pytest.mark.parametrize("ell", [1e-300, 1e300])
    def test_extreme_lengthscales_are_finite(self, ell):
        r = np.array([0.0, 1.0, 10.0])
        assert np.all(np.isfinite(matern32(ell, r)))
        assert np.all(np.isfinite(matern32_dl(ell, r)))

    def test_rejects_nonpositive_lengthscale(self):
        with pytest.raises(ValueError):
            Matern32Kernel(0.0)


class TestSqExp:
    def test_same_point(self):
        assert sqexp(2.5, 3.0, [1.0, 2.0], [1.0, 2.0]) == 2.5

    def test_one_lengthscale_apart(self):
        assert sqexp(2.0, 5.0, [0.0, 0.0], [3.0, 4.0]) == pytest.approx(2.0 * np.exp(-0.5))

    def test_symmetry_and_gradients(self, rng):
        k = SqExpKernel(1.7, 2.2)
        a, b = rng.normal(size=(6, 2)), rng.normal(size=(4, 2))
        np.testing.assert_allclose(k(a, b), k(b, a).T, atol=1e-15)
        dv, dl = k.gradients(a, b)
        h = 1e-6
        np.testing.assert_allclose(dv, (SqExpKernel(1.7 + h, 2.2)(a, b)
                                        - SqExpKernel(1.7 - h, 2.2)(a, b)) / (2 * h), rtol=1e-6)
        np.testing.assert_allclose(dl, (SqExpKernel(1.7, 2.2 + h)(a, b)
                                        - SqExpKernel(1.7, 2.2 - h)(a, b)) / (2 * h),
                                   rtol=1e-5, atol=1e-10)


class TestGramDense:
    def test_single_point(self):
        K = gram_dense(SqExpKernel(3.0, 1.0), np.zeros((1, 2)))
        np.testing.assert_allclose(K, [[3.0 + 3e-6]], rtol=1e-15)

    @pytest.mark.parametrize("kernel", [SqExpKernel(1.3, 0.7),
                                        ProductKernel(2.0, Matern32Kernel(0.5),
                                                      Matern32Kernel(1.5))])
    def test_psd_and_diagonal_maximal(self, kernel, rng):
        pts = rng.uniform(0, 3, size=(50, 2))
        K = kernel(pts, pts)
        np.testing.assert_allclose(K, K.T, atol=1e-14)
        assert np.linalg.eigvalsh(K).min() >= -1e-10
        assert np.all(K <= np.diag(K)[:, None] + 1e-14)

    def test_duplicates_rescued_by_jitter(self):
        pts = np.zeros((5, 2))
        K = gram_dense(SqExpKernel(1.0, 1.0), pts)
        linalg.cholesky(K, lower=True)


class TestKronecker:
    def test_identity_factors(self, rng):
        g = KroneckerGram(np.eye(3), np.eye(4), 1.0, 0.0)
        v = rng.normal(size=12)
        np.testing.assert_allclose(kron_matvec(g, v), v, atol=1e-15)
        assert kron_logdet(g) == pytest.approx(0.0, abs=1e-14)
        g2 = KroneckerGram(np.eye(3), np.eye(4), 2.0, 0.5)
        np.testing.assert_allclose(kron_solve(g2, v), v / 2.5, atol=1e-14)

    def test_random_factors_against_dense(self, rng):
        ko, ki = random_spd(rng, 6), random_spd(rng, 5)
        g = KroneckerGram(ko, ki, 1.7, 1e-3)
        D = 1.7 * np.kron(ko, ki) + 1e-3 * np.eye(30)
        v = rng.normal(size=30)
        np.testing.assert_allclose(g.matvec(v), D @ v, atol=1e-10)
        np.testing.assert_allclose(g.solve(v), np.linalg.solve(D, v), atol=1e-8)
        assert g.logdet() == pytest.approx(np.linalg.slogdet(D)[1], abs=1e-8)
        S = np.zeros((30, 30))
        for i in range(30):
            S[:, i] = g.sqrt_matvec(np.eye(30)[i])
        np.testing.assert_allclose(S @ S, D, atol=1e-10)
        np.testing.assert_allclose(S, S.T, atol=1e-12)

    def test_linearity(self, rng):
        g = KroneckerGram(random_spd(rng, 4), random_spd(rng, 3), 1.0, 1e-6)
        u, w = rng.normal(size=12), rng.normal(size=12)
        np.testing.assert_allclose(g.matvec(2 * u - 3 * w), 2 * g.matvec(u) - 3 * g.matvec(w),
                                   atol=1e-12)

    def test_solve_roundtrip(self, rng):
        g = ProductKernel(1.0, Matern32Kernel(2.0), Matern32Kernel(3.0)).kron_gram(
            build_regular_grid(8, 8, 1.0))
        v = rng.normal(size=64)
        x = g.solve(g.matvec(v))
        np.testing.assert_allclose(x, v, atol=1e-8 * np.abs(v).max() * 1e3)
        r = g.matvec(g.solve(v)) - v
        assert np.abs(r).max() < 1e-8 * np.abs(v).max()

    def test_variance_scaling_logdet(self, rng):
        ko, ki = random_spd(rng, 4), random_spd(rng, 5)
        a = KroneckerGram(ko, ki, 1.0, 0.0).logdet()
        b = KroneckerGram(ko, ki, 2.0, 0.0).logdet()
        assert b - a == pytest.approx(20 * np.log(2.0), abs=1e-10)

    def test_trace_solve(self, rng):
        g = KroneckerGram(random_spd(rng, 4), random_spd(rng, 3), 1.3, 0.01)
        ao, ai = rng.normal(size=(4, 4)), rng.normal(size=(3, 3))
        ao, ai = ao + ao.T, ai + ai.T
        dense = np.trace(np.linalg.solve(g.dense(), np.kron(ao, ai) + 0.7 * np.eye(12)))
        assert g.trace_solve(ao, ai, 0.7) == pytest.approx(dense, rel=1e-10)

    def test_kron_apply(self, rng):
        a, b = rng.normal(size=(3, 2)), rng.normal(size=(4, 5))
        v = rng.normal(size=10)
        np.testing.assert_allclose(kron_apply(a, b, v), np.kron(a, b) @ v, atol=1e-12)

    def test_dimension_mismatch(self):
        g = KroneckerGram(np.eye(2), np.eye(3))
        with pytest.raises(ValueError):
            g.matvec(np.ones(5))

    def test_not_positive_definite(self):
        with pytest.raises(SingularKernelError):
            KroneckerGram(np.ones((3, 3)), np.eye(2), 1.0, 0.0)

    def test_asymmetric_factor(self):
        with pytest.raises(ValueError):
            KroneckerGram(np.array([[1.0, 0.5], [0.0, 1.0]]), np.eye(2))

    def test_exhaustive_grids_against_dense(self):
        kern = ProductKernel(1.4, Matern32Kernel(1.7), Matern32Kernel(2.9))
        rng = np.random.default_rng(0)
        for rows in range(1, 13):
            for cols in range(1, 13):
                grid = build_regular_grid(rows, cols, 1.0)
                g = kern.kron_gram(grid)
                D = gram_dense(kern, grid.centroids)
                v = rng.normal(size=rows * cols)
                np.testing.assert_allclose(g.dense(), D, atol=1e-12)
                np.testing.assert_allclose(g.matvec(v), D @ v, atol=1e-10)
                np.testing.assert_allclose(g.solve(v), linalg.cho_solve(
                    linalg.cho_factor(D), v), atol=1e-8 * max(1.0, np.abs(g.solve(v)).max()))
                assert g.logdet() == pytest.approx(np.linalg.slogdet(D)[1], abs=1e-8)

    def test_gram_hyperparameter_derivatives(self):
        grid = build_regular_grid(4, 5, 1.0)
        north, east = grid.axis_coordinates()
        s2, le, ln = 1.3, 2.1, 0.8

        def dense(s2, le, ln):
            return ProductKernel(s2, Matern32Kernel(le), Matern32Kernel(ln))(grid.centroids,
                                                                            grid.centroids)
        K = dense(s2, le, ln)
        kn, ke = Matern32Kernel(ln)(north, north), Matern32Kernel(le)(east, east)
        analytic = {
            "var": np.kron(kn, ke),
            "east": s2 * np.kron(kn, Matern32Kernel(le).d_lengthscale(east, east)),
            "north": s2 * np.kron(Matern32Kernel(ln).d_lengthscale(north, north), ke),
        }
        np.testing.assert_allclose(analytic["var"] * s2, K, atol=1e-14)
        h = 1e-6
        fds = {
            "var": (dense(s2 + h, le, ln) - dense(s2 - h, le, ln)) / (2 * h),
            "east": (dense(s2, le + h, ln) - dense(s2, le - h, ln)) / (2 * h),
            "north": (dense(s2, le, ln + h) - dense(s2, le, ln - h)) / (2 * h),
        }
        for key in analytic:
            err = np.abs(analytic[key] - fds[key]) / np.maximum(np.abs(fds[key]), 1e-6)
            assert err.max() < 1e-5, key
