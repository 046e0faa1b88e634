from dataclasses import replace

import numpy as np
import pytest
from scipy import stats
from scipy.special import gammaln

from conftest import toy_dataset
from samglm import prior as shrink
from samglm.chain import McmcConfig
from samglm.domain import build_regular_grid, rectangular_blocks
from samglm.evaluation import held_out_loglik
from samglm.hmc import check_gradient
from samglm.kernels import Matern32Kernel, ProductKernel, gram_dense
from samglm.lgcp import (LgcpChain, LgcpModel, LgcpPrior, LgcpState, field_summary,
                         lgcp_gradients, lgcp_log_posterior, run_lgcp_sampler)
from samglm.mixture import MixtureSpec, run_sampler
from samglm.simulate import resample_counts, simulate_lgcp


def dense_log_posterior(state, data, prior):
    """Reference evaluation with a dense Gram matrix and scipy densities."""
    var, ls_e, ls_n = np.exp(state.phi) if state.phi.size == 3 else \
        np.exp(state.phi[[0, 1, 1]])
    kern = ProductKernel(var, Matern32Kernel(ls_e), Matern32Kernel(ls_n))
    K = gram_dense(kern, data.grid.centroids, jitter=prior.jitter * var)
    eta = data.X @ state.beta + state.f
    loglik = stats.poisson.logpmf(data.y, np.exp(eta)).sum()
    field = stats.multivariate_normal(np.zeros(len(eta)), K).logpdf(state.f) \
        + 0.5 * len(eta) * np.log(2 * np.pi)
    mean, sd = prior.hyper_params(data)
    hyper = stats.lognorm.logpdf(np.exp(state.phi), s=sd, scale=np.exp(mean)).sum()
    bp = shrink.log_density(prior.shrinkage, state.beta, data.covariates.slope_mask())
    return loglik + field + hyper + bp + state.phi.sum()


def random_state(model, rng):
    return LgcpState(rng.normal(0, 0.5, model.N), rng.normal(0, 0.3, model.J),
                     model.hyper_mean + rng.normal(0, 0.3, model.n_phi))


@pytest.fixture(params=[False, True], ids=["separate", "shared"])
def lgcp_prior(request):
    return LgcpPrior(shared_lengthscale=request.param)


class TestLogPosterior:
    def test_zero_field_intercept_only(self):
        data = toy_dataset(np.arange(9), rows=3)
        m = LgcpModel(data)
        st = LgcpState(np.zeros(9), np.zeros(1), m.hyper_mean)
        pieces = m.log_posterior(st, pieces=True)
        y = np.arange(9.0)
        assert pieces["loglik"] == pytest.approx(-9.0 - gammaln(y + 1.0).sum())

    def test_dense_oracle(self, small_lgcp, lgcp_prior, rng):
        data, _ = small_lgcp
        m = LgcpModel(data, lgcp_prior)
        for _ in range(5):
            st = random_state(m, rng)
            assert m.log_posterior(st) == pytest.approx(
                dense_log_posterior(st, data, lgcp_prior), abs=1e-8)

    def test_dense_oracle_eight_by_eight(self, rng):
        grid = build_regular_grid(8, 8, 1.0)
        data, _ = simulate_lgcp(grid, [0.5, 0.2], ProductKernel(1.0, Matern32Kernel(2.0),
                                                                 Matern32Kernel(3.0)), seed=1)
        m = LgcpModel(data)
        st = random_state(m, rng)
        assert lgcp_log_posterior(st, data) == pytest.approx(
            dense_log_posterior(st, data, LgcpPrior()), abs=1e-8)

    def test_intercept_field_shift(self, small_lgcp, rng):
        data, _ = small_lgcp
        m = LgcpModel(data)
        st = random_state(m, rng)
        moved = st.copy()
        moved.f = st.f + 0.7
        moved.beta[0] -= 0.7
        a, b = m.log_posterior(st, True), m.log_posterior(moved, True)
        assert a["loglik"] == pytest.approx(b["loglik"], abs=1e-9)
        assert a["field_prior"] != pytest.approx(b["field_prior"])

    def test_jacobian_change_of_variables(self):
        # density of phi = log-normal density of theta times theta
        m = LgcpModel(toy_dataset(np.zeros(4, dtype=int), rows=2),
                      LgcpPrior(log_lengthscale_mean=0.3, log_lengthscale_sd=0.7))
        for phi in np.linspace(-3, 3, 7):
            st = LgcpState(np.zeros(4), np.zeros(1), np.array([phi, 0.1, -0.2]))
            p = m.log_posterior(st, True)
            lhs = p["hyperprior"] + p["jacobian"]
            rhs = stats.norm.logpdf(st.phi, m.hyper_mean, m.hyper_sd).sum()
            assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_irregular_grid_rejected(self, small_mixture):
        data, _ = small_mixture
        grid = replace(data.grid, shape=None)
        with pytest.raises(ValueError):
            LgcpModel(replace(data, grid=grid))


class TestGradients:
    def test_centered_finite_differences(self, small_lgcp, lgcp_prior, rng):
        data, _ = small_lgcp
        m = LgcpModel(data, lgcp_prior)
        pts = [m.pack(random_state(m, rng)) for _ in range(10)]
        assert check_gradient(m.target(coords="centered"), pts) < 1e-5

    def test_whitened_finite_differences(self, small_lgcp, lgcp_prior, rng):
        data, _ = small_lgcp
        m = LgcpModel(data, lgcp_prior)
        pts = [m.pack(random_state(m, rng)) for _ in range(10)]
        assert check_gradient(m.target(coords="whitened"), pts) < 1e-5

    def test_zero_field_gradient(self, small_lgcp, rng):
        data, _ = small_lgcp
        m = LgcpModel(data)
        st = random_state(m, rng)
        st.f = np.zeros(m.N)
        gf, _, _ = lgcp_gradients(st, data)
        np.testing.assert_allclose(gf, data.y - np.exp(data.X @ st.beta), atol=1e-10)

    def test_trace_term_against_dense(self, rng):
        grid = build_regular_grid(6, 6, 1.0)
        data, _ = simulate_lgcp(grid, [0.3, 0.1], ProductKernel(1.0, Matern32Kernel(2.0),
                                                                 Matern32Kernel(2.0)), seed=2)
        m = LgcpModel(data)
        phi = m.hyper_mean + rng.normal(0, 0.3, 3)
        g = m.gram(phi)
        K = g.dense()
        for parts in m.dK_terms(phi):
            dK = sum(np.kron(o, i) + c * np.eye(36) for o, i, c in parts)
            fast = sum(g.trace_solve(o, i, c) for o, i, c in parts)
            assert fast == pytest.approx(np.trace(np.linalg.solve(K, dK)), abs=1e-8)

    def test_whitened_density_offset_is_half_logdet(self, small_lgcp, rng):
        data, _ = small_lgcp
        m = LgcpModel(data)
        st = random_state(m, rng)
        v = rng.normal(size=m.N)
        lp_w = m.whitened_gradients(v, st.beta, st.phi)[0]
        st.f = m.field_from_white(v, st.phi)
        assert lp_w - m.log_posterior(st) == pytest.approx(0.5 * m.gram(st.phi).logdet(),
                                                           abs=1e-8)

    def test_invalid_state_is_minus_inf(self, small_lgcp):
        data, _ = small_lgcp
        m = LgcpModel(data)
        x = m.pack(m.initial_state())
        x[-1] = 40.0
        assert m.value_and_grad(x)[0] == -np.inf
        x[-1] = np.nan
        assert m.value_and_grad(x, "centered")[0] == -np.inf


class TestSampler:
    def test_seeded_reproducibility(self, small_lgcp):
        data, _ = small_lgcp
        cfg = McmcConfig(40, 20)
        a = run_lgcp_sampler(data, cfg, np.random.default_rng(3))
        b = run_lgcp_sampler(data, cfg, np.random.default_rng(3))
        np.testing.assert_array_equal(a.f, b.f)
        np.testing.assert_array_equal(a.log_theta, b.log_theta)

    @pytest.mark.parametrize("update,coords", [("joint", "centered"),
                                               ("blockwise", "whitened")])
    def test_other_schemes_run(self, small_lgcp, update, coords):
        data, _ = small_lgcp
        tr = run_lgcp_sampler(data, McmcConfig(30, 10), np.random.default_rng(0),
                              update=update, coords=coords)
        assert tr.f.shape == (20, data.n_cells)
        assert tr.beta.shape == (20, 1, 3)
        assert np.all(np.isfinite(tr.log_density))

    def test_checkpoint_roundtrip(self, small_lgcp):
        data, _ = small_lgcp
        cfg = McmcConfig(50, 20)
        full = LgcpChain(data, LgcpPrior(), cfg, np.random.default_rng(1)).run()
        c = LgcpChain(data, LgcpPrior(), cfg, np.random.default_rng(1))
        first = c.run(until=33)
        rest = LgcpChain(data, LgcpPrior(), cfg, np.random.default_rng(99)).restore(
            c.checkpoint()).run()
        np.testing.assert_array_equal(np.concatenate([first.f, rest.f]), full.f)

    def test_field_summary(self, small_lgcp):
        data, _ = small_lgcp
        tr = run_lgcp_sampler(data, McmcConfig(30, 10), np.random.default_rng(0))
        mean, sd = field_summary(tr)
        np.testing.assert_allclose(mean, tr.f.mean(0))
        assert np.all(sd >= 0)

    def test_recovers_coefficients(self):
        grid = build_regular_grid(16, 16, 1.0)
        beta = np.array([1.0, 0.5, -0.3])
        data, _ = simulate_lgcp(grid, beta, ProductKernel(1.0, Matern32Kernel(3.0),
                                                           Matern32Kernel(3.0)), seed=101)
        tr = run_lgcp_sampler(data, McmcConfig(700, 350), np.random.default_rng(1))
        b = tr.beta[:, 0]
        assert np.all(np.abs(b.mean(0) - beta) < 3 * b.std(0))
        ls = np.exp(tr.log_theta[:, 1:]).mean(0)
        assert np.all((ls > 1.5) & (ls < 6.0))

    def test_no_field_matches_poisson_glm(self):
        # tiny field variance: held-out fit comparable to a one-component mixture
        grid = build_regular_grid(10, 10, 1.0)
        beta = [1.0, 0.4, -0.3]
        kern = ProductKernel(1e-4, Matern32Kernel(2.0), Matern32Kernel(2.0))
        data, _ = simulate_lgcp(grid, beta, kern, seed=4, blocks=rectangular_blocks(grid, 2, 2))
        test = resample_counts(data, data.meta["intensity"], 44)
        lg = run_lgcp_sampler(data, McmcConfig(500, 250), np.random.default_rng(0))
        sg = run_sampler(data, MixtureSpec(1), McmcConfig(500, 250), np.random.default_rng(0))
        a = np.mean([held_out_loglik(lam, test.y) for lam in lg.intensities(data.X)])
        b = np.mean([held_out_loglik(lam, test.y) for lam in sg.intensities(data.X)])
        assert abs(a - b) < 0.05

    def test_no_spurious_field(self):
        grid = build_regular_grid(10, 10, 1.0)
        kern = ProductKernel(1e-4, Matern32Kernel(2.0), Matern32Kernel(2.0))
        data, _ = simulate_lgcp(grid, [1.0, 0.5], kern, seed=8)
        tr = run_lgcp_sampler(data, McmcConfig(500, 250), np.random.default_rng(2))
        fbar = tr.f.mean(0)
        resid = data.y - np.exp(data.X @ np.array([1.0, 0.5]))
        assert abs(np.corrcoef(fbar, resid)[0, 1]) < 0.5
        assert np.abs(fbar).max() < 0.5
