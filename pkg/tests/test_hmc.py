import numpy as np
import pytest
from scipy import stats

from samglm.hmc import (DualAveraging, HmcConfig, HmcSampler, TargetDensity, check_gradient,
                        finite_difference_gradient, gradient_relative_error, hamiltonian,
                        hmc_step, leapfrog)


def gaussian(dim=1, scale=1.0):
    s2 = np.asarray(scale, dtype=float) ** 2
    return TargetDensity(dim, lambda q: -0.5 * np.sum(q * q / s2), lambda q: -q / s2)


def flat(dim):
    return TargetDensity(dim, lambda q: 0.0, lambda q: np.zeros(dim))


class TestConfig:
    @pytest.mark.parametrize("kwargs", [{"step_size": 0.0}, {"n_leapfrog": 0},
                                        {"mass_diagonal": [1.0, -1.0]},
                                        {"target_accept": 1.0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            HmcConfig(**kwargs)

    def test_target_needs_callables(self):
        with pytest.raises(ValueError):
            TargetDensity(2, log_density=lambda q: 0.0)


class TestLeapfrog:
    def test_energy_error_small(self):
        t = gaussian()
        cfg = HmcConfig(step_size=0.1, n_leapfrog=10)
        q, p = leapfrog(t, np.array([1.0]), np.array([0.0]), cfg)
        h0 = hamiltonian(-0.5, np.array([0.0]), np.ones(1))
        h1 = hamiltonian(t.log_density(q), p, np.ones(1))
        assert abs(h1 - h0) < 1e-3

    def test_matches_exact_oscillator_closely(self):
        # harmonic oscillator solution q(t) = cos t
        q, _ = leapfrog(gaussian(), np.array([1.0]), np.array([0.0]),
                        HmcConfig(step_size=0.01, n_leapfrog=100))
        assert q[0] == pytest.approx(np.cos(1.0), abs=1e-4)

    def test_reversible(self, rng):
        t = gaussian(3, [1.0, 0.5, 2.0])
        cfg = HmcConfig(step_size=0.13, n_leapfrog=17, mass_diagonal=[1.0, 2.0, 0.5])
        for _ in range(10):
            q0, p0 = rng.normal(size=3), rng.normal(size=3)
            q1, p1 = leapfrog(t, q0, p0, cfg)
            q2, p2 = leapfrog(t, q1, -p1, cfg)
            np.testing.assert_allclose(q2, q0, atol=1e-10)
            np.testing.assert_allclose(-p2, p0, atol=1e-10)

    def test_free_particle(self):
        q0, p0 = np.array([0.3, -1.0]), np.array([2.0, 0.5])
        cfg = HmcConfig(step_size=0.1, n_leapfrog=7, mass_diagonal=[2.0, 0.5])
        q1, p1 = leapfrog(flat(2), q0, p0, cfg)
        np.testing.assert_allclose(q1, q0 + 0.1 * 7 * p0 / np.array([2.0, 0.5]), atol=1e-14)
        np.testing.assert_array_equal(p1, p0)

    def test_non_finite_signals_divergence(self):
        t = TargetDensity(1, lambda q: -np.inf if q[0] > 0.5 else 0.0, lambda q: np.zeros(1))
        with pytest.raises(FloatingPointError):
            leapfrog(t, np.array([0.0]), np.array([1.0]), HmcConfig(step_size=0.1, n_leapfrog=10))


class TestStep:
    def test_flat_always_accepted(self, rng):
        cfg = HmcConfig(step_size=0.3, n_leapfrog=5)
        q = np.zeros(2)
        for _ in range(50):
            q_next, acc, de = hmc_step(flat(2), q, cfg, rng)
            assert acc and de == 0.0
            q = q_next

    def test_reject_keeps_position(self, rng):
        # huge step on a stiff target diverges
        t = gaussian(1, 1e-3)
        q0 = np.array([1e-3])
        q, acc, de = hmc_step(t, q0, HmcConfig(step_size=5.0, n_leapfrog=3, jitter=0.0), rng)
        assert not acc
        np.testing.assert_array_equal(q, q0)
        assert abs(de) > 1000

    def test_gaussian_2d_moments(self):
        rng = np.random.default_rng(4)
        s = HmcSampler(HmcConfig(step_size=0.5, n_leapfrog=10), 2, warmup=1000)
        t = gaussian(2)
        q = np.array([3.0, -3.0])
        draws = []
        for i in range(21000):
            q = s.step(t, q, rng).q
            if i >= 1000:
                draws.append(q)
        draws = np.array(draws)
        np.testing.assert_allclose(draws.mean(0), 0.0, atol=0.05)
        np.testing.assert_allclose(draws.var(0), 1.0, atol=0.1)

    def test_adaptation_hits_target_acceptance(self):
        rng = np.random.default_rng(8)
        t = gaussian(5, [0.2, 0.5, 1.0, 2.0, 5.0])
        s = HmcSampler(HmcConfig(step_size=1.0, n_leapfrog=10), 5, warmup=1000)
        q = np.ones(5)
        probs = []
        for i in range(3000):
            r = s.step(t, q, rng)
            q = r.q
            if i >= 1000:
                probs.append(r.accept_prob)
        assert abs(np.mean(probs) - 0.8) < 0.1

    def test_mass_adaptation_learns_scales(self):
        rng = np.random.default_rng(2)
        scales = np.array([0.1, 10.0])
        s = HmcSampler(HmcConfig(step_size=0.1, n_leapfrog=10), 2, warmup=1500)
        q = np.zeros(2)
        for _ in range(1500):
            q = s.step(gaussian(2, scales), q, rng).q
        ratio = (1.0 / s.mass) / scales**2
        assert np.all((ratio > 0.5) & (ratio < 2.0))

    def test_state_dict_roundtrip_continues_identically(self):
        t = gaussian(2)
        a = HmcSampler(HmcConfig(), 2, warmup=100)
        rng_a = np.random.default_rng(0)
        q = np.zeros(2)
        for _ in range(60):
            q = a.step(t, q, rng_a).q
        b = HmcSampler(HmcConfig(), 2, warmup=100)
        b.load_state_dict(a.state_dict())
        rng_b = np.random.default_rng()
        rng_b.bit_generator.state = rng_a.bit_generator.state
        qa = qb = q
        for _ in range(80):
            qa = a.step(t, qa, rng_a).q
            qb = b.step(t, qb, rng_b).q
        np.testing.assert_array_equal(qa, qb)
        assert a.step_size == b.step_size


class TestDualAveraging:
    def test_step_shrinks_when_acceptance_low(self):
        da = DualAveraging(1.0)
        for _ in range(50):
            da.update(0.1)
        assert da.final_step < 1.0

    def test_step_grows_when_acceptance_high(self):
        da = DualAveraging(0.01)
        for _ in range(50):
            da.update(1.0)
        assert da.final_step > 0.01


class TestKolmogorovSmirnov:
    def test_one_dimensional_gaussian(self):
        rng = np.random.default_rng(11)
        s = HmcSampler(HmcConfig(step_size=0.8, n_leapfrog=3, adapt=False), 1)
        t = gaussian()
        q = np.zeros(1)
        out = np.empty(50000)
        for i in range(out.size):
            q = s.step(t, q, rng).q
            out[i] = q[0]
        assert stats.kstest(out, "norm").statistic < 0.02


class TestGradientCheck:
    def test_fd_of_quadratic(self):
        g = finite_difference_gradient(lambda q: np.sum(q**3), np.array([1.0, -2.0]))
        np.testing.assert_allclose(g, [3.0, 12.0], rtol=1e-8)

    def test_correct_gradient_passes(self, rng):
        t = gaussian(4, [1.0, 2.0, 3.0, 4.0])
        assert check_gradient(t, rng.normal(size=(10, 4))) < 1e-5

    def test_wrong_gradient_fails(self, rng):
        t = TargetDensity(2, lambda q: -0.5 * q @ q, lambda q: -2 * q)
        assert gradient_relative_error(t, np.array([1.0, 1.0])) > 0.5
        with pytest.raises(AssertionError):
            check_gradient(t, rng.normal(size=(3, 2)))
