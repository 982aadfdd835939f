import json
import pathlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sblab.chain import reference_mean
from sblab.datasets import gaussian_pair
from sblab.errors import InvalidArgument, SingularMatrixError
from sblab.oracle import (
    GaussianMoments, analytic_sb_marginal, averaged_kl_from_states, averaged_kl_metric,
    chain_conditioning_bruteforce, discretized_gaussian_coupling, entropic_cross_covariance, eval_indices,
    fit_gaussian, gaussian_kl, half_sq_cost, marginal_gap_from_samples, sample_analytic_states,
    sinkhorn_coupling, symmetric_kl,
)
from sblab.schedule import default_schedule, make_constant_schedule

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


class TestKl:
    def test_self(self):
        p = GaussianMoments([1.0, 2.0], [[2.0, 0.3], [0.3, 1.0]])
        assert gaussian_kl(p, p) == pytest.approx(0.0, abs=1e-14)

    def test_shifted_identity(self):
        p = GaussianMoments.isotropic([1, 1], 1.0)
        q = GaussianMoments.isotropic([-1, -1], 1.0)
        assert gaussian_kl(p, q) == pytest.approx(4.0)

    def test_scalar_variance(self):
        p = GaussianMoments.isotropic([0.0], 2.0)
        q = GaussianMoments.isotropic([0.0], 1.0)
        assert gaussian_kl(p, q) == pytest.approx(0.5 * (2 - 1 + np.log(0.5)))
        assert gaussian_kl(p, q) == pytest.approx(0.15342640972, abs=1e-10)

    def test_singular_reference(self):
        p = GaussianMoments.isotropic([0, 0], 1.0)
        q = GaussianMoments([0, 0], np.diag([1.0, 0.0]))
        with pytest.raises(SingularMatrixError):
            gaussian_kl(p, q)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), d=st.integers(1, 4))
    def test_non_negative(self, seed, d):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((d, d))
        B = rng.standard_normal((d, d))
        p = GaussianMoments(rng.standard_normal(d), A @ A.T + 0.1 * np.eye(d))
        q = GaussianMoments(rng.standard_normal(d), B @ B.T + 0.1 * np.eye(d))
        assert gaussian_kl(p, q) > 0
        assert symmetric_kl(p, q) == pytest.approx(symmetric_kl(q, p))


class TestFit:
    def test_constant_samples_singular(self):
        m = fit_gaussian(np.full((10, 2), 3.0))
        np.testing.assert_array_equal(m.mean, [3, 3])
        assert m.is_singular

    def test_standard_normal(self):
        m = fit_gaussian(np.random.default_rng(0).standard_normal((100_000, 2)))
        assert np.all(np.abs(m.mean) < 0.02)
        assert np.all(np.abs(m.cov - np.eye(2)) < 0.05)

    def test_affine_equivariance(self, rng):
        x = rng.standard_normal((50, 3))
        A = rng.standard_normal((3, 3))
        b = rng.standard_normal(3)
        m = fit_gaussian(x)
        t = fit_gaussian(x @ A.T + b)
        np.testing.assert_allclose(t.mean, A @ m.mean + b, atol=1e-12)
        np.testing.assert_allclose(t.cov, A @ m.cov @ A.T, atol=1e-12)

    def test_too_few(self):
        with pytest.raises(InvalidArgument):
            fit_gaussian(np.zeros((2, 2)))


class TestAnalyticMarginal:
    a = np.array([1.0, 1.0])

    def test_endpoints(self):
        m0 = analytic_sb_marginal(self.a, 0.0)
        m1 = analytic_sb_marginal(self.a, 1.0)
        np.testing.assert_array_equal(m0.mean, self.a)
        np.testing.assert_array_equal(m0.cov, np.eye(2))
        np.testing.assert_array_equal(m1.mean, -self.a)
        np.testing.assert_array_equal(m1.cov, np.eye(2))

    def test_midpoint(self):
        m = analytic_sb_marginal(self.a, 0.5, 2.0)
        np.testing.assert_allclose(m.mean, 0, atol=1e-15)
        assert m.cov[0, 0] == pytest.approx(1.2071, abs=1e-4)

    def test_closed_form_c(self):
        assert entropic_cross_covariance(2.0) == pytest.approx(np.sqrt(2) - 1)

    @given(t=st.floats(0.0, 1.0), eps=st.floats(0.05, 20.0))
    def test_time_symmetry(self, t, eps):
        p = analytic_sb_marginal(self.a, t, eps)
        q = analytic_sb_marginal(self.a, 1.0 - t, eps)
        np.testing.assert_allclose(p.mean, -q.mean, atol=1e-12)
        np.testing.assert_allclose(p.cov, q.cov, rtol=1e-12)

    def test_bad_time(self):
        with pytest.raises(InvalidArgument):
            analytic_sb_marginal(self.a, 1.5)


class TestSinkhorn:
    def test_validates_closed_form(self):
        cp = discretized_gaussian_coupling()
        assert abs(cp.cross_covariance() - entropic_cross_covariance(2.0)) < 1e-2
        np.testing.assert_allclose(cp.plan.sum(), 1.0, atol=1e-9)

    def test_frozen_fixture(self):
        frozen = json.loads((FIXTURES / "sinkhorn_c.json").read_text())
        cp = discretized_gaussian_coupling(frozen["mean_p"], frozen["mean_q"], frozen["eps"],
                                           frozen["n_grid"], frozen["half_width"])
        assert cp.cross_covariance() == pytest.approx(frozen["sinkhorn_c"], abs=1e-9)
        assert abs(frozen["sinkhorn_c"] - frozen["closed_form_c"]) < 1e-2

    @pytest.mark.parametrize("eps", [0.5, 1.0, 4.0])
    def test_other_regularisations(self, eps):
        cp = discretized_gaussian_coupling(eps=eps)
        assert cp.cross_covariance() == pytest.approx(entropic_cross_covariance(eps), abs=1e-2)

    def test_independence_limit(self, rng):
        x = np.linspace(-1, 1, 30)
        p = rng.random(30); p /= p.sum()
        q = rng.random(30); q /= q.sum()
        C = half_sq_cost(x, x)
        cp = sinkhorn_coupling(p, q, C, 100 * C.max())
        assert np.max(np.abs(cp.plan - np.outer(p, q))) < 1e-3

    def test_single_atom(self):
        for eps in (1e-3, 1.0, 1e3):
            cp = sinkhorn_coupling([1.0], [1.0], [[0.7]], eps)
            np.testing.assert_allclose(cp.plan, [[1.0]])

    def test_error_history_monotone(self):
        hist = discretized_gaussian_coupling().error_history
        assert np.all(np.diff(hist) <= 1e-15)

    def test_small_eps_no_underflow(self):
        x = np.linspace(-6, 6, 101)
        p = np.exp(-0.5 * (x - 1) ** 2); p /= p.sum()
        q = np.exp(-0.5 * (x + 1) ** 2); q /= q.sum()
        cp = sinkhorn_coupling(p, q, half_sq_cost(x, x), 1e-3, max_iters=2000)
        assert np.all(np.isfinite(cp.plan))


class TestBruteforce:
    def test_midpoint(self):
        s = make_constant_schedule(2, 0.25)
        post = chain_conditioning_bruteforce(s, 1, {0: np.array([1.0]), 2: np.array([3.0])})
        assert post.mean[0] == pytest.approx(2.0)
        assert post.variance == pytest.approx(0.25)

    def test_self_conditioning(self):
        s = make_constant_schedule(4, 0.25)
        post = chain_conditioning_bruteforce(s, 0, {0: np.array([0.4]), 3: np.array([1.0])})
        assert post.variance == 0
        assert post.mean[0] == 0.4

    def test_index_range(self):
        with pytest.raises(InvalidArgument):
            chain_conditioning_bruteforce(make_constant_schedule(4, 0.25), 5, {0: np.zeros(1)})


class TestAveragedKl:
    def test_analytic_sampler_floor(self):
        s = default_schedule()
        states = sample_analytic_states(s, np.ones(2), 10_000, np.random.default_rng(0))
        assert averaged_kl_from_states(states, s, np.ones(2), 2.0) < 0.02

    def test_path_count_stability(self):
        s = default_schedule()
        data, prior = gaussian_pair(2)
        small = averaged_kl_metric(reference_mean(), s, prior, np.ones(2), n_paths=10_000, rng=1)
        big = averaged_kl_metric(reference_mean(), s, prior, np.ones(2), n_paths=20_000, rng=2)
        assert abs(big - small) / small < 0.1

    def test_eval_indices_spread(self):
        idx = eval_indices(default_schedule(), 9)
        assert len(idx) == 9 and np.all(np.diff(idx) > 0)
        assert 0 < idx[0] and idx[-1] < 20

    def test_needs_paths(self):
        s = default_schedule()
        with pytest.raises(InvalidArgument):
            averaged_kl_metric(reference_mean(), s, gaussian_pair(2)[1], np.ones(2), n_paths=10)


def test_marginal_gap_regularises_singular():
    x = np.zeros((20, 2))
    with pytest.warns(RuntimeWarning):
        gap = marginal_gap_from_samples(x, x)
    assert gap == pytest.approx(0.0, abs=1e-9)
