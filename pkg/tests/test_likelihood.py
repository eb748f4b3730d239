import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mvb_detector.likelihood import cumulative_hazard, hazards, log_likelihood, log_normalizer, tvgeom_pmf
from mvb_detector.state import BaselineHazards, ChangePointState, ModelState, RegressionState

from conftest import make_dataset


def state_from(alpha, beta=None):
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    m, t_max = alpha.shape
    beta = np.zeros((m, 0)) if beta is None else np.asarray(beta, dtype=float)
    return ModelState(
        ChangePointState.empty(m, t_max),
        BaselineHazards(alpha),
        RegressionState(beta, beta != 0, 0.5),
    )


def logit(p):
    return math.log(p / (1 - p))


class TestHazards:
    def test_logistic_at_zero(self):
        lam, tot = hazards([0.0])
        assert lam.tolist() == [0.5] and tot == 0.5

    def test_symmetric(self):
        lam, tot = hazards([0.0, 0.0])
        np.testing.assert_allclose(lam, [1 / 3, 1 / 3], rtol=1e-15)
        assert tot == pytest.approx(2 / 3, rel=1e-15)

    def test_low_baseline(self):
        lam, _ = hazards([-9.0] * 3)
        expected = math.exp(-9) / (1 + 3 * math.exp(-9))
        np.testing.assert_allclose(lam, expected, rtol=1e-14)
        assert lam[0] == pytest.approx(1.2337e-4, rel=1e-4)

    @pytest.mark.parametrize("v", [-50.0, 50.0])
    def test_extremes_are_finite(self, v):
        lam, tot = hazards([v, v - 1, v + 1])
        assert np.all(np.isfinite(lam)) and 0 < tot <= 1

    def test_non_finite(self):
        with pytest.raises(ValueError):
            hazards([np.nan])

    @given(arrays(float, st.integers(1, 5), elements=st.floats(-40, 40)), st.floats(-10, 10))
    def test_shift_preserves_order(self, eta, c):
        a, tot = hazards(eta)
        b, _ = hazards(eta + c)
        assert np.all(a >= 0) and tot < 1 or tot == pytest.approx(1.0)
        assert list(np.argsort(a, kind="stable")) == list(np.argsort(b, kind="stable")) or np.allclose(a, a[0])

    def test_log_normalizer_matches_naive(self):
        eta = np.array([[0.3, -1.2], [-9.0, -9.0]])
        np.testing.assert_allclose(log_normalizer(eta), np.log1p(np.exp(eta).sum(axis=1)), rtol=1e-15)


class TestTvgeom:
    def test_two_steps(self):
        np.testing.assert_array_equal(tvgeom_pmf([0.5, 0.5]), [0.5, 0.25, 0.25])

    def test_piecewise(self):
        phi = [0.25] * 5 + [0.5] * 10
        assert tvgeom_pmf(phi)[5] == pytest.approx(0.75**5 * 0.5, abs=1e-15)
        assert 0.75**5 * 0.5 == 0.11865234375

    def test_all_zero(self):
        np.testing.assert_array_equal(tvgeom_pmf(np.zeros(4)), [0, 0, 0, 0, 1])

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            tvgeom_pmf([1.2])

    @given(arrays(float, st.integers(1, 60), elements=st.floats(0, 1)))
    def test_probability_vector(self, phi):
        p = tvgeom_pmf(phi)
        assert np.all(p >= 0)
        assert abs(p.sum() - 1) < 1e-12


class TestLogLikelihood:
    def test_single_event(self):
        d = make_dataset([1], [1], 1, 1)
        assert log_likelihood(d, state_from([[logit(0.3)]])) == pytest.approx(math.log(0.3), abs=1e-14)

    def test_censored(self):
        d = make_dataset([2], [0], 1, 2)
        assert log_likelihood(d, state_from([[0.0, 0.0]])) == pytest.approx(math.log(0.25), abs=1e-14)

    def test_beyond_horizon_is_survival_only(self):
        d = make_dataset([3], [1], 1, 2)
        assert log_likelihood(d, state_from([[0.0, 0.0]])) == pytest.approx(math.log(0.25), abs=1e-14)

    def test_matches_tvgeom_for_one_risk(self):
        rng = np.random.default_rng(4)
        t_max = 7
        alpha = rng.normal(-1, 1, (1, t_max))
        phi = 1 / (1 + np.exp(-alpha[0]))
        pmf = tvgeom_pmf(phi)
        times = rng.integers(1, t_max + 2, 40)
        d = make_dataset(times, np.ones(40, dtype=int), 1, t_max)
        assert log_likelihood(d, state_from(alpha)) == pytest.approx(np.log(pmf[times - 1]).sum(), abs=1e-10)

    def test_matches_naive_with_covariates(self):
        rng = np.random.default_rng(5)
        m, t_max, n = 2, 5, 30
        alpha = rng.normal(-2, 0.5, (m, t_max))
        beta = rng.normal(0, 0.5, (m, 2))
        x = rng.integers(0, 2, (n, 2)).astype(float)
        status = rng.integers(0, m + 1, n)
        times = np.where(status == 0, rng.integers(1, t_max + 1, n), rng.integers(1, t_max + 2, n))
        d = make_dataset(times, status, m, t_max, x)
        naive = 0.0
        for t, s, xi in zip(times, status, x):
            for l in range(1, min(t, t_max) + 1):
                lam, tot = hazards(alpha[:, l - 1] + beta @ xi)
                if l == t and s > 0 and t <= t_max:
                    naive += math.log(lam[s - 1])
                else:
                    naive += math.log1p(-tot)
        got = log_likelihood(d, state_from(alpha, beta))
        assert got == pytest.approx(naive, abs=1e-10)
        perm = rng.permutation(n)
        d2 = make_dataset(times[perm], status[perm], m, t_max, x[perm])
        assert log_likelihood(d2, state_from(alpha, beta)) == pytest.approx(got, abs=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="does not match"):
            log_likelihood(make_dataset([1], [1], 1, 2), state_from([[0.0]]))


class TestCumulativeHazard:
    def test_constant(self):
        s = state_from([[logit(0.1)] * 3])
        assert cumulative_hazard(s, [], 1)[2] == pytest.approx(0.3, abs=1e-14)

    def test_piecewise(self):
        s = state_from([[logit(0.2)] * 2 + [logit(0.05)] * 2])
        assert cumulative_hazard(s, [], 1)[3] == pytest.approx(0.5, abs=1e-14)

    def test_null_hazard(self):
        s = state_from([[-800.0] * 3])
        np.testing.assert_array_equal(cumulative_hazard(s, [], 1), 0.0)

    def test_bad_risk_and_profile(self):
        s = state_from([[0.0, 0.0]])
        with pytest.raises(ValueError):
            cumulative_hazard(s, [], 2)
        with pytest.raises(ValueError):
            cumulative_hazard(s, [1.0], 1)

    def test_nondecreasing(self):
        s = state_from(np.random.default_rng(0).normal(0, 3, (2, 10)))
        assert np.all(np.diff(cumulative_hazard(s, [], 2)) >= 0)
