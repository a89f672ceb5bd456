"""
Tests for the closed-form limit objects.
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from signals import InnovationSpec, PreconditionError, ar1_filter, fir2_filter, gen_innovations, filter_signal, white_filter
from theory import (
    DegenerateFilterError,
    autocovariance,
    cgamma_matrix,
    cgamma_truncation_bound,
    compute_limits,
    default_tau_cutoff,
    index_map,
    inverse_gram_limit_covariance,
    logdet_trace_sandwich,
    ls_limit_covariance,
    rho_variance,
    sample_autocovariance_covariance,
    sigma_matrix,
    snr_limit,
    vec_gamma_covariance,
)

AR1_SIGMA = np.array([[4 / 3, 2 / 3], [2 / 3, 4 / 3]])

filters = st.one_of(
    st.just(white_filter()),
    st.floats(-0.9, 0.9).map(ar1_filter),
    st.builds(fir2_filter, st.floats(0.5, 2.0), st.floats(-1.0, 1.0)),
)


# ==================== Second-order structure ====================

class TestAutocovariance:
    """Tests for R_u(tau)."""

    def test_white(self, white):
        """Test R_u for white input."""
        assert autocovariance(white, 1.0, 0) == 1.0
        assert autocovariance(white, 1.0, 1) == 0.0

    def test_ar1_closed_form(self):
        """Test R_u(tau) = a^"""
        f = ar1_filter(0.5)
        assert autocovariance(f, 1.0, 0) == pytest.approx(4 / 3, abs=1e-9)
        assert autocovariance(f, 1.0, 2) == pytest.approx(1 / 3, abs=1e-9)

    def test_symmetric_in_lag(self):
        """Test R_u(-tau) = R_u(tau)."""
        f = fir2_filter(1.0, 0.5)
        assert autocovariance(f, 2.0, -1) == autocovariance(f, 2.0, 1) == pytest.approx(1.0)


class TestSigmaMatrix:
    """Tests for Sigma."""

    def test_white_is_identity(self, white):
        """Test Sigma = I for white input."""
        np.testing.assert_array_equal(sigma_matrix(white, 1.0, 2), np.eye(2))

    def test_ar1(self):
        """Test the ar1(0.5) Sigma."""
        np.testing.assert_allclose(sigma_matrix(ar1_filter(0.5), 1.0, 2), AR1_SIGMA, atol=1e-9)

    @pytest.mark.parametrize("filt", [white_filter(), ar1_filter(0.9), fir2_filter(1.0, 0.5)])
    def test_positive_definite(self, filt):
        """Test positive definiteness for each preset."""
        assert np.all(np.linalg.eigvalsh(sigma_matrix(filt, 1.0, 5)) > 0)

    def test_spectral_zero_still_positive_definite(self):
        """Test a spectrum vanishing at one frequency."""
        # 1 + q^-1 vanishes at the Nyquist frequency only
        assert np.all(np.linalg.eigvalsh(sigma_matrix(fir2_filter(1.0, 1.0), 1.0, 6)) > 0)

    def test_nonpositive_order(self, white):
        """Test rejection of n = 0."""
        with pytest.raises(PreconditionError):
            sigma_matrix(white, 1.0, 0)


class TestIndexMap:
    """Tests for the C_Gamma index map."""

    @pytest.mark.parametrize("i", [1, 2, 3, 4])
    def test_diagonal(self, i):
        """Test diagonal entries of the index map."""
        assert index_map(i, i, 2) == (0, 0)

    def test_hand_values(self):
        """Test hand-computed index map entries."""
        assert index_map(1, 4, 2) == (1, 1)
        assert index_map(2, 3, 2) == (1, 1)

    def test_out_of_range(self):
        """Test index map bounds."""
        with pytest.raises(PreconditionError):
            index_map(0, 1, 2)
        with pytest.raises(PreconditionError):
            index_map(1, 5, 2)


# ==================== Fourth-order structure ====================

class TestCGamma:
    """Tests for C_Gamma."""

    def test_white_gaussian_scalar(self, white):
        """Test C_Gamma = 2 sigma_e^4 for white gaussian input."""
        C = cgamma_matrix(white, InnovationSpec.gaussian(2.0), 1)
        np.testing.assert_allclose(C, [[2 * 4.0]])

    def test_white_uniform_scalar(self, white):
        """Test C_Gamma = 0.8 sigma_e^4 for white uniform input."""
        C = cgamma_matrix(white, InnovationSpec.uniform(1.0), 1)
        np.testing.assert_allclose(C, [[0.8]])

    def test_entries_follow_index_map(self):
        """Test every entry against the lag formula."""
        f, innov, n = ar1_filter(0.5), InnovationSpec.mixture(1.0, 2.0), 3
        C = cgamma_matrix(f, innov, n)
        for i in range(1, n * n + 1):
            for j in range(1, n * n + 1):
                k, l = index_map(i, j, n)
                expected = sample_autocovariance_covariance(f, innov, k, l, tau_cutoff=f.K + n - 1)
                assert C[i - 1, j - 1] == pytest.approx(expected, rel=1e-12, abs=1e-15)

    def test_symmetric(self):
        """Test symmetry of C_Gamma."""
        C = cgamma_matrix(ar1_filter(0.7), InnovationSpec.uniform(1.0), 3)
        np.testing.assert_allclose(C, C.T)

    def test_vec_layout_is_psd(self):
        """Test that the vec layout is positive semidefinite."""
        C = cgamma_matrix(ar1_filter(0.5), InnovationSpec.gaussian(1.0), 3)
        V = vec_gamma_covariance(C, 3)
        assert np.min(np.linalg.eigvalsh(V)) > -1e-10

    def test_vec_layout_involution(self):
        """Test that the layout change is an involution."""
        C = cgamma_matrix(fir2_filter(1.0, 0.3), InnovationSpec.gaussian(1.0), 2)
        np.testing.assert_array_equal(vec_gamma_covariance(vec_gamma_covariance(C, 2), 2), C)

    def test_vec_layout_shape_checked(self):
        """Test the layout shape check."""
        with pytest.raises(PreconditionError):
            vec_gamma_covariance(np.eye(3), 2)

    @settings(max_examples=25, deadline=None)
    @given(a=st.floats(-0.9, 0.9), n=st.integers(1, 4), variance=st.floats(0.1, 4.0))
    def test_gaussian_equals_kurtosis_three_mixture(self, a, n, variance):
        """Test that C_Gamma depends on the innovations only through variance and kurtosis."""
        f = ar1_filter(a)
        np.testing.assert_allclose(
            cgamma_matrix(f, InnovationSpec.gaussian(variance), n),
            cgamma_matrix(f, InnovationSpec.mixture(variance, 3.0), n),
            rtol=1e-10, atol=1e-12 * variance**2,
        )

    @settings(max_examples=25, deadline=None)
    @given(filt=filters, n=st.integers(1, 4), family=st.sampled_from(["gaussian", "uniform"]))
    def test_doubling_cutoff_changes_nothing(self, filt, n, family):
        """Test that lags past the default cut-off contribute nothing."""
        innov = InnovationSpec.from_family(family, 1.0)
        T = default_tau_cutoff(filt, n)
        np.testing.assert_allclose(
            cgamma_matrix(filt, innov, n, tau_cutoff=max(1, 2 * T)),
            cgamma_matrix(filt, innov, n),
            rtol=1e-12, atol=1e-15,
        )

    def test_truncation_bound_zero_for_finite_filter(self, white):
        """Test a zero bound for a finite filter."""
        assert cgamma_truncation_bound(white, InnovationSpec.gaussian(1.0), 2) == 0.0

    def test_truncation_bound_small_for_ar1(self):
        """Test a negligible bound for ar1(0.5)."""
        assert cgamma_truncation_bound(ar1_filter(0.5), InnovationSpec.gaussian(1.0), 2) < 1e-8

    def test_short_cutoff_adds_neglected_mass(self):
        """Test that a short cut-off raises the bound."""
        f, innov = ar1_filter(0.5), InnovationSpec.gaussian(1.0)
        assert cgamma_truncation_bound(f, innov, 2, tau_cutoff=2) > cgamma_truncation_bound(f, innov, 2)

    def test_matches_long_run_oracle(self):
        """Test C_Gamma[0, 0] against a long-run simulation."""
        # N Var(sum u^2 / N) for ar1(0.5) gaussian against C_Gamma[0, 0]
        f, innov = ar1_filter(0.5), InnovationSpec.gaussian(1.0)
        N, reps = 20000, 300
        values = []
        for rep in range(reps):
            u = filter_signal(f, gen_innovations(innov, N + f.K, 1000 + rep))
            values.append(np.sqrt(N) * (np.mean(u * u) - 4 / 3))
        C00 = cgamma_matrix(f, innov, 2)[0, 0]
        assert np.var(values, ddof=1) == pytest.approx(C00, rel=0.25)


# ==================== Limits ====================

class TestLimitCovariances:
    """Tests for the LS and inverse-Gram limit covariances."""

    def test_ls_identity(self):
        """Test the LS covariance for Sigma = I."""
        np.testing.assert_allclose(ls_limit_covariance(np.eye(2), 1.0), np.eye(2))

    def test_ls_ar1(self):
        """Test the LS covariance for ar1(0.5)."""
        np.testing.assert_allclose(
            ls_limit_covariance(AR1_SIGMA, 0.25), [[0.25, -0.125], [-0.125, 0.25]], atol=1e-12
        )

    def test_ls_zero_noise(self):
        """Test a zero covariance without noise."""
        np.testing.assert_array_equal(ls_limit_covariance(AR1_SIGMA, 0.0), np.zeros((2, 2)))

    def test_ls_singular(self):
        """Test the degenerate filter error."""
        with pytest.raises(DegenerateFilterError):
            ls_limit_covariance(np.ones((2, 2)), 1.0)

    def test_inverse_gram_white_scalar(self, white):
        """Test the inverse-Gram covariance for n = 1."""
        # n=1 white gaussian: Var of -Gamma is C_Gamma = 2
        C = cgamma_matrix(white, InnovationSpec.gaussian(1.0), 1)
        np.testing.assert_allclose(inverse_gram_limit_covariance(np.eye(1), C), [[2.0]])


class TestScalars:
    """Tests for rho variance, SNR limit and the log-det sandwich."""

    @pytest.mark.parametrize("spec,expected", [
        (InnovationSpec.gaussian(1.0), 2.0),
        (InnovationSpec.uniform(1.0), 0.8),
        (InnovationSpec.gaussian(2.0), 8.0),
    ])
    def test_rho_variance(self, spec, expected):
        """Test E[v^4] - sigma^4 per family."""
        assert rho_variance(spec) == pytest.approx(expected)

    def test_snr_limit(self):
        """Test theta0^T Sigma theta0 / sigma^2."""
        assert snr_limit(np.zeros(2), AR1_SIGMA, 1.0) == 0.0
        assert snr_limit(np.ones(2), AR1_SIGMA, 1.0) == pytest.approx(4.0)
        theta = np.array([1.0, 2.0])
        assert snr_limit(theta, np.eye(2), 0.5) == pytest.approx(10.0)

    def test_snr_limit_needs_positive_sigma2(self):
        """Test rejection of sigma^2 = 0."""
        with pytest.raises(PreconditionError):
            snr_limit(np.ones(2), np.eye(2), 0.0)

    def test_logdet_sandwich_identity(self):
        """Test the sandwich at the identity."""
        lower, logdet, upper = logdet_trace_sandwich(np.eye(3))
        assert lower == pytest.approx(0.0)
        assert logdet == pytest.approx(0.0)
        assert upper == pytest.approx(0.0)

    def test_logdet_sandwich_ordering(self):
        """Test lower <= log det <= upper."""
        lower, logdet, upper = logdet_trace_sandwich(np.diag([0.5, 2.0, 4.0]))
        assert lower <= logdet <= upper
        assert logdet == pytest.approx(np.log(4.0))


class TestComputeLimits:
    """Tests for compute_limits."""

    def test_bundle(self):
        """Test the TheoryLimits bundle for ar1(0.5)."""
        limits = compute_limits(ar1_filter(0.5), InnovationSpec.gaussian(1.0), InnovationSpec.gaussian(0.25),
                                np.array([1.0, 1.0]))
        assert limits.n == 2
        np.testing.assert_allclose(limits.Sigma, AR1_SIGMA, atol=1e-9)
        np.testing.assert_allclose(limits.SigmaInv, [[1.0, -0.5], [-0.5, 1.0]], atol=1e-9)
        np.testing.assert_allclose(limits.ls_cov, [[0.25, -0.125], [-0.125, 0.25]], atol=1e-9)
        assert limits.rho_var == pytest.approx(2 * 0.25**2)
        assert limits.snr_limit == pytest.approx(16.0)
        assert limits.CGamma.shape == (4, 4)
