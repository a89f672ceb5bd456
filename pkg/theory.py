"""
Closed-form limit objects for LS identification of FIR models driven by
filtered white noise: autocovariances, Sigma, the fourth-order covariance
C_Gamma and the limit covariances built from them.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigvalsh, toeplitz

from config import RANK_TOLERANCE
from logger import get_logger
from signals import FilterSpec, InnovationSpec, PreconditionError

logger = get_logger("theory")


class DegenerateFilterError(ValueError):
    """Sigma is numerically singular for the requested filter and order."""
    pass


def autocovariance(filt: FilterSpec, sigma_e2: float, tau: int) -> float:
    """R_u(tau) = sigma_e^2 sum_k h(k) h(k+|tau|) over the truncated support."""
    h = filt.coeffs
    lag = abs(int(tau))
    if lag > filt.K:
        return 0.0
    return sigma_e2 * math.fsum(h[: h.size - lag] * h[lag:])


def autocovariance_sequence(filt: FilterSpec, sigma_e2: float, max_lag: int) -> np.ndarray:
    """R_u(0), ..., R_u(max_lag), zero beyond the filter support."""
    out = np.zeros(max_lag + 1)
    for tau in range(min(max_lag, filt.K) + 1):
        out[tau] = autocovariance(filt, sigma_e2, tau)
    return out


def sigma_matrix(filt: FilterSpec, sigma_e2: float, n: int) -> np.ndarray:
    """
    Toeplitz Sigma with [Sigma]_{i,j} = R_u(|i-j|).

    Raises:
        DegenerateFilterError: If min eigenvalue <= RANK_TOLERANCE * max eigenvalue
    """
    if n < 1:
        raise PreconditionError(f"order n must be positive, got {n}")
    Sigma = toeplitz(autocovariance_sequence(filt, sigma_e2, n - 1))

    eig = eigvalsh(Sigma)
    if eig[0] <= RANK_TOLERANCE * eig[-1]:
        raise DegenerateFilterError(
            f"Sigma is numerically singular for filter {filt.name} at n={n} "
            f"(eigenvalues {eig[0]:.3e} .. {eig[-1]:.3e})"
        )
    return Sigma


def index_map(i: int, j: int, n: int) -> Tuple[int, int]:
    """
    Lag pair (k, l) of the C_Gamma entry (i, j), both indices 1-based in 1..n^2.
    """
    if n < 1 or not (1 <= i <= n * n and 1 <= j <= n * n):
        raise PreconditionError(f"indices ({i}, {j}) out of range 1..{n * n}")
    bi, bj = (i - 1) // n, (j - 1) // n
    k = abs(bi - bj)
    l = abs(i - j - bi * n + bj * n)
    return k, l


def _lagged(R: np.ndarray, lags: np.ndarray) -> np.ndarray:
    idx = np.abs(lags)
    out = np.zeros(lags.shape)
    inside = idx < R.size
    out[inside] = R[idx[inside]]
    return out


def _fourth_order_entry(R: np.ndarray, excess: float, tau: int, tau_prime: int, cutoff: int) -> float:
    taus = np.arange(-cutoff, cutoff + 1)
    first = math.fsum(_lagged(R, taus) * _lagged(R, taus + tau - tau_prime))
    second = math.fsum(_lagged(R, taus + tau) * _lagged(R, taus - tau_prime))
    return excess * _lagged(R, np.array([tau]))[0] * _lagged(R, np.array([tau_prime]))[0] + first + second


def default_tau_cutoff(filt: FilterSpec, n: int) -> int:
    """Cut-off beyond which every term of the tau-sum vanishes for the truncated filter."""
    return filt.K + n - 1


def sample_autocovariance_covariance(
    filt: FilterSpec,
    innov: InnovationSpec,
    tau: int,
    tau_prime: int,
    tau_cutoff: Optional[int] = None,
) -> float:
    """
    lim N * Cov(gamma_hat(tau), gamma_hat(tau')) for u = H(q)e.

    (c - 3) R(tau) R(tau') + sum_t [R(t) R(t+tau-tau') + R(t+tau) R(t-tau')]
    """
    T = tau_cutoff if tau_cutoff is not None else filt.K + abs(tau) + abs(tau_prime)
    R = autocovariance_sequence(filt, innov.variance, filt.K)
    return _fourth_order_entry(R, innov.kurtosis - 3.0, tau, tau_prime, T)


def _lag_table(filt: FilterSpec, innov: InnovationSpec, n: int, cutoff: int) -> np.ndarray:
    R = autocovariance_sequence(filt, innov.variance, filt.K)
    excess = innov.kurtosis - 3.0
    table = np.empty((n, n))
    for k in range(n):
        for l in range(k, n):
            table[k, l] = table[l, k] = _fourth_order_entry(R, excess, k, l, cutoff)
    return table


def _lag_indices(n: int) -> Tuple[np.ndarray, np.ndarray]:
    idx = np.arange(n * n)
    block, offset = idx // n, idx % n
    kmat = np.abs(block[:, None] - block[None, :])
    lmat = np.abs(offset[:, None] - offset[None, :])
    return kmat, lmat


def cgamma_matrix(
    filt: FilterSpec,
    innov: InnovationSpec,
    n: int,
    tau_cutoff: Optional[int] = None,
) -> np.ndarray:
    """
    n^2 x n^2 matrix C_Gamma = E(Gamma (x) Gamma).

    Entry (i, j) is the fourth-order lag formula evaluated at index_map(i, j, n).
    Only the n^2 distinct lag pairs are summed.
    """
    if n < 1:
        raise PreconditionError(f"order n must be positive, got {n}")
    T = default_tau_cutoff(filt, n) if tau_cutoff is None else int(tau_cutoff)
    if T < 0:
        raise PreconditionError("tau_cutoff must be nonnegative")

    table = _lag_table(filt, innov, n, T)
    kmat, lmat = _lag_indices(n)
    C = table[kmat, lmat]
    logger.debug(f"C_Gamma built for n={n}, kurtosis={innov.kurtosis:.4f}, T={T}")
    return C


def cgamma_truncation_bound(
    filt: FilterSpec,
    innov: InnovationSpec,
    n: int,
    tau_cutoff: Optional[int] = None,
) -> float:
    """
    Entrywise bound on the distance between C_Gamma of the truncated filter and
    of the untruncated one, plus the neglected tau-mass for a short cut-off.
    """
    sigma_e2 = innov.variance
    tail = filt.declared_tail_bound
    H1 = math.fsum(np.abs(filt.coeffs)) + tail
    D = sigma_e2 * (2.0 * H1 * tail + tail**2)
    bound = (abs(innov.kurtosis - 3.0) + 4.0) * sigma_e2 * H1**2 * D

    full = default_tau_cutoff(filt, n)
    if tau_cutoff is not None and tau_cutoff < full:
        exact = _lag_table(filt, innov, n, full)
        short = _lag_table(filt, innov, n, tau_cutoff)
        bound += float(np.max(np.abs(exact - short)))
    return bound


def vec_gamma_covariance(CGamma: np.ndarray, n: int) -> np.ndarray:
    """
    Rearrange E(Gamma (x) Gamma) into Cov(vec Gamma).

    Cov(vec Gamma)[(p,q), (r,s)] = E[Gamma_pq Gamma_rs] = C_Gamma[(p,r), (q,s)].
    """
    if CGamma.shape != (n * n, n * n):
        raise PreconditionError(f"C_Gamma must be {n * n}x{n * n}, got {CGamma.shape}")
    return CGamma.reshape(n, n, n, n).transpose(0, 2, 1, 3).reshape(n * n, n * n)


def _spd_inverse(A: np.ndarray, what: str) -> np.ndarray:
    try:
        factor = cho_factor(A)
    except LinAlgError as e:
        raise DegenerateFilterError(f"{what} is not positive definite") from e
    inv = cho_solve(factor, np.eye(A.shape[0]))
    return 0.5 * (inv + inv.T)


def ls_limit_covariance(Sigma: np.ndarray, sigma2: float) -> np.ndarray:
    """Covariance sigma^2 Sigma^-1 of the limit of sqrt(N)(theta_ls - theta0)."""
    if sigma2 < 0:
        raise PreconditionError("sigma2 must be nonnegative")
    return sigma2 * _spd_inverse(Sigma, "Sigma")


def inverse_gram_limit_covariance(SigmaInv: np.ndarray, CGamma: np.ndarray) -> np.ndarray:
    """
    Cov(vec) of the limit of sqrt(N)(N (Phi^T Phi)^-1 - Sigma^-1) = -Sigma^-1 Gamma Sigma^-1.
    """
    n = SigmaInv.shape[0]
    K = np.kron(SigmaInv, SigmaInv)
    V = vec_gamma_covariance(CGamma, n)
    cov = K @ V @ K.T
    return 0.5 * (cov + cov.T)


def rho_variance(innov_v: InnovationSpec) -> float:
    """E[v^4] - sigma^4."""
    return innov_v.moment4 - innov_v.variance**2


def snr_limit(theta0: np.ndarray, Sigma: np.ndarray, sigma2: float) -> float:
    """theta0^T Sigma theta0 / sigma^2."""
    if not sigma2 > 0:
        raise PreconditionError("sigma2 must be positive")
    theta0 = np.asarray(theta0, dtype=float)
    return float(theta0 @ Sigma @ theta0 / sigma2)


def logdet_trace_sandwich(A: np.ndarray) -> Tuple[float, float, float]:
    """
    (Tr(I - A^-1), logdet A, Tr(A - I)) for symmetric positive definite A.

    The first never exceeds the second, the second never exceeds the third.
    """
    A = np.asarray(A, dtype=float)
    try:
        c, lower = cho_factor(A)
    except LinAlgError as e:
        raise PreconditionError("matrix is not positive definite") from e
    m = A.shape[0]
    logdet = 2.0 * math.fsum(np.log(np.diag(c)))
    inv_trace = float(np.trace(cho_solve((c, lower), np.eye(m))))
    return m - inv_trace, logdet, float(np.trace(A)) - m


@dataclass
class TheoryLimits:
    """Exact targets for one experiment configuration."""
    Sigma: np.ndarray
    SigmaInv: np.ndarray
    CGamma: np.ndarray
    CGammaVec: np.ndarray
    ls_cov: np.ndarray
    inv_gram_cov: np.ndarray
    rho_var: float
    snr_limit: float
    sigma2: float
    sigma_e2: float
    truncation_error_bound: float

    @property
    def n(self) -> int:
        return self.Sigma.shape[0]


def compute_limits(
    filt: FilterSpec,
    innov_u: InnovationSpec,
    innov_v: InnovationSpec,
    theta0: np.ndarray,
    tau_cutoff: Optional[int] = None,
) -> TheoryLimits:
    """Compute every limit object for (filter, innovations, theta0)."""
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    n = theta0.size
    sigma2 = innov_v.variance

    Sigma = sigma_matrix(filt, innov_u.variance, n)
    SigmaInv = _spd_inverse(Sigma, "Sigma")
    CGamma = cgamma_matrix(filt, innov_u, n, tau_cutoff)

    limits = TheoryLimits(
        Sigma=Sigma,
        SigmaInv=SigmaInv,
        CGamma=CGamma,
        CGammaVec=vec_gamma_covariance(CGamma, n),
        ls_cov=sigma2 * SigmaInv,
        inv_gram_cov=inverse_gram_limit_covariance(SigmaInv, CGamma),
        rho_var=rho_variance(innov_v),
        snr_limit=snr_limit(theta0, Sigma, sigma2),
        sigma2=sigma2,
        sigma_e2=innov_u.variance,
        truncation_error_bound=cgamma_truncation_bound(filt, innov_u, n, tau_cutoff),
    )
    logger.info(
        f"Limits ready: n={n}, filter={filt.name}, rho_var={limits.rho_var:.4g}, "
        f"snr_limit={limits.snr_limit:.4g}"
    )
    return limits
