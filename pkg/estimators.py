"""
LS and kernel-regularized LS estimators for FIR models, the regularized
information matrix S_hat(eta) = P(eta) + sigma2_hat (Phi^T Phi)^-1 and the
matrix-inverse derivative and gap identities built on it.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, qr, solve, solve_triangular

from config import RANK_TOLERANCE, ConfigError
from logger import get_logger
from signals import PreconditionError

logger = get_logger("estimators")

KERNEL_FAMILIES = {"ridge": ("eta",), "dc": ("c", "lambda", "rho"), "tc": ("c", "lambda")}


class EstimationError(ValueError):
    """Estimation failed (rank-deficient regressors, singular kernel, boundary hyper-parameters)."""
    pass


# =============================================================================
# Least squares
# =============================================================================

def _checked_qr(phi: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    phi = np.asarray(phi, dtype=float)
    N, n = phi.shape
    if N < n:
        raise EstimationError(f"Phi is rank deficient: {N} rows for {n} columns")
    Q, R, piv = qr(phi, mode="economic", pivoting=True)
    pivots = np.abs(np.diag(R))
    if pivots[0] == 0.0 or pivots[-1] <= RANK_TOLERANCE * pivots[0]:
        rank = int(np.sum(pivots > RANK_TOLERANCE * pivots[0])) if pivots[0] > 0 else 0
        raise EstimationError(
            f"Phi is rank deficient: numerical rank {rank} < n={n} "
            f"(smallest/largest pivot {pivots[-1]:.3e}/{pivots[0]:.3e})"
        )
    return Q, R, piv


def ls_estimate(phi: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """
    (Phi^T Phi)^-1 Phi^T Y through a column-pivoted QR factorization.

    Raises:
        EstimationError: If Phi does not have full column rank
    """
    Q, R, piv = _checked_qr(phi)
    theta = np.empty(R.shape[1])
    theta[piv] = solve_triangular(R, Q.T @ np.asarray(Y, dtype=float))
    return theta


def inverse_gram(phi: np.ndarray) -> np.ndarray:
    """(Phi^T Phi)^-1 from the triangular factor of Phi."""
    _, R, piv = _checked_qr(phi)
    n = R.shape[1]
    Rinv = solve_triangular(R, np.eye(n))
    inv = np.empty((n, n))
    inv[np.ix_(piv, piv)] = Rinv @ Rinv.T
    return 0.5 * (inv + inv.T)


def noise_variance_estimate(Y: np.ndarray, phi: np.ndarray, theta_ls: np.ndarray) -> float:
    """||Y - Phi theta_ls||^2 / (N - n)."""
    phi = np.asarray(phi, dtype=float)
    N, n = phi.shape
    if N <= n:
        raise PreconditionError(f"N > n required (n={n}, N={N})")
    resid = np.asarray(Y, dtype=float) - phi @ np.asarray(theta_ls, dtype=float)
    return math.fsum(resid * resid) / (N - n)


# =============================================================================
# Kernel matrices
# =============================================================================

@dataclass(frozen=True)
class KernelSpec:
    """
    Kernel family and hyper-parameters.

    ridge: (eta,) with eta > 0
    dc:    (c, lambda, rho) with c > 0, 0 < lambda < 1, |rho| <= 1
    tc:    (c, lambda) with c > 0, 0 < lambda < 1
    """
    family: str
    eta: Tuple[float, ...]
    n: int

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ConfigError(f"Unknown kernel family '{self.family}'. Must be one of {list(KERNEL_FAMILIES)}")
        object.__setattr__(self, "eta", tuple(float(x) for x in self.eta))
        names = KERNEL_FAMILIES[self.family]
        if len(self.eta) != len(names):
            raise ConfigError(f"{self.family} kernel takes {len(names)} hyper-parameters {names}, got {len(self.eta)}")
        if self.n < 1:
            raise ConfigError(f"kernel order must be positive, got n={self.n}")

        if self.family == "ridge":
            if not self.eta[0] > 0:
                raise ConfigError(f"ridge kernel needs eta > 0, got {self.eta[0]}")
            return
        c, lam = self.eta[0], self.eta[1]
        if not c > 0:
            raise ConfigError(f"{self.family} kernel needs c > 0, got {c}")
        if not 0 < lam < 1:
            raise ConfigError(f"{self.family} kernel needs 0 < lambda < 1, got {lam}")
        if self.family == "dc" and not abs(self.eta[2]) <= 1:
            raise ConfigError(f"dc kernel needs |rho| <= 1, got {self.eta[2]}")

    @property
    def p(self) -> int:
        return len(self.eta)

    def with_eta(self, eta) -> "KernelSpec":
        return KernelSpec(family=self.family, eta=tuple(eta), n=self.n)


def _grid(n: int) -> Tuple[np.ndarray, np.ndarray]:
    idx = np.arange(1, n + 1, dtype=float)
    return idx[:, None], idx[None, :]


def kernel_matrix(spec: KernelSpec) -> np.ndarray:
    """Materialize P(eta)."""
    n = spec.n
    if spec.family == "ridge":
        return spec.eta[0] * np.eye(n)
    i, j = _grid(n)
    if spec.family == "dc":
        c, lam, rho = spec.eta
        return c * rho ** np.abs(i - j) * lam ** ((i + j) / 2.0)
    c, lam = spec.eta
    return c * lam ** np.maximum(i, j)


def _check_index(spec: KernelSpec, k: int) -> None:
    if not 0 <= k < spec.p:
        raise PreconditionError(f"hyper-parameter index {k} out of range 0..{spec.p - 1} for {spec.family}")


def _check_interior(spec: KernelSpec) -> None:
    if spec.family == "dc" and not abs(spec.eta[2]) < 1:
        raise EstimationError("dc kernel derivatives need |rho| < 1 (rho is on the boundary)")


def _dc_rho_terms(spec: KernelSpec) -> Tuple[np.ndarray, np.ndarray]:
    # d rho^d / d rho and d^2 rho^d / d rho^2 without negative powers of rho
    _, _, rho = spec.eta
    i, j = _grid(spec.n)
    d = np.abs(i - j)
    first = d * rho ** np.maximum(d - 1, 0)
    second = d * (d - 1) * rho ** np.maximum(d - 2, 0)
    return first, second


def kernel_gradient(spec: KernelSpec, k: int) -> np.ndarray:
    """Analytic dP/d eta_k (k is 0-based)."""
    _check_index(spec, k)
    _check_interior(spec)
    n = spec.n
    if spec.family == "ridge":
        return np.eye(n)

    P = kernel_matrix(spec)
    i, j = _grid(n)
    c, lam = spec.eta[0], spec.eta[1]
    if k == 0:
        return P / c
    if spec.family == "tc":
        return P * np.maximum(i, j) / lam
    s = (i + j) / 2.0
    if k == 1:
        return P * s / lam
    drho, _ = _dc_rho_terms(spec)
    return c * drho * lam**s


def kernel_hessian(spec: KernelSpec, k: int, l: int) -> np.ndarray:
    """Analytic d^2 P / d eta_k d eta_l."""
    _check_index(spec, k)
    _check_index(spec, l)
    _check_interior(spec)
    n = spec.n
    if spec.family == "ridge":
        return np.zeros((n, n))

    k, l = sorted((k, l))
    P = kernel_matrix(spec)
    i, j = _grid(n)
    c, lam = spec.eta[0], spec.eta[1]
    if (k, l) == (0, 0):
        return np.zeros((n, n))

    if spec.family == "tc":
        m = np.maximum(i, j)
        if (k, l) == (0, 1):
            return P * m / (c * lam)
        return P * m * (m - 1) / lam**2

    s = (i + j) / 2.0
    drho, d2rho = _dc_rho_terms(spec)
    if (k, l) == (0, 1):
        return P * s / (c * lam)
    if (k, l) == (0, 2):
        return drho * lam**s
    if (k, l) == (1, 1):
        return P * s * (s - 1) / lam**2
    if (k, l) == (1, 2):
        return c * drho * s * lam ** (s - 1)
    return c * d2rho * lam**s


# =============================================================================
# Regularized least squares
# =============================================================================

@dataclass
class RlsFit:
    """
    Regularized LS fit.

    s_hat_inv is (P + sigma2_used (Phi^T Phi)^-1)^-1; None only when sigma2_used is 0
    and P is singular.
    """
    theta_tr: np.ndarray
    P: np.ndarray
    sigma2_used: float
    s_hat_inv: Optional[np.ndarray]


def _spd_inverse(A: np.ndarray, message: str) -> np.ndarray:
    try:
        factor = cho_factor(A)
    except LinAlgError as e:
        raise EstimationError(message) from e
    inv = cho_solve(factor, np.eye(A.shape[0]))
    return 0.5 * (inv + inv.T)


def kernel_inverse(P: np.ndarray) -> np.ndarray:
    """P^-1 by Cholesky."""
    return _spd_inverse(P, "kernel matrix P is singular; use a positive definite kernel")


def rls_estimate_dual(phi: np.ndarray, Y: np.ndarray, P: np.ndarray, sigma2: float) -> np.ndarray:
    """
    P Phi^T Q^-1 Y with Q = Phi P Phi^T + sigma2 I_N.

    Materializes the N x N matrix Q; kept as a reference for rls_estimate on small N.
    """
    phi = np.asarray(phi, dtype=float)
    N = phi.shape[0]
    if not sigma2 > 0:
        raise EstimationError("N x N form needs sigma2 > 0 (Q is singular otherwise)")
    Q = phi @ P @ phi.T + sigma2 * np.eye(N)
    return P @ phi.T @ solve(Q, np.asarray(Y, dtype=float), assume_a="pos")


def rls_estimate(phi: np.ndarray, Y: np.ndarray, P: np.ndarray, sigma2: float) -> RlsFit:
    """
    (Phi^T Phi + sigma2 P^-1)^-1 Phi^T Y.

    sigma2 must be chosen by the caller (true noise variance or its estimate).
    sigma2 = 0 returns the LS estimate.

    Raises:
        EstimationError: If Phi is rank deficient, or P is singular while sigma2 > 0
    """
    phi = np.asarray(phi, dtype=float)
    Y = np.asarray(Y, dtype=float)
    P = np.asarray(P, dtype=float)
    if sigma2 < 0:
        raise PreconditionError("sigma2 must be nonnegative")

    if sigma2 == 0:
        theta = ls_estimate(phi, Y)
        try:
            s_hat_inv = kernel_inverse(P)
        except EstimationError:
            s_hat_inv = None
        return RlsFit(theta_tr=theta, P=P, sigma2_used=0.0, s_hat_inv=s_hat_inv)

    P_inv = kernel_inverse(P)
    G_inv = inverse_gram(phi)
    A = phi.T @ phi + sigma2 * P_inv
    theta = cho_solve(cho_factor(A), phi.T @ Y)
    s_hat_inv = _spd_inverse(P + sigma2 * G_inv, "S_hat is not positive definite")
    logger.debug(f"RLS fit: N={phi.shape[0]} sigma2={sigma2:.6g}")
    return RlsFit(theta_tr=theta, P=P, sigma2_used=float(sigma2), s_hat_inv=s_hat_inv)


# =============================================================================
# S_hat(eta) and its identities
# =============================================================================

def s_hat_from_inverse_gram(P: np.ndarray, sigma2_hat: float, inv_gram: np.ndarray) -> np.ndarray:
    """P + sigma2_hat * (Phi^T Phi)^-1 with a precomputed inverse Gram matrix."""
    S = P + sigma2_hat * inv_gram
    return 0.5 * (S + S.T)


def s_hat(P: np.ndarray, sigma2_hat: float, phi: np.ndarray) -> np.ndarray:
    """P + sigma2_hat * (Phi^T Phi)^-1."""
    if sigma2_hat == 0:
        return np.array(P, dtype=float)
    return s_hat_from_inverse_gram(P, sigma2_hat, inverse_gram(phi))


def s_hat_inverse(P: np.ndarray, sigma2_hat: float, phi: Optional[np.ndarray] = None,
                  inv_gram: Optional[np.ndarray] = None) -> np.ndarray:
    """S_hat^-1 by Cholesky; pass either phi or its precomputed inverse Gram matrix."""
    if sigma2_hat == 0:
        return kernel_inverse(P)
    G_inv = inverse_gram(phi) if inv_gram is None else inv_gram
    return _spd_inverse(s_hat_from_inverse_gram(P, sigma2_hat, G_inv), "S_hat is not positive definite")


def shat_gap_identity(P: np.ndarray, sigma2_hat: float, phi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Both sides of S_hat^-1 - P^-1 = -sigma2_hat S_hat^-1 (Phi^T Phi)^-1 P^-1.
    """
    P_inv = kernel_inverse(P)
    G_inv = inverse_gram(phi)
    S_inv = s_hat_inverse(P, sigma2_hat, phi, G_inv)
    lhs = S_inv - P_inv
    rhs = -sigma2_hat * S_inv @ G_inv @ P_inv
    return lhs, rhs


def _first_derivative(M_inv: np.ndarray, dP: np.ndarray) -> np.ndarray:
    return -M_inv @ dP @ M_inv


def _second_derivative(M_inv: np.ndarray, dPk: np.ndarray, dPl: np.ndarray, d2P: np.ndarray) -> np.ndarray:
    return (
        M_inv @ dPl @ M_inv @ dPk @ M_inv
        - M_inv @ d2P @ M_inv
        + M_inv @ dPk @ M_inv @ dPl @ M_inv
    )


def pinv_derivative_1(spec: KernelSpec, k: int) -> np.ndarray:
    """d P^-1 / d eta_k = -P^-1 (dP/d eta_k) P^-1."""
    return _first_derivative(kernel_inverse(kernel_matrix(spec)), kernel_gradient(spec, k))


def pinv_derivative_2(spec: KernelSpec, k: int, l: int) -> np.ndarray:
    """d^2 P^-1 / d eta_k d eta_l."""
    P_inv = kernel_inverse(kernel_matrix(spec))
    return _second_derivative(P_inv, kernel_gradient(spec, k), kernel_gradient(spec, l), kernel_hessian(spec, k, l))


def shat_derivative_1(spec: KernelSpec, k: int, sigma2_hat: float, phi: Optional[np.ndarray] = None,
                      inv_gram: Optional[np.ndarray] = None) -> np.ndarray:
    """d S_hat^-1 / d eta_k = -S_hat^-1 (dP/d eta_k) S_hat^-1."""
    S_inv = s_hat_inverse(kernel_matrix(spec), sigma2_hat, phi, inv_gram)
    return _first_derivative(S_inv, kernel_gradient(spec, k))


def shat_derivative_2(spec: KernelSpec, k: int, l: int, sigma2_hat: float, phi: Optional[np.ndarray] = None,
                      inv_gram: Optional[np.ndarray] = None) -> np.ndarray:
    """d^2 S_hat^-1 / d eta_k d eta_l (same three-term form as for P^-1)."""
    S_inv = s_hat_inverse(kernel_matrix(spec), sigma2_hat, phi, inv_gram)
    return _second_derivative(S_inv, kernel_gradient(spec, k), kernel_gradient(spec, l), kernel_hessian(spec, k, l))


def ridge_taylor_gap(
    eta_hat: float,
    eta_star: float,
    sigma2_hat: float,
    phi: Optional[np.ndarray] = None,
    n: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    For P = eta I: S_hat(eta_hat)^-1 - P(eta_star)^-1 and the two-term expansion

        -(eta_hat - eta_star) S_hat^-1 P*^-1 - sigma2_hat S_hat^-1 (Phi^T Phi)^-1 P*^-1

    Phi may be omitted when sigma2_hat is 0, in which case n must be given.
    """
    if not (eta_hat > 0 and eta_star > 0):
        raise PreconditionError("ridge hyper-parameters must be positive")
    if phi is None:
        if sigma2_hat != 0:
            raise PreconditionError("phi is required when sigma2_hat > 0")
        if n is None:
            raise PreconditionError("n is required when phi is omitted")
        G_inv = np.zeros((n, n))
    else:
        n = np.asarray(phi).shape[1]
        G_inv = inverse_gram(phi)

    P_star_inv = np.eye(n) / eta_star
    S_inv = s_hat_inverse(eta_hat * np.eye(n), sigma2_hat, phi, G_inv)
    lhs = S_inv - P_star_inv
    rhs = -(eta_hat - eta_star) * S_inv @ P_star_inv - sigma2_hat * S_inv @ G_inv @ P_star_inv
    return lhs, rhs
