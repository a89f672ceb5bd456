"""
Data generation for FIR identification experiments.

Builds innovation sequences, stationary filtered-white-noise inputs and the
regression data (Phi, Y) of y(t) = sum_i g_i u(t - i) + v(t).
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np
from numpy.random import SeedSequence
from scipy.linalg import toeplitz
from scipy.signal import lfilter

from config import TRUNCATION_TOLERANCE, ConfigError
from logger import get_logger

logger = get_logger("signals")

# Stream tags mixed into the seed derivation ('u' and 'v')
U_STREAM_TAG = 0x75
V_STREAM_TAG = 0x76

FAMILIES = ("gaussian", "uniform", "mixture")

# Even moments of a standard normal: E g^8, E g^16
_GAUSS_M8 = 105.0
_GAUSS_M16 = 2027025.0

_MOMENT_RTOL = 1e-12


class PreconditionError(ValueError):
    """An operation was called with inputs outside its preconditions."""
    pass


@dataclass
class FilterSpec:
    """
    Impulse response h(0..K) of the stable input filter H(q).

    declared_tail_bound bounds sum_{k>K} |h(k)| for filters that were truncated
    from a closed form; it is 0 for inherently finite filters.
    """
    coeffs: np.ndarray
    declared_tail_bound: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        self.coeffs = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        if self.coeffs.ndim != 1 or self.coeffs.size == 0:
            raise PreconditionError("filter coefficients must be a nonempty 1-D sequence")
        if not np.all(np.isfinite(self.coeffs)):
            raise PreconditionError("filter coefficients must be finite")
        if not np.any(self.coeffs):
            raise PreconditionError("filter coefficients are all zero")
        if self.declared_tail_bound < 0:
            raise PreconditionError("declared_tail_bound must be nonnegative")

    @property
    def K(self) -> int:
        return self.coeffs.size - 1

    @property
    def abs_sum(self) -> float:
        """Upper bound on sum_k |h(k)| of the untruncated filter."""
        return math.fsum(np.abs(self.coeffs)) + self.declared_tail_bound


def white_filter() -> FilterSpec:
    """H(q) = 1."""
    return FilterSpec(coeffs=np.array([1.0]), name="white")


def ar1_filter(a: float, tolerance: float = TRUNCATION_TOLERANCE) -> FilterSpec:
    """
    First-order autoregressive filter H(q) = 1 / (1 - a q^-1), h(k) = a^k.

    K is the smallest truncation with geometric tail |a|^(K+1) / (1 - |a|) <= tolerance.
    """
    if not -1.0 < a < 1.0:
        raise PreconditionError(f"ar1 filter needs |a| < 1, got a={a}")
    if tolerance <= 0:
        raise PreconditionError("truncation tolerance must be positive")
    r = abs(a)

    K = 0
    tail = r / (1.0 - r)
    while tail > tolerance:
        K += 1
        tail = r ** (K + 1) / (1.0 - r)

    coeffs = a ** np.arange(K + 1, dtype=float)
    logger.debug(f"ar1({a}) truncated at K={K}, tail bound {tail:.3e}")
    return FilterSpec(coeffs=coeffs, declared_tail_bound=tail, name=f"ar1({a})")


def fir2_filter(h0: float, h1: float) -> FilterSpec:
    """Two-tap moving average H(q) = h0 + h1 q^-1."""
    return FilterSpec(coeffs=np.array([h0, h1], dtype=float), name=f"fir2({h0},{h1})")


def _mixture_scales(kurtosis: float) -> Tuple[float, float]:
    # Half Rademacher scaled by a, half gaussian scaled by b, a^2 + b^2 = 2
    d = (1.0 - math.sqrt(max(2.0 * kurtosis - 3.0, 0.0))) / 2.0
    return math.sqrt(1.0 + d), math.sqrt(1.0 - d)


def _standard_moments(family: str, kurtosis: Optional[float]) -> Tuple[float, float, float]:
    """E z^4, E z^8, E z^16 for the unit-variance member of a family."""
    if family == "gaussian":
        return 3.0, _GAUSS_M8, _GAUSS_M16
    if family == "uniform":
        # z uniform on [-sqrt3, sqrt3]: E z^2k = 3^k / (2k + 1)
        return 9.0 / 5.0, 81.0 / 9.0, 6561.0 / 17.0
    if family == "mixture":
        a, b = _mixture_scales(kurtosis)
        return (
            0.5 * a**4 + 1.5 * b**4,
            0.5 * a**8 + 0.5 * _GAUSS_M8 * b**8,
            0.5 * a**16 + 0.5 * _GAUSS_M16 * b**16,
        )
    raise ConfigError(f"Unsupported innovation family '{family}'. Must be one of {list(FAMILIES)}")


def _close(stored: float, expected: float) -> bool:
    return abs(stored - expected) <= _MOMENT_RTOL * abs(expected)


@dataclass(frozen=True)
class InnovationSpec:
    """
    Distribution of an i.i.d. zero-mean sequence (e(t) or v(t)).

    moment8 / moment16 set to None mark the moment as unavailable, which makes
    the higher-order moment-bound checks report `skipped`.
    """
    family: str
    variance: float
    moment4: float
    moment8: Optional[float] = None
    moment16: Optional[float] = None
    kurtosis_target: Optional[float] = field(default=None, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"Unsupported innovation family '{self.family}'. Must be one of {list(FAMILIES)}")
        if not self.variance > 0:
            raise PreconditionError(f"innovation variance must be positive, got {self.variance}")
        if self.moment4 < self.variance**2:
            raise PreconditionError("moment4 must be at least variance^2")

        kurt = None
        if self.family == "mixture":
            kurt = self.kurtosis_target
            if kurt is None:
                kurt = self.moment4 / self.variance**2
            _check_mixture_kurtosis(kurt)
        m4, m8, m16 = _standard_moments(self.family, kurt)
        v = self.variance
        if not _close(self.moment4, m4 * v**2):
            raise PreconditionError(f"moment4 does not match the {self.family} family")
        if self.moment8 is not None and not _close(self.moment8, m8 * v**4):
            raise PreconditionError(f"moment8 does not match the {self.family} family")
        if self.moment16 is not None and not _close(self.moment16, m16 * v**8):
            raise PreconditionError(f"moment16 does not match the {self.family} family")

    @property
    def kurtosis(self) -> float:
        """c = E[x^4] / variance^2."""
        return self.moment4 / self.variance**2

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    @classmethod
    def gaussian(cls, variance: float = 1.0) -> "InnovationSpec":
        return cls._build("gaussian", variance, None)

    @classmethod
    def uniform(cls, variance: float = 1.0) -> "InnovationSpec":
        return cls._build("uniform", variance, None)

    @classmethod
    def mixture(cls, variance: float = 1.0, kurtosis: float = 3.0) -> "InnovationSpec":
        """Rademacher/gaussian mixture with tunable kurtosis in [1.5, 6)."""
        _check_mixture_kurtosis(kurtosis)
        return cls._build("mixture", variance, kurtosis)

    @classmethod
    def from_family(cls, family: str, variance: float, kurtosis: Optional[float] = None) -> "InnovationSpec":
        if family == "gaussian":
            return cls.gaussian(variance)
        if family == "uniform":
            return cls.uniform(variance)
        if family == "mixture":
            if kurtosis is None:
                raise PreconditionError("mixture family requires a kurtosis")
            return cls.mixture(variance, kurtosis)
        raise ConfigError(f"Unsupported innovation family '{family}'. Must be one of {list(FAMILIES)}")

    @classmethod
    def _build(cls, family: str, variance: float, kurtosis: Optional[float]) -> "InnovationSpec":
        if not variance > 0:
            raise PreconditionError(f"innovation variance must be positive, got {variance}")
        m4, m8, m16 = _standard_moments(family, kurtosis)
        return cls(
            family=family,
            variance=float(variance),
            moment4=m4 * variance**2,
            moment8=m8 * variance**4,
            moment16=m16 * variance**8,
            kurtosis_target=kurtosis,
        )


def _check_mixture_kurtosis(kurtosis: float) -> None:
    if not 1.5 <= kurtosis < 6.0:
        raise PreconditionError(f"mixture kurtosis must lie in [1.5, 6), got {kurtosis}")


@dataclass
class Dataset:
    """
    One realization of the FIR model.

    u holds u(t) for t = 1-n .. N-1, v and Y hold t = 1 .. N, and row t of phi
    is [u(t-1), ..., u(t-n)]. v is None for data read back without its truth file.
    """
    u: np.ndarray
    v: Optional[np.ndarray]
    Y: np.ndarray
    phi: np.ndarray
    theta0: np.ndarray
    n: int
    N: int
    seed: Optional[int] = None

    @property
    def y(self) -> np.ndarray:
        return self.Y

    @property
    def noise_free_output(self) -> np.ndarray:
        return self.phi @ self.theta0


SeedLike = Union[int, SeedSequence]


def derive_stream_seeds(master_seed: int, N: int, rep: int) -> Tuple[SeedSequence, SeedSequence]:
    """
    Per-replication seeds for the u-stream and the v-stream.

    Derived from (master_seed, N, rep, tag) only, so results do not depend on
    the order in which replications run.
    """
    su = SeedSequence(entropy=master_seed, spawn_key=(N, rep, U_STREAM_TAG))
    sv = SeedSequence(entropy=master_seed, spawn_key=(N, rep, V_STREAM_TAG))
    return su, sv


def gen_innovations(spec: InnovationSpec, count: int, stream_seed: SeedLike) -> np.ndarray:
    """
    Draw `count` i.i.d. samples with zero mean and variance spec.variance.

    Standardized draws are scaled by the standard deviation, so two specs of the
    same family sharing a seed differ only by that scale.
    """
    if count < 1:
        raise PreconditionError(f"count must be at least 1, got {count}")
    rng = np.random.default_rng(stream_seed)

    if spec.family == "gaussian":
        z = rng.standard_normal(count)
    elif spec.family == "uniform":
        root3 = math.sqrt(3.0)
        z = rng.uniform(-root3, root3, count)
    elif spec.family == "mixture":
        kurt = spec.kurtosis_target if spec.kurtosis_target is not None else spec.kurtosis
        a, b = _mixture_scales(kurt)
        pick = rng.random(count) < 0.5
        signs = 2.0 * rng.integers(0, 2, count) - 1.0
        g = rng.standard_normal(count)
        z = np.where(pick, a * signs, b * g)
    else:
        raise ConfigError(f"Unsupported innovation family '{spec.family}'")

    return spec.std * z


def filter_signal(filt: FilterSpec, e: np.ndarray) -> np.ndarray:
    """
    u(t) = sum_{k=0}^{K} h(k) e(t-k), keeping only full convolution windows.

    The first K samples of e are warm-up; the output has len(e) - K samples.
    """
    e = np.asarray(e, dtype=float)
    if e.ndim != 1 or e.size <= filt.K:
        raise PreconditionError(
            f"innovation sequence of length {e.size} is too short for a filter with K={filt.K} "
            f"(need at least K+1 samples)"
        )
    return lfilter(filt.coeffs, [1.0], e)[filt.K:]


def simulate_fir(theta0: np.ndarray, u: np.ndarray, v: np.ndarray, seed: Optional[int] = None) -> Dataset:
    """
    Assemble (Phi, Y) from inputs u(1-n .. N-1) and noise v(1 .. N).

    Raises:
        PreconditionError: If the sequence lengths are inconsistent
        ConfigError: If N <= n
    """
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    n = theta0.size
    N = v.size

    if N <= n:
        raise ConfigError(f"N > n required (n={n}, N={N})")
    if u.size != N + n - 1:
        raise PreconditionError(f"u must hold N+n-1={N + n - 1} samples (t=1-n..N-1), got {u.size}")

    # Row t: [u(t-1), ..., u(t-n)]
    phi = toeplitz(u[n - 1:n - 1 + N], u[n - 1::-1])
    Y = phi @ theta0 + v
    return Dataset(u=u, v=v, Y=Y, phi=phi, theta0=theta0, n=n, N=N, seed=seed)


def generate_dataset(
    theta0: np.ndarray,
    filt: FilterSpec,
    innov_u: InnovationSpec,
    innov_v: InnovationSpec,
    N: int,
    master_seed: int,
    rep: int = 0,
) -> Dataset:
    """Generate replication `rep` at sample size N with stationary warm-up."""
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    n = theta0.size
    if N <= n:
        raise ConfigError(f"N > n required (n={n}, N={N})")

    su, sv = derive_stream_seeds(master_seed, N, rep)
    e = gen_innovations(innov_u, filt.K + N + n - 1, su)
    u = filter_signal(filt, e)
    v = gen_innovations(innov_v, N, sv)
    return simulate_fir(theta0, u, v, seed=master_seed)


def sample_autocovariance(x: np.ndarray, tau: int) -> float:
    """(1/T) sum_t x(t) x(t+|tau|) for a zero-mean sequence of length T."""
    x = np.asarray(x, dtype=float)
    lag = abs(int(tau))
    if lag >= x.size:
        raise PreconditionError(f"lag {tau} out of range for a sequence of length {x.size}")
    return float(np.dot(x[: x.size - lag], x[lag:]) / x.size)


def sample_snr(dataset: Dataset, sigma2: float) -> float:
    """Sample variance of the noise-free output divided by sigma2."""
    if not sigma2 > 0:
        raise PreconditionError("sigma2 must be positive")
    return float(np.var(dataset.noise_free_output, ddof=1) / sigma2)
