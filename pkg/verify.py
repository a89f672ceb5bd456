"""
Seeded Monte Carlo verification of the LS/RLS asymptotics.

run_ensemble draws independent replications per sample size; the check_*
functions turn an ensemble (or a batch of random matrices, for the lemma
checks) into pass/fail/skipped verdicts against the closed-form targets
from theory.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.linalg import cho_factor, cho_solve, eigh
from scipy.stats import kstest, linregress, ortho_group

from config import ENSEMBLE_SUITES, REPORT_SCHEMA_VERSION, SUITES, ConfigError, InsufficientDesignError
from estimators import (
    KernelSpec,
    inverse_gram,
    kernel_inverse,
    kernel_matrix,
    ls_estimate,
    noise_variance_estimate,
    pinv_derivative_1,
    shat_derivative_1,
    s_hat_inverse,
)
from logger import get_logger
from signals import FilterSpec, InnovationSpec, PreconditionError, generate_dataset, sample_snr
from theory import TheoryLimits, compute_limits, logdet_trace_sandwich, vec_gamma_covariance

logger = get_logger("verify")

AS_NOTE = (
    "Almost sure convergence is checked as strictly decreasing ensemble medians of the "
    "deviation along the sample-size grid plus a threshold at the largest N."
)

# Smallest N_max / N_min the as suite accepts; a 4-point grid of ratio 4 spans 64
AS_MIN_SPAN = 64.0


class ReplicationError(RuntimeError):
    """A single replication failed; carries its (N, rep) coordinates."""

    def __init__(self, N: int, rep: int, cause: Exception):
        self.N = N
        self.rep = rep
        self.cause = cause
        super().__init__(f"replication failed at N={N}, rep={rep}: {type(cause).__name__}: {cause}")


@dataclass
class ToleranceTable:
    cov_rel_frobenius: float = 0.10
    cgamma_rel_frobenius: float = 0.15
    cross_moment_z: float = 4.0
    ks_coefficient: float = 1.63
    as_final_rel: float = 0.05
    as_pair_fraction: float = 0.95
    rate_slope_window: float = 0.1
    moment_slope_window: float = 0.15
    moment_ratio_max: float = 10.0
    moment_blocks: int = 10
    shat_final_abs: float = 0.01
    shat_derivative_final_rel: float = 0.05
    shat_slope_window: float = 0.15
    snr_rel: float = 0.05
    lemma_slack: float = 1e-10
    min_reps: int = 100
    min_reps_clt: int = 1000


@dataclass
class McConfig:
    n: int
    theta0: np.ndarray
    filter: FilterSpec
    innov_u: InnovationSpec
    innov_v: InnovationSpec
    N_grid: tuple
    reps: int
    master_seed: int
    tolerances: ToleranceTable = field(default_factory=ToleranceTable)
    shat_kernel: Optional[KernelSpec] = None
    lemma_trials: int = 1000

    def __post_init__(self):
        self.theta0 = np.atleast_1d(np.asarray(self.theta0, dtype=float))
        self.N_grid = tuple(int(N) for N in self.N_grid)
        if self.theta0.size != self.n:
            raise ConfigError(f"theta0 has {self.theta0.size} entries, expected n={self.n}")
        if not self.N_grid:
            raise ConfigError("N_grid must not be empty")
        if any(b <= a for a, b in zip(self.N_grid, self.N_grid[1:])):
            raise ConfigError("N_grid must be strictly increasing")
        if self.N_grid[0] <= self.n:
            raise ConfigError(f"N > n required (n={self.n}, smallest N={self.N_grid[0]})")
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if self.shat_kernel is None:
            self.shat_kernel = KernelSpec(family="ridge", eta=(1.0,), n=self.n)

    def describe(self) -> dict:
        """Plain-data echo of the configuration for reports."""
        return {
            "n": self.n,
            "theta0": self.theta0.tolist(),
            "filter": {"name": self.filter.name, "K": self.filter.K,
                       "declared_tail_bound": self.filter.declared_tail_bound},
            "innovation_u": {"family": self.innov_u.family, "variance": self.innov_u.variance,
                             "kurtosis": self.innov_u.kurtosis},
            "innovation_v": {"family": self.innov_v.family, "variance": self.innov_v.variance,
                             "kurtosis": self.innov_v.kurtosis},
            "N_grid": list(self.N_grid),
            "reps": self.reps,
            "master_seed": self.master_seed,
            "shat_kernel": {"family": self.shat_kernel.family, "eta": list(self.shat_kernel.eta)},
            "tolerances": asdict(self.tolerances),
        }


@dataclass
class ReplicationStats:
    """Per-replication statistics at one N, stacked in replication order."""
    gram: np.ndarray        # Phi^T Phi / N, (R, n, n)
    cross: np.ndarray       # Phi^T V / N, (R, n)
    noise: np.ndarray       # V^T V / N, (R,)
    theta: np.ndarray       # theta_ls, (R, n)
    sigma2_hat: np.ndarray  # (R,)
    inv_gram: np.ndarray    # N (Phi^T Phi)^-1, (R, n, n)
    snr: np.ndarray         # (R,)

    @property
    def reps(self) -> int:
        return self.noise.size


@dataclass
class Ensemble:
    cfg: McConfig
    limits: TheoryLimits
    stats: Dict[int, ReplicationStats]

    @property
    def N_grid(self) -> tuple:
        return self.cfg.N_grid


@dataclass
class Verdict:
    suite: str
    criterion: str
    status: str
    measured: Optional[float]
    target: Optional[float]
    tolerance: Optional[float]
    seed: int
    sample_size: Optional[int] = None
    detail: str = ""

    @property
    def failed(self) -> bool:
        return self.status == "fail"


@dataclass
class McReport:
    master_seed: int
    suites: List[str]
    config: dict
    summaries: Dict[str, dict] = field(default_factory=dict)
    slopes: Dict[str, dict] = field(default_factory=dict)
    products: Dict[str, dict] = field(default_factory=dict)
    diagnostics: Dict[str, object] = field(default_factory=dict)
    verdicts: List[Verdict] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)
    schema_version: str = REPORT_SCHEMA_VERSION

    @property
    def passed(self) -> bool:
        return not any(v.failed for v in self.verdicts)

    @property
    def failures(self) -> List[Verdict]:
        return [v for v in self.verdicts if v.failed]

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "master_seed": self.master_seed,
            "suites": list(self.suites),
            "passed": self.passed,
            "config": self.config,
            "summaries": self.summaries,
            "slopes": self.slopes,
            "products": self.products,
            "diagnostics": self.diagnostics,
            "verdicts": [asdict(v) for v in self.verdicts],
            "notes": list(self.notes),
        }


# =============================================================================
# Accumulation helpers
# =============================================================================

def _fsum_mean(x: np.ndarray) -> np.ndarray:
    """Compensated mean over the leading (replication) axis."""
    x = np.asarray(x, dtype=float)
    R = x.shape[0]
    flat = x.reshape(R, -1)
    out = np.array([math.fsum(col) for col in flat.T]) / R
    return out.reshape(x.shape[1:]) if x.ndim > 1 else float(out[0])


def _two_pass_cov(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float).reshape(X.shape[0], -1)
    D = X - _fsum_mean(X)
    return D.T @ D / (X.shape[0] - 1)


def _two_pass_var(x: np.ndarray) -> float:
    d = np.asarray(x, dtype=float) - _fsum_mean(x)
    return math.fsum(d * d) / (d.size - 1)


def _rel_frobenius(emp: np.ndarray, target: np.ndarray) -> float:
    denom = np.linalg.norm(target)
    diff = np.linalg.norm(np.atleast_1d(emp) - np.atleast_1d(target))
    return float(diff / denom) if denom > 0 else float(diff)


def _z_scores(products: np.ndarray) -> np.ndarray:
    """Ensemble mean of each column divided by its standard error."""
    P = products.reshape(products.shape[0], -1)
    R = P.shape[0]
    mean = _fsum_mean(P)
    D = P - mean
    se = np.sqrt(np.sum(D * D, axis=0) / (R - 1) / R)
    return np.divide(mean, se, out=np.zeros_like(mean), where=se > 0)


def _loglog_slope(N_grid: Sequence[int], values: Sequence[float]):
    return linregress(np.log(np.asarray(N_grid, dtype=float)), np.log(np.asarray(values, dtype=float)))


def _verdict(cfg: McConfig, suite: str, criterion: str, ok: bool, measured, target, tolerance,
             N: Optional[int] = None, detail: str = "") -> Verdict:
    return Verdict(
        suite=suite,
        criterion=criterion,
        status="pass" if ok else "fail",
        measured=None if measured is None else float(measured),
        target=None if target is None else float(target),
        tolerance=None if tolerance is None else float(tolerance),
        seed=cfg.master_seed,
        sample_size=N,
        detail=detail,
    )


def _skipped(cfg: McConfig, suite: str, criterion: str, detail: str, N: Optional[int] = None) -> Verdict:
    return Verdict(suite=suite, criterion=criterion, status="skipped", measured=None, target=None,
                   tolerance=None, seed=cfg.master_seed, sample_size=N, detail=detail)


# =============================================================================
# Ensemble engine
# =============================================================================

def _replicate(cfg: McConfig, N: int, rep: int) -> tuple:
    try:
        ds = generate_dataset(cfg.theta0, cfg.filter, cfg.innov_u, cfg.innov_v, N, cfg.master_seed, rep)
        phi, V = ds.phi, ds.v
        theta = ls_estimate(phi, ds.Y)
        return (
            phi.T @ phi / N,
            phi.T @ V / N,
            math.fsum(V * V) / N,
            theta,
            noise_variance_estimate(ds.Y, phi, theta),
            N * inverse_gram(phi),
            sample_snr(ds, cfg.innov_v.variance),
        )
    except Exception as e:
        raise ReplicationError(N, rep, e) from e


def _stack(records: List[tuple]) -> ReplicationStats:
    cols = list(zip(*records))
    return ReplicationStats(
        gram=np.stack(cols[0]),
        cross=np.stack(cols[1]),
        noise=np.asarray(cols[2], dtype=float),
        theta=np.stack(cols[3]),
        sigma2_hat=np.asarray(cols[4], dtype=float),
        inv_gram=np.stack(cols[5]),
        snr=np.asarray(cols[6], dtype=float),
    )


def run_ensemble(
    cfg: McConfig,
    workers: int = 1,
    progress: Optional[Callable[[int, int], None]] = None,
    limits: Optional[TheoryLimits] = None,
) -> Ensemble:
    """
    Run cfg.reps independent replications at every N in cfg.N_grid.

    Replication seeds depend only on (master_seed, N, rep) and results are
    collected in replication order, so the ensemble is identical for any
    worker count.

    Args:
        cfg: Monte Carlo design
        workers: joblib worker count
        progress: Optional callback (N, replications completed at this N)
        limits: Precomputed TheoryLimits (computed here when omitted)
    """
    if limits is None:
        limits = compute_limits(cfg.filter, cfg.innov_u, cfg.innov_v, cfg.theta0)

    stats = {}
    for N in cfg.N_grid:
        logger.info(f"Ensemble N={N}: {cfg.reps} replications on {workers} worker(s)")
        runner = Parallel(n_jobs=workers, return_as="generator")
        records = []
        for record in runner(delayed(_replicate)(cfg, N, rep) for rep in range(cfg.reps)):
            records.append(record)
            if progress is not None:
                progress(N, len(records))
        stats[N] = _stack(records)
        logger.debug(f"N={N}: mean sigma2_hat={_fsum_mean(stats[N].sigma2_hat):.6g}")
    return Ensemble(cfg=cfg, limits=limits, stats=stats)


def summarize_ensemble(ens: Ensemble) -> Dict[str, dict]:
    """Per-N ensemble means and covariances of the recorded statistics."""
    out = {}
    for N, s in ens.stats.items():
        out[str(N)] = {
            "reps": s.reps,
            "mean_gram": _fsum_mean(s.gram).tolist(),
            "mean_cross": _fsum_mean(s.cross).tolist(),
            "mean_noise": _fsum_mean(s.noise),
            "mean_theta": _fsum_mean(s.theta).tolist(),
            "cov_theta": _two_pass_cov(s.theta).tolist(),
            "mean_sigma2_hat": _fsum_mean(s.sigma2_hat),
            "mean_snr": _fsum_mean(s.snr),
        }
    return out


# =============================================================================
# Convergence and distribution checks
# =============================================================================

def _deviations(ens: Ensemble, s: ReplicationStats) -> Dict[str, np.ndarray]:
    lim, cfg = ens.limits, ens.cfg
    return {
        "gram": np.linalg.norm(s.gram - lim.Sigma, axis=(1, 2)),
        "cross": np.linalg.norm(s.cross, axis=1),
        "noise": np.abs(s.noise - lim.sigma2),
        "inv_gram": np.linalg.norm(s.inv_gram - lim.SigmaInv, axis=(1, 2)),
        "theta": np.linalg.norm(s.theta - cfg.theta0, axis=1),
        "sigma2_hat": np.abs(s.sigma2_hat - lim.sigma2),
    }


def _natural_scales(lim: TheoryLimits) -> Dict[str, float]:
    return {
        "gram": float(np.linalg.norm(lim.Sigma)),
        "cross": math.sqrt(lim.sigma2 * np.trace(lim.Sigma)),
        "noise": lim.sigma2,
        "inv_gram": float(np.linalg.norm(lim.SigmaInv)),
        "theta": math.sqrt(lim.sigma2 * np.trace(lim.SigmaInv)),
        "sigma2_hat": lim.sigma2,
    }


def _require_grid(cfg: McConfig, points: int, suite: str, min_span: float = 1.0) -> None:
    grid = cfg.N_grid
    if len(grid) < points or grid[-1] < min_span * grid[0]:
        raise InsufficientDesignError(
            f"{suite} needs at least {points} sample sizes with N_max/N_min >= {min_span:g}, got {list(grid)}"
        )


def check_as_convergence(ens: Ensemble) -> List[Verdict]:
    """Monotone decay of median deviations plus a final-N threshold, per statistic."""
    cfg, tol = ens.cfg, ens.cfg.tolerances
    _require_grid(cfg, 4, "as", AS_MIN_SPAN)

    devs = {N: _deviations(ens, ens.stats[N]) for N in cfg.N_grid}
    scales = _natural_scales(ens.limits)
    N_last = cfg.N_grid[-1]
    verdicts = []

    for name, scale in scales.items():
        medians = [float(np.median(devs[N][name])) for N in cfg.N_grid]
        decreasing = all(b < a for a, b in zip(medians, medians[1:]))
        final_rel = medians[-1] / scale
        ok = decreasing and final_rel <= tol.as_final_rel
        verdicts.append(_verdict(
            cfg, "as", name, ok, final_rel, 0.0, tol.as_final_rel, N_last,
            detail=f"medians={['%.4g' % m for m in medians]} strictly_decreasing={decreasing}",
        ))

    first, last = devs[cfg.N_grid[0]]["theta"], devs[N_last]["theta"]
    pairs = min(first.size, last.size)
    fraction = float(np.mean(last[:pairs] < first[:pairs]))
    verdicts.append(_verdict(
        cfg, "as", "theta_pair_dominance", fraction >= tol.as_pair_fraction, fraction,
        1.0, tol.as_pair_fraction, N_last,
        detail=f"fraction of replications with smaller theta error at N={N_last} than at N={cfg.N_grid[0]}",
    ))
    return verdicts


def check_clt(ens: Ensemble, limits: Optional[TheoryLimits] = None) -> List[Verdict]:
    """Covariances of the scaled fluctuations at the largest N against their limits."""
    cfg, tol = ens.cfg, ens.cfg.tolerances
    lim = ens.limits if limits is None else limits
    N = cfg.N_grid[-1]
    s = ens.stats[N]
    R = s.reps
    if R < tol.min_reps_clt:
        raise InsufficientDesignError(
            f"insufficient replications: clt needs reps >= {tol.min_reps_clt} at the largest N, got {R}"
        )
    n = cfg.n
    root = math.sqrt(N)
    verdicts = []

    Gm = root * (s.gram - lim.Sigma).reshape(R, n * n)
    U = root * s.cross
    Rho = root * (s.noise - lim.sigma2)

    def cov_check(criterion, emp, target, tolerance, detail=""):
        err = _rel_frobenius(emp, target)
        detail = f"{detail}; relative Frobenius error, ||target||_F={np.linalg.norm(target):.6g}"
        verdicts.append(_verdict(cfg, "clt", criterion, err <= tolerance, err, None, tolerance, N, detail))

    cov_check("gram_cov", _two_pass_cov(Gm), lim.CGammaVec, tol.cgamma_rel_frobenius,
              "Cov sqrt(N) vec(Phi^T Phi/N - Sigma) vs C_Gamma in vec layout")
    second_moment = _fsum_mean(Gm[:, :, None] * Gm[:, None, :])
    cov_check("gram_kron", vec_gamma_covariance(second_moment, n), lim.CGamma, tol.cgamma_rel_frobenius,
              "mean of N (Phi^T Phi/N - Sigma) (x) (Phi^T Phi/N - Sigma) vs C_Gamma")
    cov_check("cross_cov", _two_pass_cov(U), lim.sigma2 * lim.Sigma, tol.cov_rel_frobenius,
              "Cov sqrt(N) Phi^T V/N vs sigma^2 Sigma")
    cov_check("noise_var", _two_pass_var(Rho), lim.rho_var, tol.cov_rel_frobenius,
              "Var sqrt(N)(V^T V/N - sigma^2) vs E[v^4] - sigma^4")
    cov_check("theta_cov", _two_pass_cov(root * (s.theta - cfg.theta0)), lim.ls_cov, tol.cov_rel_frobenius,
              "Cov sqrt(N)(theta_ls - theta0) vs sigma^2 Sigma^-1")
    cov_check("inv_gram_cov", _two_pass_cov(root * (s.inv_gram - lim.SigmaInv).reshape(R, n * n)),
              lim.inv_gram_cov, tol.cgamma_rel_frobenius,
              "Cov sqrt(N) vec(N (Phi^T Phi)^-1 - Sigma^-1) vs its limit")
    cov_check("sigma2_hat_var", _two_pass_var(root * (s.sigma2_hat - lim.sigma2)), lim.rho_var,
              tol.cov_rel_frobenius, "Var sqrt(N)(sigma2_hat - sigma^2) vs E[v^4] - sigma^4")

    blocks = {
        "cross_moment_upsilon_gamma": U[:, :, None] * Gm[:, None, :],
        "cross_moment_rho_upsilon": Rho[:, None] * U,
        "cross_moment_rho_gamma": Rho[:, None] * Gm,
    }
    for name, products in blocks.items():
        z = float(np.max(np.abs(_z_scores(products))))
        verdicts.append(_verdict(cfg, "clt", name, z < tol.cross_moment_z, z, 0.0, tol.cross_moment_z, N,
                                 "largest |ensemble mean / SE| in the block"))

    w = np.ones(n) / math.sqrt(n)
    proj = root * (s.theta - cfg.theta0) @ w / math.sqrt(w @ lim.ls_cov @ w)
    distance = float(kstest(proj, "norm").statistic)
    critical = tol.ks_coefficient / math.sqrt(R)
    verdicts.append(_verdict(cfg, "clt", "theta_normality", distance <= critical, distance, 0.0, critical, N,
                             "Kolmogorov-Smirnov distance of the standardized projection on 1/sqrt(n)"))
    return verdicts


def check_op_rates(ens: Ensemble) -> List[Verdict]:
    """Log-log slopes of RMS deviations (-1/2) and of growing sums (+1)."""
    cfg, tol = ens.cfg, ens.cfg.tolerances
    _require_grid(cfg, 4, "rates")
    grid = cfg.N_grid
    verdicts = []

    devs = {N: _deviations(ens, ens.stats[N]) for N in grid}
    for name in ("theta", "cross", "sigma2_hat", "gram", "noise", "inv_gram"):
        rms = [math.sqrt(_fsum_mean(devs[N][name] ** 2)) for N in grid]
        fit = _loglog_slope(grid, rms)
        ok = abs(fit.slope + 0.5) <= tol.rate_slope_window
        verdicts.append(_verdict(cfg, "rates", f"{name}_rms", ok, fit.slope, -0.5, tol.rate_slope_window,
                                 detail=f"stderr={fit.stderr:.3g}"))

    growing = {
        "gram_sum": [N * float(np.linalg.norm(_fsum_mean(ens.stats[N].gram))) for N in grid],
        "noise_sum": [N * _fsum_mean(ens.stats[N].noise) for N in grid],
    }
    for name, values in growing.items():
        fit = _loglog_slope(grid, values)
        ok = abs(fit.slope - 1.0) <= tol.rate_slope_window
        verdicts.append(_verdict(cfg, "rates", name, ok, fit.slope, 1.0, tol.rate_slope_window,
                                 detail=f"stderr={fit.stderr:.3g}"))
    return verdicts


def rate_slopes(ens: Ensemble) -> Dict[str, dict]:
    """Slopes with standard errors for the report."""
    out = {}
    devs = {N: _deviations(ens, ens.stats[N]) for N in ens.N_grid}
    for name in ("theta", "cross", "sigma2_hat", "gram", "noise", "inv_gram"):
        rms = [math.sqrt(_fsum_mean(devs[N][name] ** 2)) for N in ens.N_grid]
        fit = _loglog_slope(ens.N_grid, rms)
        out[name] = {"slope": float(fit.slope), "stderr": float(fit.stderr), "rms": rms}
    return out


def _median_of_means(x: np.ndarray, blocks: int) -> float:
    """Median of the means of contiguous replication blocks (plain mean below two replications per block)."""
    x = np.asarray(x, dtype=float)
    if blocks <= 1 or x.size < 2 * blocks:
        return _fsum_mean(x)
    return float(np.median([_fsum_mean(chunk) for chunk in np.array_split(x, blocks)]))


def _moment_products(ens: Ensemble) -> Dict[str, dict]:
    lim = ens.limits
    blocks = ens.cfg.tolerances.moment_blocks
    u, v = ens.cfg.innov_u, ens.cfg.innov_v
    specs = {
        "cross_4": (2, 4, "cross", u.moment4 is not None and v.moment4 is not None),
        "cross_8": (4, 8, "cross", u.moment8 is not None and v.moment8 is not None),
        "gram_4": (2, 4, "gram", u.moment8 is not None),
        "noise_4": (2, 4, "noise", v.moment8 is not None),
        "gram_8": (4, 8, "gram", u.moment16 is not None),
        "noise_8": (4, 8, "noise", v.moment16 is not None),
    }
    out = {}
    for name, (power_N, power_dev, stat, available) in specs.items():
        if not available:
            out[name] = {"available": False}
            continue
        values = []
        for N in ens.N_grid:
            s = ens.stats[N]
            if stat == "cross":
                dev = np.linalg.norm(s.cross, axis=1)
            elif stat == "gram":
                dev = np.linalg.norm(s.gram - lim.Sigma, axis=(1, 2))
            else:
                dev = np.abs(s.noise - lim.sigma2)
            values.append(float(N) ** power_N * _median_of_means(dev**power_dev, blocks))
        out[name] = {"available": True, "values": values, "blocks": blocks}
    return out


def check_moment_bounds(ens: Ensemble) -> List[Verdict]:
    """Scaled fourth/eighth moment products (median of block means) stay bounded along the grid."""
    cfg, tol = ens.cfg, ens.cfg.tolerances
    _require_grid(cfg, 3, "moments")
    verdicts = []
    for name, product in _moment_products(ens).items():
        if not product["available"]:
            verdicts.append(_skipped(cfg, "moments", name, "required innovation moment unavailable"))
            continue
        values = product["values"]
        fit = _loglog_slope(cfg.N_grid, values)
        ratio = max(values) / min(values)
        ok = abs(fit.slope) <= tol.moment_slope_window and ratio <= tol.moment_ratio_max
        verdicts.append(_verdict(
            cfg, "moments", name, ok, fit.slope, 0.0, tol.moment_slope_window,
            detail=f"max/min={ratio:.3g} (limit {tol.moment_ratio_max:g}) stderr={fit.stderr:.3g}",
        ))
    return verdicts


def _shat_gaps(ens: Ensemble, kernel: KernelSpec) -> Dict[str, list]:
    P = kernel_matrix(kernel)
    P_inv = kernel_inverse(P)
    dP_inv = [pinv_derivative_1(kernel, k) for k in range(kernel.p)]
    gaps, dgaps, s_norms = [], [], []
    for N in ens.N_grid:
        s = ens.stats[N]
        g, dg, sn = [], [], []
        for G, s2 in zip(s.inv_gram / N, s.sigma2_hat):
            S_inv = s_hat_inverse(P, s2, inv_gram=G)
            g.append(np.linalg.norm(S_inv - P_inv))
            dg.append(math.sqrt(math.fsum(
                np.linalg.norm(shat_derivative_1(kernel, k, s2, inv_gram=G) - dP_inv[k]) ** 2
                for k in range(kernel.p)
            )))
            sn.append(np.linalg.norm(S_inv))
        gaps.append(_fsum_mean(np.asarray(g)))
        dgaps.append(_fsum_mean(np.asarray(dg)))
        s_norms.append(float(np.median(sn)))
    dp_inv_norm = math.sqrt(math.fsum(np.linalg.norm(d) ** 2 for d in dP_inv))
    return {"gap": gaps, "dgap": dgaps, "shat_inv_norm": s_norms, "p_inv_norm": float(np.linalg.norm(P_inv)),
            "dp_inv_norm": dp_inv_norm}


def check_shat_limits(ens: Ensemble, kernel: Optional[KernelSpec] = None,
                      gaps: Optional[Dict[str, list]] = None) -> List[Verdict]:
    """
    S_hat(eta)^-1 -> P(eta)^-1 and the first-derivative gaps, unscaled and sqrt(N)-scaled.

    gaps may carry a precomputed _shat_gaps result for the same kernel.
    """
    cfg, tol = ens.cfg, ens.cfg.tolerances
    kernel = cfg.shat_kernel if kernel is None else kernel
    _require_grid(cfg, 2, "shat")
    grid = np.asarray(cfg.N_grid, dtype=float)
    N_last = cfg.N_grid[-1]

    res = _shat_gaps(ens, kernel) if gaps is None else gaps
    verdicts = []
    for name, values in (("gap", res["gap"]), ("derivative_gap", res["dgap"])):
        values = np.asarray(values)
        for scaled, target in ((False, -1.0), (True, -0.5)):
            series = values * np.sqrt(grid) if scaled else values
            fit = _loglog_slope(cfg.N_grid, series)
            label = f"sqrtN_{name}_slope" if scaled else f"{name}_slope"
            ok = abs(fit.slope - target) <= tol.shat_slope_window
            verdicts.append(_verdict(cfg, "shat", label, ok, fit.slope, target, tol.shat_slope_window,
                                     detail=f"kernel={kernel.family}{list(kernel.eta)} stderr={fit.stderr:.3g}"))
    final = res["gap"][-1]
    verdicts.append(_verdict(cfg, "shat", "gap_final", final < tol.shat_final_abs, final, 0.0,
                             tol.shat_final_abs, N_last, "mean ||S_hat^-1 - P^-1||_F at the largest N"))
    # relative to ||dP^-1||_F
    final_rel = res["dgap"][-1] / res["dp_inv_norm"]
    verdicts.append(_verdict(cfg, "shat", "derivative_gap_final", final_rel < tol.shat_derivative_final_rel,
                             final_rel, 0.0, tol.shat_derivative_final_rel, N_last,
                             f"mean first-derivative gap at the largest N over ||dP^-1||_F={res['dp_inv_norm']:.6g}"))
    return verdicts


def shat_norm_diagnostic(ens: Ensemble, family: str, etas: Sequence[Sequence[float]]) -> List[dict]:
    """
    ||S_hat(eta_N)^-1||_F against ||P(eta_N)^-1||_F for one eta per grid point.

    Reported only: boundedness of the ratio along a hyper-parameter estimator
    sequence cannot be decided from finitely many N.
    """
    if len(etas) != len(ens.N_grid):
        raise PreconditionError(f"need one eta per sample size ({len(ens.N_grid)}), got {len(etas)}")
    rows = []
    for N, eta in zip(ens.N_grid, etas):
        kernel = KernelSpec(family=family, eta=tuple(eta), n=ens.cfg.n)
        P = kernel_matrix(kernel)
        s = ens.stats[N]
        norms = [np.linalg.norm(s_hat_inverse(P, s2, inv_gram=G))
                 for G, s2 in zip(s.inv_gram / N, s.sigma2_hat)]
        shat_norm = float(np.median(norms))
        p_norm = float(np.linalg.norm(kernel_inverse(P)))
        rows.append({"N": N, "eta": list(kernel.eta), "shat_inv_norm": shat_norm,
                     "p_inv_norm": p_norm, "ratio": shat_norm / p_norm})
    return rows


def check_snr(ens: Ensemble, limits: Optional[TheoryLimits] = None) -> List[Verdict]:
    """Median sample SNR at the largest N against theta0^T Sigma theta0 / sigma^2."""
    cfg, tol = ens.cfg, ens.cfg.tolerances
    lim = ens.limits if limits is None else limits
    if not lim.sigma2 > 0:
        raise PreconditionError("sigma2 must be positive")
    N = cfg.N_grid[-1]
    measured = float(np.median(ens.stats[N].snr))
    target = lim.snr_limit
    if target == 0:
        return [_verdict(cfg, "snr", "snr_limit", measured == 0.0, measured, 0.0, 0.0, N)]
    rel = abs(measured - target) / target
    return [_verdict(cfg, "snr", "snr_limit", rel <= tol.snr_rel, measured, target, tol.snr_rel, N,
                     f"relative error {rel:.3g}")]


# =============================================================================
# Deterministic lemma checks
# =============================================================================

def _random_spd(rng: np.random.Generator, m: int, log10_cond: float):
    eig = np.logspace(0.0, log10_cond, m)[::-1] * rng.uniform(0.5, 2.0)
    U = ortho_group.rvs(dim=m, random_state=rng) if m > 1 else np.ones((1, 1))
    return U @ np.diag(eig) @ U.T


def _within(lower: float, value: float, upper: float, slack: float) -> bool:
    scale = max(1.0, abs(lower), abs(value), abs(upper))
    return lower - slack * scale <= value <= upper + slack * scale


def check_trace_bounds(trials: int, seed: int, slack: float = 1e-10) -> List[Verdict]:
    """
    Condition-number trace sandwiches for random SPD B (cond 1..1e6) and random A:

        B_L cond^k / lambda_1^k <= Tr(A^T B^-k A) <= B_U cond^k / lambda_1^k,   k = 1, 2
        (u_m^T A u_m)^2 cond^3 / lambda_1^3 <= Tr(B^-1 A^T B^-1 A B^-1) <= Tr(A A^T) cond^3 / lambda_1^3
    """
    rng = np.random.default_rng(seed)
    violations = {"trace_k1": 0, "trace_k2": 0, "trace_cubic": 0}
    for _ in range(trials):
        m1 = int(rng.integers(2, 7))
        m2 = int(rng.integers(1, 7))
        B = _random_spd(rng, m1, rng.uniform(0.0, 6.0))
        A = rng.standard_normal((m1, m2))
        Asq = rng.standard_normal((m1, m1))

        eig, vecs = eigh(B)
        lam1, lam_m, u_m = eig[-1], eig[0], vecs[:, 0]
        cond = lam1 / lam_m
        factor = cho_factor(B)

        B_U = float(np.trace(A @ A.T))
        B_L = float(u_m @ A @ A.T @ u_m)
        BinvA = cho_solve(factor, A)
        for k, key in ((1, "trace_k1"), (2, "trace_k2")):
            value = float(np.trace(A.T @ BinvA)) if k == 1 else float(np.sum(BinvA * BinvA))
            scale = cond**k / lam1**k
            if not _within(B_L * scale, value, B_U * scale, slack):
                violations[key] += 1

        BinvAsq = cho_solve(factor, Asq)
        cubic = float(np.trace(cho_solve(factor, Asq.T @ BinvAsq @ cho_solve(factor, np.eye(m1)))))
        scale = cond**3 / lam1**3
        if not _within((u_m @ Asq @ u_m) ** 2 * scale, cubic, float(np.trace(Asq @ Asq.T)) * scale, slack):
            violations["trace_cubic"] += 1

    return [
        Verdict(suite="lemmas", criterion=key, status="pass" if count == 0 else "fail",
                measured=float(count), target=0.0, tolerance=slack, seed=seed,
                detail=f"violations over {trials} random instances")
        for key, count in violations.items()
    ]


def check_logdet_sandwich(trials: int, seed: int, slack: float = 1e-10) -> List[Verdict]:
    """Tr(I - A^-1) <= logdet A <= Tr(A - I) on random SPD matrices."""
    rng = np.random.default_rng(seed)
    violations = 0
    for _ in range(trials):
        m = int(rng.integers(1, 7))
        A = _random_spd(rng, m, rng.uniform(0.0, 4.0)) * 10.0 ** rng.uniform(-2.0, 0.0)
        lower, logdet, upper = logdet_trace_sandwich(A)
        if not _within(lower, logdet, upper, slack):
            violations += 1
    return [Verdict(suite="lemmas", criterion="logdet_sandwich", status="pass" if violations == 0 else "fail",
                    measured=float(violations), target=0.0, tolerance=slack, seed=seed,
                    detail=f"violations over {trials} random instances")]


def check_norm_inequalities(trials: int, seed: int, slack: float = 1e-10) -> List[Verdict]:
    """Triangle, Cauchy-Schwarz, ||Bb|| <= ||B||_F ||b||, submultiplicativity, |Tr B| <= sqrt(m) ||B||_F."""
    rng = np.random.default_rng(seed)
    violations = {"triangle": 0, "cauchy_schwarz": 0, "matrix_vector": 0, "submultiplicative": 0, "trace": 0}

    def le(lhs, rhs):
        return lhs <= rhs + slack * max(1.0, abs(rhs))

    for _ in range(trials):
        m = int(rng.integers(1, 8))
        a, b = rng.standard_normal(m), rng.standard_normal(m)
        B, C = rng.standard_normal((m, m)), rng.standard_normal((m, m))
        fro_B = np.linalg.norm(B)
        checks = {
            "triangle": le(np.linalg.norm(a + b), np.linalg.norm(a) + np.linalg.norm(b)),
            "cauchy_schwarz": le(abs(a @ b), np.linalg.norm(a) * np.linalg.norm(b)),
            "matrix_vector": le(np.linalg.norm(B @ b), fro_B * np.linalg.norm(b)),
            "submultiplicative": le(np.linalg.norm(B @ C), fro_B * np.linalg.norm(C)),
            "trace": le(abs(np.trace(B)), math.sqrt(m) * fro_B),
        }
        for key, ok in checks.items():
            violations[key] += 0 if ok else 1

    return [
        Verdict(suite="lemmas", criterion=f"norm_{key}", status="pass" if count == 0 else "fail",
                measured=float(count), target=0.0, tolerance=slack, seed=seed,
                detail=f"violations over {trials} random instances")
        for key, count in violations.items()
    ]


# =============================================================================
# Suite orchestration
# =============================================================================

def validate_design(cfg: McConfig, suites: Sequence[str]) -> None:
    """
    Reject Monte Carlo designs that cannot support the selected suites before any work is done.

    Raises:
        InsufficientDesignError: If replications or grid are too small
    """
    tol = cfg.tolerances
    unknown = set(suites) - set(SUITES)
    if unknown:
        raise ConfigError(f"Unknown suites {sorted(unknown)}")
    if "clt" in suites and cfg.reps < tol.min_reps_clt:
        raise InsufficientDesignError(
            f"insufficient replications: clt needs reps >= {tol.min_reps_clt}, got {cfg.reps}"
        )
    if set(suites) & ENSEMBLE_SUITES and cfg.reps < tol.min_reps:
        raise InsufficientDesignError(
            f"insufficient replications: ensemble suites need reps >= {tol.min_reps}, got {cfg.reps}"
        )
    if "as" in suites:
        _require_grid(cfg, 4, "as", AS_MIN_SPAN)
    if "rates" in suites:
        _require_grid(cfg, 4, "rates")
    if "moments" in suites:
        _require_grid(cfg, 3, "moments")
    if "shat" in suites:
        _require_grid(cfg, 2, "shat")


def run_suites(
    cfg: McConfig,
    suites: Sequence[str],
    workers: int = 1,
    progress: Optional[Callable[[int, int], None]] = None,
) -> McReport:
    """Run the selected suites and assemble an McReport."""
    suites = [s for s in SUITES if s in suites]
    validate_design(cfg, suites)
    report = McReport(master_seed=cfg.master_seed, suites=suites, config=cfg.describe())

    if set(suites) & ENSEMBLE_SUITES:
        limits = compute_limits(cfg.filter, cfg.innov_u, cfg.innov_v, cfg.theta0)
        report.diagnostics["truncation_error_bound"] = limits.truncation_error_bound
        ens = run_ensemble(cfg, workers=workers, progress=progress, limits=limits)
        report.summaries = summarize_ensemble(ens)

        if "as" in suites:
            report.verdicts += check_as_convergence(ens)
            report.notes.append(AS_NOTE)
        if "clt" in suites:
            report.verdicts += check_clt(ens, limits)
        if "rates" in suites:
            report.verdicts += check_op_rates(ens)
            report.slopes = rate_slopes(ens)
        if "moments" in suites:
            report.verdicts += check_moment_bounds(ens)
            report.products = _moment_products(ens)
        if "shat" in suites:
            gaps = _shat_gaps(ens, cfg.shat_kernel)
            report.verdicts += check_shat_limits(ens, cfg.shat_kernel, gaps)
            report.diagnostics["shat_norms"] = {
                "N": list(cfg.N_grid),
                "gap": gaps["gap"],
                "derivative_gap": gaps["dgap"],
                "shat_inv_norm": gaps["shat_inv_norm"],
                "p_inv_norm": gaps["p_inv_norm"],
                "dp_inv_norm": gaps["dp_inv_norm"],
            }
        if "snr" in suites:
            report.verdicts += check_snr(ens, limits)

    if "lemmas" in suites:
        slack = cfg.tolerances.lemma_slack
        report.verdicts += check_trace_bounds(cfg.lemma_trials, cfg.master_seed, slack)
        report.verdicts += check_logdet_sandwich(cfg.lemma_trials, cfg.master_seed, slack)
        report.verdicts += check_norm_inequalities(cfg.lemma_trials, cfg.master_seed, slack)

    failed = len(report.failures)
    logger.info(f"Suites {suites}: {len(report.verdicts)} verdicts, {failed} failed")
    return report
