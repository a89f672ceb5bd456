"""Pydantic schemas for experiment documents and persisted reports."""
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# Filter presets
class FilterConfig(_Strict):
    preset: Literal["white", "ar1", "fir2", "custom"]
    a: Optional[float] = None
    h0: Optional[float] = None
    h1: Optional[float] = None
    coeffs: Optional[List[float]] = None

    @model_validator(mode="after")
    def _check_preset_parameters(self):
        if self.preset == "ar1":
            if self.a is None or not -1.0 < self.a < 1.0:
                raise ValueError("ar1 preset requires 'a' with |a| < 1")
        elif self.preset == "fir2":
            if self.h0 is None or self.h1 is None:
                raise ValueError("fir2 preset requires 'h0' and 'h1'")
        elif self.preset == "custom":
            if not self.coeffs:
                raise ValueError("custom preset requires a nonempty 'coeffs' list")
        return self


# Innovation families
class InnovationConfig(_Strict):
    family: Literal["gaussian", "uniform", "mixture"]
    variance: float = Field(gt=0)
    kurtosis: Optional[float] = None

    @model_validator(mode="after")
    def _check_kurtosis(self):
        if self.family == "mixture" and self.kurtosis is None:
            raise ValueError("mixture family requires 'kurtosis'")
        if self.family != "mixture" and self.kurtosis is not None:
            raise ValueError(f"{self.family} family fixes its kurtosis; drop 'kurtosis'")
        return self


# Kernel families
class KernelConfig(_Strict):
    family: Literal["ridge", "dc", "tc"]
    eta: List[float]


class ToleranceOverrides(_Strict):
    cov_rel_frobenius: Optional[float] = Field(default=None, ge=0)
    cgamma_rel_frobenius: Optional[float] = Field(default=None, ge=0)
    cross_moment_z: Optional[float] = Field(default=None, ge=0)
    ks_coefficient: Optional[float] = Field(default=None, ge=0)
    as_final_rel: Optional[float] = Field(default=None, ge=0)
    as_pair_fraction: Optional[float] = Field(default=None, ge=0, le=1)
    rate_slope_window: Optional[float] = Field(default=None, ge=0)
    moment_slope_window: Optional[float] = Field(default=None, ge=0)
    moment_ratio_max: Optional[float] = Field(default=None, ge=1)
    moment_blocks: Optional[int] = Field(default=None, ge=1)
    shat_final_abs: Optional[float] = Field(default=None, ge=0)
    shat_derivative_final_rel: Optional[float] = Field(default=None, ge=0)
    shat_slope_window: Optional[float] = Field(default=None, ge=0)
    snr_rel: Optional[float] = Field(default=None, ge=0)
    lemma_slack: Optional[float] = Field(default=None, ge=0)
    min_reps: Optional[int] = Field(default=None, ge=2)


class SimulateOptions(_Strict):
    sample_size: Optional[int] = Field(default=None, gt=0)
    replications: int = Field(default=1, ge=1)
    write_truth: bool = False


class ExperimentConfig(_Strict):
    schema_version: int = 1
    n: int = Field(gt=0)
    theta0: List[float]
    filter: FilterConfig
    innovation_u: InnovationConfig
    innovation_v: InnovationConfig
    sample_sizes: List[int] = Field(min_length=1)
    replications: int = Field(default=500, ge=1)
    master_seed: int = Field(default=0, ge=0, lt=2**64)
    kernels: List[KernelConfig] = []
    # "estimate" plugs in the residual noise variance, a number is used as given
    rls_sigma2: Optional[Union[Literal["estimate", "truth"], float]] = None
    shat_kernel: Optional[KernelConfig] = None
    lemma_trials: int = Field(default=1000, ge=1)
    simulate: SimulateOptions = SimulateOptions()
    tolerances: ToleranceOverrides = ToleranceOverrides()

    @field_validator("sample_sizes")
    @classmethod
    def _strictly_increasing(cls, v: List[int]) -> List[int]:
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("sample_sizes must be strictly increasing")
        return v

    @model_validator(mode="after")
    def _check_consistency(self):
        if len(self.theta0) != self.n:
            raise ValueError(f"theta0 has {len(self.theta0)} entries, expected n={self.n}")
        if min(self.sample_sizes) <= self.n:
            raise ValueError(f"N > n required (n={self.n}, smallest N={min(self.sample_sizes)})")
        if self.simulate.sample_size is not None and self.simulate.sample_size <= self.n:
            raise ValueError(f"N > n required (n={self.n}, simulate.sample_size={self.simulate.sample_size})")
        if self.kernels and self.rls_sigma2 is None:
            raise ValueError("kernels given but rls_sigma2 is missing: choose 'estimate', 'truth' or a number")
        if isinstance(self.rls_sigma2, float) and self.rls_sigma2 < 0:
            raise ValueError("rls_sigma2 must be nonnegative")
        return self


# Report schemas (reader side ignores unknown fields)
class VerdictRecord(BaseModel):
    model_config = ConfigDict(extra="ignore")

    suite: str
    criterion: str
    status: Literal["pass", "fail", "skipped"]
    measured: Optional[float] = None
    target: Optional[float] = None
    tolerance: Optional[float] = None
    sample_size: Optional[int] = None
    seed: int = 0
    detail: str = ""


class ReportRecord(BaseModel):
    model_config = ConfigDict(extra="ignore")

    schema_version: str
    master_seed: int
    suites: List[str]
    verdicts: List[VerdictRecord] = []
    notes: List[str] = []
    passed: bool = False
