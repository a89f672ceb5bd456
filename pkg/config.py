"""
Configuration module for the FIR asymptotics lab.
Loads the output-directory override from the environment and turns validated
experiment documents into domain values (filters, innovations, kernels, Monte Carlo designs).
"""

import json
import os
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from dotenv import load_dotenv
from pydantic import ValidationError

from schemas import ExperimentConfig, FilterConfig, InnovationConfig, KernelConfig

# Load environment variables from .env file
load_dotenv()


class ConfigError(Exception):
    """Configuration error."""
    pass


class InsufficientDesignError(ConfigError):
    """Monte Carlo design cannot support the requested verification suite."""
    pass


def _get_env(key: str, default: str = "") -> str:
    """Get environment variable with default."""
    return os.getenv(key, default)


# Base directory
BASE_DIR = Path(__file__).parent.absolute()

# Output directory (the only setting read from the environment)
OUTPUT_DIR = Path(_get_env("FIRLAB_OUTPUT_DIR", str(BASE_DIR / "output")))

# Retry configuration for report and dataset writes
MAX_RETRIES = 3
RETRY_BACKOFF = 1

# Truncation tolerance for infinite impulse responses: sum_{k>K} |h(k)| <= tol
TRUNCATION_TOLERANCE = 1e-10

# Relative pivot threshold used by every rank / definiteness check
RANK_TOLERANCE = 1e-12

SUITES = ("as", "clt", "rates", "moments", "shat", "lemmas", "snr")
ENSEMBLE_SUITES = frozenset({"as", "clt", "rates", "moments", "shat", "snr"})

REPORT_SCHEMA_VERSION = "1.0"


def validate_output_dir(output_dir: Path) -> None:
    """
    Make sure the output directory exists and is writable.

    Raises:
        OSError: If the directory cannot be created or written to
    """
    output_dir.mkdir(parents=True, exist_ok=True)
    test_file = output_dir / ".write_test"
    test_file.touch()
    test_file.unlink()


def parse_suites(raw: Optional[str]) -> tuple:
    """Parse a comma-separated suite selection, keeping the canonical order."""
    if raw is None or not raw.strip():
        return SUITES
    requested = {s.strip().lower() for s in raw.split(",") if s.strip()}
    unknown = requested - set(SUITES)
    if unknown:
        raise ConfigError(f"Unknown suites {sorted(unknown)}. Must be a subset of {list(SUITES)}")
    if not requested:
        raise ConfigError("Suite selection must not be empty")
    return tuple(s for s in SUITES if s in requested)


def load_experiment_config(path: Path) -> ExperimentConfig:
    """
    Load and validate a JSON experiment document.

    Raises:
        OSError: If the file cannot be read
        ConfigError: If the document is not valid JSON or violates the schema
    """
    with open(path, "r", encoding="utf-8") as f:
        raw = f.read()
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e
    return parse_experiment_config(data, source=str(path))


def parse_experiment_config(data: dict, source: str = "<config>") -> ExperimentConfig:
    """Validate an already-parsed experiment document."""
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}"
            for err in e.errors()
        )
        raise ConfigError(f"{source}: {problems}") from e


def build_filter(cfg: FilterConfig):
    """Build a FilterSpec from a named preset."""
    from signals import FilterSpec, ar1_filter, fir2_filter, white_filter

    if cfg.preset == "white":
        return white_filter()
    if cfg.preset == "ar1":
        return ar1_filter(cfg.a, tolerance=TRUNCATION_TOLERANCE)
    if cfg.preset == "fir2":
        return fir2_filter(cfg.h0, cfg.h1)
    return FilterSpec(coeffs=np.asarray(cfg.coeffs, dtype=float), name="custom")


def build_innovation(cfg: InnovationConfig):
    """Build an InnovationSpec; moments always come from the family's closed forms."""
    from signals import InnovationSpec

    try:
        return InnovationSpec.from_family(cfg.family, cfg.variance, kurtosis=cfg.kurtosis)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def build_kernel(cfg: KernelConfig, n: int):
    """Build a KernelSpec of order n."""
    from estimators import KernelSpec

    try:
        return KernelSpec(family=cfg.family, eta=tuple(cfg.eta), n=n)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def build_mc_config(cfg: ExperimentConfig, master_seed: Optional[int] = None,
                    sample_sizes: Optional[Sequence[int]] = None):
    """
    Convert a validated experiment document into an McConfig.

    Args:
        cfg: Validated experiment document
        master_seed: Optional override of the document's seed (CLI --seed)
        sample_sizes: Optional override of the sample-size grid
    """
    from verify import McConfig, ToleranceTable

    grid = list(sample_sizes) if sample_sizes is not None else list(cfg.sample_sizes)
    if min(grid) <= cfg.n:
        raise ConfigError(f"N > n required (n={cfg.n}, smallest N={min(grid)})")

    tolerances = ToleranceTable(**cfg.tolerances.model_dump(exclude_none=True))
    shat_kernel = build_kernel(cfg.shat_kernel, cfg.n) if cfg.shat_kernel is not None else None
    return McConfig(
        n=cfg.n,
        theta0=np.asarray(cfg.theta0, dtype=float),
        filter=build_filter(cfg.filter),
        innov_u=build_innovation(cfg.innovation_u),
        innov_v=build_innovation(cfg.innovation_v),
        N_grid=tuple(grid),
        reps=cfg.replications,
        master_seed=cfg.master_seed if master_seed is None else master_seed,
        tolerances=tolerances,
        shat_kernel=shat_kernel,
        lemma_trials=cfg.lemma_trials,
    )


def get_config_summary(cfg: ExperimentConfig) -> str:
    """Get a summary of an experiment document."""
    return f"""
Configuration Summary:
  Output Directory: {OUTPUT_DIR}
  Order n: {cfg.n}
  Filter: {cfg.filter.preset}
  Input innovations: {cfg.innovation_u.family} (var {cfg.innovation_u.variance})
  Noise innovations: {cfg.innovation_v.family} (var {cfg.innovation_v.variance})
  Sample sizes: {list(cfg.sample_sizes)}
  Replications: {cfg.replications}
  Master seed: {cfg.master_seed}
"""
