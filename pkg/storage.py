"""
File persistence: dataset CSVs, truth sidecars, JSON reports.

All files are UTF-8 with LF line endings. Floats are written with 17
significant digits so a read-back reproduces every value bit for bit.
"""

import csv
import io
import json
from pathlib import Path
from typing import Any, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from config import ConfigError
from logger import get_logger
from retry_utils import default_retry
from schemas import ReportRecord
from signals import Dataset, simulate_fir

logger = get_logger("storage")


def fmt(x: float) -> str:
    """17 significant digits."""
    return format(float(x), ".17g")


def _json_default(obj: Any):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


@default_retry
def write_text(path: Path, text: str) -> Path:
    """Write text with LF line endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    return path


def write_json(data: dict, path: Path) -> Path:
    """Serialize to indented JSON (insertion order kept) and write it."""
    text = json.dumps(data, ensure_ascii=False, indent=2, default=_json_default) + "\n"
    return write_text(path, text)


def read_json(path: Path) -> dict:
    """
    Raises:
        OSError: If the file cannot be read
        ConfigError: If the file is not valid JSON
    """
    with open(path, "r", encoding="utf-8") as f:
        raw = f.read()
    try:
        return json.loads(raw)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e


# =============================================================================
# Datasets
# =============================================================================

def dataset_filename(N: int, rep: int) -> str:
    return f"dataset_N{N}_rep{rep}.csv"


def truth_path(csv_path: Path) -> Path:
    csv_path = Path(csv_path)
    return csv_path.with_name(f"{csv_path.stem}.truth.json")


def render_dataset_csv(dataset: Dataset) -> str:
    """
    Text of the dataset CSV.

    Header lines carry n, theta0, seed and the warm-up inputs u(1-n..0); rows are
    t,u,y for t = 1..N, with the u cell of row N left empty.
    """
    n, N = dataset.n, dataset.N
    seed = "none" if dataset.seed is None else str(dataset.seed)
    buf = io.StringIO()
    buf.write(f"# n={n} theta0={','.join(fmt(x) for x in dataset.theta0)} seed={seed}\n")
    buf.write(f"# u_init={','.join(fmt(x) for x in dataset.u[:n])}\n")

    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "u", "y"])
    for t in range(1, N + 1):
        u_cell = fmt(dataset.u[t + n - 1]) if t < N else ""
        writer.writerow([t, u_cell, fmt(dataset.Y[t - 1])])
    return buf.getvalue()


def write_dataset(dataset: Dataset, path: Path, with_truth: bool = False) -> Path:
    """Write a dataset CSV (and optionally its truth sidecar with v and theta0)."""
    path = write_text(path, render_dataset_csv(dataset))
    if with_truth:
        write_json({"theta0": dataset.theta0, "v": dataset.v}, truth_path(path))
    logger.debug(f"Wrote dataset {path.name} (n={dataset.n}, N={dataset.N})")
    return path


def _parse_header(line: str, prefix: str, path: Path) -> str:
    if not line.startswith(prefix):
        raise ConfigError(f"{path}: expected a header line starting with '{prefix}'")
    return line[len(prefix):].strip()


def _floats(text: str, what: str, path: Path) -> np.ndarray:
    try:
        return np.array([float(x) for x in text.split(",") if x.strip()], dtype=float)
    except ValueError as e:
        raise ConfigError(f"{path}: malformed {what} ({e})") from e


def read_dataset(path: Path) -> Dataset:
    """
    Parse a dataset CSV back into a Dataset.

    v comes from the truth sidecar when one exists, otherwise it is None.

    Raises:
        OSError: If the file cannot be read
        ConfigError: If the file does not follow the dataset layout
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as f:
        lines = f.read().split("\n")

    try:
        fields = dict(
            item.split("=", 1) for item in _parse_header(lines[0], "#", path).split()
        )
        n = int(fields["n"])
        theta0 = _floats(fields["theta0"], "theta0", path)
        seed = None if fields.get("seed", "none") == "none" else int(fields["seed"])
    except (IndexError, KeyError, ValueError) as e:
        raise ConfigError(f"{path}: malformed dataset header ({e})") from e
    if theta0.size != n:
        raise ConfigError(f"{path}: theta0 has {theta0.size} entries, expected n={n}")
    u_init = _floats(_parse_header(lines[1], "# u_init=", path), "u_init", path)
    if u_init.size != n:
        raise ConfigError(f"{path}: u_init has {u_init.size} entries, expected n={n}")

    rows = list(csv.reader(line for line in lines[2:] if line))
    if not rows or rows[0] != ["t", "u", "y"]:
        raise ConfigError(f"{path}: missing 't,u,y' column header")
    body = rows[1:]
    N = len(body)
    try:
        u_rest = [float(r[1]) for r in body[:-1]]
        Y = np.array([float(r[2]) for r in body], dtype=float)
        ts = [int(r[0]) for r in body]
    except (IndexError, ValueError) as e:
        raise ConfigError(f"{path}: malformed data row ({e})") from e
    if ts != list(range(1, N + 1)):
        raise ConfigError(f"{path}: rows must be numbered t=1..N")
    if N <= n:
        raise ConfigError(f"{path}: N > n required (n={n}, N={N})")

    u = np.concatenate([u_init, np.asarray(u_rest, dtype=float)])
    v, theta_truth = _read_truth(truth_path(path))
    if theta_truth is not None:
        theta0 = theta_truth

    # phi is rebuilt from u; Y is taken verbatim from the file
    ds = simulate_fir(theta0, u, np.zeros(N), seed=seed)
    ds.Y = Y
    ds.v = v
    return ds


def _read_truth(path: Path) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
    if not path.exists():
        return None, None
    data = read_json(path)
    try:
        return np.asarray(data["v"], dtype=float), np.asarray(data["theta0"], dtype=float)
    except KeyError as e:
        raise ConfigError(f"{path}: truth file lacks {e}") from e


# =============================================================================
# Reports
# =============================================================================

def load_report(path: Path) -> Tuple[ReportRecord, dict]:
    """
    Read a verify report; unknown fields are ignored.

    Returns:
        (validated record, raw dictionary)
    """
    data = read_json(path)
    try:
        return ReportRecord.model_validate(data), data
    except ValidationError as e:
        raise ConfigError(f"{path}: not a verify report ({e.error_count()} problems)") from e
