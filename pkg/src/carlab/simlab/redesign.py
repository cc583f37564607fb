"""Re-randomization of an enrolled cohort from a CSV file.

Takes covariate columns from a delimited file, optionally rescales them to
unit variance, then replays enrollment many times under each configured
allocation rule, reporting the same mean/SD table as run_experiment.  Two
unit orders are supported: the file's own order repeated every replication
(fixed_order), or bootstrap resampling of rows (resample).
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from ..config import parse_experiment_config
from ..errors import ConfigError
from .experiment import ExperimentResult, run_experiment

SCALINGS = ("unit_variance", "none")
MODES = ("fixed_order", "resample")


def _read_csv_columns(path: Union[str, Path], wanted: Sequence[str]) -> Dict[str, List[float]]:
    """Pull named numeric columns out of a CSV file, in row order."""
    try:
        with open(path, "r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            rows = [r for r in reader if any(cell.strip() for cell in r)]
    except OSError as exc:
        raise ConfigError("csv", f"cannot read {path}: {exc}") from exc
    except (csv.Error, UnicodeDecodeError) as exc:
        raise ConfigError("csv", f"cannot parse {path}: {exc}") from exc
    if not rows:
        raise ConfigError("csv", f"{path} is empty")
    header = [cell.strip() for cell in rows[0]]
    missing = [c for c in wanted if c not in header]
    if missing:
        raise ConfigError(
            "csv.columns",
            f"columns {missing} not found; file has {header}",
        )
    idx = {c: header.index(c) for c in wanted}
    out: Dict[str, List[float]] = {c: [] for c in wanted}
    for rownum, row in enumerate(rows[1:], start=2):
        for c in wanted:
            j = idx[c]
            if j >= len(row):
                raise ConfigError("csv", f"row {rownum}: missing value for column {c!r}")
            cell = row[j].strip()
            try:
                out[c].append(float(cell))
            except ValueError as exc:
                raise ConfigError(
                    "csv", f"row {rownum}, column {c!r}: non-numeric value {cell!r}"
                ) from exc
    if not out[wanted[0]]:
        raise ConfigError("csv", f"{path} has a header but no data rows")
    return out


def redesign_from_csv(
    path: Union[str, Path],
    columns: Sequence[str],
    policies: Sequence[dict],
    rho="2/3",
    sizes: Optional[Sequence[int]] = None,
    replications: int = 1000,
    base_seed: int = 0,
    scaling: str = "unit_variance",
    mode: str = "fixed_order",
    additional_covariates: Optional[Sequence[dict]] = None,
    threads: Optional[int] = None,
) -> ExperimentResult:
    """Re-allocate a recorded cohort under each policy, many times over.

    ``columns`` picks the covariate coordinates (statistics are named after
    them).  ``unit_variance`` scaling divides each coordinate by its sample
    standard deviation before any allocation logic sees it; additional
    csv_column quantities always keep their original scale.
    """
    if scaling not in SCALINGS:
        raise ConfigError("scaling", f"must be one of {SCALINGS}, got {scaling!r}")
    if mode not in MODES:
        raise ConfigError("mode", f"must be one of {MODES}, got {mode!r}")
    columns = list(columns)
    if not columns:
        raise ConfigError("columns", "need at least one covariate column")
    if len(set(columns)) != len(columns):
        raise ConfigError("columns", "column names must be unique")

    extra_docs = list(additional_covariates or [])
    raw_names = sorted(
        {
            doc.get("column")
            for doc in extra_docs
            if isinstance(doc, dict) and doc.get("kind") == "csv_column" and doc.get("column")
        }
    )
    table = _read_csv_columns(path, columns + [c for c in raw_names if c not in columns])

    matrix = np.column_stack([np.asarray(table[c], dtype=np.float64) for c in columns])
    n_rows = matrix.shape[0]
    if scaling == "unit_variance":
        sds = matrix.std(axis=0, ddof=1) if n_rows > 1 else np.zeros(matrix.shape[1])
        flat = [columns[j] for j in range(len(columns)) if not sds[j] > 0]
        if flat:
            raise ConfigError(
                "scaling",
                f"columns {flat} have no spread; unit-variance scaling is undefined "
                f"(use scaling='none')",
            )
        matrix = matrix / sds[None, :]

    if sizes is None:
        sizes = [n_rows]
    sizes = [int(s) for s in sizes]
    if mode == "fixed_order" and sizes and max(sizes) > n_rows:
        raise ConfigError(
            "sizes", f"fixed_order replays at most {n_rows} recorded rows, asked for {max(sizes)}"
        )

    generator_doc: dict = {
        "kind": "fixed_sequence" if mode == "fixed_order" else "csv_resample",
        "rows": matrix.tolist(),
    }
    if raw_names:
        generator_doc["extra_columns"] = {c: table[c] for c in raw_names}

    doc = {
        "base_seed": int(base_seed),
        "replications": int(replications),
        "sizes": sizes,
        "rho": rho,
        "generator": generator_doc,
        "policies": list(policies),
        "coordinate_names": columns,
    }
    if extra_docs:
        doc["additional_covariates"] = extra_docs
    config = parse_experiment_config(doc)
    return run_experiment(config, threads=threads)
