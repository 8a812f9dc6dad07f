"""Dataset ingestion and serialization of fits and study results.

CSV outputs start with one ``#`` comment line carrying the config hash and
seed; the readers here skip it. Floats are written with ``repr`` so that
re-reading gives back the same doubles.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .estimators import CpoReport, SurvivalCurve, cure_rate_estimate, parameter_table
from .inference import ObservedData
from .sampler import RNG_ALGORITHM, ChainResult
from .simulation import StudyResult

log = logging.getLogger(__name__)


class DataValidationError(ValueError):
    """The input dataset violates the expected schema."""


def config_hash(config: Mapping) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _header_line(meta: Mapping) -> str:
    return "# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n"


def _parse_header_line(line: str) -> dict:
    if not line.startswith("#"):
        return {}
    return dict(part.split("=", 1) for part in line[1:].split() if "=" in part)


def _read_commented_csv(path) -> tuple[dict, list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        first = fh.readline()
        meta = _parse_header_line(first)
        if not meta:
            fh.seek(0)
        rows = list(csv.reader(fh))
    return meta, rows[0], rows[1:]


# -- datasets -------------------------------------------------------------------


def _sorted_levels(series: pd.Series) -> list:
    """Category levels in ascending order: numerically if all numeric, else as text."""
    uniq = pd.Series(series.unique())
    num = pd.to_numeric(uniq, errors="coerce")
    if num.notna().all():
        return list(uniq.iloc[np.argsort(num.to_numpy(), kind="stable")])
    return sorted(uniq, key=str)


def load_dataset(
    path,
    time_col: str = "time",
    event_col: str = "event",
    covariates: Optional[Sequence[str]] = None,
    categorical: Sequence[str] = (),
) -> ObservedData:
    """Read a right-censored dataset from CSV.

    ``covariates`` defaults to every column other than time and event.
    Columns listed in ``categorical`` (and any non-numeric column) become
    dummies ``<col>_D2, <col>_D3, ...`` with the lowest category as baseline.
    Row numbers in error messages count data rows from 1.
    """
    df = pd.read_csv(path, float_precision="round_trip")
    missing_cols = [c for c in (time_col, event_col) if c not in df.columns]
    if missing_cols:
        raise DataValidationError(f"missing required column(s): {', '.join(missing_cols)}")
    if covariates is None:
        covariates = [c for c in df.columns if c not in (time_col, event_col)]
    for c in covariates:
        if c not in df.columns:
            raise DataValidationError(f"missing covariate column {c!r}")
    used = [time_col, event_col, *covariates]
    na = df[used].isna().any(axis=1).to_numpy()
    if na.any():
        raise DataValidationError(f"row {int(np.flatnonzero(na)[0]) + 1}: missing value")

    times = pd.to_numeric(df[time_col], errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(times) | (times <= 0)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DataValidationError(f"row {i + 1}: time must be a positive number, got {df[time_col].iloc[i]}")
    events_raw = pd.to_numeric(df[event_col], errors="coerce").to_numpy(dtype=float)
    bad = ~np.isin(events_raw, (0.0, 1.0))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DataValidationError(f"row {i + 1}: event must be 0 or 1, got {df[event_col].iloc[i]}")

    columns, names = [], []
    for c in covariates:
        series = df[c]
        numeric = pd.to_numeric(series, errors="coerce")
        if c in categorical or numeric.isna().any():
            levels = _sorted_levels(series)
            for l, level in enumerate(levels[1:], start=2):
                columns.append((series == level).to_numpy(dtype=float))
                names.append(f"{c}_D{l}")
        else:
            columns.append(numeric.to_numpy(dtype=float))
            names.append(c)
    X = np.column_stack([np.ones(len(df)), *columns]) if columns else np.ones((len(df), 1))
    data = ObservedData(times, events_raw.astype(bool), X, tuple(names))
    log.info("loaded %s: m = %d, %.0f%% censored", path, data.m, 100 * data.censored_fraction)
    return data


def write_dataset(data: ObservedData, path, time_col: str = "time", event_col: str = "event") -> None:
    """Write ``data`` so that :func:`load_dataset` gives it back unchanged."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([time_col, event_col, *data.covariate_names])
        for t, e, row in zip(data.times, data.events, data.covariates[:, 1:]):
            w.writerow([repr(float(t)), int(e), *(repr(float(v)) for v in row)])


# -- chains and curves ------------------------------------------------------------


def write_chain_csv(chain: ChainResult, path, meta: Mapping) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(_header_line(meta))
        w = csv.writer(fh)
        w.writerow(["iter", *chain.param_names, "log_post"])
        for k, (row, lp) in enumerate(zip(chain.draws, chain.log_posterior_trace)):
            w.writerow([k, *(repr(float(v)) for v in row), repr(float(lp))])


def read_chain_csv(path) -> tuple[dict, list[str], np.ndarray, np.ndarray]:
    """Return ``(meta, param_names, draws, log_post)``."""
    meta, header, rows = _read_commented_csv(path)
    arr = np.array([[float(v) for v in r] for r in rows])
    return meta, header[1:-1], arr[:, 1:-1], arr[:, -1]


def write_survival_csv(curves: Iterable[tuple[str, SurvivalCurve]], path, meta: Mapping) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(_header_line(meta))
        w = csv.writer(fh)
        w.writerow(["profile_id", "t", "S"])
        for pid, curve in curves:
            for t, s in zip(curve.time_grid, curve.values):
                w.writerow([pid, repr(float(t)), repr(float(s))])


def read_survival_csv(path) -> tuple[dict, dict[str, tuple[np.ndarray, np.ndarray]]]:
    meta, _, rows = _read_commented_csv(path)
    out: dict[str, tuple[list, list]] = {}
    for pid, t, s in rows:
        ts, ss = out.setdefault(pid, ([], []))
        ts.append(float(t))
        ss.append(float(s))
    return meta, {k: (np.array(a), np.array(b)) for k, (a, b) in out.items()}


# -- summaries ---------------------------------------------------------------------


def profile_id(x) -> str:
    return "x=" + ",".join(f"{v:g}" for v in np.asarray(x)[1:]) if len(x) > 1 else "intercept"


def fit_summary(
    chain: ChainResult,
    data: ObservedData,
    cpo_report: CpoReport,
    profiles: Sequence[np.ndarray],
    meta: Mapping,
    level: float = 0.95,
) -> dict:
    """JSON-ready summary: parameter table, cure rates per profile, CPO."""
    cure = []
    for x in profiles:
        est = cure_rate_estimate(chain, x, level)
        cure.append({"profile_id": profile_id(x), "x": [float(v) for v in x], "mean": est.mean,
                     "hpd_lower": est.hpd.lower, "hpd_upper": est.hpd.upper})
    return {
        **meta,
        "model": chain.kind.value,
        "rng": RNG_ALGORITHM,
        "m": data.m,
        "censored_fraction": data.censored_fraction,
        "n_draws": chain.n_draws,
        "acceptance_rate": chain.acceptance_rate,
        "geweke_z": dict(zip(chain.param_names, map(float, chain.geweke_z))),
        "converged_flag": chain.converged_flag,
        "hpd_level": level,
        "parameters": parameter_table(chain, level),
        "cure_rates": cure,
        "cpo": {
            "total_log": cpo_report.total_log,
            "flagged": cpo_report.flagged,
            "diagnostics": cpo_report.diagnostics,
        },
    }


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, allow_nan=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


# -- study tables -------------------------------------------------------------------


def write_study(result: StudyResult, out_dir, meta: Mapping) -> dict[str, Path]:
    """Write the AE/RMSE table, the CPO-difference row and the replicate log."""
    out_dir = Path(out_dir)
    s = result.scenario
    paths = {"table": out_dir / "study_table.csv", "cpo": out_dir / "study_cpo_diff.csv",
             "replicates": out_dir / "study_replicates.csv"}
    with open(paths["table"], "w", newline="") as fh:
        fh.write(_header_line(meta))
        w = csv.writer(fh)
        w.writerow(["scenario_id", "gamma", "sigma2", "m", "B", "model", "parameter", "AE", "RMSE"])
        for r in result.table:
            w.writerow([s.scenario_id, s.gamma, s.sigma2, s.m, s.B, r["model"], r["parameter"], repr(r["AE"]), repr(r["RMSE"])])
    with open(paths["cpo"], "w", newline="") as fh:
        fh.write(_header_line(meta))
        w = csv.writer(fh)
        w.writerow(["scenario_id", "cpo_diff_mean", "cpo_diff_sd"])
        w.writerow([s.scenario_id, repr(result.cpo_diff_mean), repr(result.cpo_diff_sd)])
    keys = sorted({k for r in result.replicate_log for k in r} - {"replicate"})
    with open(paths["replicates"], "w", newline="") as fh:
        fh.write(_header_line(meta))
        w = csv.writer(fh)
        w.writerow(["replicate", *keys, "error"])
        for r in result.replicate_log:
            w.writerow([r["replicate"], *(repr(r[k]) if isinstance(r[k], float) else r[k] for k in keys), ""])
        for r in result.failures:
            w.writerow([r["replicate"], *([""] * len(keys)), r["error"]])
    return paths


def read_study_table(path) -> tuple[dict, list[dict]]:
    meta, header, rows = _read_commented_csv(path)
    return meta, [dict(zip(header, r)) for r in rows]
