"""File formats: tables (CSV or JSON), parameter records, configs, manifests, price series.

Floats are written with Python's shortest round-trip repr so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import math
import platform
from pathlib import Path

import numpy as np

from alssm.errors import ConfigError, DataError, ParameterError
from alssm.lingauss import ModelParams


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return None if not math.isfinite(v) else v
    return v


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def rows_from_columns(columns: dict) -> list[dict]:
    names = list(columns)
    cols = [np.asarray(columns[n]).ravel() for n in names]
    n = len(cols[0]) if cols else 0
    if any(len(c) != n for c in cols):
        raise ParameterError("table columns have different lengths")
    return [{name: col[i] for name, col in zip(names, cols)} for i in range(n)]


def write_table(path, table, fmt: str = "csv", columns=None) -> Path:
    """Write a list of row dicts (or a dict of equal-length columns).

    ``fmt="json"`` writes a list of row objects to the same stem with a ``.json`` suffix.
    """
    rows = rows_from_columns(table) if isinstance(table, dict) else list(table)
    if columns is None:
        columns = list(table) if isinstance(table, dict) else list(rows[0]) if rows else []
    path = Path(path)
    if fmt == "json":
        path = path.with_suffix(".json")
        path.write_text(dumps([{c: r.get(c) for c in columns} for r in rows]))
        return path
    if fmt != "csv":
        raise ConfigError(f"unknown table format {fmt!r}")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c, "")) for c in columns])
    return path


def read_table(path) -> dict[str, np.ndarray]:
    """Read a numeric CSV (or a JSON list of row objects) into float columns."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    if path.suffix == ".json":
        rows = json.loads(path.read_text())
        if not rows:
            raise DataError(f"{path}: empty table")
        names = list(rows[0])
        data = [[r[n] for n in names] for r in rows]
    else:
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            try:
                names = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty file") from None
            data = []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(names):
                    raise DataError(f"{path}:{lineno}: expected {len(names)} fields, got {len(row)}")
                data.append(row)
    try:
        arr = np.array(data, dtype=float).reshape(len(data), len(names))
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric entry ({exc})") from None
    return {n: arr[:, i] for i, n in enumerate(names)}


def prefixed(table: dict, prefix: str) -> np.ndarray:
    """Stack columns ``prefix_1, prefix_2, ...`` into a ``(T, n)`` array."""
    keys = sorted((k for k in table if k.startswith(prefix + "_") and k[len(prefix) + 1 :].isdigit()),
                  key=lambda k: int(k[len(prefix) + 1 :]))
    if not keys:
        raise DataError(f"table has no {prefix}_1.. columns")
    return np.column_stack([table[k] for k in keys])


def series_table(prefix: str, values: np.ndarray, var: np.ndarray | None = None, var_prefix: str = "var") -> dict:
    values = np.atleast_2d(np.asarray(values).T).T
    cols = {"t": np.arange(1, values.shape[0] + 1)}
    for i in range(values.shape[1]):
        cols[f"{prefix}_{i + 1}"] = values[:, i]
    if var is not None:
        for i in range(values.shape[1]):
            cols[f"{var_prefix}_{i + 1}"] = var[:, i, i] if var.ndim == 3 else var[:, i]
    return cols


# --------------------------------------------------------------------------
# parameters and configs

def write_params(path, theta: ModelParams, extra: dict | None = None) -> Path:
    record = theta.to_dict()
    if extra:
        record.update(extra)
    path = Path(path)
    path.write_text(dumps(record))
    return path


def read_params(path) -> ModelParams:
    path = Path(path)
    try:
        record = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: parameter file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    try:
        return ModelParams.from_dict(record)
    except ParameterError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_config(path) -> dict:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: config file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return cfg


def config_hash(config: dict) -> str:
    canonical = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def versions() -> dict:
    import numba
    import scipy

    from alssm import __version__

    return {
        "alssm": __version__,
        "numba": numba.__version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "scipy": scipy.__version__,
    }


def write_manifest(out_dir, command: str, config: dict, seed, args: dict, outputs) -> Path:
    record = {
        "command": command,
        "config": config,
        "config_sha256": config_hash(config),
        "seed": seed,
        "args": args,
        "outputs": sorted(Path(o).name for o in outputs),
        "versions": versions(),
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(dumps(record))
    return path


# --------------------------------------------------------------------------
# prices

def read_prices(path, min_rows: int = 100) -> tuple[list[str], np.ndarray]:
    """``date,price`` CSV with ISO dates and strictly positive prices."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    dates, prices = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["date", "price"]:
            raise DataError(f"{path}:1: expected header 'date,price'")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            d, p = row[0].strip(), row[1].strip()
            try:
                dt.date.fromisoformat(d)
            except ValueError:
                raise DataError(f"{path}:{lineno}: invalid ISO date {d!r}") from None
            try:
                price = float(p)
            except ValueError:
                raise DataError(f"{path}:{lineno}: invalid price {p!r}") from None
            if not (price > 0 and math.isfinite(price)):
                raise DataError(f"{path}:{lineno}: price must be positive, got {p}")
            dates.append(d)
            prices.append(price)
    if len(prices) < min_rows:
        raise DataError(f"{path}: need at least {min_rows} rows, got {len(prices)}")
    return dates, np.array(prices)
