"""
Deterministic file artifacts: CSV and JSON writers/readers.

All writes are serialized through one lock so concurrent pipeline stages never
interleave bytes in the same output directory. Floats are written with 17
significant digits, which round-trips every IEEE double exactly.
"""

import csv
import io
import json
import math
import threading
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np

from src.errors import ArtifactError
from src.lib.curves import Curve


write_lock = threading.Lock()

CURVE_HEADER = ("s", "value", "err_est")


def fmt(x: Any) -> str:
    """17-significant-digit decimal for floats, str() for everything else."""
    if isinstance(x, (float, np.floating)):
        value = float(x)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".17g")
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def _ensure_dir(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)


def write_text(path: Path, text: str) -> Path:
    path = Path(path)
    with write_lock:
        _ensure_dir(path)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    return path


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(x) for x in row])
    return write_text(path, buffer.getvalue())


def read_csv(path: Path) -> List[Dict[str, str]]:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"Missing file: {path}")
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            return list(csv.DictReader(f))
    except (OSError, csv.Error) as e:
        raise ArtifactError(f"Could not read {path}: {e}")


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


def write_json(path: Path, payload: Dict[str, Any]) -> Path:
    text = json.dumps(_plain(payload), indent=2, sort_keys=True) + "\n"
    return write_text(path, text)


def read_json(path: Path) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"Missing file: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ArtifactError(f"Could not read {path}: {e}")


def write_curve(path: Path, curve: Curve) -> Path:
    """Curve CSV with header s,value,err_est."""
    err = curve.err if curve.err is not None else np.full(curve.size, np.nan)
    rows = zip(curve.grid, curve.values, err)
    return write_csv(path, CURVE_HEADER, rows)


def read_curve(path: Path, label: str = "") -> Curve:
    rows = read_csv(path)
    if len(rows) < 2:
        raise ArtifactError(f"Curve file {path} has fewer than 2 rows")
    try:
        s = np.array([float(r["s"]) for r in rows])
        values = np.array([float(r["value"]) for r in rows])
        err = np.array([float(r["err_est"]) for r in rows])
    except (KeyError, ValueError) as e:
        raise ArtifactError(f"Malformed curve file {path}: {e}")
    return Curve(s[0], s[-1], values, label or Path(path).stem,
                 None if np.all(np.isnan(err)) else err)


def column(rows: List[Dict[str, str]], name: str, path: Path = None) -> np.ndarray:
    """Float column of a parsed CSV."""
    try:
        return np.array([float(r[name]) for r in rows])
    except (KeyError, ValueError) as e:
        raise ArtifactError(f"Malformed column '{name}' in {path or 'csv'}: {e}")
