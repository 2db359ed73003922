"""CSV and JSON writers with deterministic bytes.

CSV files start with ``#`` comment lines (schema, library version, config
hash) followed by an RFC 4180 table; floats are written with ``repr`` so they
round-trip exactly.  JSON is UTF-8 with sorted keys; non-finite floats become
the strings ``"inf"``, ``"-inf"`` and ``"nan"``.
"""
from __future__ import annotations

import csv
import dataclasses
import enum
import json
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from ._version import __version__
from .sde_sim import PathBatch

__all__ = ["to_jsonable", "dumps_json", "write_json", "write_csv", "write_path_dump"]


def _float(x: float) -> Any:
    if math.isfinite(x):
        return x
    return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")


def to_jsonable(obj: Any) -> Any:
    """Convert results into plain JSON types."""
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, Mapping):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _float(float(obj))
    if dataclasses.is_dataclass(obj):
        return to_jsonable(dataclasses.asdict(obj))
    return obj


def dumps_json(payload: Any) -> str:
    return json.dumps(to_jsonable(payload), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(path: Path, payload: Any) -> Path:
    path.write_text(dumps_json(payload), encoding="utf-8")
    return path


def _cell(x: Any) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, enum.Enum):
        return str(x.value)
    return str(x)


def write_csv(
    path: Path,
    columns: Sequence[str],
    rows: Iterable[Sequence[Any]],
    header: Mapping[str, Any],
) -> Path:
    """Write ``# key: value`` comment lines then the table."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for key in sorted(header):
            fh.write(f"# {key}: {header[key]}\r\n")
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(x) for x in row])
    return path


def csv_header(schema: str, config_hash: str, extra: Mapping[str, Any] | None = None) -> dict[str, Any]:
    head = {"schema": schema, "library": f"varswap {__version__}", "config_hash": config_hash}
    head.update(extra or {})
    return head


def write_path_dump(directory: Path, batch: PathBatch, config_hash: str) -> tuple[Path, Path]:
    """Raw paths as long-format CSV (path, time, log_price, v, w) plus a JSON sidecar."""
    times = batch.times
    w = batch.w if batch.w is not None else np.full_like(batch.v, np.nan)

    def rows():
        for i in range(batch.n_paths):
            for j, t in enumerate(times):
                yield batch.start + i, float(t), batch.log_price[i, j], batch.v[i, j], w[i, j]

    csv_path = write_csv(
        directory / "paths.csv",
        ("path", "time", "log_price", "v", "w"),
        rows(),
        csv_header("varswap.paths/1", config_hash),
    )
    meta = dict(batch.metadata())
    meta["jumps"] = [
        {"path": batch.start + int(p), "index": int(k), "log_size": float(x)}
        for p, k, x in zip(batch.jump_path, batch.jump_index, batch.jump_log)
    ]
    meta["library_version"] = __version__
    meta["config_hash"] = config_hash
    json_path = write_json(directory / "paths.json", meta)
    return csv_path, json_path
