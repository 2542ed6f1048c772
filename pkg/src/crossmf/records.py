"""Text codecs for simulation records, density snapshots and parameter files."""

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from crossmf.errors import ParameterError, RecordError
from crossmf.params import GRID_KEYS, PARAM_KEYS, GridSpec, ModelParams, coerce_value

RECORD_HEADER = "t,S,ED"


def format_float(value: float) -> str:
    """Locale-independent, round-trip exact formatting (17 significant digits)."""
    return format(float(value), ".17g")


@dataclass
class SimulationRecord:
    """Time series of price and excess demand with run metadata."""

    t: np.ndarray
    s: np.ndarray
    ed: np.ndarray
    metadata: dict[str, Any] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.t.shape[0])

    def encode(self) -> str:
        """Encode record to CSV text: header t,S,ED then one row per step."""
        lines = [RECORD_HEADER]
        for t, s, ed in zip(self.t, self.s, self.ed):
            lines.append(f"{format_float(t)},{format_float(s)},{format_float(ed)}")
        return "\n".join(lines) + "\n"


def decode_record(text: str) -> SimulationRecord:
    """Decode CSV text produced by SimulationRecord.encode."""
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or lines[0].strip() != RECORD_HEADER:
        raise RecordError(f"Record header must be '{RECORD_HEADER}'")
    rows = [line.split(",") for line in lines[1:]]
    for i, row in enumerate(rows):
        if len(row) != 3:
            raise RecordError(f"Record row {i + 1} has {len(row)} columns, expected 3")
    try:
        data = np.array([[float(v) for v in row] for row in rows], dtype=np.float64).reshape(-1, 3)
    except ValueError as e:
        raise RecordError(f"Record has a non-numeric field: {e}") from e
    return SimulationRecord(t=data[:, 0].copy(), s=data[:, 1].copy(), ed=data[:, 2].copy())


def write_record(record: SimulationRecord, path: str | Path) -> Path:
    """Write a record as CSV; I/O failures name the path."""
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(record.encode(), encoding="ascii")
    except OSError as e:
        raise OSError(f"Failed to write record to {target}: {e}") from e
    return target


def read_record(path: str | Path) -> SimulationRecord:
    """Read a record CSV written by write_record."""
    source = Path(path)
    try:
        text = source.read_text(encoding="ascii")
    except OSError as e:
        raise OSError(f"Failed to read record from {source}: {e}") from e
    return decode_record(text)


def encode_density(values: np.ndarray) -> str:
    """Encode a density grid as dense CSV (row = c index, column = m index)."""
    grid = np.atleast_2d(values)
    return "\n".join(",".join(format_float(v) for v in row) for row in grid) + "\n"


def decode_density(text: str) -> np.ndarray:
    """Decode a dense CSV density grid."""
    rows = [line for line in text.splitlines() if line.strip()]
    try:
        return np.array([[float(v) for v in row.split(",")] for row in rows], dtype=np.float64)
    except ValueError as e:
        raise RecordError(f"Density grid is malformed: {e}") from e


def encode_params(params: ModelParams, grid: GridSpec | None = None) -> str:
    """Encode parameters (and grid) to flat 'key = value' text."""
    lines = ["# crossmf parameters"]
    for key in PARAM_KEYS:
        lines.append(f"{key} = {getattr(params, key)!r}")
    if grid is not None:
        lines.append("# grid")
        for key in GRID_KEYS:
            lines.append(f"{key} = {getattr(grid, key)!r}")
    return "\n".join(lines) + "\n"


def decode_params(text: str) -> tuple[ModelParams, GridSpec | None]:
    """Decode 'key = value' text; missing parameter keys keep their defaults."""
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"line {lineno}: expected 'key = value', got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ParameterError(f"line {lineno}: duplicate key '{key}'")
        values[key] = coerce_value(key, value)

    params = ModelParams(**{k: v for k, v in values.items() if k in PARAM_KEYS})  # type: ignore[arg-type]
    grid_values = {k: v for k, v in values.items() if k in GRID_KEYS}
    if not grid_values:
        return params, None
    missing = [k for k in GRID_KEYS if k not in grid_values]
    if missing:
        raise ParameterError(f"grid section incomplete, missing keys: {', '.join(missing)}")
    return params, GridSpec(**grid_values)  # type: ignore[arg-type]


def load_params_file(path: str | Path) -> tuple[ModelParams, GridSpec | None]:
    """Read a parameter file from disk."""
    source = Path(path)
    try:
        text = source.read_text(encoding="utf-8")
    except OSError as e:
        raise OSError(f"Failed to read parameter file {source}: {e}") from e
    return decode_params(text)


def params_to_dict(params: ModelParams, grid: GridSpec | None = None) -> dict[str, Any]:
    """Plain-dict view used in JSON summaries."""
    out: dict[str, Any] = dataclasses.asdict(params)
    if grid is not None:
        out["grid"] = dataclasses.asdict(grid)
    return out
