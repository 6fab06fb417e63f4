"""Flat key-value scenario files and deterministic CSV/JSON tables.

Config format, one ``key = value`` per line, ``#`` starts a comment::

    protocol = quantum_jm
    N = 0.05
    n_th = 1.5
    eta = 0.9
    phi = 1.0472
    G = 1.2            # optional; defaults to 1 + max(N, 1e-3)
    chi = 0.8          # optional; defaults to 1
    dim_cap = 4096     # optional
    tolerance = 1e-5   # optional
    oracle = on        # optional
    sweep.N = 0.001, 0.01, 0.1
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

from . import __version__
from .engine import DEFAULT_TOLERANCE, PROTOCOLS, ScenarioConfig
from .errors import ConfigError, InvalidParameterError
from .fock_oracle import default_dim_cap
from .params import PARAM_NAMES, ProtocolParams, default_gain

_SCALAR_KEYS = set(PARAM_NAMES) | {"protocol", "dim_cap", "tolerance", "oracle"}
_REQUIRED = ("N", "n_th", "eta", "phi")
_BOOL = {"on": True, "true": True, "yes": True, "1": True, "off": False, "false": False, "no": False, "0": False}
_RANGES = {
    "N": (0.0, math.inf),
    "n_th": (0.0, math.inf),
    "eta": (0.0, 1.0),
    "G": (1.0, math.inf),
    "chi": (0.0, 1.0),
}


@dataclass
class SweepTable:
    columns: tuple
    rows: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.columns = tuple(self.columns)
        for i, row in enumerate(self.rows):
            if tuple(row) != self.columns:
                raise InvalidParameterError(f"row {i} has columns {tuple(row)}, expected {self.columns}")
            for key, value in row.items():
                if value is not None and not math.isfinite(value):
                    raise InvalidParameterError(f"row {i}: {key} is not finite ({value})")


def _number(text, key, line):
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"malformed number {text!r}", key, line) from None
    if not math.isfinite(value):
        raise ConfigError(f"value {text!r} is not finite", key, line)
    return value


def _check_range(key, value, line):
    lo, hi = _RANGES.get(key, (-math.inf, math.inf))
    if not lo <= value <= hi:
        raise ConfigError(f"value {value:g} outside [{lo:g}, {hi:g}]", key, line)


def parse_config(text: str) -> ScenarioConfig:
    """Parse a scenario document; see the module docstring for the format."""
    scalars, lines_of, axes = {}, {}, []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", line=lineno)
        key, value = (part.strip() for part in body.split("=", 1))
        if key.startswith("sweep."):
            name = key[len("sweep."):]
            if name not in PARAM_NAMES:
                raise ConfigError(f"cannot sweep unknown parameter {name!r}", key, lineno)
            if any(name == n for n, _ in axes):
                raise ConfigError("axis declared twice", key, lineno)
            items = [v.strip() for v in value.split(",") if v.strip()]
            if not items:
                raise ConfigError("sweep axis has no values", key, lineno)
            values = tuple(_number(v, key, lineno) for v in items)
            for v in values:
                _check_range(name, v, lineno)
            axes.append((name, values))
            continue
        if key not in _SCALAR_KEYS:
            raise ConfigError("unknown key", key, lineno)
        scalars[key] = value
        lines_of[key] = lineno

    swept = {name for name, _ in axes}
    if "protocol" not in scalars:
        raise ConfigError("missing required key", "protocol")
    protocol = scalars["protocol"]
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}; choose from {', '.join(PROTOCOLS)}", "protocol", lines_of["protocol"])

    values = {}
    for name in PARAM_NAMES:
        if name in scalars:
            values[name] = _number(scalars[name], name, lines_of[name])
            _check_range(name, values[name], lines_of[name])
        elif name in swept:
            values[name] = dict(axes)[name][0]
        elif name in _REQUIRED:
            raise ConfigError("missing required key", name)
    auto_gain = "G" not in values
    if auto_gain:
        values["G"] = default_gain(values["N"])
    values.setdefault("chi", 1.0)

    dim_cap = default_dim_cap()
    if "dim_cap" in scalars:
        cap = _number(scalars["dim_cap"], "dim_cap", lines_of["dim_cap"])
        if cap < 2 or cap != int(cap):
            raise ConfigError("dim_cap must be an integer >= 2", "dim_cap", lines_of["dim_cap"])
        dim_cap = int(cap)
    tolerance = DEFAULT_TOLERANCE
    if "tolerance" in scalars:
        tolerance = _number(scalars["tolerance"], "tolerance", lines_of["tolerance"])
        if tolerance <= 0:
            raise ConfigError("tolerance must be positive", "tolerance", lines_of["tolerance"])
    oracle = True
    if "oracle" in scalars:
        flag = scalars["oracle"].lower()
        if flag not in _BOOL:
            raise ConfigError(f"expected on/off, got {scalars['oracle']!r}", "oracle", lines_of["oracle"])
        oracle = _BOOL[flag]

    try:
        params = ProtocolParams(**values)
        return ScenarioConfig(
            params=params,
            protocol=protocol,
            oracle_enabled=oracle,
            oracle_dim_cap=dim_cap,
            tolerance=tolerance,
            auto_gain=auto_gain,
            axes=tuple(axes),
        )
    except InvalidParameterError as exc:
        raise ConfigError(str(exc)) from None


def _fmt(value) -> str:
    if value is None:
        return ""
    return format(float(value), ".17g")


def emit_table(table: SweepTable, format: str = "csv") -> str:
    """Render ``table`` as CSV (header + rows) or JSON (metadata + rows)."""
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(table.columns)
        for row in table.rows:
            writer.writerow([_fmt(row[c]) for c in table.columns])
        return buf.getvalue()
    if format == "json":
        metadata = {"tool": "qicloak", "version": __version__, **table.metadata}
        doc = {
            "metadata": metadata,
            "columns": list(table.columns),
            "rows": [{c: (None if row[c] is None else float(row[c])) for c in table.columns} for row in table.rows],
        }
        return json.dumps(doc, indent=2, sort_keys=False, allow_nan=False) + "\n"
    raise InvalidParameterError(f"unknown format {format!r}; use csv or json")


def read_table(text: str, format: str = "csv") -> SweepTable:
    """Inverse of :func:`emit_table`."""
    if format == "csv":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        rows = [{c: (float(v) if v != "" else None) for c, v in zip(header, rec)} for rec in reader]
        return SweepTable(tuple(header), rows)
    if format == "json":
        doc = json.loads(text)
        return SweepTable(tuple(doc["columns"]), doc["rows"], doc["metadata"])
    raise InvalidParameterError(f"unknown format {format!r}; use csv or json")
