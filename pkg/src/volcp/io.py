"""CSV path ingestion, versioned reports and run configuration."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import IO

import numpy as np
import yaml

from .changepoint import ChangePointFit, CusumTrace
from .inference import TABLE_SCHEMA, TABLE_SCHEMA_VERSION, IntervalEstimate, QuantileTable, TestReport
from .model_sim import SamplePath
from .montecarlo import SUMMARY_SCHEMA, SUMMARY_SCHEMA_VERSION, McSummary

REPORT_SCHEMA = "volcp.report"
REPORT_SCHEMA_VERSION = 1
EQUISPACING_RTOL = 1e-6


class InputError(ValueError):
    """Malformed input file or configuration (CLI exit code 2)."""


class RaggedRowError(InputError):
    def __init__(self, row: int, expected: int, got: int):
        self.row = row
        super().__init__(f"row {row}: expected {expected} columns, got {got}")


class NonNumericError(InputError):
    def __init__(self, row: int, column: str, cell: str):
        self.row = row
        super().__init__(f"row {row}: column {column!r} is not numeric ({cell!r})")


class NonEquispacedError(InputError):
    def __init__(self, row: int, step: float, expected: float):
        self.row = row
        super().__init__(f"row {row}: time step {step!r} differs from {expected!r}")


class ConfigError(InputError):
    pass


# -- paths --------------------------------------------------------------------


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def _open_text(source) -> tuple[IO[str], bool]:
    if hasattr(source, "read"):
        return source, False
    return open(source, newline=""), True


def load_csv(
    source,
    delta: float | None = None,
    time_column: str | int | None = None,
    value_column: str | int | None = None,
    header: bool | None = None,
) -> SamplePath:
    """Read an observed path from CSV.

    With a header the time column defaults to ``t`` or ``time`` when present
    and the value column to ``x`` (else the last column); without one, two
    columns are read as ``t, x`` and a single column as ``x``.  An explicit
    ``delta`` is required when there is no time column; when both exist
    they must agree.  Rows are numbered from 1 over data rows.
    """
    handle, close = _open_text(source)
    try:
        rows = [r for r in csv.reader(handle) if r and any(c.strip() for c in r)]
    finally:
        if close:
            handle.close()
    if not rows:
        raise InputError("empty file")
    rows = [[c.strip() for c in r] for r in rows]
    if header is None:
        header = not all(_is_number(c) for c in rows[0])
    names = rows[0] if header else [f"col{i}" for i in range(len(rows[0]))]
    data = rows[1:] if header else rows
    width = len(names)

    def index_of(col, default):
        if col is None:
            return default
        if isinstance(col, int):
            if not -width <= col < width:
                raise InputError(f"column index {col} out of range")
            return col % width
        if col not in names:
            raise InputError(f"no column named {col!r}; have {names}")
        return names.index(col)

    lowered = [c.lower() for c in names]
    if header:
        t_default = next((i for i, c in enumerate(lowered) if c in ("t", "time")), None)
        x_default = lowered.index("x") if "x" in lowered else width - 1
    else:
        t_default = 0 if width == 2 else None
        x_default = width - 1
    t_idx = index_of(time_column, t_default)
    x_idx = index_of(value_column, x_default)
    if t_idx == x_idx:
        t_idx = None

    times, values = [], []
    for row_no, row in enumerate(data, start=1):
        if len(row) != width:
            raise RaggedRowError(row_no, width, len(row))
        try:
            values.append(float(row[x_idx]))
        except ValueError:
            raise NonNumericError(row_no, names[x_idx], row[x_idx]) from None
        if t_idx is not None:
            try:
                times.append(float(row[t_idx]))
            except ValueError:
                raise NonNumericError(row_no, names[t_idx], row[t_idx]) from None
        if not math.isfinite(values[-1]) or (times and not math.isfinite(times[-1])):
            raise NonNumericError(row_no, names[x_idx], row[x_idx])
    if len(values) < 3:
        raise InputError(f"need at least 3 observations, got {len(values)}")

    if t_idx is not None:
        steps = np.diff(times)
        first = float(steps[0])
        if not first > 0:
            raise NonEquispacedError(2, first, first)
        for i, step in enumerate(steps):
            if abs(step - first) > EQUISPACING_RTOL * first:
                raise NonEquispacedError(i + 2, float(step), first)
        inferred = (times[-1] - times[0]) / (len(times) - 1)
        if delta is not None and abs(delta - inferred) > EQUISPACING_RTOL * inferred:
            raise InputError(f"--delta {delta} disagrees with time column step {inferred}")
        delta = inferred if delta is None else delta
    elif delta is None:
        raise InputError("no time column: supply delta")
    if not delta > 0:
        raise InputError(f"delta must be positive, got {delta}")
    return SamplePath(float(delta), np.array(values))


def write_path_csv(path: SamplePath) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "x"])
    for t, x in zip(path.times, path.values):
        w.writerow([repr(float(t)), repr(float(x))])
    return buf.getvalue()


# -- reports ------------------------------------------------------------------

_KINDS = {
    "changepoint_fit": ChangePointFit,
    "test_report": TestReport,
    "interval": IntervalEstimate,
}


def _plain(value):
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value


def _kind(result) -> str:
    for kind, cls in _KINDS.items():
        if isinstance(result, cls):
            return kind
    if isinstance(result, CusumTrace):
        return "cusum_trace"
    if isinstance(result, QuantileTable):
        return "quantile_table"
    if isinstance(result, McSummary):
        return "mc_summary"
    raise TypeError(f"no report format for {type(result).__name__}")


def _fields_of(result) -> dict:
    if isinstance(result, (QuantileTable, McSummary)):
        # the report envelope carries its own schema fields
        d = result.to_dict()
        return {k: v for k, v in d.items() if k not in ("schema", "schema_version")}
    return {f.name: _plain(getattr(result, f.name)) for f in fields(result)}


def write_report(result, fmt: str = "json", seed: int | None = None, config: dict | None = None) -> bytes:
    """Serialize a fit, test, interval, trace, table or summary.

    JSON output carries a schema name and version plus ``seed`` and
    ``config`` so the run can be repeated.  CSV output is tabular: a trace
    becomes ``k, S_k, D_k, V_k, U2_k`` rows, a summary its records, a table
    its ``p, q`` pairs, and any other result a single row.
    """
    kind = _kind(result)
    if fmt == "json":
        doc = {"schema": REPORT_SCHEMA, "schema_version": REPORT_SCHEMA_VERSION, "kind": kind}
        doc.update(_fields_of(result))
        doc["seed"] = seed
        if kind == "mc_summary":
            # a summary already echoes its experiment; extra run options nest under it
            doc["config"] = {**doc["config"], "run": _plain(config)} if config else doc["config"]
        else:
            doc["config"] = _plain(config or {})
        return (json.dumps(doc, indent=1) + "\n").encode()
    if fmt != "csv":
        raise ValueError(f"unsupported report format {fmt!r}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if kind == "cusum_trace":
        w.writerow(["k", "S_k", "D_k", "V_k", "U2_k"])
        for k in range(1, result.n + 1):
            s = repr(float(result.s_cum[k - 1]))
            if k < result.n:
                w.writerow([k, s, repr(float(result.d[k - 1])), repr(float(result.v[k - 1])),
                            repr(float(result.u2[k - 1]))])
            else:
                w.writerow([k, s, "", "", ""])
        return buf.getvalue().encode()
    if kind == "mc_summary":
        return result.records_csv().encode()
    if kind == "quantile_table":
        w.writerow(["p", "q"])
        for p, q in zip(result.probabilities, result.quantiles):
            w.writerow([repr(float(p)), repr(float(q))])
        return buf.getvalue().encode()
    row = _fields_of(result)
    w.writerow(list(row))
    w.writerow([json.dumps(v) for v in row.values()])
    return buf.getvalue().encode()


def _rebuild(cls, data: dict):
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        v = data[f.name]
        if isinstance(v, list) and "tuple" in str(f.type):
            v = tuple(v)
        kwargs[f.name] = v
    return cls(**kwargs)


def read_report(blob: bytes | str, kind: str | None = None):
    """Inverse of :func:`write_report`.  CSV input needs ``kind``."""
    text = blob.decode() if isinstance(blob, bytes) else blob
    if kind is None:
        doc = json.loads(text)
        if doc.get("schema") != REPORT_SCHEMA or doc.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise ValueError("not a supported report")
        kind = doc["kind"]
        if kind in _KINDS:
            return _rebuild(_KINDS[kind], doc)
        if kind == "cusum_trace":
            return CusumTrace(
                doc["n"], np.array(doc["s_cum"]), np.array(doc["d"]), np.array(doc["v"]),
                np.array(doc["u2"]), doc["z_bar"], doc["total_ss"], doc["provenance"],
            )
        if kind == "quantile_table":
            return QuantileTable.from_dict({**doc, "schema": TABLE_SCHEMA, "schema_version": TABLE_SCHEMA_VERSION})
        if kind == "mc_summary":
            return McSummary.from_dict(
                {**doc, "schema": SUMMARY_SCHEMA, "schema_version": SUMMARY_SCHEMA_VERSION}
            )
        raise ValueError(f"unknown report kind {kind!r}")

    rows = list(csv.reader(io.StringIO(text)))
    if kind == "cusum_trace":
        body = rows[1:]
        n = len(body)
        s_cum = np.array([float(r[1]) for r in body])
        d = np.array([float(r[2]) for r in body[:-1]])
        v = np.array([float(r[3]) for r in body[:-1]])
        u2 = np.array([float(r[4]) for r in body[:-1]])
        z_bar = s_cum[-1] / n
        total_ss = float(u2[0] + n * v[0] ** 2)
        return CusumTrace(n, s_cum, d, v, u2, z_bar, total_ss)
    if kind == "quantile_table":
        raise ValueError("CSV tables drop their Monte Carlo config; read the JSON report instead")
    if kind in _KINDS:
        return _rebuild(_KINDS[kind], dict(zip(rows[0], (json.loads(c) for c in rows[1]))))
    raise ValueError(f"cannot read {kind!r} from CSV")


# -- configuration ------------------------------------------------------------


@dataclass
class RunConfig:
    """Defaults for every CLI option; a YAML file may override any subset."""

    trim_delta: float = 0.05
    kernel: str = "gaussian"
    bandwidth: float | None = None
    drift: str = "known"
    b: str = "0"
    sigma: str = "1"
    alpha: float = 0.05
    coverage: float = 0.95
    theta_tilde: str = "pooled"
    weighted: bool = False
    seed: int = 0
    mc_paths: int = 20000
    mc_grid: int = 5000
    argmax_paths: int = 100000
    argmax_horizon: float = 50.0
    argmax_step: float = 0.01
    cache_dir: str | None = None

    def __post_init__(self):
        if not 0 <= self.trim_delta < 0.5:
            raise ConfigError(f"trim_delta must lie in [0, 1/2), got {self.trim_delta}")
        if self.drift not in ("known", "estimate"):
            raise ConfigError(f"drift must be 'known' or 'estimate', got {self.drift!r}")
        if self.kernel not in ("gaussian", "epanechnikov"):
            raise ConfigError(f"unknown kernel {self.kernel!r}")
        if self.theta_tilde not in ("pooled", "theta1", "theta2"):
            raise ConfigError(f"theta_tilde must be pooled, theta1 or theta2, got {self.theta_tilde!r}")
        if not 0 < self.alpha < 1 or not 0 < self.coverage < 1:
            raise ConfigError("alpha and coverage must lie in (0, 1)")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ConfigError("bandwidth must be positive")

    @classmethod
    def from_mapping(cls, data: dict | None) -> "RunConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def merged(self, **overrides) -> "RunConfig":
        data = asdict(self)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_mapping(data)


def load_yaml(path: str | os.PathLike) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return data


def load_run_config(path: str | os.PathLike | None) -> RunConfig:
    return RunConfig.from_mapping(load_yaml(path) if path else {})


def default_cache_dir() -> Path:
    env = os.environ.get("VOLCP_CACHE_DIR")
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "volcp"
