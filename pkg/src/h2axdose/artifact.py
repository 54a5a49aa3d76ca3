"""File formats: calibration CSV, design CSV, parameter files and the calibration artifact.

The artifact is versioned JSON. Floats are written with ``repr`` (shortest
round-trip form), keys in a fixed order and no timestamp, so the same fit
always produces the same bytes and ``serialize(parse(text)) == text``.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibrate import CalibrationResult
from .errors import DomainError, ParseError
from .model import DEFAULT_MAX_COUNT, CalibrationDataset, ComponentParams, MixtureParams, Parametrization

ARTIFACT_FORMAT = "h2axdose-calibration"
FORMAT_VERSION = 1
CALIBRATION_HEADER = ["dose_gy", "time_h", "foci_count"]
AGGREGATED_HEADER = CALIBRATION_HEADER + ["cell_count"]
DESIGN_HEADER = ["dose_gy", "time_h", "cells"]
SURFACE_HEADER = ["dose_gy", "time_h", "mu", "sd"]
DENSITY_HEADER = ["dose_gy", "density"]
FREE_MODE_TOLERANCE = 1e-8


def atomic_write_text(path, text: str):
    """Write ``text`` to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def format_csv(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(x)) if not isinstance(x, (int, np.integer)) else str(int(x)) for x in row))
    return "\n".join(lines) + "\n"


# -- CSV ingestion ---------------------------------------------------------

def _read_rows(path, headers):
    """Yield ``(line_no, header, values)``; values are floats checked for sign."""
    path = Path(path)
    if not path.is_file():
        raise ParseError("file not found", path=str(path))
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = None
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if header is None:
                header = [cell.strip().lower() for cell in row]
                if header not in headers:
                    expected = " or ".join(",".join(h) for h in headers)
                    raise ParseError(f"missing or unknown header; expected {expected}", line, 1, str(path))
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(row)}", line, None, str(path))
            values = []
            for col, (name, cell) in enumerate(zip(header, row), start=1):
                try:
                    value = float(cell)
                except ValueError:
                    raise ParseError(f"{name}: non-numeric value {cell.strip()!r}", line, col, str(path)) from None
                if not math.isfinite(value) or value < 0:
                    raise ParseError(f"{name}: value {cell.strip()} must be finite and non-negative", line, col, str(path))
                values.append(value)
            yield line, header, values
        if header is None:
            raise ParseError("missing header", 1, 1, str(path))


def _integer(value, name, line, col, path):
    if value != round(value):
        raise ParseError(f"{name}: {value!r} is not an integer", line, col, str(path))
    return int(value)


def ingest_calibration_csv(path, max_count=DEFAULT_MAX_COUNT) -> CalibrationDataset:
    """Read per-cell ``dose_gy,time_h,foci_count`` rows, or the aggregated form
    with a trailing ``cell_count`` column, which is expanded to identical records."""
    doses, times, counts = [], [], []
    for line, header, values in _read_rows(path, [CALIBRATION_HEADER, AGGREGATED_HEADER]):
        dose, time, count = values[:3]
        if time <= 0:
            raise ParseError("time_h must be positive", line, 2, str(path))
        count = _integer(count, "foci_count", line, 3, path)
        if max_count is not None and count > max_count:
            raise ParseError(f"foci_count {count} exceeds the ceiling of {max_count}", line, 3, str(path))
        cells = _integer(values[3], "cell_count", line, 4, path) if len(values) == 4 else 1
        doses.extend([dose] * cells)
        times.extend([time] * cells)
        counts.extend([count] * cells)
    if not counts:
        raise ParseError("no data rows", None, None, str(path))
    try:
        return CalibrationDataset(doses, times, counts, provenance=Path(path).name, max_count=max_count)
    except DomainError as exc:
        raise ParseError(str(exc), path=str(path)) from exc


def write_calibration_csv(path, data: CalibrationDataset):
    rows = zip(data.dose, data.time, (int(y) for y in data.count))
    atomic_write_text(path, format_csv(CALIBRATION_HEADER, rows))


def read_design_csv(path):
    """``dose_gy,time_h,cells`` rows as ``(dose, time, cells)`` tuples."""
    design = []
    for line, _, (dose, time, cells) in _read_rows(path, [DESIGN_HEADER]):
        if time <= 0:
            raise ParseError("time_h must be positive", line, 2, str(path))
        design.append((dose, time, _integer(cells, "cells", line, 3, path)))
    if not design:
        raise ParseError("no design rows", None, None, str(path))
    return design


# -- coefficients ------------------------------------------------------------

def coefficients_to_dict(params: MixtureParams) -> dict:
    w, a, c, u, v = params.arrays()
    return {
        "weights": [float(x) for x in w],
        "a": [float(x) for x in a],
        "c": [float(x) for x in c],
        "v": [float(x) for x in v],
        "u": float(params.u) if params.shared_u else [float(x) for x in u],
    }


def _float_list(obj, key, K=None):
    values = obj.get(key)
    if not isinstance(values, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in values):
        raise ParseError(f"coefficients.{key} must be a list of numbers")
    if K is not None and len(values) != K:
        raise ParseError(f"coefficients.{key} must have {K} entries, found {len(values)}")
    return [float(x) for x in values]


def coefficients_from_dict(obj) -> MixtureParams:
    if not isinstance(obj, dict):
        raise ParseError("coefficients must be an object")
    w = _float_list(obj, "weights")
    K = len(w)
    a, c, v = (_float_list(obj, key, K) for key in ("a", "c", "v"))
    u = obj.get("u")
    try:
        if isinstance(u, list):
            u = _float_list(obj, "u", K)
            comps = [ComponentParams(ai, ci, vi, ui) for ai, ci, vi, ui in zip(a, c, v, u)]
            return MixtureParams(tuple(w), tuple(comps), None, False)
        if not isinstance(u, (int, float)) or isinstance(u, bool):
            raise ParseError("coefficients.u must be a number or a list of numbers")
        comps = [ComponentParams(ai, ci, vi) for ai, ci, vi in zip(a, c, v)]
        return MixtureParams(tuple(w), tuple(comps), float(u), True)
    except DomainError as exc:
        raise ParseError(f"invalid coefficients: {exc}") from exc


def read_params_file(path) -> MixtureParams:
    """Mixture parameters from an artifact or a bare coefficients JSON object."""
    obj = _load_json(path)
    if isinstance(obj, dict) and obj.get("format") == ARTIFACT_FORMAT:
        return artifact_from_dict(obj, str(path)).result.params
    return coefficients_from_dict(obj)


# -- artifact ----------------------------------------------------------------

@dataclass
class CalibrationArtifact:
    result: CalibrationResult
    metadata: dict = field(default_factory=dict)

    @property
    def covariance_entries(self):
        return self.result.covariance.size


def _finite(name, value):
    value = float(value)
    if not math.isfinite(value):
        raise DomainError(f"{name} is not finite ({value!r}); cannot serialise")
    return value


def artifact_to_dict(art: CalibrationArtifact) -> dict:
    res = art.result
    cov = np.asarray(res.covariance, dtype=float)
    return {
        "format": ARTIFACT_FORMAT,
        "format_version": FORMAT_VERSION,
        "K": int(res.K),
        "shared_u": bool(res.shared_u),
        "parameter_order": list(res.parameter_order),
        "coefficients": coefficients_to_dict(res.params),
        "free_mode": [float(x) for x in res.free_mode],
        "covariance": [float(x) for x in cov.ravel()],
        "aic": _finite("aic", res.aic),
        "log_posterior_at_mode": _finite("log_posterior_at_mode", res.log_posterior_at_mode),
        "log_likelihood_at_mode": _finite("log_likelihood_at_mode", res.log_likelihood_at_mode),
        "data_digest": res.data_digest,
        "warnings": list(res.warnings),
        "metadata": art.metadata,
    }


def serialize_artifact(art: CalibrationArtifact) -> str:
    return json.dumps(artifact_to_dict(art), indent=2, allow_nan=False, ensure_ascii=True) + "\n"


def _require(obj, key, kind, where):
    if key not in obj:
        raise ParseError(f"artifact field {key!r} is missing", path=where)
    value = obj[key]
    if not isinstance(value, kind) or (kind is not bool and isinstance(value, bool)):
        raise ParseError(f"artifact field {key!r} has the wrong type", path=where)
    return value


def artifact_from_dict(obj, where=None) -> CalibrationArtifact:
    if not isinstance(obj, dict) or obj.get("format") != ARTIFACT_FORMAT:
        raise ParseError("not a calibration artifact", path=where)
    version = _require(obj, "format_version", int, where)
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported artifact version {version}", path=where)
    K = _require(obj, "K", int, where)
    shared = _require(obj, "shared_u", bool, where)
    order = _require(obj, "parameter_order", list, where)
    try:
        param = Parametrization(K, shared)
    except DomainError as exc:
        raise ParseError(str(exc), path=where) from exc
    if order != list(param.names):
        raise ParseError("parameter_order does not match K and shared_u", path=where)
    params = coefficients_from_dict(_require(obj, "coefficients", dict, where))
    if params.K != K or params.shared_u != shared:
        raise ParseError("coefficients disagree with K or shared_u", path=where)
    p = param.size
    free = np.array(_require(obj, "free_mode", list, where), dtype=float)
    cov = np.array(_require(obj, "covariance", list, where), dtype=float)
    if free.shape != (p,):
        raise ParseError(f"free_mode must have {p} entries", path=where)
    if cov.shape != (p * p,):
        raise ParseError(f"covariance must have p^2 = {p * p} entries, found {cov.size}", path=where)
    cov = cov.reshape(p, p)
    if not np.all(np.isfinite(cov)) or not np.array_equal(cov, cov.T):
        raise ParseError("covariance must be finite and symmetric", path=where)
    if np.max(np.abs(param.to_free(params) - free)) > FREE_MODE_TOLERANCE:
        raise ParseError("free_mode is inconsistent with coefficients", path=where)
    nums = {}
    for key in ("aic", "log_posterior_at_mode", "log_likelihood_at_mode"):
        nums[key] = float(_require(obj, key, (int, float), where))
    result = CalibrationResult(
        params=params,
        covariance=cov,
        parameter_order=list(order),
        free_mode=free,
        log_posterior_at_mode=nums["log_posterior_at_mode"],
        log_likelihood_at_mode=nums["log_likelihood_at_mode"],
        aic=nums["aic"],
        K=K,
        shared_u=shared,
        data_digest=_require(obj, "data_digest", str, where),
        warnings=list(_require(obj, "warnings", list, where)),
    )
    return CalibrationArtifact(result, _require(obj, "metadata", dict, where))


def parse_artifact(text: str, where=None) -> CalibrationArtifact:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno, where) from None
    return artifact_from_dict(obj, where)


def _load_json(path):
    path = Path(path)
    if not path.is_file():
        raise ParseError("file not found", path=str(path))
    text = path.read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno, str(path)) from None


def read_artifact(path) -> CalibrationArtifact:
    path = Path(path)
    if not path.is_file():
        raise ParseError("file not found", path=str(path))
    return parse_artifact(path.read_text(encoding="utf-8"), str(path))


def write_artifact(path, art: CalibrationArtifact):
    atomic_write_text(path, serialize_artifact(art))
