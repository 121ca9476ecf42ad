"""Dataset files, run configuration and deterministic writers.

Data files are UTF-8 CSV with ``# key: value`` comment lines on top followed
by a header row. Model and configuration files are JSON.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .calibration import EchoTrace
from .coherence import DecayTrace
from .constants import DEFAULT_CONSTANTS, FIELD_REL_ERROR, PhysicalConstants
from .fitting import FitOptions, SpectroscopyDataset, model_from_dict, model_to_dict
from .hamiltonian import SnVModel
from .strain import StrainTensor
from .transitions import LabFrameCalibration

FILE_KINDS = ("rotation_map", "odmr", "echo", "cpmg", "strain_grid", "pl")

VALUE_COLUMNS = {
    "qubit_GHz": "odmr_qubit",
    "allowed_split_GHz": "allowed_split",
    "forbidden_split_GHz": "forbidden_split",
}

_SCHEMAS = {
    "rotation_map": (("theta_deg",), tuple(VALUE_COLUMNS)),
    "odmr": (("theta_deg", "qubit_GHz"), ()),
    "pl": (("splitting_GHz",), ("theta_deg",)),
    "echo": (("tau_us", "signal"), ()),
    "cpmg": (("n_pulses", "counts"), ("time_ms", "tau_ms")),
    "strain_grid": (("x_um", "y_um", "eps_xx", "eps_yy", "eps_zz", "eps_xy", "eps_yz", "eps_zx"), ()),
}

_REQUIRED_HEADER = {
    "rotation_map": ("emitter", "field_magnitude"),
    "odmr": ("emitter", "field_magnitude"),
    "pl": ("emitter",),
    "echo": ("orientation", "b_nominal"),
    "cpmg": (),
    "strain_grid": (),
}


class DatasetError(ValueError):
    """A data file could not be parsed or failed validation."""


@dataclass(frozen=True)
class DatasetFile:
    """A parsed file: its kind, header metadata and typed content."""

    path: str
    kind: str
    header: dict
    data: Any


def _read_table(path):
    header: dict = {}
    rows: list = []
    columns = None
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith("#"):
                body = stripped[1:].strip()
                if ":" in body and columns is None:
                    key, value = body.split(":", 1)
                    header[key.strip()] = value.strip()
                continue
            cells = next(csv.reader([stripped]))
            cells = [c.strip() for c in cells]
            if columns is None:
                columns = cells
                continue
            if len(cells) != len(columns):
                raise DatasetError(f"{path}:{lineno}: expected {len(columns)} columns, found {len(cells)}")
            rows.append((lineno, cells))
    if columns is None:
        raise DatasetError(f"{path}: no column header row")
    return header, columns, rows


def _float(path, lineno, column, text):
    try:
        value = float(text)
    except ValueError:
        raise DatasetError(f"{path}:{lineno}: column {column!r}: cannot parse {text!r} as a number") from None
    if not math.isfinite(value):
        raise DatasetError(f"{path}:{lineno}: column {column!r}: non-finite value {text!r}")
    return value


def _header_float(path, header, key, positive=False):
    if key not in header:
        raise DatasetError(f"{path}: missing required header key {key!r}")
    try:
        value = float(header[key])
    except ValueError:
        raise DatasetError(f"{path}: header {key!r}: cannot parse {header[key]!r} as a number") from None
    if not math.isfinite(value) or (positive and not value > 0):
        raise DatasetError(f"{path}: header {key!r} must be a finite{' positive' if positive else ''} number")
    return value


def _optional_float(path, header, key):
    return _header_float(path, header, key) if key in header else None


def _bool(text):
    return str(text).strip().lower() in ("1", "true", "yes")


def parse_dataset(path, kind: str | None = None) -> DatasetFile:
    """Parse and validate one data file.

    ``kind`` may be omitted when the file declares ``# kind:``; when both are
    present they must agree. Errors name the file and line or the missing
    header key.
    """
    path = str(path)
    if not os.path.isfile(path):
        raise DatasetError(f"{path}: file not found")
    header, columns, rows = _read_table(path)
    declared = header.get("kind")
    if kind is None:
        kind = declared
    if kind is None:
        raise DatasetError(f"{path}: missing required header key 'kind'")
    if kind not in FILE_KINDS:
        raise DatasetError(f"{path}: unknown dataset kind {kind!r}; expected one of {', '.join(FILE_KINDS)}")
    if declared is not None and declared != kind:
        raise DatasetError(f"{path}: header declares kind {declared!r} but {kind!r} was requested")
    required, optional = _SCHEMAS[kind]
    missing = [c for c in required if c not in columns]
    if missing:
        raise DatasetError(f"{path}: schema mismatch for {kind}: missing column(s) {', '.join(missing)}")
    unknown = [c for c in columns if c not in required and c not in optional]
    if unknown:
        raise DatasetError(f"{path}: schema mismatch for {kind}: unexpected column(s) {', '.join(unknown)}")
    if kind == "rotation_map" and not any(c in columns for c in VALUE_COLUMNS):
        raise DatasetError(f"{path}: rotation_map needs at least one of {', '.join(VALUE_COLUMNS)}")
    if kind == "cpmg" and ("time_ms" in columns) == ("tau_ms" in columns):
        raise DatasetError(f"{path}: cpmg needs exactly one of the columns time_ms or tau_ms")
    for key in _REQUIRED_HEADER[kind]:
        if key not in header:
            raise DatasetError(f"{path}: missing required header key {key!r}")
    if not rows:
        raise DatasetError(f"{path}: no data rows")

    table = {c: [] for c in columns}
    for lineno, cells in rows:
        for c, text in zip(columns, cells):
            table[c].append(_float(path, lineno, c, text))

    try:
        data = _build(path, kind, header, table, rows)
    except DatasetError:
        raise
    except ValueError as exc:
        raise DatasetError(f"{path}: {exc}") from None
    return DatasetFile(path, kind, header, data)


def _build(path, kind, header, table, rows):
    if kind in ("rotation_map", "odmr"):
        magnitude = _header_float(path, header, "field_magnitude", positive=True)
        plane = header.get("plane", "yz")
        common = dict(
            emitter=header["emitter"],
            field_magnitude=magnitude,
            plane=plane,
            signed=_bool(header.get("signed", "false")),
            b_parallel_cal=_optional_float(path, header, "b_parallel_cal"),
            b_perp_cal=_optional_float(path, header, "b_perp_cal"),
        )
        out = []
        for column, ds_kind in VALUE_COLUMNS.items():
            if column in table:
                pts = tuple(zip(table["theta_deg"], table[column]))
                out.append(SpectroscopyDataset(kind=ds_kind, points=pts, **common))
        return out[0] if kind == "odmr" else tuple(out)
    if kind == "pl":
        thetas = table.get("theta_deg", [0.0] * len(table["splitting_GHz"]))
        return SpectroscopyDataset(header["emitter"], "pl_splitting", tuple(zip(thetas, table["splitting_GHz"])), 0.0)
    if kind == "echo":
        return EchoTrace(tuple(zip(table["tau_us"], table["signal"])), header["orientation"],
                         _header_float(path, header, "b_nominal", positive=True))
    if kind == "cpmg":
        groups: dict = {}
        time_col = "time_ms" if "time_ms" in table else "tau_ms"
        for i, (lineno, _) in enumerate(rows):
            n = table["n_pulses"][i]
            if n != int(n) or n < 1:
                raise DatasetError(f"{path}:{lineno}: n_pulses must be a positive integer")
            t = table[time_col][i] * (n if time_col == "tau_ms" else 1.0)
            groups.setdefault(int(n), []).append((t, table["counts"][i]))
        traces = []
        for n in sorted(groups):
            pts = sorted(groups[n])
            traces.append(DecayTrace(n, tuple(pts), normalized=_bool(header.get("normalized", "false"))))
        return traces
    # strain_grid
    grid = []
    for i in range(len(rows)):
        eps = StrainTensor(*(table[c][i] for c in ("eps_xx", "eps_yy", "eps_zz", "eps_xy", "eps_yz", "eps_zx")))
        grid.append((table["x_um"][i], table["y_um"][i], eps))
    return grid


def load_pipeline_directory(directory) -> dict:
    """Group every spectroscopy file (odmr, rotation_map, pl) of a directory by emitter."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"{directory}: not a directory")
    datasets: dict = {}
    for path in sorted(directory.glob("*.csv")):
        header, _, _ = _read_table(path)
        if header.get("kind") not in ("rotation_map", "odmr", "pl"):
            continue
        parsed = parse_dataset(path)
        items = parsed.data if isinstance(parsed.data, tuple) else (parsed.data,)
        for ds in items:
            datasets.setdefault(ds.emitter, []).append(ds)
    if not datasets:
        raise DatasetError(f"{directory}: no spectroscopy datasets found")
    return datasets


# models


def load_model(path) -> SnVModel:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except FileNotFoundError:
        raise DatasetError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    try:
        return model_from_dict(d)
    except (ValueError, TypeError) as exc:
        raise DatasetError(f"{path}: {exc}") from None


def save_model(model: SnVModel, path):
    write_json(model_to_dict(model), path)


# configuration


@dataclass(frozen=True)
class RunConfig:
    """Settings shared by all subcommands, loaded from a JSON file."""

    constants: PhysicalConstants = DEFAULT_CONSTANTS
    calibration: LabFrameCalibration = field(default_factory=LabFrameCalibration)
    fit: FitOptions = FitOptions()
    grid_n: int = 5
    rel_error: float = FIELD_REL_ERROR
    xi: float = 4.0
    roles: dict | None = None
    output_dir: str = "snvspin-out"
    jobs: int = 1


_CONFIG_KEYS = {"constants", "calibration", "fit", "grid_n", "rel_error", "xi", "roles", "output_dir", "jobs"}
_FIT_KEYS = {"max_iterations", "ftol", "diff_step", "f_init", "window_deg", "fit_delta_theta", "refine_passes", "refine_tol"}


def _reject_unknown(section, d, allowed):
    if not isinstance(d, dict):
        raise ValueError(f"config section {section!r} must be an object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ValueError(f"unknown key(s) in {section}: {', '.join(sorted(unknown))}")


def _positive(name, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
        raise ValueError(f"config value {name} must be a positive number, got {value!r}")
    return value


def config_from_dict(d: dict) -> RunConfig:
    """Build a :class:`RunConfig`; unknown keys and non-positive numbers are rejected."""
    _reject_unknown("config", d, _CONFIG_KEYS)
    cfg = RunConfig()
    changes: dict = {}
    if "constants" in d:
        c = d["constants"]
        _reject_unknown("constants", c, {"gamma_l", "gamma_s", "gamma_c13"})
        changes["constants"] = replace(DEFAULT_CONSTANTS, **{k: float(_positive(k, v)) for k, v in c.items()})
    if "calibration" in d:
        c = d["calibration"]
        _reject_unknown("calibration", c, {"coil_gains", "snv_axes"})
        kwargs = {}
        if "coil_gains" in c:
            gains = c["coil_gains"]
            if not isinstance(gains, list) or len(gains) != 3:
                raise ValueError("calibration.coil_gains must be a list of three numbers")
            kwargs["coil_gains"] = tuple(float(g) for g in gains)
        if "snv_axes" in c:
            kwargs["snv_axes"] = {str(k): tuple(v) for k, v in c["snv_axes"].items()}
        changes["calibration"] = LabFrameCalibration(**kwargs)
    if "fit" in d:
        f = d["fit"]
        _reject_unknown("fit", f, _FIT_KEYS)
        opts = {}
        for k, v in f.items():
            if k == "fit_delta_theta":
                if not isinstance(v, bool):
                    raise ValueError("fit.fit_delta_theta must be true or false")
                opts[k] = v
            elif k in ("max_iterations", "refine_passes"):
                opts[k] = int(_positive(f"fit.{k}", v))
            else:
                opts[k] = float(_positive(f"fit.{k}", v))
        changes["fit"] = replace(FitOptions(), **opts)
    for key in ("grid_n", "jobs"):
        if key in d:
            changes[key] = int(_positive(key, d[key]))
    for key in ("rel_error", "xi"):
        if key in d:
            changes[key] = float(_positive(key, d[key]))
    if "roles" in d:
        r = d["roles"]
        _reject_unknown("roles", r, {"unstrained", "low_strain", "high_strain", "holdout"})
        changes["roles"] = dict(r)
    if "output_dir" in d:
        if not isinstance(d["output_dir"], str) or not d["output_dir"]:
            raise ValueError("output_dir must be a non-empty string")
        changes["output_dir"] = d["output_dir"]
    return replace(cfg, **changes)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except FileNotFoundError:
        raise DatasetError(f"{path}: config file not found") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    try:
        return config_from_dict(d)
    except (ValueError, TypeError) as exc:
        raise DatasetError(f"{path}: {exc}") from None


# writers


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, columns, rows, header: dict | None = None):
    """Write rows with ``repr`` float formatting so output is byte-stable."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}: {v}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(obj, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_spectroscopy(datasets, path, header: dict | None = None):
    """Write one or more datasets of the same emitter as a rotation_map file."""
    datasets = list(datasets)
    first = datasets[0]
    meta = {
        "kind": "rotation_map",
        "emitter": first.emitter,
        "field_magnitude": repr(first.field_magnitude),
        "plane": first.plane,
        "signed": str(first.signed).lower(),
    }
    if first.b_parallel_cal is not None:
        meta["b_parallel_cal"] = repr(first.b_parallel_cal)
    if first.b_perp_cal is not None:
        meta["b_perp_cal"] = repr(first.b_perp_cal)
    meta.update(header or {})
    reverse = {v: k for k, v in VALUE_COLUMNS.items()}
    columns = ["theta_deg"] + [reverse[d.kind] for d in datasets]
    rows = [[p[0]] + [d.points[i][1] for d in datasets] for i, p in enumerate(first.points)]
    write_csv(path, columns, rows, meta)
