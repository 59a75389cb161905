"""
CSV ingestion and the multi-model estimation run.

File layouts (headers mandatory):

* flows, long form: ``dest_id,origin_id,value``
* origin / destination covariates, wide form: ``id,<var1>,<var2>,...``
  preceded by an optional ``#transform: var1=log,var2=identity`` line
* OD covariates, long form: ``dest_id,origin_id,<var1>,...`` with the
  same optional transform line
* centroids: ``id,x_km,y_km``

A run is described by a JSON document naming these files and an ordered
list of model specifications; see :func:`load_run_config`.
"""

from __future__ import annotations

import csv
import json
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .design import CovariateTable, DesignError, FlowMatrix, ModelSpec, build_design
from .estimation import EstimationError
from .report import ModelReport, fit_model_pair, render_csv, render_table, write_fit_csv
from .synth import SyntheticInstance
from .weights import DEFAULT_CUTOFF_KM, Centroids, build_weights, read_centroids

__all__ = [
    "DataError",
    "PipelineError",
    "RunConfig",
    "Datasets",
    "read_flows",
    "read_unit_covariates",
    "read_od_covariates",
    "load_run_config",
    "load_datasets",
    "run_pipeline",
    "write_dataset",
]


class DataError(ValueError):
    """Malformed or inconsistent input files."""


class PipelineError(RuntimeError):
    """Estimation failure, tagged with the model it occurred in."""

    def __init__(self, model_index: int, model_name: str, cause: Exception):
        self.model_index = model_index
        self.model_name = model_name
        self.cause = cause
        super().__init__(f"model {model_index} ({model_name!r}): {type(cause).__name__}: {cause}")


def _sym_diff(a, b, what_a, what_b):
    a, b = set(a), set(b)
    if a != b:
        raise DataError(
            f"id mismatch between {what_a} and {what_b}: only in {what_a} {sorted(a - b)}, "
            f"only in {what_b} {sorted(b - a)}"
        )


def _read_rows(path):
    transforms = {}
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    data = []
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            body = stripped[1:].strip()
            if body.startswith("transform:"):
                for item in body[len("transform:"):].split(","):
                    if item.strip():
                        k, _, v = item.partition("=")
                        transforms[k.strip()] = v.strip()
            continue
        data.append((lineno, line))
    if not data:
        raise DataError(f"{path}: no header row")
    rows = list(csv.reader([line for _, line in data]))
    header = [h.strip() for h in rows[0]]
    body = [(data[i][0], [c.strip() for c in r]) for i, r in enumerate(rows[1:], start=1)]
    return header, body, transforms


def _number(path, lineno, col, value):
    if value == "" or value.upper() in ("NA", "NAN", "NULL"):
        raise DataError(f"{path}:{lineno}: missing value in column {col!r}")
    try:
        x = float(value)
    except ValueError:
        raise DataError(f"{path}:{lineno}: non-numeric value {value!r} in column {col!r}") from None
    if not np.isfinite(x):
        raise DataError(f"{path}:{lineno}: non-finite value {value!r} in column {col!r}")
    return x


def read_flows(path) -> FlowMatrix:
    """Long-form ``dest_id,origin_id,value`` flows into a complete matrix."""
    header, body, _ = _read_rows(path)
    if header != ["dest_id", "origin_id", "value"]:
        raise DataError(f"{path}: expected header dest_id,origin_id,value, got {','.join(header)}")
    dest, orig, cells = {}, {}, {}
    for lineno, row in body:
        if len(row) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
        d, o, v = row
        x = _number(path, lineno, "value", v)
        if x < 0:
            raise DataError(f"{path}:{lineno}: negative flow {x} at (dest={d}, origin={o})")
        if (d, o) in cells:
            raise DataError(f"{path}:{lineno}: duplicate flow for (dest={d}, origin={o})")
        dest.setdefault(d, len(dest))
        orig.setdefault(o, len(orig))
        cells[(d, o)] = x
    values = np.full((len(dest), len(orig)), np.nan)
    for (d, o), x in cells.items():
        values[dest[d], orig[o]] = x
    missing = [(d, o) for d in dest for o in orig if (d, o) not in cells]
    if missing:
        raise DataError(f"{path}: missing flows for (dest, origin) pairs {missing[:10]}"
                        + (f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""))
    return FlowMatrix(values, tuple(dest), tuple(orig))


def read_unit_covariates(path, axis: str) -> CovariateTable:
    """Wide-form ``id,<vars...>`` table for the origin or destination axis."""
    header, body, transforms = _read_rows(path)
    if not header or header[0] != "id":
        raise DataError(f"{path}: first column must be 'id'")
    names = header[1:]
    if len(set(names)) != len(names):
        raise DataError(f"{path}: duplicate column names in header")
    ids, cols = [], {k: [] for k in names}
    for lineno, row in body:
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        if row[0] in ids:
            raise DataError(f"{path}:{lineno}: duplicate id {row[0]!r}")
        ids.append(row[0])
        for k, v in zip(names, row[1:]):
            cols[k].append(_number(path, lineno, k, v))
    try:
        return CovariateTable(axis, cols, tuple(ids), transforms)
    except DesignError as exc:
        raise DataError(f"{path}: {exc}") from None


def read_od_covariates(path, dest_ids=None, origin_ids=None) -> CovariateTable:
    """Long-form ``dest_id,origin_id,<vars...>`` OD table."""
    header, body, transforms = _read_rows(path)
    if header[:2] != ["dest_id", "origin_id"]:
        raise DataError(f"{path}: first columns must be dest_id,origin_id")
    names = header[2:]
    dest, orig, cells = {}, {}, {}
    for lineno, row in body:
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        d, o = row[0], row[1]
        if (d, o) in cells:
            raise DataError(f"{path}:{lineno}: duplicate row for (dest={d}, origin={o})")
        dest.setdefault(d, len(dest))
        orig.setdefault(o, len(orig))
        cells[(d, o)] = [_number(path, lineno, k, v) for k, v in zip(names, row[2:])]
    d_ids = tuple(dest_ids) if dest_ids is not None else tuple(dest)
    o_ids = tuple(origin_ids) if origin_ids is not None else tuple(orig)
    _sym_diff(dest, d_ids, f"{path} destinations", "flows")
    _sym_diff(orig, o_ids, f"{path} origins", "flows")
    missing = [(d, o) for d in d_ids for o in o_ids if (d, o) not in cells]
    if missing:
        raise DataError(f"{path}: missing rows for (dest, origin) pairs {missing[:10]}")
    cols = {}
    for k, name in enumerate(names):
        mat = np.empty((len(d_ids), len(o_ids)))
        for i, d in enumerate(d_ids):
            for j, o in enumerate(o_ids):
                mat[i, j] = cells[(d, o)][k]
        cols[name] = mat
    try:
        return CovariateTable("od_pair", cols, (d_ids, o_ids), transforms)
    except DesignError as exc:
        raise DataError(f"{path}: {exc}") from None


@dataclass
class RunConfig:
    """Input files, model list and policies for one estimation run."""

    flows: str
    centroids: str
    origin: str | None = None
    destination: str | None = None
    od: str | None = None
    models: list = field(default_factory=list)
    output: str = "results"
    d_c: float = DEFAULT_CUTOFF_KM
    zero_flow: str = "error"
    isolated: str = "warn"
    project_lonlat: bool = False


def _model_from_dict(d: dict, k: int) -> ModelSpec:
    allowed = {"name", "origin", "destination", "od", "lagged", "dummies", "intercept"}
    extra = set(d) - allowed
    if extra:
        raise DataError(f"model {k}: unknown keys {sorted(extra)}")
    lagged = d.get("lagged")
    return ModelSpec(
        name=d.get("name", f"Model {k + 1}"),
        origin=tuple(d.get("origin", ())),
        destination=tuple(d.get("destination", ())),
        od=tuple(d.get("od", ())),
        lagged=None if lagged is None else tuple(lagged),
        dummies=tuple(d.get("dummies", ())),
        intercept=bool(d.get("intercept", True)),
    )


def load_run_config(path, **overrides) -> RunConfig:
    """Read a JSON run description.

    Relative file paths are resolved against the config's directory.
    Keyword overrides (``d_c``, ``zero_flow``, ``isolated``, ``output``)
    replace values from the file when not ``None``.

    Example::

        {"flows": "flows.csv", "centroids": "centroids.csv",
         "origin": "origin.csv", "destination": "destination.csv", "od": "od.csv",
         "models": [{"name": "Model 1", "origin": ["gdp_o"],
                     "destination": ["gdp_d"], "od": ["distance"]}]}
    """
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc}") from None
    base = Path(path).resolve().parent

    def resolve(p):
        return None if p is None else str(base / p)

    known = {"flows", "centroids", "origin", "destination", "od", "models", "output",
             "d_c", "zero_flow", "isolated", "project_lonlat"}
    extra = set(raw) - known
    if extra:
        raise DataError(f"{path}: unknown keys {sorted(extra)}")
    for key in ("flows", "centroids"):
        if key not in raw:
            raise DataError(f"{path}: missing required key {key!r}")
    cfg = RunConfig(
        flows=resolve(raw["flows"]),
        centroids=resolve(raw["centroids"]),
        origin=resolve(raw.get("origin")),
        destination=resolve(raw.get("destination")),
        od=resolve(raw.get("od")),
        models=[_model_from_dict(m, k) for k, m in enumerate(raw.get("models", []))],
        output=resolve(raw.get("output", "results")),
        d_c=float(raw.get("d_c", DEFAULT_CUTOFF_KM)),
        zero_flow=raw.get("zero_flow", "error"),
        isolated=raw.get("isolated", "warn"),
        project_lonlat=bool(raw.get("project_lonlat", False)),
    )
    for key, val in overrides.items():
        if val is not None:
            setattr(cfg, key, val)
    return cfg


@dataclass(frozen=True)
class Datasets:
    flows: FlowMatrix
    tables: tuple
    centroids: Centroids

    @property
    def N(self) -> int:
        return self.flows.n * self.flows.m

    def summary(self) -> dict:
        return {
            "destinations": self.flows.n,
            "origins": self.flows.m,
            "N": self.N,
            "columns": {t.axis: t.names for t in self.tables},
        }


def load_datasets(cfg: RunConfig) -> Datasets:
    """Read and cross-check every input file of a run."""
    for key in ("flows", "centroids", "origin", "destination", "od"):
        p = getattr(cfg, key)
        if p is not None and not os.path.exists(p):
            raise DataError(f"{key} file not found: {p}")
    flows = read_flows(cfg.flows)
    try:
        centroids = read_centroids(cfg.centroids, project=cfg.project_lonlat)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    _sym_diff(centroids.ids, flows.dest_ids, "centroids", "flow destinations")
    tables = []
    if cfg.origin:
        t = read_unit_covariates(cfg.origin, "origin")
        _sym_diff(t.ids, flows.origin_ids, "origin table", "flow origins")
        tables.append(t)
    if cfg.destination:
        t = read_unit_covariates(cfg.destination, "destination")
        _sym_diff(t.ids, flows.dest_ids, "destination table", "flow destinations")
        tables.append(t)
    if cfg.od:
        tables.append(read_od_covariates(cfg.od, flows.dest_ids, flows.origin_ids))
    # centroids in flow destination order so weights line up with the design
    pos = {k: i for i, k in enumerate(centroids.ids)}
    centroids = Centroids(flows.dest_ids, centroids.coords[[pos[i] for i in flows.dest_ids]])
    return Datasets(flows, tuple(tables), centroids)


def _validate_specs(specs: Sequence[ModelSpec], data: Datasets):
    if not specs:
        raise DataError("no models specified")
    declared = {axis: set() for axis in ("origin", "destination", "od_pair")}
    for t in data.tables:
        declared[t.axis].update(t.names)
    for k, spec in enumerate(specs):
        for axis, names in (("origin", spec.origin), ("destination", spec.destination), ("od_pair", spec.od)):
            missing = [c for c in names if c not in declared[axis]]
            if missing:
                raise DataError(f"model {k} ({spec.name!r}): undeclared {axis} columns {missing}")
        for kind in spec.dummies:
            if kind not in ("origin", "destination"):
                raise DataError(f"model {k} ({spec.name!r}): unknown dummy block {kind!r}")


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in name).strip("_").lower() or "model"


def run_pipeline(cfg: RunConfig, data: Datasets | None = None, write: bool = True) -> list[ModelReport]:
    """Fit every model spec (benchmark + spatial) and write the reports.

    Outputs in ``cfg.output``: ``<k>_<model>.json`` and ``<k>_<model>_{sdem,linear}.csv``
    per model, ``table.txt`` / ``table.csv`` for all models, and a
    ``metadata.json`` sidecar (the only file carrying a timestamp).
    """
    data = load_datasets(cfg) if data is None else data
    _validate_specs(cfg.models, data)
    weights = build_weights(data.centroids, cfg.d_c, cfg.isolated)
    reports = []
    for k, spec in enumerate(cfg.models):
        try:
            design = build_design(data.flows, data.tables, weights, spec, zero_flow=cfg.zero_flow)
            reports.append(fit_model_pair(spec.name, design, weights))
        except (DesignError, EstimationError, ValueError) as exc:
            raise PipelineError(k, spec.name, exc) from exc
    if write:
        out = Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        for k, rep in enumerate(reports, start=1):
            stem = f"{k}_{_slug(rep.name)}"
            (out / f"{stem}.json").write_text(rep.to_json())
            write_fit_csv(rep.sdem, out / f"{stem}_sdem.csv")
            write_fit_csv(rep.linear, out / f"{stem}_linear.csv")
        (out / "table.txt").write_text(render_table(reports))
        (out / "table.csv").write_text(render_csv(reports))
        meta = {
            "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "odsdem_version": __version__,
            "python": platform.python_version(),
            "d_c": cfg.d_c,
            "zero_flow": cfg.zero_flow,
            "response": "log1p(flow)" if cfg.zero_flow == "log1p" else "log(flow)",
            "isolated_policy": cfg.isolated,
            "isolated_units": list(map(str, weights.isolated)),
            "data": data.summary(),
        }
        (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return reports


def _write_unit_table(path, table: CovariateTable):
    with open(path, "w", newline="") as fh:
        fh.write("#transform: " + ",".join(f"{k}={v}" for k, v in table.transforms.items()) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + table.names)
        for i, uid in enumerate(table.ids):
            w.writerow([uid] + [repr(float(table.columns[k][i])) for k in table.names])


def write_dataset(inst: SyntheticInstance, directory) -> Path:
    """Write a synthetic instance as CSV inputs plus a ready-to-run ``run.json``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    flows = inst.flow_matrix()
    with open(out / "flows.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dest_id", "origin_id", "value"])
        for j, o in enumerate(flows.origin_ids):
            for i, d in enumerate(flows.dest_ids):
                w.writerow([d, o, repr(float(flows.values[i, j]))])
    with open(out / "centroids.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x_km", "y_km"])
        for uid, (x, y) in zip(inst.dest_centroids.ids, inst.dest_centroids.coords):
            w.writerow([uid, repr(float(x)), repr(float(y))])
    files = {}
    for t in inst.tables:
        if t.axis == "origin":
            _write_unit_table(out / "origin.csv", t)
            files["origin"] = "origin.csv"
        elif t.axis == "destination":
            _write_unit_table(out / "destination.csv", t)
            files["destination"] = "destination.csv"
        else:
            with open(out / "od.csv", "w", newline="") as fh:
                fh.write("#transform: " + ",".join(f"{k}={v}" for k, v in t.transforms.items()) + "\n")
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["dest_id", "origin_id"] + t.names)
                for j, o in enumerate(t.ids[1]):
                    for i, d in enumerate(t.ids[0]):
                        w.writerow([d, o] + [repr(float(t.columns[k][i, j])) for k in t.names])
            files["od"] = "od.csv"
    spec = {
        "name": "Synthetic",
        "origin": [t for tb in inst.tables if tb.axis == "origin" for t in tb.names],
        "destination": [t for tb in inst.tables if tb.axis == "destination" for t in tb.names],
        "od": [t for tb in inst.tables if tb.axis == "od_pair" for t in tb.names],
    }
    run = {"flows": "flows.csv", "centroids": "centroids.csv", **files,
           "d_c": inst.weights.d_c, "models": [spec], "output": "results"}
    (out / "run.json").write_text(json.dumps(run, indent=2) + "\n")
    truth = {
        "labels": inst.truth["labels"],
        "coefficients": [float(v) for v in inst.truth["coefficients"]],
        "lambda": inst.truth["lambda"],
        "sigma2": inst.truth["sigma2"],
    }
    (out / "truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    return out
