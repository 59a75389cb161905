"""
Stacked origin-destination gravity design.

Flows are held as an (n destinations) x (m origins) matrix and stacked
column by column, so observation ``j*n + i`` (0-based) is the flow from
origin ``j`` to destination ``i``.  Origin covariates are repeated within
each origin block (``X_O (x) 1_n``), destination covariates are tiled
across blocks (``1_m (x) X_D``) and OD covariates are stacked like the
response.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .weights import SpatialWeights, apply_destination_lag

__all__ = [
    "DesignError",
    "FlowMatrix",
    "CovariateTable",
    "ModelSpec",
    "StackedDesign",
    "vec_stack",
    "expand_origin",
    "expand_destination",
    "flatten_od",
    "build_design",
    "LAG_PREFIX",
    "INTERCEPT",
]

AXES = ("origin", "destination", "od_pair")
TRANSFORMS = ("log", "identity", "dummy")
INTERCEPT = "(Intercept)"
LAG_PREFIX = "W_D "


class DesignError(ValueError):
    """Inconsistent flow or covariate input."""


def _dup(ids):
    seen, dups = set(), []
    for i in ids:
        if i in seen:
            dups.append(i)
        seen.add(i)
    return dups


@dataclass(frozen=True)
class FlowMatrix:
    """Nonnegative flows, destinations in rows and origins in columns."""

    values: np.ndarray
    dest_ids: tuple
    origin_ids: tuple

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        dest_ids, origin_ids = tuple(self.dest_ids), tuple(self.origin_ids)
        if values.shape != (len(dest_ids), len(origin_ids)):
            raise DesignError(
                f"flow matrix shape {values.shape} does not match "
                f"{len(dest_ids)} destinations x {len(origin_ids)} origins"
            )
        for name, ids in (("destination", dest_ids), ("origin", origin_ids)):
            d = _dup(ids)
            if d:
                raise DesignError(f"duplicate {name} ids: {d}")
        if not np.isfinite(values).all():
            i, j = np.argwhere(~np.isfinite(values))[0]
            raise DesignError(f"non-finite flow at (dest={dest_ids[i]}, origin={origin_ids[j]})")
        neg = np.argwhere(values < 0)
        if len(neg):
            cells = [(dest_ids[i], origin_ids[j]) for i, j in neg[:10]]
            raise DesignError(f"negative flows at (dest, origin) cells {cells}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dest_ids", dest_ids)
        object.__setattr__(self, "origin_ids", origin_ids)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class CovariateTable:
    """Named covariates attached to origins, destinations or OD pairs.

    For ``axis="origin"`` columns have length m and ``ids`` are origin ids;
    for ``axis="destination"`` they have length n and ``ids`` are
    destination ids.  For ``axis="od_pair"`` each column is an (n, m)
    matrix and ``ids`` is the pair ``(dest_ids, origin_ids)``.
    ``transforms`` maps each column to ``"log"``, ``"identity"`` or
    ``"dummy"``; undeclared columns default to ``"identity"``.
    """

    axis: str
    columns: Mapping[str, np.ndarray]
    ids: tuple
    transforms: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.axis not in AXES:
            raise DesignError(f"axis must be one of {AXES}, got {self.axis!r}")
        cols = {k: np.asarray(v, dtype=float) for k, v in self.columns.items()}
        transforms = {k: self.transforms.get(k, "identity") for k in cols}
        extra = set(self.transforms) - set(cols)
        if extra:
            raise DesignError(f"transform declared for unknown columns {sorted(extra)}")
        for k, t in transforms.items():
            if t not in TRANSFORMS:
                raise DesignError(f"column {k!r}: unknown transform {t!r}")
        if self.axis == "od_pair":
            dest_ids, origin_ids = (tuple(x) for x in self.ids)
            shape = (len(dest_ids), len(origin_ids))
            ids = (dest_ids, origin_ids)
        else:
            ids = tuple(self.ids)
            shape = (len(ids),)
            d = _dup(ids)
            if d:
                raise DesignError(f"duplicate {self.axis} ids: {d}")
        for k, v in cols.items():
            if v.shape != shape:
                raise DesignError(f"column {k!r} has shape {v.shape}, expected {shape}")
            if transforms[k] == "dummy" and not np.isin(v, (0.0, 1.0)).all():
                raise DesignError(f"dummy column {k!r} contains values other than 0/1")
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "transforms", transforms)
        object.__setattr__(self, "ids", ids)

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def transformed(self, name: str) -> np.ndarray:
        """Column ``name`` after its declared transform."""
        v = self.columns[name]
        if self.transforms[name] == "log":
            if not (v > 0).all():
                bad = np.argwhere(~(v > 0))[:10]
                raise DesignError(
                    f"log transform of {name!r} needs positive values; offending cells {self._cells(bad)}"
                )
            return np.log(v)
        return v

    def _cells(self, idx):
        if self.axis == "od_pair":
            return [(self.ids[0][i], self.ids[1][j]) for i, j in idx]
        return [self.ids[i[0]] for i in idx]

    def aligned(self, ids) -> "CovariateTable":
        """Reorder the table to the given id order (unit axes only)."""
        if self.axis == "od_pair":
            dest_ids, origin_ids = (tuple(x) for x in ids)
            _check_ids(self.ids[0], dest_ids, f"{self.axis} table destinations")
            _check_ids(self.ids[1], origin_ids, f"{self.axis} table origins")
            ri = [self.ids[0].index(i) for i in dest_ids]
            ci = [self.ids[1].index(j) for j in origin_ids]
            cols = {k: v[np.ix_(ri, ci)] for k, v in self.columns.items()}
            return CovariateTable(self.axis, cols, (dest_ids, origin_ids), self.transforms)
        ids = tuple(ids)
        _check_ids(self.ids, ids, f"{self.axis} table")
        pos = {k: i for i, k in enumerate(self.ids)}
        idx = [pos[i] for i in ids]
        cols = {k: v[idx] for k, v in self.columns.items()}
        return CovariateTable(self.axis, cols, ids, self.transforms)


def _check_ids(have, want, what):
    have_s, want_s = set(have), set(want)
    if have_s != want_s:
        raise DesignError(
            f"{what} ids do not match flows: missing {sorted(map(str, want_s - have_s))}, "
            f"unexpected {sorted(map(str, have_s - want_s))}"
        )


@dataclass(frozen=True)
class ModelSpec:
    """Which covariates enter a model.

    ``lagged=None`` lags every destination and OD column (the full
    Durbin error specification); pass an explicit list to lag a subset or
    ``()`` for none.  ``dummies`` lists fixed-effect blocks, each
    ``"origin"`` or ``"destination"``; the first id in sort order is the
    reference category while an intercept is present.
    """

    name: str = "model"
    origin: Sequence[str] = ()
    destination: Sequence[str] = ()
    od: Sequence[str] = ()
    lagged: Sequence[str] | None = None
    dummies: Sequence[str] = ()
    intercept: bool = True


@dataclass(frozen=True)
class StackedDesign:
    """Response and regressors of the stacked gravity regression.

    ``blocks`` tags each column with one of ``intercept``, ``O``, ``D``,
    ``OD``, ``W_D.D``, ``W_D.OD`` or ``dummy``.  ``variables`` maps every
    column to the underlying covariate name (lags included).
    """

    response: np.ndarray
    regressors: np.ndarray
    column_labels: tuple
    blocks: tuple
    variables: tuple
    n: int
    m: int
    dest_ids: tuple = ()
    origin_ids: tuple = ()
    metadata: Mapping = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.n * self.m

    @property
    def K(self) -> int:
        return self.regressors.shape[1]

    def with_response(self, y) -> "StackedDesign":
        y = np.asarray(y, dtype=float)
        if y.shape != (self.N,):
            raise DesignError(f"response must have length {self.N}, got {y.shape}")
        return StackedDesign(
            y, self.regressors, self.column_labels, self.blocks, self.variables,
            self.n, self.m, self.dest_ids, self.origin_ids, dict(self.metadata),
        )

    def columns_in(self, *blocks) -> list[int]:
        return [k for k, b in enumerate(self.blocks) if b in blocks]


def vec_stack(flows: FlowMatrix, zero_flow: str = "error") -> np.ndarray:
    """Log flows stacked column by column (origin blocks of size n).

    With ``zero_flow="log1p"`` every entry becomes ``ln(1 + x)`` instead
    of ``ln(x)``, which admits zero cells.
    """
    values = flows.values
    if zero_flow == "log1p":
        return np.log1p(values).ravel(order="F")
    if zero_flow != "error":
        raise DesignError(f"unknown zero-flow policy {zero_flow!r}")
    bad = np.argwhere(values <= 0)
    if len(bad):
        cells = [(flows.dest_ids[i], flows.origin_ids[j]) for i, j in bad[:10]]
        more = f" (+{len(bad) - 10} more)" if len(bad) > 10 else ""
        raise DesignError(f"cannot take log of nonpositive flows at (dest, origin) {cells}{more}")
    return np.log(values).ravel(order="F")


def _as_matrix(x_table, axis):
    if isinstance(x_table, CovariateTable):
        if x_table.axis != axis:
            raise DesignError(f"expected a {axis} table, got axis {x_table.axis!r}")
        cols = [x_table.transformed(k) for k in x_table.names]
        if not cols:
            return np.zeros((len(x_table.ids), 0))
        return np.stack(cols, axis=-1)
    return np.asarray(x_table, dtype=float)


def expand_origin(x_o, n: int) -> np.ndarray:
    """``X_O (x) 1_n``: each origin row repeated n times.

    ``x_o`` is an origin :class:`CovariateTable` (transforms applied) or a
    plain (m, s) array.
    """
    x = _as_matrix(x_o, "origin")
    if x.ndim == 1:
        x = x[:, None]
    return np.kron(x, np.ones((n, 1)))


def expand_destination(x_d, m: int) -> np.ndarray:
    """``1_m (x) X_D``: the (n, p) destination block tiled m times."""
    x = _as_matrix(x_d, "destination")
    if x.ndim == 1:
        x = x[:, None]
    return np.kron(np.ones((m, 1)), x)


def flatten_od(x_od, n: int | None = None, m: int | None = None) -> np.ndarray:
    """Stack each (n, m) OD variable column-major into an (N, r) matrix."""
    if isinstance(x_od, CovariateTable):
        if x_od.axis != "od_pair":
            raise DesignError(f"expected an od_pair table, got axis {x_od.axis!r}")
        mats = [x_od.transformed(k) for k in x_od.names]
    else:
        arr = np.asarray(x_od, dtype=float)
        mats = [arr] if arr.ndim == 2 else list(np.moveaxis(arr, -1, 0))
    shape = (n, m) if n is not None and m is not None else (mats[0].shape if mats else None)
    for v in mats:
        if v.shape != shape:
            raise DesignError(f"OD variable has shape {v.shape}, expected {shape}")
    if not mats:
        return np.zeros(((n or 0) * (m or 0), 0))
    return np.column_stack([v.ravel(order="F") for v in mats])


def _dummy_block(kind: str, ids, n: int, m: int, drop_first: bool):
    levels = sorted(ids, key=str)
    if drop_first:
        levels = levels[1:]
    pos = {k: i for i, k in enumerate(ids)}
    cols, labels = [], []
    for lev in levels:
        if kind == "origin":
            v = np.zeros((n, m))
            v[:, pos[lev]] = 1.0
        elif kind == "destination":
            v = np.zeros((n, m))
            v[pos[lev], :] = 1.0
        else:
            raise DesignError(f"unknown dummy block {kind!r}; use 'origin' or 'destination'")
        cols.append(v.ravel(order="F"))
        labels.append(f"{kind}[{lev}]")
    return cols, labels


def _find(tables, axis, name):
    hits = [t for t in tables if t.axis == axis and name in t.columns]
    if not hits:
        raise DesignError(f"{axis} column {name!r} is not declared in any table")
    if len(hits) > 1:
        raise DesignError(f"{axis} column {name!r} is declared in more than one table")
    return hits[0]


def build_design(
    flows: FlowMatrix,
    tables: Sequence[CovariateTable],
    weights: SpatialWeights | None,
    spec: ModelSpec,
    zero_flow: str = "error",
) -> StackedDesign:
    """Assemble response and regressors for one model.

    Columns come out in the fixed order
    ``[intercept | O | D | OD | W_D.D | W_D.OD | dummies]``.  Lags are
    computed on transformed columns.
    """
    n, m = flows.n, flows.m
    names = list(spec.origin) + list(spec.destination) + list(spec.od)
    dups = _dup(names)
    if dups:
        raise DesignError(f"duplicate column names in model {spec.name!r}: {dups}")

    lagged = list(spec.destination) + list(spec.od) if spec.lagged is None else list(spec.lagged)
    for name in lagged:
        if name in spec.origin:
            raise DesignError(f"cannot lag origin column {name!r}: only destination/OD content varies over W")
        if name not in spec.destination and name not in spec.od:
            raise DesignError(f"lag requested for {name!r}, which is not in the model")
    if len(set(lagged)) != len(lagged):
        raise DesignError(f"duplicate lag entries: {_dup(lagged)}")
    if lagged and weights is None:
        raise DesignError("spatial lags requested but no weights supplied")
    if weights is not None:
        if weights.n != n:
            raise DesignError(f"weights cover {weights.n} units, flows have {n} destinations")
        if weights.ids and set(map(str, weights.ids)) != set(map(str, flows.dest_ids)):
            _check_ids(list(map(str, weights.ids)), list(map(str, flows.dest_ids)), "weights")
        if weights.ids and tuple(map(str, weights.ids)) != tuple(map(str, flows.dest_ids)):
            raise DesignError("weights ids are not in flow destination order; rebuild weights in that order")

    y = vec_stack(flows, zero_flow)
    cols: list[np.ndarray] = []
    labels: list[str] = []
    blocks: list[str] = []
    variables: list[str] = []

    def add(col, label, block, var):
        cols.append(col)
        labels.append(label)
        blocks.append(block)
        variables.append(var)

    if spec.intercept:
        add(np.ones(n * m), INTERCEPT, "intercept", INTERCEPT)
    for name in spec.origin:
        t = _find(tables, "origin", name).aligned(flows.origin_ids)
        add(expand_origin(t.transformed(name), n)[:, 0], name, "O", name)
    dest_cols = {}
    for name in spec.destination:
        t = _find(tables, "destination", name).aligned(flows.dest_ids)
        dest_cols[name] = expand_destination(t.transformed(name), m)[:, 0]
        add(dest_cols[name], name, "D", name)
    od_cols = {}
    for name in spec.od:
        t = _find(tables, "od_pair", name).aligned((flows.dest_ids, flows.origin_ids))
        od_cols[name] = flatten_od(t.transformed(name), n, m)[:, 0]
        add(od_cols[name], name, "OD", name)
    for name in spec.destination:
        if name in lagged:
            add(apply_destination_lag(weights.standardized, dest_cols[name], n, m),
                LAG_PREFIX + name, "W_D.D", name)
    for name in spec.od:
        if name in lagged:
            add(apply_destination_lag(weights.standardized, od_cols[name], n, m),
                LAG_PREFIX + name, "W_D.OD", name)
    drop = spec.intercept
    for kind in spec.dummies:
        ids = flows.origin_ids if kind == "origin" else flows.dest_ids
        dcols, dlabels = _dummy_block(kind, ids, n, m, drop_first=drop)
        for c, lab in zip(dcols, dlabels):
            add(c, lab, "dummy", kind)
        drop = True  # only one block may keep all levels

    X = np.column_stack(cols) if cols else np.zeros((n * m, 0))
    metadata = {"model": spec.name, "response": "log1p(flow)" if zero_flow == "log1p" else "log(flow)"}
    return StackedDesign(
        response=y,
        regressors=X,
        column_labels=tuple(labels),
        blocks=tuple(blocks),
        variables=tuple(variables),
        n=n,
        m=m,
        dest_ids=flows.dest_ids,
        origin_ids=flows.origin_ids,
        metadata=metadata,
    )
