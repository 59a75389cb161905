"""
Distance-cutoff spatial weights over destination units.

The weight matrix is built from planar centroids: two destinations are
neighbours when their centroid distance is at most ``d_c`` kilometres.
Rows are then standardized so that the spatial lag of a variable is the
average over neighbours.  Stacked origin-destination vectors are lagged
block by block, i.e. with ``I_m (x) W``, without forming the N x N operator.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "Centroids",
    "SpatialWeights",
    "WeightsError",
    "IsolatedUnitsWarning",
    "pairwise_distances",
    "cutoff_adjacency",
    "row_standardize",
    "spectrum",
    "apply_destination_lag",
    "build_weights",
    "read_centroids",
    "write_weights_csv",
    "read_weights_csv",
]

DEFAULT_CUTOFF_KM = 120.0
EARTH_RADIUS_KM = 6371.0088


class WeightsError(ValueError):
    """Invalid centroid or weight-matrix input."""


class IsolatedUnitsWarning(UserWarning):
    """Some destinations have no neighbour inside the cutoff."""


@dataclass(frozen=True)
class Centroids:
    """Destination identifiers with planar coordinates in km."""

    ids: tuple
    coords: np.ndarray

    def __post_init__(self):
        ids = tuple(self.ids)
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise WeightsError(f"coords must be an (n, 2) array, got shape {coords.shape}")
        if len(ids) != coords.shape[0]:
            raise WeightsError(f"{len(ids)} ids for {coords.shape[0]} coordinate rows")
        if len(set(ids)) != len(ids):
            seen, dups = set(), []
            for i in ids:
                if i in seen:
                    dups.append(i)
                seen.add(i)
            raise WeightsError(f"duplicate centroid ids: {sorted(set(map(str, dups)))}")
        bad = ~np.isfinite(coords).all(axis=1)
        if bad.any():
            raise WeightsError(
                f"non-finite coordinates for ids {[ids[i] for i in np.flatnonzero(bad)]}"
            )
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "coords", coords)

    def __len__(self):
        return len(self.ids)


@dataclass(frozen=True)
class SpatialWeights:
    """Cutoff adjacency, its row-standardized form and the real spectrum.

    Attributes
    ----------
    ids : tuple
        Destination identifiers, in matrix order.
    adjacency : ndarray
        Symmetric binary (n, n) matrix with zero diagonal.
    standardized : ndarray
        Row-stochastic version of ``adjacency``; isolated rows stay zero.
    spectrum : ndarray
        Eigenvalues of ``standardized``, ascending.
    d_c : float
        Cutoff distance in km.
    isolated : tuple
        Ids of units with no neighbour.
    """

    ids: tuple
    adjacency: np.ndarray
    standardized: np.ndarray
    spectrum: np.ndarray
    d_c: float
    isolated: tuple = ()

    @property
    def n(self) -> int:
        return self.standardized.shape[0]

    def lambda_bounds(self) -> tuple[float, float]:
        """Open interval of spatial coefficients keeping ``I - lam W`` nonsingular."""
        return feasible_interval(self.spectrum)

    def lag(self, x, m: int) -> np.ndarray:
        return apply_destination_lag(self.standardized, x, self.n, m)

    @classmethod
    def from_adjacency(cls, adjacency, ids=None, d_c=float("nan")) -> "SpatialWeights":
        adjacency = np.asarray(adjacency, dtype=float)
        ids = tuple(range(adjacency.shape[0])) if ids is None else tuple(ids)
        w_std, isolated_idx = row_standardize(adjacency)
        return cls(
            ids=ids,
            adjacency=adjacency,
            standardized=w_std,
            spectrum=spectrum(w_std),
            d_c=float(d_c),
            isolated=tuple(ids[i] for i in isolated_idx),
        )


def pairwise_distances(c: Centroids) -> np.ndarray:
    """Euclidean distance matrix between planar centroids (km)."""
    if len(c) < 2:
        raise WeightsError("at least two centroids are required")
    diff = c.coords[:, None, :] - c.coords[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    # exact symmetry and zero diagonal regardless of rounding in the sum
    dist = np.triu(dist, 1)
    return dist + dist.T


def cutoff_adjacency(dist, d_c: float = DEFAULT_CUTOFF_KM) -> np.ndarray:
    """Binary neighbour matrix: 1 where ``0 < |i - j|`` and ``d_ij <= d_c``."""
    if not d_c > 0:
        raise WeightsError(f"cutoff distance must be positive, got {d_c}")
    dist = np.asarray(dist, dtype=float)
    adj = (dist <= d_c).astype(float)
    np.fill_diagonal(adj, 0.0)
    return adj


def row_standardize(adj) -> tuple[np.ndarray, list[int]]:
    """Divide each nonzero row by its sum.

    Returns the row-stochastic matrix and the indices of zero rows, which
    are left as zeros.
    """
    adj = np.asarray(adj, dtype=float)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise WeightsError(f"adjacency must be square, got shape {adj.shape}")
    sums = adj.sum(axis=1)
    isolated = [int(i) for i in np.flatnonzero(sums == 0)]
    safe = np.where(sums == 0, 1.0, sums)
    return adj / safe[:, None], isolated


def spectrum(w_std) -> np.ndarray:
    """Real eigenvalues of a row-standardized symmetric weight matrix, ascending.

    ``W = D^-1 A`` with ``A`` symmetric is similar to the symmetric matrix
    ``D^-1/2 A D^-1/2`` whose entries are ``sqrt(w_ij * w_ji)``.  Zero rows
    (isolated units) contribute zero eigenvalues.
    """
    w = np.asarray(w_std, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise WeightsError(f"weights must be square, got shape {w.shape}")
    if not np.array_equal(w > 0, (w > 0).T):
        raise WeightsError("weights do not come from a symmetric neighbour structure")
    sym = np.sqrt(w * w.T)
    try:
        vals = np.linalg.eigvalsh(sym)
    except np.linalg.LinAlgError as exc:
        raise WeightsError(f"eigensolver failed to converge on {w.shape[0]} units: {exc}") from exc
    return np.sort(vals)


def feasible_interval(eigs) -> tuple[float, float]:
    eigs = np.asarray(eigs, dtype=float)
    lo, hi = eigs.min(), eigs.max()
    if lo >= 0 or hi <= 0:
        raise WeightsError("weight matrix has no neighbour pairs; spatial coefficient undefined")
    return 1.0 / lo, 1.0 / hi


def apply_destination_lag(w_std, x, n: int, m: int) -> np.ndarray:
    """Compute ``(I_m (x) W) x`` block by block.

    ``x`` is a stacked vector of length ``n*m`` (origin blocks of size n)
    or a matrix with ``n*m`` rows, in which case every column is lagged.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[0] != n * m:
        raise WeightsError(f"expected {n * m} stacked rows (n={n}, m={m}), got {x.shape[0]}")
    w = np.asarray(w_std, dtype=float)
    if w.shape != (n, n):
        raise WeightsError(f"weights are {w.shape}, expected ({n}, {n})")
    tail = x.shape[1:]
    blocks = x.reshape((m, n) + tail)
    # (m, n, k): lag within each origin block
    out = np.einsum("ij,bj...->bi...", w, blocks)
    return out.reshape(x.shape)


def _nearest_fallback(adj: np.ndarray, dist: np.ndarray, isolated: Sequence[int]) -> np.ndarray:
    adj = adj.copy()
    for i in isolated:
        d = dist[i].copy()
        d[i] = np.inf
        j = int(np.argmin(d))
        adj[i, j] = adj[j, i] = 1.0
    return adj


def build_weights(
    centroids: Centroids,
    d_c: float = DEFAULT_CUTOFF_KM,
    isolated: str = "warn",
) -> SpatialWeights:
    """Cutoff weights for a set of destination centroids.

    Parameters
    ----------
    centroids : Centroids
        Planar coordinates in km.
    d_c : float
        Cutoff distance; pairs at exactly ``d_c`` are neighbours.
    isolated : {"warn", "error", "nearest"}
        What to do with units that have no neighbour.  ``"warn"`` keeps
        their zero rows, ``"error"`` raises, ``"nearest"`` links each one
        (symmetrically) to its single nearest unit.
    """
    if isolated not in ("warn", "error", "nearest"):
        raise WeightsError(f"unknown isolated-unit policy {isolated!r}")
    dist = pairwise_distances(centroids)
    adj = cutoff_adjacency(dist, d_c)
    lonely = [int(i) for i in np.flatnonzero(adj.sum(axis=1) == 0)]
    if lonely:
        names = [centroids.ids[i] for i in lonely]
        if isolated == "error":
            raise WeightsError(f"isolated units with no neighbour within {d_c} km: {names}")
        if isolated == "nearest":
            adj = _nearest_fallback(adj, dist, lonely)
        else:
            warnings.warn(
                f"{len(names)} isolated unit(s) within {d_c} km cutoff: {names}",
                IsolatedUnitsWarning,
                stacklevel=2,
            )
    return SpatialWeights.from_adjacency(adj, centroids.ids, d_c)


def _project_lonlat(lon, lat) -> np.ndarray:
    # equirectangular projection around the mean latitude
    lon = np.radians(np.asarray(lon, dtype=float))
    lat = np.radians(np.asarray(lat, dtype=float))
    lat0 = lat.mean()
    x = EARTH_RADIUS_KM * lon * np.cos(lat0)
    y = EARTH_RADIUS_KM * lat
    return np.column_stack([x, y])


def read_centroids(path, project: bool = False) -> Centroids:
    """Read an ``id,x_km,y_km`` CSV.

    Files with ``id,lon,lat`` headers are accepted only with ``project=True``
    and are mapped to a local planar grid (equirectangular, km).
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise WeightsError(f"{path}: empty centroid file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if header == ["id", "x_km", "y_km"]:
        lonlat = False
    elif header == ["id", "lon", "lat"]:
        if not project:
            raise WeightsError(
                f"{path}: longitude/latitude centroids need an explicit projection "
                "(coordinates must be planar km)"
            )
        lonlat = True
    else:
        raise WeightsError(f"{path}: expected header id,x_km,y_km, got {','.join(header)}")
    ids, xy = [], []
    for lineno, row in enumerate(body, start=2):
        if len(row) != 3:
            raise WeightsError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
        try:
            xy.append([float(row[1]), float(row[2])])
        except ValueError:
            raise WeightsError(f"{path}:{lineno}: non-numeric coordinate in {row}") from None
        ids.append(row[0].strip())
    xy = np.array(xy, dtype=float).reshape(-1, 2)
    if lonlat:
        xy = _project_lonlat(xy[:, 0], xy[:, 1])
    return Centroids(tuple(ids), xy)


def write_weights_csv(weights: SpatialWeights, path) -> None:
    """Write nonzero standardized weights as ``i,j,w`` triplets.

    The first line is a metadata comment carrying the cutoff and the
    isolated ids.
    """
    w = weights.standardized
    rows, cols = np.nonzero(w)
    with open(path, "w", newline="") as fh:
        iso = ";".join(str(i) for i in weights.isolated)
        fh.write(f"# d_c={weights.d_c!r} isolated={iso}\n")
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "w"])
        for i, j in zip(rows, cols):
            writer.writerow([weights.ids[i], weights.ids[j], repr(float(w[i, j]))])


def read_weights_csv(path, ids: Sequence | None = None) -> tuple[np.ndarray, dict]:
    """Inverse of :func:`write_weights_csv`.

    Returns the dense standardized matrix (in ``ids`` order, or first
    appearance order if not given) and the metadata dict.
    """
    meta: dict = {}
    triplets = []
    with open(path, newline="") as fh:
        first = fh.readline()
        if first.startswith("#"):
            for tok in first[1:].split():
                key, _, val = tok.partition("=")
                meta[key] = val
        else:
            fh.seek(0)
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            triplets.append((row[0], row[1], float(row[2])))
    if "d_c" in meta:
        meta["d_c"] = float(meta["d_c"])
    meta["isolated"] = [s for s in meta.get("isolated", "").split(";") if s]
    if ids is None:
        order: dict = {}
        for i, j, _ in triplets:
            order.setdefault(i, len(order))
            order.setdefault(j, len(order))
        for i in meta["isolated"]:
            order.setdefault(i, len(order))
    else:
        order = {str(k): idx for idx, k in enumerate(ids)}
    w = np.zeros((len(order), len(order)))
    for i, j, v in triplets:
        w[order[i], order[j]] = v
    meta["ids"] = list(order)
    return w, meta
