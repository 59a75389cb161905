"""
Synthetic origin-destination data from a known spatial Durbin error
process, and Monte Carlo recovery studies.

Destination and origin centroids are drawn uniformly on a square of side
``extent`` km, destination weights use the distance cutoff, covariates
are drawn from per-column laws, and the disturbance is
``u = (I - lam W_D)^-1 e`` solved origin block by origin block.

Random numbers come from numpy's counter-based Philox4x64 generator.
Instance ``r`` of a study uses the key ``seed XOR r``.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy import linalg, stats

from .design import (
    INTERCEPT,
    LAG_PREFIX,
    CovariateTable,
    FlowMatrix,
    ModelSpec,
    StackedDesign,
    build_design,
)
from .estimation import EstimationError, fit_ols, fit_sdem, lr_test
from .weights import Centroids, SpatialWeights, WeightsError, build_weights

__all__ = [
    "DgpConfig",
    "SyntheticInstance",
    "McSummary",
    "ParameterSummary",
    "SynthError",
    "gen_instance",
    "mc_study",
    "read_config",
    "make_rng",
    "RNG_NAME",
]

RNG_NAME = "numpy.random.Philox (Philox4x64-10), key = seed XOR replication"
LAWS = ("normal", "uniform", "lognormal")
MAX_CENTROID_DRAWS = 100
Z95 = float(stats.norm.ppf(0.975))


class SynthError(ValueError):
    pass


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    key = (int(seed) ^ int(stream)) & (2**64 - 1)
    return np.random.Generator(np.random.Philox(key=key))


def _default_coefficients():
    return {
        INTERCEPT: 1.0,
        "gdp_o": 0.5,
        "gdp_d": 0.8,
        "unemp_d": -0.5,
        "museums_d": 0.4,
        "distance": -1.0,
    }, {
        "gdp_d": 0.3,
        "unemp_d": -0.2,
        "museums_d": 0.2,
        "distance": 0.5,
    }


@dataclass(frozen=True)
class DgpConfig:
    """Known parameters of a synthetic spatial Durbin error process.

    ``beta`` maps regressor names (and ``"(Intercept)"``) to coefficients;
    ``theta`` maps destination/OD names to the coefficients of their
    spatial lags.  ``origin_laws`` / ``destination_laws`` give the law of
    each generated covariate; lognormal columns are declared with a log
    transform, so they enter the design as normals.  ``od`` columns are
    distances between generated centroids, expressed in multiples of
    ``distance_unit`` km, and always enter in logs.
    """

    n: int = 40
    m: int = 10
    beta: Mapping[str, float] = field(default_factory=lambda: _default_coefficients()[0])
    theta: Mapping[str, float] = field(default_factory=lambda: _default_coefficients()[1])
    lam: float = 0.5
    sigma: float = 1.0
    d_c: float = 120.0
    extent: float = 400.0
    origin_laws: Mapping[str, str] = field(default_factory=lambda: {"gdp_o": "normal"})
    destination_laws: Mapping[str, str] = field(
        default_factory=lambda: {"gdp_d": "normal", "unemp_d": "normal", "museums_d": "lognormal"}
    )
    od: tuple = ("distance",)
    distance_unit: float = 100.0
    seed: int = 20190101

    def __post_init__(self):
        if not -1.0 < self.lam < 1.0:
            raise SynthError(f"lambda must lie in (-1, 1), got {self.lam}")
        if not self.sigma >= 0:
            raise SynthError(f"sigma must be nonnegative, got {self.sigma}")
        if self.n < 2 or self.m < 1:
            raise SynthError(f"need n >= 2 and m >= 1, got n={self.n}, m={self.m}")
        for name, law in {**self.origin_laws, **self.destination_laws}.items():
            if law not in LAWS:
                raise SynthError(f"column {name!r}: unknown law {law!r}; use one of {LAWS}")
        spec = self.model_spec()
        known = {INTERCEPT, *spec.origin, *spec.destination, *spec.od}
        extra = set(self.beta) - known
        if extra:
            raise SynthError(f"beta given for unknown columns {sorted(extra)}")
        extra = set(self.theta) - set(spec.destination) - set(spec.od)
        if extra:
            raise SynthError(f"theta given for columns that cannot be lagged {sorted(extra)}")
        k = 1 + len(spec.origin) + 2 * (len(spec.destination) + len(spec.od))
        if self.n * self.m < k + 2:
            raise SynthError(f"n*m = {self.n * self.m} too small for {k} regressors")

    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            name="synthetic",
            origin=tuple(self.origin_laws),
            destination=tuple(self.destination_laws),
            od=tuple(self.od),
        )

    def true_coefficients(self, labels) -> np.ndarray:
        out = []
        for lab in labels:
            if lab.startswith(LAG_PREFIX):
                out.append(float(self.theta.get(lab[len(LAG_PREFIX):], 0.0)))
            else:
                out.append(float(self.beta.get(lab, 0.0)))
        return np.array(out)

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "lambda": self.lam,
            "sigma": self.sigma,
            "d_c": self.d_c,
            "extent": self.extent,
            "seed": self.seed,
            "origin_laws": dict(self.origin_laws),
            "destination_laws": dict(self.destination_laws),
            "od": list(self.od),
            "distance_unit": self.distance_unit,
            "beta": dict(self.beta),
            "theta": dict(self.theta),
        }


def read_config(path) -> DgpConfig:
    """Parse a plain-text ``key = value`` study configuration.

    Recognised keys: ``n``, ``m``, ``lambda``, ``sigma``, ``d_c``,
    ``extent``, ``distance_unit``, ``seed``, ``origin`` and ``destination`` (comma-separated
    ``name:law`` lists), ``od`` (comma-separated names), and
    ``beta.<name>`` / ``theta.<name>`` coefficients.  ``#`` starts a
    comment.  Unset keys keep their defaults.
    """
    kw: dict = {}
    beta, theta = {}, {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise SynthError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = key.strip(), value.strip()
            try:
                if key in ("n", "m", "seed"):
                    kw[key] = int(value, 0)
                elif key in ("sigma", "d_c", "extent", "distance_unit"):
                    kw[key] = float(value)
                elif key == "lambda":
                    kw["lam"] = float(value)
                elif key in ("origin", "destination"):
                    laws = {}
                    for item in filter(None, (s.strip() for s in value.split(","))):
                        name, _, law = item.partition(":")
                        laws[name.strip()] = law.strip() or "normal"
                    kw[f"{key}_laws"] = laws
                elif key == "od":
                    kw["od"] = tuple(s.strip() for s in value.split(",") if s.strip())
                elif key.startswith("beta."):
                    beta[key[5:]] = float(value)
                elif key.startswith("theta."):
                    theta[key[6:]] = float(value)
                else:
                    raise SynthError(f"{path}:{lineno}: unknown key {key!r}")
            except ValueError as exc:
                if isinstance(exc, SynthError):
                    raise
                raise SynthError(f"{path}:{lineno}: bad value for {key!r}: {value!r}") from None
    if beta:
        kw["beta"] = beta
    if theta:
        kw["theta"] = theta
    return DgpConfig(**kw)


@dataclass(frozen=True)
class SyntheticInstance:
    """One simulated dataset with its generating truth."""

    response: np.ndarray
    tables: tuple
    weights: SpatialWeights
    design: StackedDesign
    truth: dict
    dest_centroids: Centroids
    origin_centroids: Centroids
    disturbance: np.ndarray = field(repr=False)

    def flow_matrix(self) -> FlowMatrix:
        """Flows on the original scale, ``exp`` of the stacked log response."""
        n, m = self.design.n, self.design.m
        return FlowMatrix(
            np.exp(self.response).reshape((n, m), order="F"),
            self.design.dest_ids,
            self.design.origin_ids,
        )


def _draw(rng, law, size):
    if law == "normal":
        return rng.standard_normal(size)
    if law == "uniform":
        return rng.uniform(0.0, 1.0, size)
    return rng.lognormal(0.0, 1.0, size)


def solve_disturbance(w_std: np.ndarray, lam: float, eps: np.ndarray, n: int, m: int) -> np.ndarray:
    """``(I_m (x) (I_n - lam W))^-1 eps`` via one LU of the n x n block."""
    a = np.eye(n) - lam * np.asarray(w_std, dtype=float)
    lu, piv = linalg.lu_factor(a, check_finite=True)
    if np.any(np.abs(np.diag(lu)) <= np.finfo(float).eps * n * np.abs(lu).max()):
        raise SynthError(f"I - lambda W is singular at lambda={lam}")
    blocks = eps.reshape(m, n).T
    return linalg.lu_solve((lu, piv), blocks).T.reshape(-1)


def gen_instance(cfg: DgpConfig, stream: int = 0) -> SyntheticInstance:
    """Draw one dataset from the process described by ``cfg``.

    ``stream`` selects an independent random stream (key ``seed ^ stream``).
    """
    rng = make_rng(cfg.seed, stream)
    n, m = cfg.n, cfg.m
    dest_ids = tuple(f"d{i:03d}" for i in range(n))
    origin_ids = tuple(f"o{j:03d}" for j in range(m))

    for _ in range(MAX_CENTROID_DRAWS):
        dest = Centroids(dest_ids, rng.uniform(0.0, cfg.extent, (n, 2)))
        try:
            weights = build_weights(dest, cfg.d_c, isolated="error")
            break
        except WeightsError:
            continue
    else:
        raise SynthError(
            f"no isolated-free centroid layout in {MAX_CENTROID_DRAWS} draws "
            f"(n={n}, extent={cfg.extent} km, d_c={cfg.d_c} km)"
        )
    origin = Centroids(origin_ids, rng.uniform(0.0, cfg.extent, (m, 2)))

    o_cols, o_tr = {}, {}
    for name, law in cfg.origin_laws.items():
        o_cols[name] = _draw(rng, law, m)
        o_tr[name] = "log" if law == "lognormal" else "identity"
    d_cols, d_tr = {}, {}
    for name, law in cfg.destination_laws.items():
        d_cols[name] = _draw(rng, law, n)
        d_tr[name] = "log" if law == "lognormal" else "identity"
    diff = dest.coords[:, None, :] - origin.coords[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    dist = np.maximum(dist, 1e-3) / cfg.distance_unit  # coincident points would give log(0)
    od_cols = {name: dist for name in cfg.od}
    tables = (
        CovariateTable("origin", o_cols, origin_ids, o_tr),
        CovariateTable("destination", d_cols, dest_ids, d_tr),
        CovariateTable("od_pair", od_cols, (dest_ids, origin_ids), {k: "log" for k in od_cols}),
    )

    eps = cfg.sigma * rng.standard_normal(n * m)
    u = eps.copy() if cfg.lam == 0 else solve_disturbance(weights.standardized, cfg.lam, eps, n, m)

    # placeholder flows only carry the ids; the response is replaced below
    placeholder = FlowMatrix(np.ones((n, m)), dest_ids, origin_ids)
    design = build_design(placeholder, tables, weights, cfg.model_spec())
    coef = cfg.true_coefficients(design.column_labels)
    y = design.regressors @ coef + u
    design = design.with_response(y)
    truth = {
        "labels": list(design.column_labels),
        "coefficients": coef,
        "lambda": cfg.lam,
        "sigma2": cfg.sigma**2,
    }
    return SyntheticInstance(y, tables, weights, design, truth, dest, origin, u)


@dataclass(frozen=True)
class ParameterSummary:
    name: str
    truth: float
    mean: float
    bias: float
    rmse: float
    coverage: float
    mean_se: float
    sd: float
    n_ok: int


@dataclass
class McSummary:
    """Bias, RMSE and 95% normal-CI coverage per parameter."""

    parameters: list
    R: int
    failures: int
    lr_rejection_rate: float
    failed: bool
    config: dict
    rng: str = RNG_NAME
    failure_messages: list = field(default_factory=list)

    def __getitem__(self, name) -> ParameterSummary:
        for p in self.parameters:
            if p.name == name:
                return p
        raise KeyError(name)

    @property
    def names(self) -> list:
        return [p.name for p in self.parameters]

    def to_csv(self, path) -> None:
        cols = ["parameter", "truth", "mean", "bias", "rmse", "coverage", "mean_se", "sd", "n_ok"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for p in self.parameters:
                w.writerow([p.name] + [repr(float(getattr(p, c))) for c in cols[1:-1]] + [p.n_ok])

    def as_dict(self) -> dict:
        return {
            "R": self.R,
            "failures": self.failures,
            "failed": self.failed,
            "lr_rejection_rate_5pct": self.lr_rejection_rate,
            "rng": self.rng,
            "config": self.config,
            "parameters": [p.__dict__ for p in self.parameters],
            "failure_messages": self.failure_messages,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _replicate(args):
    cfg, r = args
    inst = gen_instance(cfg, stream=r)
    try:
        fit = fit_sdem(inst.design, inst.weights)
        lin = fit_ols(inst.design)
        lr = lr_test(lin, fit)
    except EstimationError as exc:
        return r, None, f"replication {r}: {type(exc).__name__}: {exc}"
    est = np.concatenate([fit.coefficients, [fit.lam, fit.sigma2]])
    se = np.concatenate([fit.std_errors, [fit.lam_se, fit.sigma2_se]])
    return r, (est, se, lr.p_value), None


def _labels(cfg: DgpConfig):
    inst = gen_instance(replace(cfg, sigma=0.0))
    return list(inst.design.column_labels)


def mc_study(cfg: DgpConfig, R: int, workers: int = 1, max_failure_rate: float = 0.05) -> McSummary:
    """Fit ``R`` independent instances and summarise parameter recovery.

    Results are gathered by replication index, so the summary does not
    depend on ``workers``.
    """
    if R < 10:
        raise SynthError(f"need at least 10 replications, got {R}")
    jobs = [(cfg, r) for r in range(R)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate, jobs, chunksize=max(1, R // (4 * workers))))
    else:
        results = [_replicate(j) for j in jobs]
    results.sort(key=lambda t: t[0])

    labels = _labels(cfg)
    names = labels + ["lambda", "sigma2"]
    truth = np.concatenate([cfg.true_coefficients(labels), [cfg.lam, cfg.sigma**2]])
    ok = [res for _, res, _ in results if res is not None]
    messages = [msg for _, _, msg in results if msg is not None]
    failures = len(messages)
    if ok:
        est = np.array([e for e, _, _ in ok])
        se = np.array([s for _, s, _ in ok])
        pvals = np.array([p for _, _, p in ok])
    else:
        est = se = np.full((0, len(names)), np.nan)
        pvals = np.zeros(0)
    params = []
    for k, name in enumerate(names):
        col, s = est[:, k], se[:, k]
        err = col - truth[k]
        cover = np.abs(err) <= Z95 * s
        params.append(
            ParameterSummary(
                name=name,
                truth=float(truth[k]),
                mean=float(col.mean()) if len(col) else float("nan"),
                bias=float(err.mean()) if len(col) else float("nan"),
                rmse=float(np.sqrt(np.mean(err**2))) if len(col) else float("nan"),
                coverage=float(cover.mean()) if len(col) else float("nan"),
                mean_se=float(s.mean()) if len(col) else float("nan"),
                sd=float(col.std(ddof=1)) if len(col) > 1 else float("nan"),
                n_ok=len(col),
            )
        )
    return McSummary(
        parameters=params,
        R=R,
        failures=failures,
        lr_rejection_rate=float(np.mean(pvals < 0.05)) if len(pvals) else float("nan"),
        failed=failures > max_failure_rate * R,
        config=cfg.as_dict(),
        failure_messages=messages,
    )
