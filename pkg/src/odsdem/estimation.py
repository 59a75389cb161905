"""
Least-squares gravity benchmark and ML estimation of the spatial Durbin
error model

    y = X b + u,    u = lam W_D u + e,    e ~ N(0, sigma2 I),

where ``X`` already contains the spatially lagged destination/OD columns
and ``W_D = I_m (x) W``.  The likelihood is concentrated on ``lam``; the
log-Jacobian ``ln|I - lam W_D| = m * sum(ln(1 - lam w_i))`` comes from the
spectrum of the n x n matrix ``W``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, optimize, stats

from .design import LAG_PREFIX, StackedDesign
from .weights import SpatialWeights, apply_destination_lag
from .weights import feasible_interval as feasible_lambda_interval

__all__ = [
    "EstimationError",
    "RankDeficiencyError",
    "DegenerateFitError",
    "BoundarySolutionError",
    "InformationMatrixError",
    "InfeasibleLambdaError",
    "FitResult",
    "LrTest",
    "Effect",
    "fit_ols",
    "log_jacobian",
    "concentrated_loglik",
    "gls_solve",
    "fit_sdem",
    "standard_errors",
    "lr_test",
    "aic",
    "effects_split",
    "significance_stars",
    "feasible_lambda_interval",
]

LOG_2PI = math.log(2.0 * math.pi)
RANK_RTOL = 1e-10
BOUNDARY_SHRINK = 1e-6
LAMBDA_XTOL = 1e-8


class EstimationError(RuntimeError):
    pass


class RankDeficiencyError(EstimationError):
    pass


class DegenerateFitError(EstimationError):
    """Zero residual variance: the likelihood is unbounded."""


class BoundarySolutionError(EstimationError):
    pass


class InformationMatrixError(EstimationError):
    pass


class InfeasibleLambdaError(EstimationError, ValueError):
    pass


def significance_stars(p) -> str:
    if p is None or not np.isfinite(p):
        return ""
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


def _pvalue(est, se):
    if se is None or not np.isfinite(se) or se <= 0:
        return float("nan")
    return float(2.0 * stats.norm.sf(abs(est / se)))


def _none_if_nan(x):
    if x is None:
        return None
    x = float(x)
    return None if not np.isfinite(x) else x


def _nan_if_none(x):
    return float("nan") if x is None else float(x)


@dataclass(frozen=True)
class FitResult:
    """One estimated model.

    ``coefficients`` and ``std_errors`` are aligned with ``labels``.
    For ``kind="sdem"`` the spatial error coefficient and its standard
    error are kept apart in ``lam`` / ``lam_se``.  ``n_params`` counts
    sigma2 (and lam for the spatial model), and ``aic`` is always
    ``2 * n_params - 2 * loglik``.
    """

    kind: str
    labels: tuple
    coefficients: np.ndarray
    std_errors: np.ndarray
    sigma2: float
    loglik: float
    n_params: int
    N: int
    n: int
    m: int
    lam: float | None = None
    lam_se: float | None = None
    sigma2_se: float | None = None
    blocks: tuple = ()
    variables: tuple = ()
    cov: np.ndarray | None = field(default=None, repr=False, compare=False)
    diagnostics: dict = field(default_factory=dict, compare=False)
    aic: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "coefficients", np.asarray(self.coefficients, dtype=float))
        object.__setattr__(self, "std_errors", np.asarray(self.std_errors, dtype=float))
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "aic", aic(self.loglik, self.n_params))

    @property
    def p_values(self) -> np.ndarray:
        return np.array([_pvalue(b, s) for b, s in zip(self.coefficients, self.std_errors)])

    @property
    def lam_p_value(self) -> float:
        return _pvalue(self.lam, self.lam_se) if self.lam is not None else float("nan")

    def coef(self, label: str) -> float:
        return float(self.coefficients[self.labels.index(label)])

    def se(self, label: str) -> float:
        return float(self.std_errors[self.labels.index(label)])

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "labels": list(self.labels),
            "blocks": list(self.blocks),
            "variables": list(self.variables),
            "coefficients": [float(v) for v in self.coefficients],
            "std_errors": [_none_if_nan(v) for v in self.std_errors],
            "lambda": _none_if_nan(self.lam),
            "lambda_se": _none_if_nan(self.lam_se),
            "sigma2": float(self.sigma2),
            "sigma2_se": _none_if_nan(self.sigma2_se),
            "loglik": float(self.loglik),
            "n_params": int(self.n_params),
            "aic": float(self.aic),
            "N": int(self.N),
            "n": int(self.n),
            "m": int(self.m),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        return cls(
            kind=d["kind"],
            labels=tuple(d["labels"]),
            coefficients=np.array(d["coefficients"], dtype=float),
            std_errors=np.array([_nan_if_none(v) for v in d["std_errors"]]),
            sigma2=d["sigma2"],
            loglik=d["loglik"],
            n_params=d["n_params"],
            N=d["N"],
            n=d["n"],
            m=d["m"],
            lam=d.get("lambda"),
            lam_se=d.get("lambda_se"),
            sigma2_se=d.get("sigma2_se"),
            blocks=tuple(d.get("blocks", ())),
            variables=tuple(d.get("variables", ())),
        )


@dataclass(frozen=True)
class LrTest:
    statistic: float
    df: int
    p_value: float


@dataclass(frozen=True)
class Effect:
    """Direct (own-unit) and spillover (neighbour) effect of one covariate."""

    variable: str
    direct: float
    direct_se: float
    spillover: float | None = None
    spillover_se: float | None = None
    total: float | None = None
    total_se: float | None = None

    @property
    def direct_p(self) -> float:
        return _pvalue(self.direct, self.direct_se)

    @property
    def spillover_p(self) -> float:
        return _pvalue(self.spillover, self.spillover_se) if self.spillover is not None else float("nan")

    @property
    def total_p(self) -> float:
        return _pvalue(self.total, self.total_se) if self.total is not None else float("nan")

    @property
    def direct_stars(self) -> str:
        return significance_stars(self.direct_p)

    @property
    def spillover_stars(self) -> str:
        return significance_stars(self.spillover_p)

    @property
    def total_stars(self) -> str:
        return significance_stars(self.total_p)


def aic(loglik: float, k: int) -> float:
    """Akaike information criterion ``2k - 2 loglik``."""
    if k < 1:
        raise ValueError(f"parameter count must be >= 1, got {k}")
    return 2.0 * k - 2.0 * float(loglik)


def _qr_solve(X, y, labels=None, with_cov=True):
    """Least squares through a column-pivoted QR with a rank check.

    Returns coefficients, residuals and ``(X'X)^-1`` (``None`` unless
    ``with_cov``).
    """
    N, K = X.shape
    if K >= N:
        raise RankDeficiencyError(f"{K} regressors for {N} observations")
    if K == 0:
        return np.zeros(0), y.copy(), np.zeros((0, 0))
    Q, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > RANK_RTOL * diag[0])) if diag[0] > 0 else 0
    if rank < K:
        bad = [labels[i] if labels else i for i in piv[rank:]]
        raise RankDeficiencyError(f"regressor matrix has rank {rank} < {K}; collinear columns: {bad}")
    z = linalg.solve_triangular(R, Q.T @ y)
    beta = np.empty(K)
    beta[piv] = z
    resid = y - X @ beta
    if not with_cov:
        return beta, resid, None
    Rinv = linalg.solve_triangular(R, np.eye(K))
    xtx_inv_p = Rinv @ Rinv.T
    xtx_inv = np.empty_like(xtx_inv_p)
    xtx_inv[np.ix_(piv, piv)] = xtx_inv_p
    return beta, resid, xtx_inv


def _check_variance(sigma2, y):
    scale = max(float(np.mean(y**2)), np.finfo(float).tiny)
    if sigma2 <= (1e3 * np.finfo(float).eps) ** 2 * scale:
        raise DegenerateFitError(
            f"residual variance {sigma2:.3g} is zero to working precision; "
            "the likelihood is unbounded (noiseless or perfectly fitted data)"
        )


def fit_ols(design: StackedDesign) -> FitResult:
    """Gaussian ML fit of the non-spatial model on the same regressors.

    ``sigma2 = e'e / N`` and the standard errors are
    ``sqrt(diag(sigma2 (X'X)^-1))``.
    """
    y, X = design.response, design.regressors
    N = y.shape[0]
    beta, resid, xtx_inv = _qr_solve(X, y, list(design.column_labels))
    sigma2 = float(resid @ resid) / N
    _check_variance(sigma2, y)
    loglik = -0.5 * N * (LOG_2PI + math.log(sigma2) + 1.0)
    cov = sigma2 * xtx_inv
    return FitResult(
        kind="linear",
        labels=design.column_labels,
        coefficients=beta,
        std_errors=np.sqrt(np.diag(cov)),
        sigma2=sigma2,
        loglik=loglik,
        n_params=design.K + 1,
        N=N,
        n=design.n,
        m=design.m,
        sigma2_se=sigma2 * math.sqrt(2.0 / N),
        blocks=design.blocks,
        variables=design.variables,
        cov=cov,
    )


def log_jacobian(lam: float, spectrum, m: int) -> float:
    """``ln|I_N - lam (I_m (x) W)| = m * sum_i ln(1 - lam w_i)``."""
    spectrum = np.asarray(spectrum, dtype=float)
    a = 1.0 - lam * spectrum
    if not (a > 0).all():
        lo, hi = feasible_lambda_interval(spectrum)
        raise InfeasibleLambdaError(f"lambda={lam} outside the feasible interval ({lo:.6g}, {hi:.6g})")
    return float(m * np.sum(np.log(a)))


class _Profile:
    """Pre-lagged data for repeated likelihood evaluations in lam."""

    def __init__(self, design: StackedDesign, weights: SpatialWeights):
        if weights.n != design.n:
            raise EstimationError(f"weights over {weights.n} units, design has n={design.n}")
        self.y = design.response
        self.X = design.regressors
        self.labels = list(design.column_labels)
        self.Ly = apply_destination_lag(weights.standardized, self.y, design.n, design.m)
        self.LX = apply_destination_lag(weights.standardized, self.X, design.n, design.m)
        self.spectrum = weights.spectrum
        self.m = design.m
        self.N = design.N

    def filtered(self, lam):
        return self.y - lam * self.Ly, self.X - lam * self.LX

    def solve(self, lam, with_cov=True):
        ys, Xs = self.filtered(lam)
        return _qr_solve(Xs, ys, self.labels, with_cov)

    def loglik(self, lam):
        jac = log_jacobian(lam, self.spectrum, self.m)
        _, resid, _ = self.solve(lam, with_cov=False)
        sigma2 = float(resid @ resid) / self.N
        if sigma2 <= 0:
            return -np.inf
        return -0.5 * self.N * (LOG_2PI + 1.0 + math.log(sigma2)) + jac

    def full_loglik(self, params):
        """Unconcentrated log-likelihood at ``params = (beta..., lam, sigma2)``."""
        beta, lam, sigma2 = params[:-2], params[-2], params[-1]
        if sigma2 <= 0:
            return -np.inf
        try:
            jac = log_jacobian(lam, self.spectrum, self.m)
        except InfeasibleLambdaError:
            return -np.inf
        ys, Xs = self.filtered(lam)
        e = ys - Xs @ beta
        return -0.5 * self.N * (LOG_2PI + math.log(sigma2)) - 0.5 * float(e @ e) / sigma2 + jac


def concentrated_loglik(lam: float, design: StackedDesign, weights: SpatialWeights) -> float:
    """Log-likelihood with beta and sigma2 profiled out at a given lam."""
    return _Profile(design, weights).loglik(lam)


def gls_solve(design: StackedDesign, weights: SpatialWeights, lam: float):
    """Coefficients and filtered residuals of the regression at a fixed lam."""
    beta, resid, _ = _Profile(design, weights).solve(lam, with_cov=False)
    return beta, resid


def _search_interval(spectrum):
    lo, hi = feasible_lambda_interval(spectrum)
    return lo + BOUNDARY_SHRINK, hi - BOUNDARY_SHRINK


def _maximize_profile(prof: _Profile, lo: float, hi: float, n_grid: int = 41) -> tuple[float, float]:
    # coarse grid brackets the global maximum, bounded Brent refines it
    grid = np.linspace(lo, hi, n_grid)
    vals = np.array([prof.loglik(g) for g in grid])
    k = int(np.argmax(vals))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, n_grid - 1)]
    res = optimize.minimize_scalar(
        lambda t: -prof.loglik(t), bounds=(a, b), method="bounded", options={"xatol": LAMBDA_XTOL}
    )
    lam, ll = float(res.x), -float(res.fun)
    if ll < vals[k]:
        lam, ll = float(grid[k]), float(vals[k])
    edge = 10 * LAMBDA_XTOL + 1e-6
    if lam - lo < edge or hi - lam < edge:
        raise BoundarySolutionError(
            f"boundary solution: lambda={lam:.6f} at the edge of ({lo:.6f}, {hi:.6f}); "
            "check the weights or the specification"
        )
    return lam, ll


def fit_sdem(
    design: StackedDesign,
    weights: SpatialWeights,
    fixed_lambda: float | None = None,
    compute_se: bool = True,
) -> FitResult:
    """Concentrated ML estimate of the spatial Durbin error model.

    Parameters
    ----------
    design : StackedDesign
        Regressors including the lagged destination/OD blocks.
    weights : SpatialWeights
        Destination weights; their spectrum drives the log-Jacobian.
    fixed_lambda : float, optional
        Evaluate at this lam instead of maximizing (e.g. 0 to recover
        the least-squares fit).
    compute_se : bool
        Attach Hessian-based standard errors.
    """
    prof = _Profile(design, weights)
    lo, hi = _search_interval(weights.spectrum)
    if fixed_lambda is None:
        lam, _ = _maximize_profile(prof, lo, hi)
    else:
        lam = float(fixed_lambda)
        log_jacobian(lam, weights.spectrum, design.m)
    beta, resid, xtx_inv = prof.solve(lam)
    N = design.N
    sigma2 = float(resid @ resid) / N
    _check_variance(sigma2, design.response)
    loglik = -0.5 * N * (LOG_2PI + 1.0 + math.log(sigma2)) + log_jacobian(lam, weights.spectrum, design.m)
    fit = FitResult(
        kind="sdem",
        labels=design.column_labels,
        coefficients=beta,
        std_errors=np.full(design.K, np.nan),
        sigma2=sigma2,
        loglik=loglik,
        n_params=design.K + 2,
        N=N,
        n=design.n,
        m=design.m,
        lam=lam,
        blocks=design.blocks,
        variables=design.variables,
        diagnostics={"lambda_interval": (lo, hi), "fixed_lambda": fixed_lambda is not None},
    )
    if not compute_se:
        return fit
    cov = _covariance(fit, prof)
    se = np.sqrt(np.diag(cov))
    K = design.K
    gls_cov = sigma2 * xtx_inv
    rel = np.max(np.abs(np.sqrt(np.diag(gls_cov)) / se[:K] - 1.0)) if K else 0.0
    diagnostics = dict(fit.diagnostics, se_gls_max_rel_diff=float(rel))
    if rel > 0.05:
        warnings.warn(
            f"Hessian standard errors differ from sigma2 (X*'X*)^-1 by up to {rel:.1%}",
            RuntimeWarning,
            stacklevel=2,
        )
    return replace(
        fit,
        std_errors=se[:K],
        lam_se=float(se[K]),
        sigma2_se=float(se[K + 1]),
        cov=cov,
        diagnostics=diagnostics,
    )


def _fd_steps(params):
    return np.maximum(1e-5, 1e-5 * np.abs(params))


def numerical_hessian(f, x, steps=None) -> np.ndarray:
    """Central finite-difference Hessian of a scalar function."""
    x = np.asarray(x, dtype=float)
    h = _fd_steps(x) if steps is None else np.asarray(steps, dtype=float)
    p = x.size
    f0 = f(x)
    H = np.empty((p, p))
    E = np.diag(h)
    for i in range(p):
        H[i, i] = (f(x + E[i]) - 2.0 * f0 + f(x - E[i])) / (h[i] * h[i])
        for j in range(i + 1, p):
            v = (
                f(x + E[i] + E[j]) - f(x + E[i] - E[j]) - f(x - E[i] + E[j]) + f(x - E[i] - E[j])
            ) / (4.0 * h[i] * h[j])
            H[i, j] = H[j, i] = v
    return H


def _covariance(fit: FitResult, prof: _Profile) -> np.ndarray:
    params = np.concatenate([fit.coefficients, [fit.lam, fit.sigma2]])
    H = numerical_hessian(prof.full_loglik, params)
    info = -H
    try:
        c = linalg.cholesky(info, lower=True)
    except linalg.LinAlgError:
        raise InformationMatrixError("information matrix not PD at the estimate") from None
    cinv = linalg.solve_triangular(c, np.eye(len(params)), lower=True)
    return cinv.T @ cinv


def standard_errors(fit: FitResult, design: StackedDesign, weights: SpatialWeights) -> dict:
    """Asymptotic standard errors from the numerical Hessian of the full likelihood.

    Returns a mapping from regressor label (plus ``"lambda"`` and
    ``"sigma2"``) to standard error.
    """
    if fit.kind != "sdem" or fit.lam is None:
        raise EstimationError("standard_errors needs a spatial fit")
    cov = _covariance(fit, _Profile(design, weights))
    se = np.sqrt(np.diag(cov))
    out = dict(zip(fit.labels, se[: len(fit.labels)]))
    out["lambda"] = se[-2]
    out["sigma2"] = se[-1]
    return out


def lr_test(linear: FitResult, sdem: FitResult, df: int = 1) -> LrTest:
    """Likelihood-ratio test of lam = 0 against the spatial error model."""
    if linear.N != sdem.N:
        raise EstimationError(f"models fitted on different samples ({linear.N} vs {sdem.N})")
    stat = 2.0 * (sdem.loglik - linear.loglik)
    if stat < 0:
        if stat < -1e-8 * max(1.0, abs(linear.loglik)):
            raise EstimationError(
                f"negative LR statistic {stat:.6g}: models are not nested or the spatial fit is not a maximum"
            )
        stat = 0.0
    return LrTest(statistic=stat, df=df, p_value=float(stats.chi2.sf(stat, df)))


def effects_split(fit: FitResult) -> list[Effect]:
    """Direct (b), spillover (theta) and total (b + theta) effect per covariate.

    Origin covariates get no spillover entry.  Totals use the joint
    covariance when available.
    """
    if fit.kind != "sdem":
        raise EstimationError("effects are defined for spatial fits")
    idx = {lab: k for k, lab in enumerate(fit.labels)}
    cov = fit.cov
    out = []
    for k, (lab, block) in enumerate(zip(fit.labels, fit.blocks)):
        if block not in ("O", "D", "OD"):
            continue
        b, b_se = float(fit.coefficients[k]), float(fit.std_errors[k])
        j = idx.get(LAG_PREFIX + lab)
        if j is None:
            out.append(Effect(lab, b, b_se))
            continue
        t, t_se = float(fit.coefficients[j]), float(fit.std_errors[j])
        if cov is not None:
            var = cov[k, k] + cov[j, j] + 2.0 * cov[k, j]
            tot_se = math.sqrt(var) if var > 0 else float("nan")
        else:
            tot_se = float("nan")
        out.append(Effect(lab, b, b_se, t, t_se, b + t, tot_se))
    return out
