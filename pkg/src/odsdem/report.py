"""Result tables and serialization for sequences of fitted models."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .design import INTERCEPT, LAG_PREFIX
from .estimation import FitResult, LrTest, fit_ols, fit_sdem, lr_test, significance_stars

__all__ = [
    "ModelReport",
    "fit_model_pair",
    "lr_from_aic",
    "format_cell",
    "render_table",
    "render_csv",
    "write_fit_csv",
    "read_fit_csv",
    "ABSENT",
    "FOOTNOTE",
]

ABSENT = "—"
FOOTNOTE = "***p < 0.01; **p < 0.05; *p < 0.1"
SUMMARY_ROWS = (
    "Num. obs.",
    "Parameters",
    "Log Likelihood",
    "AIC (Linear model)",
    "AIC (Spatial model)",
    "LR test: statistic",
    "LR test: p-value",
)


def lr_from_aic(aic_linear: float, aic_spatial: float, df: int = 1) -> float:
    """LR statistic implied by two AICs whose parameter counts differ by ``df``."""
    return aic_linear - aic_spatial + 2.0 * df


def format_cell(coef: float, se: float | None, p: float | None) -> str:
    """``"0.26*** (0.07)"``: two decimals, stars, parenthesized SE."""
    cell = f"{coef:.2f}{significance_stars(p)}"
    if se is not None and np.isfinite(se):
        cell += f" ({se:.2f})"
    return cell


@dataclass(frozen=True)
class ModelReport:
    """Spatial fit, its non-spatial benchmark and the LR test between them."""

    name: str
    linear: FitResult
    sdem: FitResult
    lr: LrTest

    def as_dict(self) -> dict:
        s = self.sdem
        return {
            "model": self.name,
            "coefficients": {lab: float(b) for lab, b in zip(s.labels, s.coefficients)},
            "std_errors": {lab: _json_num(v) for lab, v in zip(s.labels, s.std_errors)},
            "lambda": _json_num(s.lam),
            "lambda_se": _json_num(s.lam_se),
            "sigma2": float(s.sigma2),
            "loglik": float(s.loglik),
            "loglik_linear": float(self.linear.loglik),
            "n_params": int(s.n_params),
            "num_obs": int(s.N),
            "aic_linear": float(self.linear.aic),
            "aic_spatial": float(s.aic),
            "lr": {"statistic": float(self.lr.statistic), "df": self.lr.df, "p_value": float(self.lr.p_value)},
            "sdem": s.as_dict(),
            "linear": self.linear.as_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ModelReport":
        lr = d["lr"]
        return cls(
            d["model"],
            FitResult.from_dict(d["linear"]),
            FitResult.from_dict(d["sdem"]),
            LrTest(lr["statistic"], lr["df"], lr["p_value"]),
        )


def _json_num(x):
    if x is None:
        return None
    x = float(x)
    return x if np.isfinite(x) else None


def fit_model_pair(name, design, weights) -> ModelReport:
    """Fit the least-squares benchmark and the spatial model on one design."""
    linear = fit_ols(design)
    sdem = fit_sdem(design, weights)
    return ModelReport(name, linear, sdem, lr_test(linear, sdem))


def _row_order(reports: Sequence[ModelReport]):
    base, lagged, dummy_kinds = [], [], []
    for rep in reports:
        s = rep.sdem
        blocks = s.blocks or ("",) * len(s.labels)
        variables = s.variables or s.labels
        for lab, blk, var in zip(s.labels, blocks, variables):
            if blk == "dummy":
                if var not in dummy_kinds:
                    dummy_kinds.append(var)
            elif lab.startswith(LAG_PREFIX):
                if lab not in lagged:
                    lagged.append(lab)
            elif lab not in base:
                base.append(lab)
    if INTERCEPT in base:
        base.remove(INTERCEPT)
        base.insert(0, INTERCEPT)
    return base, lagged, dummy_kinds


def _table_rows(reports: Sequence[ModelReport]):
    base, lagged, dummy_kinds = _row_order(reports)
    rows = []
    for lab in base + lagged:
        cells = []
        for rep in reports:
            s = rep.sdem
            if lab in s.labels:
                k = s.labels.index(lab)
                cells.append(format_cell(s.coefficients[k], s.std_errors[k], s.p_values[k]))
            else:
                cells.append(ABSENT)
        rows.append((lab, cells))
    for kind in dummy_kinds:
        cells = []
        for rep in reports:
            cnt = sum(1 for b, v in zip(rep.sdem.blocks, rep.sdem.variables) if b == "dummy" and v == kind)
            cells.append(f"yes ({cnt})" if cnt else ABSENT)
        rows.append((f"{kind.capitalize()} fixed effects", cells))
    rows.append(
        ("λ", [format_cell(r.sdem.lam, r.sdem.lam_se, r.sdem.lam_p_value) for r in reports])
    )
    summary = {
        "Num. obs.": lambda r: f"{r.sdem.N}",
        "Parameters": lambda r: f"{r.sdem.n_params}",
        "Log Likelihood": lambda r: f"{r.sdem.loglik:.2f}",
        "AIC (Linear model)": lambda r: f"{r.linear.aic:.2f}",
        "AIC (Spatial model)": lambda r: f"{r.sdem.aic:.2f}",
        "LR test: statistic": lambda r: f"{r.lr.statistic:.2f}",
        "LR test: p-value": lambda r: f"{r.lr.p_value:.4f}",
    }
    srows = [(name, [summary[name](r) for r in reports]) for name in SUMMARY_ROWS]
    return rows, srows


def render_table(reports: Sequence[ModelReport]) -> str:
    """Aligned text table: variables as rows, models as columns."""
    if not reports:
        raise ValueError("no fits to render")
    rows, srows = _table_rows(reports)
    header = [""] + [r.name for r in reports]
    body = rows + srows
    widths = [max(len(header[0]), *(len(lab) for lab, _ in body))]
    for j in range(len(reports)):
        widths.append(max(len(header[j + 1]), *(len(cells[j]) for _, cells in body)))

    def line(label, cells):
        parts = [label.ljust(widths[0])] + [c.rjust(w) for c, w in zip(cells, widths[1:])]
        return "  ".join(parts).rstrip()

    rule = "-" * (sum(widths) + 2 * len(reports))
    out = [rule, line(header[0], header[1:]), rule]
    out += [line(lab, cells) for lab, cells in rows]
    out.append(rule)
    out += [line(lab, cells) for lab, cells in srows]
    out += [rule, FOOTNOTE]
    return "\n".join(out) + "\n"


def render_csv(reports: Sequence[ModelReport]) -> str:
    """The same table as CSV (formatted cells)."""
    if not reports:
        raise ValueError("no fits to render")
    rows, srows = _table_rows(reports)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variable"] + [r.name for r in reports])
    for lab, cells in rows + srows:
        w.writerow([lab] + cells)
    return buf.getvalue()


_FIT_SCALARS = ("kind", "sigma2", "sigma2_se", "loglik", "n_params", "N", "n", "m", "lambda", "lambda_se")


def write_fit_csv(fit: FitResult, path) -> None:
    """Long CSV of one fit: coefficient rows then ``#``-prefixed scalars."""
    d = fit.as_dict()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "block", "variable", "estimate", "std_error", "p_value"])
        blocks = d["blocks"] or [""] * len(d["labels"])
        variables = d["variables"] or [""] * len(d["labels"])
        for lab, blk, var, b, se, p in zip(d["labels"], blocks, variables, d["coefficients"],
                                           d["std_errors"], fit.p_values):
            w.writerow([lab, blk, var, repr(b), "" if se is None else repr(se),
                        "" if not np.isfinite(p) else repr(float(p))])
        for key in _FIT_SCALARS:
            v = d[key]
            w.writerow([f"#{key}", "" if v is None else (v if isinstance(v, str) else repr(v))])


def read_fit_csv(path) -> FitResult:
    """Inverse of :func:`write_fit_csv`."""
    labels, blocks, variables, coefs, ses = [], [], [], [], []
    scalars: dict = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if row[0].startswith("#"):
                scalars[row[0][1:]] = row[1]
                continue
            labels.append(row[0])
            blocks.append(row[1])
            variables.append(row[2])
            coefs.append(float(row[3]))
            ses.append(float(row[4]) if row[4] else float("nan"))

    def num(key, cast=float):
        v = scalars.get(key, "")
        return cast(v) if v not in ("", "None") else None

    return FitResult(
        kind=scalars["kind"],
        labels=tuple(labels),
        coefficients=np.array(coefs),
        std_errors=np.array(ses),
        sigma2=num("sigma2"),
        loglik=num("loglik"),
        n_params=num("n_params", int),
        N=num("N", int),
        n=num("n", int),
        m=num("m", int),
        lam=num("lambda"),
        lam_se=num("lambda_se"),
        sigma2_se=num("sigma2_se"),
        blocks=tuple(blocks) if any(blocks) else (),
        variables=tuple(variables) if any(variables) else (),
    )
