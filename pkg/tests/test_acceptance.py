"""Acceptance criteria, one test each, at their stated tolerances.

Run alone with ``pytest tests/test_acceptance.py -v``; the terminal summary
prints one PASS/FAIL line per criterion.
"""

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from odsdem.cli import main
from odsdem.design import CovariateTable, FlowMatrix, ModelSpec, build_design
from odsdem.estimation import _Profile, aic, fit_ols, fit_sdem, log_jacobian
from odsdem.report import format_cell, lr_from_aic
from odsdem.synth import DgpConfig, gen_instance, mc_study
from odsdem.weights import SpatialWeights, apply_destination_lag

from conftest import random_weights

# Four nested reference models: (log-likelihood, parameters, AIC linear,
# AIC spatial, LR statistic), values as printed.
REFERENCE = {
    "Model 1": (-6522.50, 8, 15061.43, 13060.99, 2002.43),
    "Model 2": (-4995.63, 23, 13281.94, 10037.26, 3246.69),
    "Model 3": (-4919.98, 27, 13129.65, 9893.96, 3237.69),
    "Model 4": (-4567.91, 56, 9344.82, 9247.83, 98.99),
}
LAMBDAS = (-0.4, 0.0, 0.3, 0.5, 0.8)


def test_ac01_aic_fixtures():
    assert aic(-4995.63, 23) == pytest.approx(10037.26, abs=0.01)
    assert aic(-6522.50, 8) == pytest.approx(13060.99, abs=0.02)
    # computed value and the printed one, each within the stated tolerance
    for target in (9893.94, 9893.96):
        assert aic(-4919.98, 27) == pytest.approx(target, abs=0.03)
    for target in (9247.82, 9247.83):
        assert aic(-4567.91, 56) == pytest.approx(target, abs=0.02)


def test_ac02_lr_aic_identity():
    for name, (_, _, aic_lin, aic_sp, lr) in REFERENCE.items():
        assert lr_from_aic(aic_lin, aic_sp) == pytest.approx(lr, abs=0.02), name


def test_ac03_jacobian_oracle():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(5, 51))
        m = int(rng.integers(1, 6))
        w = random_weights(rng, n)
        lo, hi = w.lambda_bounds()
        big = np.kron(np.eye(m), w.standardized)
        for lam in np.linspace(max(lo, -5.0), hi, 23)[1:-1]:
            sign, dense = np.linalg.slogdet(np.eye(n * m) - lam * big)
            assert sign > 0
            worst = max(worst, abs(log_jacobian(lam, w.spectrum, m) - dense))
    assert worst < 1e-8


def _random_config(rng, lam):
    return DgpConfig(
        n=int(rng.integers(15, 41)),
        m=int(rng.integers(2, 8)),
        lam=lam,
        sigma=float(rng.uniform(0.5, 2.0)),
        seed=int(rng.integers(0, 2**31)),
    )


def test_ac04_ols_collapse():
    rng = np.random.default_rng(4)
    for _ in range(50):
        inst = gen_instance(_random_config(rng, float(rng.uniform(-0.3, 0.8))))
        ols = fit_ols(inst.design)
        pinned = fit_sdem(inst.design, inst.weights, fixed_lambda=0.0, compute_se=False)
        scale = np.abs(ols.coefficients).max()
        assert np.abs(pinned.coefficients - ols.coefficients).max() <= 1e-10 * scale
        assert pinned.loglik == pytest.approx(ols.loglik, rel=1e-10)


def test_ac05_optimizer_oracle():
    rng = np.random.default_rng(5)
    for k in range(20):
        lam = LAMBDAS[k % len(LAMBDAS)]
        inst = gen_instance(_random_config(rng, lam))
        fit = fit_sdem(inst.design, inst.weights, compute_se=False)
        prof = _Profile(inst.design, inst.weights)
        lo, hi = inst.weights.lambda_bounds()
        grid = np.arange(max(lo, -0.999), hi, 0.001)
        grid = grid[(grid > lo) & (grid < hi)]
        best = grid[np.argmax([prof.loglik(g) for g in grid])]
        assert abs(fit.lam - best) <= 1e-3, (k, lam, fit.lam, best)


@pytest.fixture(scope="module")
def mc_alternative():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return mc_study(DgpConfig(n=40, m=10, lam=0.5, sigma=1.0), R=200)


@pytest.mark.slow
def test_ac06_monte_carlo_recovery(mc_alternative):
    s = mc_alternative
    cfg = DgpConfig()
    assert s.failures / s.R <= 0.01
    assert 0.45 <= s["lambda"].mean <= 0.55
    for name in cfg.beta:
        assert abs(s[name].bias) <= 0.05, (name, s[name].bias)
    for name in cfg.theta:
        assert abs(s[f"W_D {name}"].bias) <= 0.05, (name, s[f"W_D {name}"].bias)
    for p in s.parameters:
        assert 0.90 <= p.coverage <= 0.99, (p.name, p.coverage)


@pytest.mark.slow
def test_ac07_size_check():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        s = mc_study(DgpConfig(n=40, m=10, lam=0.0, sigma=1.0), R=200)
    assert s.lr_rejection_rate <= 0.10


@settings(max_examples=100, deadline=None)
@given(n=st.integers(2, 8), m=st.integers(1, 8), seed=st.integers(0, 2**32 - 1))
def test_ac08_construction_oracle(n, m, seed):
    rng = np.random.default_rng(seed)
    dest = tuple(f"d{i}" for i in range(n))
    orig = tuple(f"o{j}" for j in range(m))
    x_o = rng.normal(size=m)
    x_d = rng.normal(size=n)
    x_od = rng.normal(size=(n, m))
    adj = np.triu(rng.random((n, n)) < 0.5, 1).astype(float)
    w = SpatialWeights.from_adjacency(adj + adj.T, ids=dest)
    flows = FlowMatrix(rng.uniform(1, 100, (n, m)), dest, orig)
    tables = [
        CovariateTable("origin", {"a": x_o}, orig),
        CovariateTable("destination", {"b": x_d}, dest),
        CovariateTable("od_pair", {"c": x_od}, (dest, orig)),
    ]
    d = build_design(flows, tables, w, ModelSpec(origin=["a"], destination=["b"], od=["c"]))

    naive = np.empty((n * m, 4))
    y = np.empty(n * m)
    for j in range(m):
        for i in range(n):
            naive[j * n + i] = (1.0, x_o[j], x_d[i], x_od[i, j])
            y[j * n + i] = np.log(flows.values[i, j])
    assert np.array_equal(d.regressors[:, :4], naive)
    assert np.array_equal(d.response, y)

    dense = np.kron(np.eye(m), w.standardized)
    assert np.abs(d.regressors[:, 4:] - dense @ naive[:, 2:]).max(initial=0.0) <= 1e-10
    z = rng.normal(size=(n * m, 3))
    assert np.abs(apply_destination_lag(w.standardized, z, n, m) - dense @ z).max() <= 1e-10


def test_ac09_determinism(tmp_path, capsys):
    cfg = tmp_path / "dgp.cfg"
    cfg.write_text("n = 30\nm = 6\nlambda = 0.4\nseed = 99\n")
    assert main(["mc", str(cfg), "-R", "24", "-j", "1", "-o", str(tmp_path / "a")]) == 0
    assert main(["mc", str(cfg), "-R", "24", "-j", "2", "-o", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "summary.csv").read_bytes()
    assert a == (tmp_path / "b" / "summary.csv").read_bytes()


def test_ac10_cell_format():
    assert format_cell(0.26, 0.07, 0.0002) == "0.26*** (0.07)"
