import math
from dataclasses import replace

import numpy as np
import pytest

from odsdem.design import INTERCEPT, CovariateTable, FlowMatrix, ModelSpec, StackedDesign, build_design
from odsdem.estimation import (
    BoundarySolutionError,
    DegenerateFitError,
    EstimationError,
    FitResult,
    InfeasibleLambdaError,
    InformationMatrixError,
    RankDeficiencyError,
    _maximize_profile,
    _Profile,
    aic,
    concentrated_loglik,
    effects_split,
    fit_ols,
    fit_sdem,
    gls_solve,
    log_jacobian,
    lr_test,
    numerical_hessian,
    standard_errors,
)
from odsdem.synth import DgpConfig, gen_instance
from odsdem.weights import SpatialWeights

from conftest import random_weights


def _plain_design(X, y, labels=None, n=None, m=1):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    K = X.shape[1]
    labels = labels or tuple(f"x{k}" for k in range(K))
    return StackedDesign(y, X, tuple(labels), ("D",) * K, tuple(labels), n or len(y), m)


def dense_logdet(lam, w, m):
    n = w.shape[0]
    sign, ld = np.linalg.slogdet(np.eye(n * m) - lam * np.kron(np.eye(m), w))
    assert sign > 0
    return ld


class TestOLS:
    def test_perfect_fit_rejected(self, rng):
        X = np.column_stack([np.ones(20), rng.normal(size=20)])
        with pytest.raises(DegenerateFitError):
            fit_ols(_plain_design(X, X @ [1.0, 2.0]))

    def test_intercept_only(self, rng):
        y = rng.normal(3.0, 2.0, size=50)
        fit = fit_ols(_plain_design(np.ones((50, 1)), y))
        assert fit.coefficients[0] == pytest.approx(y.mean(), rel=1e-13)
        assert fit.sigma2 == pytest.approx(y.var(ddof=0), rel=1e-12)
        assert fit.n_params == 2

    def test_normal_equations(self, rng):
        X = np.column_stack([np.ones(200), rng.normal(size=(200, 4))])
        y = X @ rng.normal(size=5) + rng.normal(size=200)
        fit = fit_ols(_plain_design(X, y))
        oracle = np.linalg.solve(X.T @ X, X.T @ y)
        assert np.max(np.abs(fit.coefficients - oracle) / np.abs(oracle)) < 1e-10
        e = y - X @ oracle
        s2 = e @ e / 200
        assert fit.loglik == pytest.approx(-100 * (math.log(2 * math.pi) + math.log(s2) + 1), rel=1e-12)
        se = np.sqrt(np.diag(s2 * np.linalg.inv(X.T @ X)))
        assert np.allclose(fit.std_errors, se, rtol=1e-9)

    def test_rank_deficiency_named(self, rng):
        x = rng.normal(size=30)
        X = np.column_stack([np.ones(30), x, 2 * x])
        with pytest.raises(RankDeficiencyError, match="x[12]"):
            fit_ols(_plain_design(X, rng.normal(size=30), labels=("const", "x1", "x2")))

    def test_aic_stored(self, instance):
        fit = fit_ols(instance.design)
        assert fit.aic == 2 * fit.n_params - 2 * fit.loglik
        assert fit.n_params == instance.design.K + 1


class TestLogJacobian:
    def test_zero(self):
        assert log_jacobian(0.0, [-1.0, 1.0], 3) == 0.0

    def test_exchange(self):
        assert log_jacobian(0.5, [-1.0, 1.0], 1) == pytest.approx(math.log(0.75), abs=1e-15)
        assert log_jacobian(0.5, [-1.0, 1.0], 1) == pytest.approx(-0.287682, abs=1e-6)

    def test_dense_oracle(self, rng):
        w = random_weights(rng, 20, extent=250)
        for lam in np.linspace(-0.9, 0.95, 21):
            ours = log_jacobian(lam, w.spectrum, 3)
            assert abs(ours - dense_logdet(lam, w.standardized, 3)) < 1e-8

    def test_infeasible(self):
        with pytest.raises(InfeasibleLambdaError):
            log_jacobian(1.0, [-1.0, 1.0], 1)
        with pytest.raises(InfeasibleLambdaError):
            log_jacobian(-1.5, [-1.0, 1.0], 1)


class TestConcentratedLikelihood:
    def test_lambda_zero_is_ols(self, instance):
        ll0 = concentrated_loglik(0.0, instance.design, instance.weights)
        assert ll0 == pytest.approx(fit_ols(instance.design).loglik, rel=1e-13)

    def test_profile_over_replications(self):
        # one draw at N=400 has sd(lam_hat) ~ 0.065, so the +-0.05 window is checked on the mean
        argmaxes = []
        for r in range(20):
            inst = gen_instance(DgpConfig(lam=0.5), stream=r)
            prof = _Profile(inst.design, inst.weights)
            lo, _ = inst.weights.lambda_bounds()
            grid = np.arange(max(lo, -0.9), 0.999, 0.001)
            vals = np.array([prof.loglik(g) for g in grid])
            # concave-looking: no positive second differences beyond rounding
            assert np.diff(vals, 2).max() < 1e-6
            k = int(np.argmax(vals))
            assert 0 < k < len(grid) - 1
            assert vals[k] >= prof.loglik(0.0)
            argmaxes.append(grid[k])
        assert abs(np.mean(argmaxes) - 0.5) <= 0.05

    def test_rank_loss(self):
        flows = FlowMatrix(np.exp(np.arange(6.0)).reshape(3, 2), ("a", "b", "c"), ("o", "p"))
        w = SpatialWeights.from_adjacency(1 - np.eye(3), ids=("a", "b", "c"))
        t = CovariateTable("destination", {"x": [1.0, 1.0, 1.0]}, ("a", "b", "c"))
        d = build_design(flows, [t], w, ModelSpec(destination=["x"], lagged=()))
        with pytest.raises(RankDeficiencyError):
            concentrated_loglik(0.3, d, w)


class TestFitSdem:
    def test_collapse_to_ols(self, instance):
        s = fit_sdem(instance.design, instance.weights, fixed_lambda=0.0)
        o = fit_ols(instance.design)
        assert np.allclose(s.coefficients, o.coefficients, rtol=1e-10, atol=0)
        assert s.loglik == pytest.approx(o.loglik, rel=1e-12)
        assert s.n_params == o.n_params + 1

    def test_optimizer_matches_grid(self, instance):
        fit = fit_sdem(instance.design, instance.weights, compute_se=False)
        prof = _Profile(instance.design, instance.weights)
        lo, hi = instance.weights.lambda_bounds()
        grid = np.arange(lo + 1e-6, hi - 1e-6, 0.001)
        best = grid[np.argmax([prof.loglik(g) for g in grid])]
        # a 0.001 grid pins its argmax only to within half a step
        assert abs(fit.lam - best) <= 5e-4
        assert fit.loglik >= prof.loglik(best) - 1e-9

    def test_dominates_linear(self, instance):
        fit = fit_sdem(instance.design, instance.weights, compute_se=False)
        assert fit.loglik >= fit_ols(instance.design).loglik
        lo, hi = instance.weights.lambda_bounds()
        assert lo < fit.lam < hi

    def test_null_recovery(self):
        lams, errs, ses = [], [], []
        for r in range(30):
            inst = gen_instance(DgpConfig(lam=0.0), stream=r)
            fit = fit_sdem(inst.design, inst.weights)
            lams.append(fit.lam)
            errs.append(fit.coefficients - inst.truth["coefficients"])
            ses.append(fit.std_errors)
        assert abs(np.mean(lams)) <= 0.1
        errs = np.array(errs)
        mc_se = errs.std(axis=0, ddof=1) / np.sqrt(len(errs))
        assert np.all(np.abs(errs.mean(axis=0)) <= 3.5 * mc_se)

    def test_model2_parameter_count(self):
        rng = np.random.default_rng(2019)
        n, m = 107, 32
        d_ids = tuple(f"p{i:03d}" for i in range(n))
        o_ids = tuple(f"c{j:02d}" for j in range(m))
        from odsdem.weights import Centroids, build_weights

        w = build_weights(Centroids(d_ids, rng.uniform(0, 700, (n, 2))), 120, isolated="nearest")
        dest_vars = ["gdp_d", "unemployment_d", "density_d", "accessibility_d", "museums_d",
                     "coasts_d", "firms_d", "pollution_d"]
        d_tab = CovariateTable("destination", {k: rng.lognormal(size=n) for k in dest_vars}, d_ids,
                               {k: "log" for k in dest_vars})
        o_tab = CovariateTable("origin", {"gdp_o": rng.lognormal(size=m)}, o_ids, {"gdp_o": "log"})
        domestic = np.zeros((n, m))
        domestic[:, 0] = 1
        od_tab = CovariateTable("od_pair", {"distance": rng.uniform(50, 2000, (n, m)), "domestic": domestic},
                                (d_ids, o_ids), {"distance": "log", "domestic": "dummy"})
        spec = ModelSpec("Model 2", origin=["gdp_o"], destination=dest_vars, od=["distance", "domestic"],
                         lagged=["distance"] + dest_vars)
        flows = FlowMatrix(np.ones((n, m)), d_ids, o_ids)
        design = build_design(flows, [o_tab, d_tab, od_tab], w, spec)
        y = design.regressors @ rng.normal(size=design.K) + rng.normal(size=design.N)
        design = design.with_response(y)
        assert design.N == 3424 and design.K == 21
        fit = fit_sdem(design, w)
        assert fit.n_params == 23
        assert fit.aic == 2 * 23 - 2 * fit.loglik

    def test_scale_invariance(self, instance):
        c = 3.7
        a = fit_sdem(instance.design, instance.weights, compute_se=False)
        b = fit_sdem(instance.design.with_response(c * instance.design.response), instance.weights,
                     compute_se=False)
        assert b.lam == pytest.approx(a.lam, abs=1e-6)
        assert np.allclose(b.coefficients, c * a.coefficients, rtol=1e-5, atol=1e-6)
        assert b.loglik == pytest.approx(a.loglik - instance.design.N * math.log(c), abs=1e-6)

    def test_boundary_solution(self):
        class Rising:
            def loglik(self, lam):
                return lam

        with pytest.raises(BoundarySolutionError, match="boundary"):
            _maximize_profile(Rising(), -1.0, 1.0)

    def test_noiseless_flagged(self):
        inst = gen_instance(DgpConfig(sigma=0.0))
        beta, _ = gls_solve(inst.design, inst.weights, 0.0)
        assert np.allclose(beta, inst.truth["coefficients"], rtol=0, atol=1e-8)
        with pytest.raises(DegenerateFitError):
            fit_sdem(inst.design, inst.weights)


class TestStandardErrors:
    def test_null_matches_ols(self, null_instance):
        s = fit_sdem(null_instance.design, null_instance.weights, fixed_lambda=0.0)
        o = fit_ols(null_instance.design)
        assert np.max(np.abs(s.std_errors / o.std_errors - 1)) < 0.02

    def test_positive_and_gls_block(self, instance):
        fit = fit_sdem(instance.design, instance.weights)
        assert np.all(fit.std_errors > 0) and fit.lam_se > 0 and fit.sigma2_se > 0
        assert np.all(np.linalg.eigvalsh(fit.cov) > 0)
        assert fit.diagnostics["se_gls_max_rel_diff"] < 0.05

    def test_labeled_output(self, instance):
        fit = fit_sdem(instance.design, instance.weights)
        se = standard_errors(fit, instance.design, instance.weights)
        assert list(se)[:-2] == list(fit.labels)
        assert se["lambda"] == pytest.approx(fit.lam_se, rel=1e-12)

    def test_hessian_symmetry(self, instance):
        fit = fit_sdem(instance.design, instance.weights, compute_se=False)
        prof = _Profile(instance.design, instance.weights)
        H = numerical_hessian(prof.full_loglik, np.r_[fit.coefficients, fit.lam, fit.sigma2])
        assert np.max(np.abs(H - H.T)) < 1e-4 * np.max(np.abs(H))

    def test_not_pd(self, instance):
        fit = fit_sdem(instance.design, instance.weights, compute_se=False)
        with pytest.raises(InformationMatrixError, match="not PD"):
            standard_errors(replace(fit, sigma2=3 * fit.sigma2), instance.design, instance.weights)

    def test_doubling_sample(self):
        ratios = []
        for r in range(3):
            small = gen_instance(DgpConfig(n=40, m=10), stream=r)
            big = gen_instance(DgpConfig(n=40, m=20), stream=r)
            se_s = np.median(fit_sdem(small.design, small.weights).std_errors)
            se_b = np.median(fit_sdem(big.design, big.weights).std_errors)
            ratios.append(se_b / se_s)
        assert abs(np.median(ratios) / (1 / math.sqrt(2)) - 1) <= 0.15


class TestLrAic:
    def test_identical(self, instance):
        o = fit_ols(instance.design)
        t = lr_test(o, o)
        assert t.statistic == 0 and t.p_value == 1.0 and t.df == 1

    def test_negative_rejected(self, instance):
        o = fit_ols(instance.design)
        s = replace(o, loglik=o.loglik - 5.0)
        with pytest.raises(EstimationError, match="negative"):
            lr_test(o, s)

    def test_strong_dependence_detected(self):
        pvals = []
        for r in range(20):
            inst = gen_instance(DgpConfig(lam=0.8), stream=r)
            pvals.append(lr_test(fit_ols(inst.design),
                                 fit_sdem(inst.design, inst.weights, compute_se=False)).p_value)
        assert np.mean(np.array(pvals) < 0.001) >= 0.95

    @pytest.mark.parametrize("ll,k,expect", [(-4995.63, 23, 10037.26), (0.0, 1, 2.0)])
    def test_aic(self, ll, k, expect):
        assert aic(ll, k) == pytest.approx(expect, abs=1e-9)

    def test_aic_model4_rounding(self):
        assert abs(aic(-4567.91, 56) - 9247.83) <= 0.02

    def test_aic_needs_params(self):
        with pytest.raises(ValueError):
            aic(1.0, 0)


def _fake_fit(labels, blocks, coef, se):
    K = len(labels)
    cov = np.diag(np.square(se))
    return FitResult("sdem", labels, coef, se, 1.0, -10.0, K + 2, 100, 10, 10, lam=0.3, lam_se=0.03,
                     blocks=blocks, variables=labels, cov=cov)


class TestEffects:
    def test_direct_spillover_total(self):
        fit = _fake_fit((INTERCEPT, "gdp_o", "corp", "W_D corp"), ("intercept", "O", "D", "W_D.D"),
                        [1.0, 0.56, 0.26, 3.58], [0.5, 0.15, 0.07, 0.32])
        eff = {e.variable: e for e in effects_split(fit)}
        corp = eff["corp"]
        assert (corp.direct, corp.direct_stars) == (0.26, "***")
        assert (corp.spillover, corp.spillover_stars) == (3.58, "***")
        assert corp.total == pytest.approx(3.84)
        assert corp.total_se == pytest.approx(math.hypot(0.07, 0.32))
        assert eff["gdp_o"].spillover is None
        assert INTERCEPT not in eff

    def test_zero(self):
        fit = _fake_fit(("x", "W_D x"), ("D", "W_D.D"), [0.0, 0.0], [0.1, 0.1])
        (e,) = effects_split(fit)
        assert e.direct == e.spillover == e.total == 0
        assert e.direct_stars == e.spillover_stars == e.total_stars == ""

    def test_needs_spatial_fit(self, instance):
        with pytest.raises(EstimationError):
            effects_split(fit_ols(instance.design))
