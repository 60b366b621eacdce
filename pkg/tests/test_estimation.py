import numpy as np
import pytest
from numpy.testing import assert_allclose

from vinefit import (
    MarginFamily,
    MarginModel,
    VineSkeleton,
    fit,
    fit_ifm,
    fit_ml,
    fit_sp,
    fit_ssp,
    make_spec,
    marg_quantile,
    pseudo_observations,
    simulate,
    trivariate_gaussian_analytic,
    partial_to_plain,
    plain_to_partial,
    vine_log_density,
)
from vinefit.copulas import log_density
from vinefit.exceptions import DomainError, EdgeFitError, ParameterCapError
from vinefit.optimize import numerical_gradient

GUMBEL3 = VineSkeleton("dvine", 3, ["gumbel"] * 3)
GAUSS3 = VineSkeleton("dvine", 3, ["gaussian"] * 3)
EXP = MarginModel(MarginFamily.EXPONENTIAL, (1.0,))


def draw_gumbel3(n, seed, delta=(1.2, 1.2, 1.2)):
    spec = make_spec("dvine", ["gumbel"] * 3, list(delta))
    u = simulate(spec, n, seed=seed)
    x = np.column_stack([marg_quantile(EXP, u[:, j]) for j in range(3)])
    return x, pseudo_observations(x)


class TestSSP:
    def test_matches_sp_at_two_dims(self):
        for seed, fam, params in [
            (1, "gaussian", [0.5]),
            (2, "gumbel", [2.0]),
            (3, "t", [0.4, 6.0]),
        ]:
            spec = make_spec("dvine", [fam], params)
            u = pseudo_observations(simulate(spec, 800, seed=seed))
            skel = VineSkeleton("dvine", 2, [fam])
            a = fit_ssp(u, skel)
            b = fit_sp(u, skel)
            assert np.max(np.abs(a.theta - b.theta)) < 1e-8
            assert a.loglik == b.loglik

    def test_gaussian_recovery_within_analytic_bands(self):
        r12, r23, r13 = 0.5, 0.5, 0.3
        n = 5000
        spec = make_spec("dvine", ["gaussian"] * 3, [r12, r23, plain_to_partial(r12, r23, r13)])
        fitres = fit_ssp(pseudo_observations(simulate(spec, n, seed=6)), GAUSS3)
        est_plain = np.array(
            [
                fitres.theta[0],
                fitres.theta[1],
                partial_to_plain(fitres.theta[0], fitres.theta[1], fitres.theta[2]),
            ]
        )
        se = np.sqrt(np.diag(trivariate_gaussian_analytic(r12, r23, r13).v_ssp) / n)
        assert np.all(np.abs(est_plain - np.array([r12, r23, r13])) < 3 * se)

    def test_all_independence_skeleton(self, rng):
        skel = VineSkeleton("dvine", 3, ["indep"] * 3)
        res = fit_ssp(pseudo_observations(rng.random((100, 3))), skel)
        assert res.theta.size == 0
        assert res.loglik == 0.0
        assert res.converged

    def test_estimating_equations_hold_per_edge(self):
        # the per-edge score of the summed log density vanishes at the estimate
        _, u = draw_gumbel3(2000, seed=9, delta=(1.5, 1.8, 1.3))
        res = fit_ssp(u, GUMBEL3)
        from vinefit.vine import level_arguments, theta_slices

        args = level_arguments(res.spec, u)
        for j, i, sl in theta_slices(res.spec):
            a1, a2 = args[j - 1][i - 1]
            edge = res.spec.edge(i, j)

            def edge_sum(t):
                cop = type(edge)(edge.family, tuple(t))
                return float(np.sum(log_density(cop, a1, a2)))

            grad = numerical_gradient(edge_sum, np.array(edge.params))
            assert np.max(np.abs(grad)) < 1e-4

    def test_level_one_invariant_to_monotone_data_transforms(self):
        x, _ = draw_gumbel3(400, seed=13)
        warped = np.column_stack([np.exp(x[:, 0]), x[:, 1] ** 3, np.sqrt(x[:, 2])])
        a = fit_ssp(pseudo_observations(x), GUMBEL3)
        b = fit_ssp(pseudo_observations(warped), GUMBEL3)
        level1 = slice(0, 2)
        assert np.array_equal(a.theta[level1], b.theta[level1])

    def test_edge_failure_is_tagged(self):
        # both columns of the first edge constant: degenerate pair data
        u = np.column_stack(
            [np.full(50, 0.5), np.full(50, 0.5), np.linspace(0.1, 0.9, 50)]
        )
        with pytest.raises(EdgeFitError) as err:
            fit_ssp(u, GUMBEL3)
        assert err.value.level == 1
        assert err.value.edge == 1


class TestSP:
    def test_loglik_dominates_ssp(self):
        _, u = draw_gumbel3(5000, seed=21, delta=(1.4, 1.4, 1.4))
        ssp = fit_ssp(u, GUMBEL3)
        sp = fit_sp(u, GUMBEL3)
        assert sp.loglik >= ssp.loglik - 1e-6

    def test_parameter_cap(self, rng):
        d = 12  # 66 one-parameter edges exceeds the default cap of 60
        skel = VineSkeleton("dvine", d, ["gaussian"] * (d * (d - 1) // 2))
        u = pseudo_observations(rng.random((300, d)))
        with pytest.raises(ParameterCapError):
            fit_sp(u, skel)

    def test_ssp_has_no_cap(self, rng):
        d = 12
        skel = VineSkeleton("dvine", d, ["gaussian"] * (d * (d - 1) // 2))
        u = pseudo_observations(rng.random((300, d)))
        res = fit_ssp(u, skel)
        assert res.theta.size == 66
        assert np.all(np.abs(res.theta) < 0.35)  # independent data


class TestIFM:
    def test_gaussian_margins_match_ml_exactly(self):
        spec = make_spec("dvine", ["gaussian"], [0.5])
        u = simulate(spec, 10_000, seed=17)
        x = np.column_stack(
            [marg_quantile(MarginModel(MarginFamily.NORMAL, (1.0,)), u[:, j]) for j in range(2)]
        )
        skel = VineSkeleton("dvine", 2, ["gaussian"])
        ifm = fit_ifm(x, ["normal"] * 2, skel)
        ml = fit_ml(x, ["normal"] * 2, skel)
        s = x.T @ x / x.shape[0]
        score_corr = s[0, 1] / np.sqrt(s[0, 0] * s[1, 1])
        assert abs(ifm.theta[0] - score_corr) < 1e-6
        assert abs(ifm.theta[0] - ml.theta[0]) < 1e-6

    def test_exponential_gumbel_recovery(self):
        # band is 3x the Monte Carlo SD of delta-hat at this configuration
        spec = make_spec("dvine", ["gumbel"], [2.0])
        u = simulate(spec, 5000, seed=104)
        x = np.column_stack([marg_quantile(EXP, u[:, j]) for j in range(2)])
        res = fit_ifm(x, ["exponential"] * 2, VineSkeleton("dvine", 2, ["gumbel"]))
        assert abs(res.theta[0] - 2.0) < 0.06
        assert_allclose(res.margins[0].params[0], 1.0 / x[:, 0].mean(), rtol=1e-12)

    def test_misspecified_margins_pull_ifm_away_from_sp(self):
        # gengamma data fitted with exponential margins: IFM and SP disagree
        # by more than 2 SP standard errors in at least half the replicates
        true_m = MarginModel(MarginFamily.GENGAMMA, (2.0, 1.0, 0.6))
        spec = make_spec("dvine", ["gumbel"], [3.0])
        skel = VineSkeleton("dvine", 2, ["gumbel"])
        diffs, sp_vals = [], []
        for rep in range(20):
            u = simulate(spec, 2000, seed=500 + rep)
            x = np.column_stack([marg_quantile(true_m, u[:, j]) for j in range(2)])
            ifm = fit_ifm(x, ["exponential"] * 2, skel)
            sp = fit_sp(pseudo_observations(x), skel)
            diffs.append(ifm.theta[0] - sp.theta[0])
            sp_vals.append(sp.theta[0])
        se = np.std(sp_vals, ddof=1)
        assert np.mean(np.abs(diffs) > 2 * se) >= 0.5


class TestML:
    def test_gaussian_vine_matches_empirical_correlations(self):
        r12, r23, r13 = 0.5, 0.3, 0.4
        spec = make_spec("dvine", ["gaussian"] * 3, [r12, r23, plain_to_partial(r12, r23, r13)])
        u = simulate(spec, 10_000, seed=42)
        x = np.column_stack(
            [marg_quantile(MarginModel(MarginFamily.NORMAL, (1.0,)), u[:, j]) for j in range(3)]
        )
        res = fit_ml(x, ["normal"] * 3, GAUSS3)
        s = x.T @ x / x.shape[0]
        dd = np.sqrt(np.diag(s))
        r = s / np.outer(dd, dd)
        expected = np.array([r[0, 1], r[1, 2], plain_to_partial(r[0, 1], r[1, 2], r[0, 2])])
        assert np.max(np.abs(res.theta - expected)) < 1e-6
        assert_allclose([m.params[0] for m in res.margins], dd, atol=1e-6)

    def test_dominates_ifm_plugin_loglik(self):
        spec = make_spec("dvine", ["gumbel"], [2.0])
        u = simulate(spec, 2000, seed=31)
        x = np.column_stack([marg_quantile(EXP, u[:, j]) for j in range(2)])
        skel = VineSkeleton("dvine", 2, ["gumbel"])
        ifm = fit_ifm(x, ["exponential"] * 2, skel)
        ml = fit_ml(x, ["exponential"] * 2, skel)
        assert ml.loglik >= ifm.loglik - 1e-6

    def test_parameter_cap_counts_margins(self, rng):
        d = 12
        skel = VineSkeleton("dvine", d, ["gaussian"] * 66)
        x = rng.normal(size=(300, d))
        with pytest.raises(ParameterCapError):
            fit_ml(x, ["normal"] * d, skel)

    @pytest.mark.slow
    def test_rmse_within_ten_percent_of_ssp(self):
        # ML cannot do much better than SSP at this weak-dependence config
        truth = np.array([1.2, 1.2, 1.2])
        errs = {"ml": [], "ssp": []}
        for rep in range(200):
            x, u = draw_gumbel3(2000, seed=40_000 + rep)
            errs["ssp"].append(fit_ssp(u, GUMBEL3).theta - truth)
            errs["ml"].append(fit_ml(x, ["exponential"] * 3, GUMBEL3).theta - truth)
        rmse_ml = np.sqrt(np.mean(np.square(errs["ml"]), axis=0))
        rmse_ssp = np.sqrt(np.mean(np.square(errs["ssp"]), axis=0))
        assert np.all(rmse_ml <= 1.1 * rmse_ssp)


class TestDispatchAndChain:
    def test_unknown_method(self):
        with pytest.raises(DomainError):
            fit("mle", u=np.random.rand(50, 2), skeleton=VineSkeleton("dvine", 2, ["gaussian"]))

    def test_monotone_likelihood_chain(self):
        x, u = draw_gumbel3(2000, seed=77, delta=(1.5, 1.5, 1.3))
        ssp = fit_ssp(u, GUMBEL3)
        sp = fit_sp(u, GUMBEL3)
        ifm = fit_ifm(x, ["exponential"] * 3, GUMBEL3)
        ml = fit_ml(x, ["exponential"] * 3, GUMBEL3)
        assert sp.loglik >= ssp.loglik - 1e-6
        assert ml.loglik >= ifm.loglik - 1e-6

    def test_pseudo_loglik_is_vine_log_density_sum(self):
        _, u = draw_gumbel3(500, seed=55)
        res = fit_ssp(u, GUMBEL3)
        assert_allclose(res.loglik, float(np.sum(vine_log_density(res.spec, u.u))), rtol=1e-10)


class TestCVine:
    def test_ssp_recovers_cvine_parameters(self):
        params = [1.6, 1.4, 1.3, 0.4, 0.2, 1.2]
        spec = make_spec("cvine", ["gumbel", "gumbel", "gumbel", "gaussian", "gaussian", "gumbel"], params)
        u = pseudo_observations(simulate(spec, 8000, seed=61))
        skel = VineSkeleton("cvine", 4, spec.families)
        res = fit_ssp(u, skel)
        assert np.max(np.abs(res.theta - np.array(params))) < 0.12
        assert res.converged

    def test_sp_dominates_ssp_on_cvine(self):
        spec = make_spec("cvine", ["gaussian"] * 3, [0.5, 0.4, 0.3])
        u = pseudo_observations(simulate(spec, 3000, seed=62))
        skel = VineSkeleton("cvine", 3, ["gaussian"] * 3)
        ssp = fit_ssp(u, skel)
        sp = fit_sp(u, skel)
        assert sp.loglik >= ssp.loglik - 1e-6
        assert np.max(np.abs(sp.theta - ssp.theta)) < 0.05


def test_ifm_tags_margin_step_errors():
    from vinefit.exceptions import SupportError

    x = np.column_stack([np.linspace(-1, 1, 50), np.linspace(0.1, 2, 50)])
    with pytest.raises(SupportError, match="column 1"):
        fit_ifm(x, ["exponential", "exponential"], VineSkeleton("dvine", 2, ["gumbel"]))
