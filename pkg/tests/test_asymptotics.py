import numpy as np
import pytest
from numpy.testing import assert_allclose

from vinefit import (
    EfficiencyConfig,
    MarginFamily,
    MarginModel,
    VineSkeleton,
    bootstrap_se,
    efficiency_study,
    fit_ml,
    fit_ssp,
    make_spec,
    marg_quantile,
    ml_fisher_ci,
    partial_jacobian,
    partial_to_plain,
    plain_to_partial,
    pseudo_observations,
    simulate,
    ssp_sandwich,
    ssp_sandwich_parts,
    trivariate_gaussian_analytic,
)
from vinefit.asymptotics import score_matrix
from vinefit.exceptions import DomainError, UnsupportedDimensionError


class TestAnalyticOracle:
    def test_identity_at_zero_correlations(self):
        o = trivariate_gaussian_analytic(0.0, 0.0, 0.0)
        assert_allclose(o.v_ml, np.eye(3), atol=1e-15)
        assert_allclose(o.v_ssp, np.eye(3), atol=1e-15)

    def test_known_diagonal_entry(self):
        o = trivariate_gaussian_analytic(0.5, 0.5, 0.3)
        assert_allclose(o.v_ml[0, 0], 0.5625, rtol=1e-14)

    def test_v_ssp_equals_v_ml_on_random_pd_inputs(self):
        rng = np.random.default_rng(42)
        checked = 0
        while checked < 50:
            r = rng.uniform(-0.95, 0.95, size=3)
            det = 1 + 2 * r[0] * r[1] * r[2] - np.sum(r**2)
            if det <= 0.01:
                continue
            checked += 1
            o = trivariate_gaussian_analytic(*r)
            assert np.max(np.abs(o.v_ssp - o.v_ml)) < 1e-10

    def test_block_structure(self):
        o = trivariate_gaussian_analytic(0.4, 0.6, 0.2)
        # K: levels do not mix; J: nothing above the diagonal
        assert o.k_theta[0, 2] == 0.0 and o.k_theta[1, 2] == 0.0
        assert o.j_theta[0, 1] == 0.0 and o.j_theta[0, 2] == 0.0 and o.j_theta[1, 2] == 0.0

    def test_non_pd_rejected(self):
        with pytest.raises(DomainError):
            trivariate_gaussian_analytic(0.9, 0.9, -0.9)

    def test_partial_correlation_round_trip(self):
        r12, r23, r13 = 0.5, -0.3, 0.2
        p = plain_to_partial(r12, r23, r13)
        assert_allclose(partial_to_plain(r12, r23, p), r13, rtol=1e-14)


class TestSandwich:
    def test_gaussian_d2_at_independence(self):
        spec = make_spec("dvine", ["gaussian"], [0.0])
        u = pseudo_observations(simulate(spec, 8000, seed=1))
        cov = ssp_sandwich(u, spec, mc_points=2**15, seed=2)
        # asymptotic variance of rho-hat is (1 - rho^2)^2 = 1
        assert abs(cov.matrix[0, 0] - 1.0) < 0.15

    def test_matches_analytic_at_moderate_sample(self):
        r12, r23, r13 = 0.5, 0.5, 0.3
        spec = make_spec("dvine", ["gaussian"] * 3, [r12, r23, plain_to_partial(r12, r23, r13)])
        u = pseudo_observations(simulate(spec, 4000, seed=3))
        cov = ssp_sandwich(u, spec, mc_points=2**15, seed=4)
        g = partial_jacobian(r12, r23, plain_to_partial(r12, r23, r13))
        v_plain = g @ cov.matrix @ g.T
        oracle = trivariate_gaussian_analytic(r12, r23, r13).v_ssp
        assert np.max(np.abs(v_plain - oracle) / np.abs(oracle)) < 0.30

    def test_dimension_guard(self, rng):
        spec = make_spec("dvine", ["gaussian"] * 6, [0.2] * 6)
        with pytest.raises(UnsupportedDimensionError):
            ssp_sandwich(rng.random((100, 4)), spec)

    def test_k_hat_psd_and_j_hat_triangular(self):
        spec = make_spec("dvine", ["gumbel"] * 3, [1.5, 1.7, 1.2])
        u = pseudo_observations(simulate(spec, 2000, seed=5))
        fitted = fit_ssp(u, VineSkeleton("dvine", 3, ["gumbel"] * 3)).spec
        parts = ssp_sandwich_parts(u, fitted, mc_points=2**13, seed=6)
        eig = np.linalg.eigvalsh(parts.k_hat)
        assert np.min(eig) >= -1e-10
        # blocks above the diagonal vanish identically: deeper-level parameters
        # cannot move shallower-level scores
        assert parts.j_hat[0, 1] == 0.0
        assert parts.j_hat[0, 2] == 0.0 and parts.j_hat[1, 2] == 0.0

    def test_sample_k_cross_blocks_vanish_with_n(self):
        r12, r23, r13 = 0.5, 0.5, 0.3
        spec = make_spec("dvine", ["gaussian"] * 3, [r12, r23, plain_to_partial(r12, r23, r13)])
        u = pseudo_observations(simulate(spec, 10_000, seed=7))
        phi = score_matrix(spec, u)
        k = phi.T @ phi / u.n
        cross = np.linalg.norm(k[:2, 2])
        diag_norm = np.linalg.norm(k[:2, :2])
        assert cross < 0.25 * diag_norm

    def test_mean_score_vanishes_at_ssp_estimate(self):
        spec = make_spec("dvine", ["gaussian"] * 3, [0.4, 0.5, 0.2])
        u = pseudo_observations(simulate(spec, 3000, seed=8))
        fitted = fit_ssp(u, VineSkeleton("dvine", 3, ["gaussian"] * 3)).spec
        assert np.max(np.abs(score_matrix(fitted, u).mean(axis=0))) < 1e-4


class TestBootstrap:
    def test_deterministic(self):
        spec = make_spec("dvine", ["gaussian"], [0.5])
        u = pseudo_observations(simulate(spec, 500, seed=9))
        f = fit_ssp(u, VineSkeleton("dvine", 2, ["gaussian"]))
        a = bootstrap_se(f, n_boot=50, seed=3)
        b = bootstrap_se(f, n_boot=50, seed=3)
        assert np.array_equal(a.se, b.se)
        assert np.array_equal(a.ci, b.ci)

    def test_gaussian_d2_se_matches_asymptotics(self):
        rho, n = 0.5, 2000
        spec = make_spec("dvine", ["gaussian"], [rho])
        u = pseudo_observations(simulate(spec, n, seed=10))
        f = fit_ssp(u, VineSkeleton("dvine", 2, ["gaussian"]))
        boot = bootstrap_se(f, n_boot=300, seed=11)
        target = (1 - rho**2) / np.sqrt(n)
        assert abs(boot.se[0] - target) / target < 0.20
        assert_allclose(boot.ci[0].mean(), f.theta[0], rtol=1e-12)

    def test_one_over_sqrt_n_scaling(self):
        rho = 0.5
        spec = make_spec("dvine", ["gaussian"], [rho])
        skel = VineSkeleton("dvine", 2, ["gaussian"])
        ses = {}
        for n in (1000, 4000):
            u = pseudo_observations(simulate(spec, n, seed=12))
            ses[n] = bootstrap_se(fit_ssp(u, skel), n_boot=200, seed=13).se[0]
        assert 0.42 <= ses[4000] / ses[1000] <= 0.58

    def test_ifm_bootstrap_round_trips_margins(self):
        spec = make_spec("dvine", ["gumbel"], [2.0])
        m = MarginModel(MarginFamily.EXPONENTIAL, (1.3,))
        u = simulate(spec, 800, seed=14)
        x = np.column_stack([marg_quantile(m, u[:, j]) for j in range(2)])
        from vinefit import fit_ifm

        f = fit_ifm(x, ["exponential"] * 2, VineSkeleton("dvine", 2, ["gumbel"]))
        boot = bootstrap_se(f, n_boot=60, seed=15)
        assert boot.se.shape == (1,)
        assert boot.se_margins is not None and boot.se_margins.shape == (2,)
        assert boot.n_failed == 0


class TestMlFisher:
    def test_d2_independence_se(self):
        n = 4000
        spec = make_spec("dvine", ["gaussian"], [0.0])
        u = simulate(spec, n, seed=16)
        x = np.column_stack(
            [marg_quantile(MarginModel(MarginFamily.NORMAL, (1.0,)), u[:, j]) for j in range(2)]
        )
        f = fit_ml(x, ["normal"] * 2, VineSkeleton("dvine", 2, ["gaussian"]))
        ci = ml_fisher_ci(f, x)
        assert abs(ci["se"][0] - 1.0 / np.sqrt(n)) / (1.0 / np.sqrt(n)) < 0.15
        assert_allclose(ci["ci"][0].mean(), f.theta[0], atol=1e-12)

    def test_d3_matches_analytic_variances(self):
        r12, r23, r13 = 0.5, 0.5, 0.3
        n = 10_000
        p132 = plain_to_partial(r12, r23, r13)
        spec = make_spec("dvine", ["gaussian"] * 3, [r12, r23, p132])
        u = simulate(spec, n, seed=17)
        x = np.column_stack(
            [marg_quantile(MarginModel(MarginFamily.NORMAL, (1.0,)), u[:, j]) for j in range(3)]
        )
        f = fit_ml(x, ["normal"] * 3, VineSkeleton("dvine", 3, ["gaussian"] * 3))
        ci = ml_fisher_ci(f, x)
        # analytic covariance lives on the plain-correlation scale; map it to
        # the vine parameterization before comparing
        v_plain = trivariate_gaussian_analytic(r12, r23, r13).v_ml
        g_inv = np.linalg.inv(partial_jacobian(r12, r23, p132))
        v_vine = g_inv @ v_plain @ g_inv.T
        target = np.sqrt(np.diag(v_vine) / n)
        assert np.max(np.abs(ci["se"] - target) / target) < 0.15

    def test_requires_ml_fit(self):
        spec = make_spec("dvine", ["gaussian"], [0.3])
        u = pseudo_observations(simulate(spec, 300, seed=18))
        f = fit_ssp(u, VineSkeleton("dvine", 2, ["gaussian"]))
        with pytest.raises(DomainError):
            ml_fisher_ci(f, np.random.rand(300, 2))


class TestEfficiencyStudy:
    def test_sp_equals_ssp_exactly_at_two_dims(self):
        config = EfficiencyConfig(
            spec=make_spec("dvine", ["gaussian"], [0.5]),
            margins=[MarginModel(MarginFamily.NORMAL, (1.0,))] * 2,
            n=400,
            n_replicates=40,
            estimators=("ml", "ifm", "sp", "ssp"),
            seed=19,
        )
        res = efficiency_study(config)
        assert_allclose(res.efficiency["sp"], res.efficiency["ssp"], rtol=0, atol=0)
        assert res.n_failed == {m: 0 for m in res.estimators}

    def test_requires_ml(self):
        config = EfficiencyConfig(
            spec=make_spec("dvine", ["gaussian"], [0.5]),
            margins=[MarginModel(MarginFamily.NORMAL, (1.0,))] * 2,
            n=200,
            n_replicates=5,
            estimators=("sp", "ssp"),
        )
        with pytest.raises(DomainError):
            efficiency_study(config)

    def test_gaussian_ssp_efficiency_near_one(self):
        # stepwise estimation is semiparametrically efficient for the
        # Gaussian copula, so the ratio should be close to 1
        r12, r23, r13 = 0.5, 0.5, 0.3
        config = EfficiencyConfig(
            spec=make_spec("dvine", ["gaussian"] * 3, [r12, r23, plain_to_partial(r12, r23, r13)]),
            margins=[MarginModel(MarginFamily.NORMAL, (1.0,))] * 3,
            n=1000,
            n_replicates=150,
            estimators=("ml", "ssp"),
            seed=20,
            n_jobs=2,
        )
        res = efficiency_study(config)
        assert np.all(np.abs(res.efficiency["ssp"] - 1.0) < 0.05)


class TestFailurePolicy:
    def test_bootstrap_rejects_too_many_failures(self, monkeypatch):
        from vinefit import asymptotics
        from vinefit.exceptions import VinefitError

        spec = make_spec("dvine", ["gaussian"], [0.4])
        u = pseudo_observations(simulate(spec, 300, seed=23))
        f = fit_ssp(u, VineSkeleton("dvine", 2, ["gaussian"]))

        calls = {"n": 0}
        original = asymptotics._refit_like

        def flaky(fit, skeleton, margin_families, u_sim):
            calls["n"] += 1
            if calls["n"] % 3 == 0:  # one third fails: above the 10% cap
                raise VinefitError("injected failure")
            return original(fit, skeleton, margin_families, u_sim)

        monkeypatch.setattr(asymptotics, "_refit_like", flaky)
        with pytest.raises(VinefitError, match="replicates failed"):
            bootstrap_se(f, n_boot=30, seed=24)

    def test_bootstrap_skips_rare_failures(self, monkeypatch):
        from vinefit import asymptotics
        from vinefit.exceptions import VinefitError

        spec = make_spec("dvine", ["gaussian"], [0.4])
        u = pseudo_observations(simulate(spec, 300, seed=25))
        f = fit_ssp(u, VineSkeleton("dvine", 2, ["gaussian"]))

        calls = {"n": 0}
        original = asymptotics._refit_like

        def flaky(fit, skeleton, margin_families, u_sim):
            calls["n"] += 1
            if calls["n"] == 5:  # a single failure: skipped, not fatal
                raise VinefitError("injected failure")
            return original(fit, skeleton, margin_families, u_sim)

        monkeypatch.setattr(asymptotics, "_refit_like", flaky)
        res = bootstrap_se(f, n_boot=30, seed=26)
        assert res.n_failed == 1
        assert res.replicate_thetas.shape[0] == 29


class TestSandwichBoundary:
    def test_gumbel_near_independence_uses_one_sided_steps(self):
        # delta-hat sits at the lower domain edge, so the theta perturbations
        # must fall back to one-sided differences instead of erroring
        rng = np.random.default_rng(77)
        u = pseudo_observations(rng.random((1500, 2)))
        fitted = fit_ssp(u, VineSkeleton("dvine", 2, ["gumbel"])).spec
        assert fitted.edge(1, 1).params[0] < 1.001
        cov = ssp_sandwich(u, fitted, mc_points=2**12, seed=9)
        assert np.all(np.isfinite(cov.matrix))
