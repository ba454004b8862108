"""Least-squares machinery and the four estimator variants.

The bias-corrected variants have closed-form reference implementations on
small instances (two-stage refit for j=2, explicit plug-in for j=3); the
tests compare the production paths against those.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from lspart.basis import BasisFamily, BasisSpec
from lspart.errors import ConfigError, RankDeficient, UnsupportedFamily
from lspart.fit import (
    BandedCholesky,
    EstimatorKind,
    cross_gram,
    fit_estimator,
    gram_banded,
    stack_designs,
)
from lspart.partition import KnotRule, TensorPartition


def _fit_1d(y_fn, n=300, kappa=4, m=2, m_tilde=None, family=BasisFamily.BSPLINE,
            seed=0, noise=0.0, rule=KnotRule.EVEN):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 1))
    y = y_fn(X[:, 0]) + noise * rng.standard_normal(n)
    part = TensorPartition.build(rule, [[0.0, 1.0]], kappa, data=X)
    kind = EstimatorKind.default(family, m, part, m_tilde)
    return fit_estimator(kind, X, y), X, y


class TestGram:
    def test_banded_matches_dense(self):
        fit, X, y = _fit_1d(np.sin, kappa=5, m=3)
        D = fit.design_main.dense()
        assert_allclose(fit.gram_main.dense(), D.T @ D / fit.n, atol=1e-13)

    def test_cross_matches_dense(self):
        fit, X, y = _fit_1d(np.sin, kappa=5, m=2)
        Da = fit.design_main.dense()
        Db = fit.design_bc.dense()
        assert_allclose(fit.cross_gram, Da.T @ Db / fit.n, atol=1e-13)

    def test_weighted_gram(self):
        fit, X, y = _fit_1d(np.cos, kappa=3, m=2)
        w = np.random.default_rng(1).random(fit.n)
        ab = gram_banded(fit.design_main, row_weights=w)
        K = ab.shape[1]
        dense = np.zeros((K, K))
        for off in range(ab.shape[0]):
            for c in range(K - off):
                dense[c + off, c] = dense[c, c + off] = ab[off, c]
        D = fit.design_main.dense()
        assert_allclose(dense, D.T @ (w[:, None] * D) / fit.n, atol=1e-13)

    def test_solve_and_matvec(self):
        fit, _, _ = _fit_1d(np.sin, kappa=6, m=3)
        rng = np.random.default_rng(2)
        b = rng.standard_normal(fit.gram_main.K)
        x = fit.gram_main.solve(b)
        assert_allclose(fit.gram_main.matvec(x), b, atol=1e-11)

    def test_rank_deficient_raises(self):
        # data concentrated in one cell leaves others empty
        X = np.full((30, 1), 0.11) + np.linspace(0, 0.01, 30)[:, None]
        y = np.ones(30)
        part = TensorPartition.build(KnotRule.EVEN, [[0.0, 1.0]], 6)
        kind = EstimatorKind(BasisSpec(BasisFamily.BSPLINE, 2, part))
        with pytest.raises(RankDeficient):
            fit_estimator(kind, X, y)


class TestNormalEquations:
    def test_main_and_bc(self):
        fit, _, _ = _fit_1d(np.sin, noise=0.3, kappa=5, m=2)
        D = fit.design_main.dense()
        Q = D.T @ D / fit.n
        assert_allclose(Q @ fit.beta_main, fit.rhs_main, atol=1e-12)
        Db = fit.design_bc.dense()
        Qb = Db.T @ Db / fit.n
        assert_allclose(Qb @ fit.beta_bc, fit.rhs_bc, atol=1e-12)


class TestKindValidation:
    def test_m_tilde_must_exceed_m(self):
        part = TensorPartition.build(KnotRule.EVEN, [[0, 1]], 3)
        with pytest.raises(ConfigError):
            EstimatorKind.default(BasisFamily.BSPLINE, 2, part, m_tilde=2)

    def test_j_needs_bc_basis(self):
        part = TensorPartition.build(KnotRule.EVEN, [[0, 1]], 3)
        kind = EstimatorKind(BasisSpec(BasisFamily.BSPLINE, 2, part))
        with pytest.raises(ConfigError):
            kind.require_j(2)

    def test_haar_plugin_rejected(self):
        part = TensorPartition.build(KnotRule.EVEN, [[0, 1]], 3)
        kind = EstimatorKind(
            BasisSpec(BasisFamily.HAAR, 1, part),
            BasisSpec(BasisFamily.PP, 2, part),
        )
        with pytest.raises(UnsupportedFamily):
            kind.require_j(3)


class TestTrivialFits:
    def test_constant_y_all_j(self):
        fit, _, _ = _fit_1d(lambda x: np.full_like(x, 3.25), kappa=3)
        pts = [[0.2], [0.5], [0.9]]
        for j in (0, 1, 2, 3):
            assert_allclose(fit.estimate_many(pts, j=j), 3.25, atol=1e-10)

    def test_haar_fits_cell_means(self):
        rng = np.random.default_rng(4)
        X = rng.random((200, 1))
        y = rng.standard_normal(200)
        part = TensorPartition.build(KnotRule.EVEN, [[0.0, 1.0]], 4)
        kind = EstimatorKind(BasisSpec(BasisFamily.HAAR, 1, part))
        fit = fit_estimator(kind, X, y)
        for c in range(4):
            mask = (X[:, 0] >= c / 4) & (X[:, 0] < (c + 1) / 4)
            want = y[mask].mean()
            got = fit.estimate([[c / 4 + 0.1]], j=0)
            assert got == pytest.approx(want, abs=1e-12)

    @pytest.mark.parametrize("family", [BasisFamily.BSPLINE, BasisFamily.PP])
    def test_polynomial_reproduced(self, family):
        fit, X, _ = _fit_1d(lambda x: 1.0 - 2.0 * x, m=2, family=family)
        pts = np.linspace(0.03, 0.97, 9)[:, None]
        assert_allclose(fit.estimate_many(pts, j=0), 1.0 - 2.0 * pts[:, 0], atol=1e-11)
        assert_allclose(fit.estimate_many(pts, q=[1], j=0), -2.0, atol=1e-10)


class TestJ1:
    def test_equals_direct_higher_order_fit(self):
        fit, X, y = _fit_1d(np.sin, noise=0.2, kappa=4, m=2, m_tilde=4)
        direct_kind = EstimatorKind(
            BasisSpec(BasisFamily.BSPLINE, 4, fit.kind.main_spec.partition)
        )
        direct = fit_estimator(direct_kind, X, y)
        pts = np.linspace(0.05, 0.95, 7)[:, None]
        assert_allclose(
            fit.estimate_many(pts, j=1),
            direct.estimate_many(pts, j=0),
            atol=1e-12,
        )


class TestJ2:
    def _two_stage_oracle(self, fit, pts, q=None):
        # refit-and-correct form: gamma_0' E_n[p (y - mu1)] + d^q mu1
        resid1 = fit.y - fit.design_bc.row_dot(fit.beta_bc)
        t = fit.design_main.accumulate(resid1) / fit.n
        coef = fit.gram_main.solve(t)
        main_q = fit.kind.main_spec.eval_many(pts, q)
        bc_q = fit.kind.bc_spec.eval_many(pts, q)
        return main_q.row_dot(coef) + bc_q.row_dot(fit.beta_bc)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_two_stage(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(80, 200))
        kappa = int(rng.integers(2, 5))
        fit, _, _ = _fit_1d(np.sin, n=n, kappa=kappa, noise=0.5, seed=seed)
        pts = rng.random((15, 1))
        assert_allclose(
            fit.estimate_many(pts, j=2),
            self._two_stage_oracle(fit, pts),
            atol=1e-10,
        )

    def test_matches_two_stage_derivative(self):
        fit, _, _ = _fit_1d(np.sin, kappa=4, m=3, noise=0.3, seed=11)
        pts = np.random.default_rng(3).random((10, 1))
        assert_allclose(
            fit.estimate_many(pts, q=[1], j=2),
            self._two_stage_oracle(fit, pts, q=(1,)),
            atol=1e-9,
        )

    def test_pp_nested_equals_j1(self):
        # piecewise polynomials nest across orders on a shared partition,
        # so the projection correction vanishes identically
        for rule in (KnotRule.EVEN, KnotRule.QUANTILE):
            fit, _, _ = _fit_1d(
                np.sin, family=BasisFamily.PP, noise=0.4, rule=rule, seed=7
            )
            pts = np.linspace(0.02, 0.98, 21)[:, None]
            assert_allclose(
                fit.estimate_many(pts, j=2),
                fit.estimate_many(pts, j=1),
                atol=1e-8,
            )

    def test_bspline_not_nested(self):
        fit, _, _ = _fit_1d(np.sin, noise=0.4, seed=9)
        pts = np.linspace(0.02, 0.98, 21)[:, None]
        gap = np.max(np.abs(fit.estimate_many(pts, j=2) - fit.estimate_many(pts, j=1)))
        assert gap > 1e-6


class TestJ3:
    @pytest.mark.parametrize(
        "family,rule",
        [
            (BasisFamily.BSPLINE, KnotRule.EVEN),
            (BasisFamily.PP, KnotRule.EVEN),
            (BasisFamily.PP, KnotRule.QUANTILE),
        ],
    )
    def test_quadratic_recovered_exactly(self, family, rule):
        # with m=2 the plug-in correction removes the entire approximation
        # error of a noiseless quadratic (its Taylor expansion is exact and
        # the corrected function lies in the span)
        fit, _, _ = _fit_1d(lambda x: x**2, m=2, family=family, rule=rule, seed=5)
        pts = np.linspace(0.04, 0.96, 17)[:, None]
        assert_allclose(fit.estimate_many(pts, j=3), pts[:, 0] ** 2, atol=1e-10)
        assert_allclose(
            fit.estimate_many(pts, q=[1], j=3), 2.0 * pts[:, 0], atol=1e-9
        )

    def test_uncorrected_quadratic_biased(self):
        fit, _, _ = _fit_1d(lambda x: x**2, m=2, kappa=4, seed=5)
        mid = fit.estimate([[0.125]], j=0)  # cell midpoint
        assert abs(mid - 0.125**2) > 1e-4

    def test_explicit_plugin_oracle(self):
        fit, _, _ = _fit_1d(np.sin, noise=0.3, kappa=4, seed=13)
        pts = np.random.default_rng(1).random((12, 1))
        from lspart.biascorrect import leading_bias_many, projected_bias_term_many

        ref = (
            fit.estimate_many(pts, j=0)
            - leading_bias_many(fit, pts)
            + projected_bias_term_many(fit, pts)
        )
        assert_allclose(fit.estimate_many(pts, j=3), ref, atol=1e-11)


class TestGammaIdentity:
    @pytest.mark.parametrize("j", [0, 1, 2, 3])
    def test_estimate_equals_gamma_dot_rhs(self, j):
        fit, _, _ = _fit_1d(np.sin, noise=0.4, kappa=4, m=2, seed=17)
        pts = np.random.default_rng(2).random((9, 1))
        gamma = fit.gamma_many(pts, j=j)
        assert gamma.shape[1] == fit.design_for(j).K
        assert_allclose(
            gamma @ fit.rhs_for(j), fit.estimate_many(pts, j=j), atol=1e-10
        )

    @pytest.mark.parametrize("j", [0, 2, 3])
    def test_derivative_gamma_identity(self, j):
        fit, _, _ = _fit_1d(np.sin, noise=0.2, kappa=3, m=3, seed=19)
        pts = np.random.default_rng(4).random((6, 1))
        gamma = fit.gamma_many(pts, q=[1], j=j)
        assert_allclose(
            gamma @ fit.rhs_for(j),
            fit.estimate_many(pts, q=[1], j=j),
            atol=1e-9,
        )

    def test_fitted_matches_estimate_at_sample(self):
        fit, X, _ = _fit_1d(np.sin, noise=0.4, kappa=4, seed=23)
        for j in (0, 1, 2, 3):
            assert_allclose(
                fit.fitted(j), fit.estimate_many(X, j=j), atol=1e-10
            )


class TestStackAndLeverage:
    def test_stacked_design_layout(self):
        fit, _, _ = _fit_1d(np.sin, kappa=3)
        stacked = stack_designs(fit.design_main, fit.design_bc)
        D = stacked.dense()
        assert_allclose(D[:, : fit.design_main.K], fit.design_main.dense())
        assert_allclose(D[:, fit.design_main.K :], fit.design_bc.dense())

    def test_leverage_oracle_j0(self):
        fit, _, _ = _fit_1d(np.sin, n=120, kappa=3, seed=29)
        D = fit.design_main.dense()
        H = D @ np.linalg.solve(D.T @ D, D.T)
        assert_allclose(fit.leverage(0), np.diag(H), atol=1e-10)
        assert np.sum(fit.leverage(0)) == pytest.approx(fit.design_main.K, abs=1e-8)

    def test_leverage_oracle_stacked(self):
        fit, _, _ = _fit_1d(np.sin, n=120, kappa=3, seed=31)
        D = fit.design_for(2).dense()
        H = D @ np.linalg.pinv(D)
        assert_allclose(fit.leverage(2), np.diag(H), atol=1e-8)


class TestCrossGramFunction:
    def test_mismatched_samples(self):
        fit, _, _ = _fit_1d(np.sin, n=50, kappa=2)
        other, _, _ = _fit_1d(np.sin, n=60, kappa=2)
        with pytest.raises(ConfigError):
            cross_gram(fit.design_main, other.design_main)
