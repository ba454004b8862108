"""Selector constants and the two partition-size rules."""

import math

import numpy as np
import pytest

from lspart.basis import BasisFamily
from lspart.errors import ConfigError, DegenerateData
from lspart.fit import EstimatorKind, fit_estimator
from lspart.inference import sigma_hat
from lspart.partition import KnotRule, TensorPartition
from lspart.tuning import (
    TuningReport,
    dpi_select,
    eta_constant,
    imse_components,
    rot_select,
)


class TestEta:
    def test_bspline_order2(self):
        # int (B_2(z)/2!)^2 dz = (1/180)/4
        got = eta_constant(BasisFamily.BSPLINE, 2, (2,), (2,))
        assert got == pytest.approx(1 / 720, abs=1e-12)

    def test_pp_order1(self):
        # int ((2z-1)/2)^2 dz = 1/12
        got = eta_constant(BasisFamily.PP, 1, (1,), (1,))
        assert got == pytest.approx(1 / 12, abs=1e-12)

    def test_bspline_order1_matches_pp(self):
        a = eta_constant(BasisFamily.BSPLINE, 1, (1,), (1,))
        b = eta_constant(BasisFamily.PP, 1, (1,), (1,))
        assert a == pytest.approx(b, abs=1e-14)
        assert a == pytest.approx(1 / 12, abs=1e-12)

    def test_bspline_order3(self):
        # int (B_3(z)/3!)^2 dz = (1/840)/36
        got = eta_constant(BasisFamily.BSPLINE, 3, (3,), (3,))
        assert got == pytest.approx(1 / 30240, abs=1e-14)

    def test_cross_terms_2d(self):
        # P_2 integrates to zero, so disjoint-axis indices are orthogonal
        got = eta_constant(BasisFamily.PP, 2, (2, 0), (0, 2))
        assert got == pytest.approx(0.0, abs=1e-14)
        diag = eta_constant(BasisFamily.PP, 2, (2, 0), (2, 0))
        assert diag == pytest.approx(1 / 720, abs=1e-12)
        mixed = eta_constant(BasisFamily.PP, 2, (1, 1), (1, 1))
        assert mixed == pytest.approx(1 / 144, abs=1e-12)

    def test_symmetry(self):
        a = eta_constant(BasisFamily.PP, 2, (2, 0), (1, 1))
        b = eta_constant(BasisFamily.PP, 2, (1, 1), (2, 0))
        assert a == pytest.approx(b, abs=1e-15)

    def test_derivative_target(self):
        # shape for q = 1 at order 2 is B_1(z) = z - 1/2
        got = eta_constant(BasisFamily.BSPLINE, 2, (2,), (2,), q=(1,))
        assert got == pytest.approx(1 / 12, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ConfigError):
            eta_constant(BasisFamily.PP, 2, (2,), (2, 0))


def _curve_sample(n, seed=0, noise=0.5):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 1))
    y = np.sin(2 * np.pi * X[:, 0]) + noise * rng.standard_normal(n)
    return X, y


class TestRot:
    def test_report_fields(self):
        X, y = _curve_sample(600)
        rep = rot_select(X, y, BasisFamily.BSPLINE, 2)
        assert isinstance(rep, TuningReport)
        assert rep.kappa_rot >= 1
        assert rep.kappa_dpi is None
        assert rep.selected() == rep.kappa_rot
        assert rep.prelim_degree == 6
        assert rep.n == 600
        assert rep.variance_constant > 0
        assert ((2,), (2,), (0,)) in rep.eta_table

    def test_linear_truth_gives_one_cell(self):
        rng = np.random.default_rng(2)
        X = rng.random((400, 1))
        y = 1.0 + 2.0 * X[:, 0]
        rep = rot_select(X, y, BasisFamily.BSPLINE, 2)
        assert rep.kappa_rot == 1

    def test_sample_size_scaling(self):
        # kappa grows like n^(1/(2m+d)); a 32-fold n step should double it
        X1, y1 = _curve_sample(1000, seed=7)
        X2, y2 = _curve_sample(32000, seed=8)
        k1 = rot_select(X1, y1, BasisFamily.BSPLINE, 2).kappa_rot
        k2 = rot_select(X2, y2, BasisFamily.BSPLINE, 2).kappa_rot
        assert 1.5 <= k2 / k1 <= 2.7

    def test_response_scale_invariance(self):
        X, y = _curve_sample(800, seed=4)
        a = rot_select(X, y, BasisFamily.BSPLINE, 2)
        b = rot_select(X, 3.7 * y, BasisFamily.BSPLINE, 2)
        assert a.kappa_rot == b.kappa_rot

    def test_deterministic(self):
        X, y = _curve_sample(500, seed=9)
        a = rot_select(X, y, BasisFamily.PP, 2)
        b = rot_select(X, y, BasisFamily.PP, 2)
        assert a.kappa_rot == b.kappa_rot
        assert a.bias_constant == b.bias_constant

    def test_derivative_order_guard(self):
        X, y = _curve_sample(300)
        with pytest.raises(ConfigError):
            rot_select(X, y, BasisFamily.BSPLINE, 2, q=(2,))

    def test_degenerate_support(self):
        X = np.full((100, 1), 0.5)
        y = np.zeros(100)
        with pytest.raises(DegenerateData):
            rot_select(X, y, BasisFamily.BSPLINE, 2)

    def test_needs_enough_points(self):
        X, y = _curve_sample(6)
        with pytest.raises(ConfigError):
            rot_select(X, y, BasisFamily.BSPLINE, 2)


class TestDpi:
    def test_closed_form_from_reported_constants(self):
        X, y = _curve_sample(900, seed=11)
        m, d = 2, 1
        rep = dpi_select(X, y, BasisFamily.BSPLINE, m)
        kr = rep.kappa_rot
        num = 2.0 * m * kr ** (2.0 * m) * rep.bias_constant
        den = d * kr ** (-float(d)) * rep.variance_constant
        n = X.shape[0]
        want = max(1, math.ceil((num / den * n) ** (1.0 / (2 * m + d))))
        assert rep.kappa_dpi == want
        assert rep.selected() == rep.kappa_dpi

    def test_explicit_rot_matches_internal(self):
        X, y = _curve_sample(700, seed=13)
        rot = rot_select(X, y, BasisFamily.BSPLINE, 2)
        a = dpi_select(X, y, BasisFamily.BSPLINE, 2, rot=rot)
        b = dpi_select(X, y, BasisFamily.BSPLINE, 2)
        assert a.kappa_dpi == b.kappa_dpi
        assert a.bias_constant == b.bias_constant

    def test_fallback_on_rank_deficiency(self):
        # far more cells than points leaves empty cells; the preliminary
        # fit cannot factor and the rule falls back to kappa_rot
        X, y = _curve_sample(30, seed=5)
        fake = TuningReport(
            kappa_rot=50,
            kappa_dpi=None,
            bias_constant=1.0,
            variance_constant=1.0,
            eta_table={},
            prelim_degree=6,
            n=30,
        )
        rep = dpi_select(X, y, BasisFamily.BSPLINE, 2, rot=fake)
        assert rep.rot_fallback is True
        assert rep.kappa_dpi == 50
        assert rep.selected() == 50

    def test_quantile_knots_accepted(self):
        X, y = _curve_sample(800, seed=17)
        rep = dpi_select(
            X, y, BasisFamily.BSPLINE, 2, knots=KnotRule.QUANTILE
        )
        assert rep.kappa_dpi >= 1
        assert rep.rot_fallback is False

    def test_derivative_target_runs(self):
        X, y = _curve_sample(900, seed=19)
        rep = dpi_select(X, y, BasisFamily.BSPLINE, 3, q=(1,))
        assert rep.kappa_dpi >= 1


class TestImseComponents:
    def test_keys_and_signs(self):
        X, y = _curve_sample(500, seed=23)
        part = TensorPartition.build(KnotRule.EVEN, [[0.0, 1.0]], 4)
        kind = EstimatorKind.default(BasisFamily.BSPLINE, 2, part)
        fit = fit_estimator(kind, X, y)
        var = sigma_hat(fit, 0)
        out = imse_components(fit, var)
        assert set(out) == {"V_hat", "B_hat"}
        assert out["V_hat"] > 0
        assert out["B_hat"] >= 0

    def test_grid_mode(self):
        X, y = _curve_sample(500, seed=29)
        part = TensorPartition.build(KnotRule.EVEN, [[0.0, 1.0]], 4)
        kind = EstimatorKind.default(BasisFamily.BSPLINE, 2, part)
        fit = fit_estimator(kind, X, y)
        var = sigma_hat(fit, 0)
        grid = np.linspace(0.05, 0.95, 50)[:, None]
        out = imse_components(fit, var, grid=grid)
        assert out["V_hat"] > 0
        assert np.isfinite(out["B_hat"])
