"""Maturity interpolation/extrapolation of slice parameters."""

import numpy as np
import pytest

from conftest import draw_box

from essvi.constraints import ButterflyRule, calendar_check, psi_cap
from essvi.parametrization import to_slices
from essvi.pricing import SSVISlice, total_variance
from essvi.term import SurfaceCurve, slice_at, total_variance_at

GJ = ButterflyRule("gj")


def two_slice_curve():
    return SurfaceCurve(
        (
            SSVISlice(theta=0.01, rho=0.0, psi=0.1, maturity=0.1),
            SSVISlice(theta=0.02, rho=0.0, psi=0.15, maturity=0.3),
        )
    )


class TestSliceAt:
    def test_nodes_return_exactly(self):
        curve = two_slice_curve()
        for s in curve.slices:
            out = slice_at(curve, s.maturity)
            assert (out.theta, out.rho, out.psi) == (s.theta, s.rho, s.psi)

    def test_midpoint_linear(self):
        out = slice_at(two_slice_curve(), 0.2)
        assert out.theta == pytest.approx(0.015)
        assert out.psi == pytest.approx(0.125)
        assert out.rho == 0.0

    def test_rho_weighted_by_psi(self):
        curve = SurfaceCurve(
            (
                SSVISlice(theta=0.01, rho=-0.4, psi=0.1, maturity=0.1),
                SSVISlice(theta=0.02, rho=0.2, psi=0.15, maturity=0.3),
            )
        )
        out = slice_at(curve, 0.2)
        expected = (0.5 * 0.1 * -0.4 + 0.5 * 0.15 * 0.2) / (0.5 * 0.1 + 0.5 * 0.15)
        assert out.rho == pytest.approx(expected, rel=1e-14)
        assert min(-0.4, 0.2) <= out.rho <= max(-0.4, 0.2)

    def test_short_end_scales_first_slice(self):
        curve = two_slice_curve()
        out = slice_at(curve, 0.05)
        assert out.theta == pytest.approx(0.005)
        assert out.psi == pytest.approx(0.05)
        assert out.rho == 0.0

    def test_long_end_keeps_slope_and_psi(self):
        curve = two_slice_curve()
        out = slice_at(curve, 0.5)
        # slope (0.02 - 0.01) / (0.3 - 0.1) = 0.05 continued for 0.2 years
        assert out.theta == pytest.approx(0.03)
        assert out.psi == 0.15
        assert out.rho == 0.0

    def test_right_slope_override(self):
        curve = SurfaceCurve(two_slice_curve().slices, right_slope=0.5)
        out = slice_at(curve, 0.4)
        assert out.theta == pytest.approx(0.02 + 0.5 * 0.1)
        with pytest.raises(ValueError):
            SurfaceCurve(two_slice_curve().slices, right_slope=0.0)

    def test_single_slice_right_ray(self):
        curve = SurfaceCurve((SSVISlice(theta=0.01, rho=0.1, psi=0.1, maturity=0.1),))
        out = slice_at(curve, 0.2)
        assert out.theta == pytest.approx(0.02)
        assert out.psi == 0.1

    def test_nonpositive_maturity_rejected(self):
        with pytest.raises(ValueError):
            slice_at(two_slice_curve(), 0.0)

    def test_continuity_at_nodes(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            gp = draw_box(rng, 4)
            slices, _ = to_slices(gp, GJ)
            curve = SurfaceCurve(tuple(slices))
            for s in slices:
                eps = 1e-9 * s.maturity
                left = slice_at(curve, s.maturity - eps)
                right = slice_at(curve, s.maturity + eps)
                for field in ("theta", "psi", "rho"):
                    lo, hi = getattr(left, field), getattr(right, field)
                    assert hi == pytest.approx(lo, rel=1e-6, abs=1e-9)


class TestTotalVarianceAt:
    def test_short_end_scaling_is_exact(self):
        curve = two_slice_curve()
        first = curve.slices[0]
        for t in (0.05, 0.01, 0.099):
            scale = t / first.maturity
            for k in (-1.0, 0.0, 0.4):
                got = float(total_variance_at(curve, t, k))
                want = scale * float(total_variance(first, k))
                assert got == pytest.approx(want, rel=1e-12)

    def test_atm_value_is_theta(self):
        curve = two_slice_curve()
        out = slice_at(curve, 0.17)
        assert float(total_variance_at(curve, 0.17, 0.0)) == pytest.approx(out.theta)

    def test_nondecreasing_in_maturity(self):
        rng = np.random.default_rng(29)
        for _ in range(10):
            gp = draw_box(rng, 5)
            slices, _ = to_slices(gp, GJ)
            curve = SurfaceCurve(tuple(slices))
            ts = np.linspace(0.01, slices[-1].maturity * 1.5, 40)
            for k in (-0.5, 0.0, 0.8):
                w = [float(total_variance_at(curve, t, k)) for t in ts]
                assert np.all(np.diff(w) >= -1e-14)


class TestNoArbitrageAcrossMaturities:
    def test_interpolated_pairs_pass_calendar(self):
        rng = np.random.default_rng(41)
        for _ in range(30):
            gp = draw_box(rng, 3)
            slices, _ = to_slices(gp, GJ)
            curve = SurfaceCurve(tuple(slices))
            t1, t2 = slices[0].maturity, slices[-1].maturity
            t = rng.uniform(t1, t2)
            u = rng.uniform(t, t2)
            if u <= t or t in (t1, t2):
                continue
            assert calendar_check(slice_at(curve, t), slice_at(curve, u)).ok

    def test_short_extrapolation_passes_calendar(self):
        # the scaled short slice sits exactly on the inclusive sufficient
        # boundary psi1 = (psi_t / theta_t) * theta1, so allow the float
        # evaluation of that boundary to land within a few ulps
        rng = np.random.default_rng(43)
        for _ in range(60):
            gp = draw_box(rng, 2)
            slices, _ = to_slices(gp, GJ)
            curve = SurfaceCurve(tuple(slices))
            t = rng.uniform(0.1, 0.9) * slices[0].maturity
            short = slice_at(curve, t)
            result = calendar_check(short, slices[0])
            if not result.ok:
                assert result.clause == "psi_upper"
                ceil = short.psi * slices[0].theta / short.theta
                assert slices[0].psi <= ceil * (1.0 + 1e-12)

    def test_long_extrapolation_sits_on_the_strict_boundary(self):
        # constant psi keeps total variance increasing (no arbitrage) but
        # leaves the strict necessary inequality as an exact equality
        rng = np.random.default_rng(47)
        for _ in range(30):
            gp = draw_box(rng, 2)
            slices, _ = to_slices(gp, GJ)
            curve = SurfaceCurve(tuple(slices))
            last = slices[-1]
            t = last.maturity * rng.uniform(1.05, 3.0)
            out = slice_at(curve, t)
            result = calendar_check(last, out)
            assert result.clause == "psi_lower"
            assert out.psi == last.psi and out.rho == last.rho
            assert out.theta > last.theta
            # butterfly cap still satisfied at the larger theta
            assert out.psi <= psi_cap(out.theta, abs(out.rho), GJ)
            ks = np.linspace(-2, 2, 41)
            assert np.all(
                np.asarray(total_variance(out, ks)) >= np.asarray(total_variance(last, ks))
            )
