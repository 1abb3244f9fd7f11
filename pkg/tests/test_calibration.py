"""Calibration: guesses, residuals, the full fit, estimator API."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conftest import CLOSE_SPOT, CLOSE_TIME, make_curve, make_snapshot

import essvi.calibration as calibration_mod
from essvi.calibration import (
    CalibConfig,
    ESSVICalibrator,
    build_basket,
    calibrate,
    initial_guess,
    residuals,
)
from essvi.constraints import ButterflyRule, surface_check
from essvi.market import MarketSnapshot, OptionRecord
from essvi.parametrization import GlobalParams, to_slices

GJ = ButterflyRule("gj")


def flat_vol_snapshot(sigma=0.2, maturities=(0.1, 0.5), n_strikes=15):
    curve = make_curve(maturities, rate=0.0, discount_rate=0.0)
    records = []
    for point in curve:
        w = sigma * sigma * point.maturity
        k_grid = np.linspace(-1.5, 1.5, n_strikes) * np.sqrt(w)
        for k in k_grid:
            strike = point.forward_close * np.exp(k)
            from essvi.pricing import bs_price

            for kind in ("call", "put"):
                price = float(bs_price(kind, point.forward_close, strike, 1.0, w))
                if price <= 0:
                    continue
                records.append(
                    OptionRecord(
                        strike=float(strike),
                        maturity=point.maturity,
                        option_kind=kind,
                        record_kind="quote",
                        timestamp=CLOSE_TIME,
                        spot_at_ts=CLOSE_SPOT,
                        bid=price * (1 - 1e-5),
                        ask=price * (1 + 1e-5),
                    )
                )
    return MarketSnapshot.build(CLOSE_SPOT, CLOSE_TIME, curve, records)


class TestConfig:
    def test_defaults(self):
        config = CalibConfig()
        assert config.a_upper == 0.05
        assert config.rho_bound == 0.95
        assert config.max_evals == 1000
        assert config.ftol == 1e-8

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"weight_scheme": "equal"},
            {"a_upper": 0.0},
            {"rho_bound": 1.0},
            {"max_evals": 0},
        ],
    )
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            CalibConfig(**kwargs)


class TestInitialGuess:
    def test_flat_vol_thetas(self):
        snap = flat_vol_snapshot()
        guess = initial_guess(snap, CalibConfig())
        assert guess.theta1 == pytest.approx(0.004, rel=1e-6)
        assert guess.a[0] == pytest.approx(0.016, rel=1e-6)
        assert np.all(guess.rhos == 0.0)
        assert np.all(guess.c == 0.5)

    def test_single_maturity(self):
        snap = flat_vol_snapshot(maturities=(0.25,))
        guess = initial_guess(snap, CalibConfig())
        assert guess.n == 1
        assert guess.a.size == 0
        assert guess.theta1 == pytest.approx(0.01, rel=1e-6)

    def test_decreasing_estimates_clipped_with_flag(self, caplog):
        snap = flat_vol_snapshot(sigma=0.5, maturities=(0.1,))
        curve = make_curve([0.1, 0.2], rate=0.0, discount_rate=0.0)
        records = list(snap.records)
        from essvi.pricing import bs_price

        # second maturity quoted at a much lower vol: theta estimate decreases
        w2 = 0.05**2 * 0.2
        for k in np.linspace(-0.02, 0.02, 7):
            strike = 100.0 * np.exp(k)
            price = float(bs_price("call", 100.0, strike, 1.0, w2))
            records.append(
                OptionRecord(
                    strike=float(strike),
                    maturity=0.2,
                    option_kind="call",
                    record_kind="quote",
                    timestamp=CLOSE_TIME,
                    spot_at_ts=CLOSE_SPOT,
                    bid=price * 0.999,
                    ask=price * 1.001,
                )
            )
        merged = MarketSnapshot.build(CLOSE_SPOT, CLOSE_TIME, curve, records)
        with caplog.at_level("WARNING"):
            guess = initial_guess(merged, CalibConfig())
        assert guess.a[0] == pytest.approx(1e-8)
        assert any("clipping" in record.message for record in caplog.records)

    def test_bound_doubled_when_increment_exceeds_it(self):
        snap = flat_vol_snapshot(sigma=0.5, maturities=(0.1, 1.0))
        # raw increment 0.25 - 0.025 = 0.225 > 0.05: bound doubles to 0.1
        guess = initial_guess(snap, CalibConfig())
        assert guess.a[0] == pytest.approx(0.1, rel=1e-9)


class TestResiduals:
    def test_zero_at_generator(self, six_maturity_params, six_maturity_snapshot):
        res = residuals(six_maturity_params, six_maturity_snapshot, CalibConfig())
        assert np.max(np.abs(res)) < 1e-10

    def test_zero_with_scattered_timestamps(self, small_params):
        snap = make_snapshot(
            small_params,
            n_strikes=10,
            timestamps=[CLOSE_TIME - 500.0, CLOSE_TIME - 200.0, CLOSE_TIME],
            spots=[99.0, 100.5, 100.0],
        )
        res = residuals(small_params, snap, CalibConfig())
        assert np.max(np.abs(res)) < 1e-10

    def test_uniform_weights_are_price_differences(self, small_params, small_snapshot):
        config = CalibConfig()
        basket = build_basket(small_snapshot, config)
        slices, _ = to_slices(small_params, GJ)
        res = residuals(small_params, small_snapshot, config)
        assert res.shape == (basket.size,)
        assert np.all(basket.weights == 1.0)

    def test_vega_weights_definition(self, small_snapshot):
        config = CalibConfig(weight_scheme="ivega2")
        basket = build_basket(small_snapshot, config)
        from essvi.pricing import bs_vega, implied_total_variance

        for i in range(basket.size):
            w_mkt = implied_total_variance(
                basket.kinds[i],
                basket.prices[i],
                basket.forwards[i],
                basket.strikes[i],
                basket.discounts[i],
            )
            vega = float(
                bs_vega(
                    basket.forwards[i],
                    basket.strikes[i],
                    basket.discounts[i],
                    w_mkt,
                    basket.expiries_effective[i],
                )
            )
            assert basket.weights[i] == pytest.approx(1.0 / vega**2, rel=1e-8)

    def test_doubled_vegas_quarter_the_objective(self, small_snapshot):
        import dataclasses

        config = CalibConfig(weight_scheme="ivega2")
        basket = build_basket(small_snapshot, config)
        off_params = initial_guess(small_snapshot, config)
        res, _, _ = calibration_mod._residuals_from_basket(off_params, basket, config)
        doubled = dataclasses.replace(basket, weights=basket.weights / 4.0)
        res2, _, _ = calibration_mod._residuals_from_basket(off_params, doubled, config)
        assert float(np.sum(res2**2)) == pytest.approx(
            float(np.sum(res**2)) / 4.0, rel=1e-14
        )

    def test_objective_invariant_under_row_reordering(self, small_params, small_snapshot):
        config = CalibConfig()
        res = residuals(small_params, small_snapshot, config)
        obj = float(np.sum(res * res))
        shuffled_records = list(small_snapshot.records)[::-1]
        snap2 = MarketSnapshot.build(
            small_snapshot.close_spot,
            small_snapshot.close_time,
            small_snapshot.curve,
            shuffled_records,
            small_snapshot.window,
        )
        res2 = residuals(small_params, snap2, config)
        assert float(np.sum(res2 * res2)) == pytest.approx(obj, rel=1e-12)


class TestBasket:
    def test_otm_side_selected(self, small_snapshot):
        basket = build_basket(small_snapshot, CalibConfig())
        for i in range(basket.size):
            if basket.kinds[i] == "call":
                assert basket.strikes[i] >= basket.forwards[i] * (1 - 1e-12)
            else:
                assert basket.strikes[i] <= basket.forwards[i] * (1 + 1e-12)

    def test_empty_snapshot_rejected(self):
        snap = MarketSnapshot.build(
            CLOSE_SPOT, CLOSE_TIME, make_curve([0.1]), []
        )
        with pytest.raises(ValueError, match="no usable options"):
            build_basket(snap, CalibConfig())


class TestCalibrate:
    def test_round_trip_small(self, small_params, small_snapshot):
        result = calibrate(small_snapshot, CalibConfig())
        assert result.converged
        rel = np.abs(result.model_prices - result.basket.prices) / result.basket.forwards
        assert rel.max() < 1e-6
        assert surface_check(result.slices, GJ).ok
        np.testing.assert_allclose(result.params.rhos, small_params.rhos, atol=1e-5)

    def test_every_iterate_is_arbitrage_free(self, small_snapshot, monkeypatch):
        seen = []
        original = calibration_mod._residuals_from_basket

        def spy(gp, basket, config):
            seen.append(gp)
            return original(gp, basket, config)

        monkeypatch.setattr(calibration_mod, "_residuals_from_basket", spy)
        calibrate(small_snapshot, CalibConfig(max_evals=200))
        sample = seen[:: max(1, len(seen) // 100)][:100]
        assert sample
        for gp in sample:
            slices, _ = to_slices(gp, GJ)
            assert surface_check(slices, GJ).ok

    def test_deterministic(self, small_snapshot):
        config = CalibConfig()
        first = calibrate(small_snapshot, config)
        second = calibrate(small_snapshot, config)
        np.testing.assert_array_equal(first.params.rhos, second.params.rhos)
        np.testing.assert_array_equal(first.params.c, second.params.c)
        assert first.objective_value == second.objective_value

    def test_objective_matches_residuals(self, small_snapshot):
        result = calibrate(small_snapshot, CalibConfig(max_evals=50))
        assert result.objective_value == pytest.approx(
            float(np.sum(result.residuals**2)), rel=1e-15
        )

    def test_inside_bid_ask_flags(self, small_snapshot):
        result = calibrate(small_snapshot, CalibConfig())
        flags = result.inside_bid_ask
        assert flags.shape == (result.basket.size,)
        assert np.all(flags[np.isfinite(flags)] == 1.0)


class TestEstimator:
    def test_fit_predict(self, small_snapshot):
        est = ESSVICalibrator(max_evals=200)
        assert est.fit(small_snapshot) is est
        assert surface_check(est.slices_, GJ).ok
        point = small_snapshot.curve[0]
        x = np.array([[point.maturity, point.forward_close]])
        price = est.predict(x)
        assert price.shape == (1,)
        assert 0 < price[0] < point.forward_close

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            ESSVICalibrator().predict(np.array([[0.1, 100.0]]))

    def test_get_params_round_trip(self):
        est = ESSVICalibrator(butterfly_rule="mm", a_upper=0.07)
        params = est.get_params()
        assert params["butterfly_rule"] == "mm"
        est2 = clone(est)
        assert est2.get_params() == params

    def test_total_variance_query(self, small_snapshot):
        est = ESSVICalibrator(max_evals=100).fit(small_snapshot)
        t = small_snapshot.curve[0].maturity
        w = est.total_variance(t, 0.0)
        assert float(w) == pytest.approx(est.slices_[0].theta)
