import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit

from diffcls.calibration import (PlattModel, TemperatureModel, fit_logistic, fit_platt, fit_temperature,
                                 logistic_nll, platt_confidence, reliability_and_ece, score_softmax_probs,
                                 temperature_confidences, temperature_nll)

# rows of rational class probabilities; replicating each row with labels in
# exact proportion makes tau = 1 the exact empirical optimum
RATIONAL_ROWS = [
    (0.5, 0.3, 0.2), (0.7, 0.2, 0.1), (0.1, 0.1, 0.8), (0.4, 0.4, 0.2), (0.6, 0.1, 0.3),
]


def calibrated_set():
    scores, labels = [], []
    for p in RATIONAL_ROWS:
        s = -np.log(p)
        for k, pk in enumerate(p):
            for _ in range(round(pk * 10)):
                scores.append(s)
                labels.append(k)
    return np.array(scores), np.array(labels)


class TestSoftmax:
    def test_equal(self):
        p = score_softmax_probs({0: 3.0, 1: 3.0, 2: 3.0, 3: 3.0}, 2.0)
        assert all(v == pytest.approx(0.25, abs=1e-15) for v in p.values())

    @pytest.mark.parametrize("tau", [0.5, 1.0, 40.0])
    def test_two_class(self, tau):
        p = score_softmax_probs({0: 0.0, 1: math.log(3) * tau}, tau)
        assert p[0] == pytest.approx(0.75, abs=1e-12)
        assert p[1] == pytest.approx(0.25, abs=1e-12)

    def test_shift_invariant(self):
        s = {0: 1.0, 1: 2.5, 2: -0.3}
        a = score_softmax_probs(s, 0.7)
        b = score_softmax_probs({k: v + 1e4 for k, v in s.items()}, 0.7)
        for k in s:
            assert a[k] == pytest.approx(b[k], abs=1e-10)

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=12), st.floats(1e-3, 1e3))
    def test_valid_distribution(self, scores, tau):
        p = score_softmax_probs(dict(enumerate(scores)), tau)
        assert abs(sum(p.values()) - 1.0) <= 1e-12
        assert all(v >= 0 for v in p.values())
        best = min(range(len(scores)), key=lambda i: scores[i])
        assert p[best] > 0

    def test_strictly_positive_for_moderate_spread(self):
        p = score_softmax_probs({0: 0.0, 1: 30.0, 2: 60.0}, 1.0)
        assert all(v > 0 for v in p.values())

    @pytest.mark.parametrize("scores,tau", [({}, 1.0), ({0: math.nan}, 1.0), ({0: 1.0}, 0.0), ({0: 1.0}, -1.0)])
    def test_contract(self, scores, tau):
        with pytest.raises(ValueError):
            score_softmax_probs(scores, tau)


class TestPlattConfidence:
    def test_example(self):
        assert platt_confidence(PlattModel(100.0, 2.0), 100) == pytest.approx(0.7310586, abs=1e-7)

    def test_zero_crossing(self):
        m = PlattModel(250.0, 1.5)
        assert platt_confidence(m, 1.5 * 250.0) == pytest.approx(0.5, abs=1e-15)

    def test_limit(self):
        assert platt_confidence(PlattModel(10.0, 0.0), 1e6) < 1e-300

    def test_strictly_decreasing(self):
        c = platt_confidence(PlattModel(500.0, 3.0), np.arange(0, 4000, 7))
        assert np.all(np.diff(c) < 0)

    def test_negative_n(self):
        with pytest.raises(ValueError):
            platt_confidence(PlattModel(1.0, 0.0), -1)

    @pytest.mark.parametrize("tau,beta", [(0.0, 1.0), (-2.0, 0.0), (math.inf, 0.0), (1.0, math.nan)])
    def test_model_validation(self, tau, beta):
        with pytest.raises(ValueError):
            PlattModel(tau, beta)

    def test_temperature_validation(self):
        with pytest.raises(ValueError):
            TemperatureModel(0.0)


class TestFitTemperature:
    def test_recovers_one(self):
        s, y = calibrated_set()
        assert fit_temperature(s, y).tau == pytest.approx(1.0, abs=1e-3)

    @pytest.mark.parametrize("c", [5.0, 0.2])
    def test_scales(self, c):
        s, y = calibrated_set()
        assert fit_temperature(c * s, y).tau == pytest.approx(c * fit_temperature(s, y).tau, rel=1e-3)

    def test_not_worse_than_initialisation(self):
        rng = np.random.default_rng(0)
        s = rng.gamma(2.0, 3.0, (200, 5))
        y = rng.integers(0, 5, 200)
        tau = fit_temperature(s, y).tau
        assert temperature_nll(s, y, tau) <= temperature_nll(s, y, 1.0)

    def test_accepts_score_maps(self):
        s, y = calibrated_set()
        maps = [{10 + k: float(v) for k, v in enumerate(row)} for row in s]
        assert fit_temperature(maps, [10 + k for k in y]).tau == pytest.approx(fit_temperature(s, y).tau, rel=1e-12)

    def test_single_class_rejected(self):
        s, _ = calibrated_set()
        with pytest.raises(ValueError):
            fit_temperature(s, np.zeros(len(s), dtype=int))
        with pytest.raises(ValueError):
            fit_temperature(s[:, :1], np.zeros(len(s), dtype=int))

    def test_unscored_true_class(self):
        with pytest.raises(ValueError):
            fit_temperature([{0: 1.0, 1: 2.0}, {0: 1.0, 1: 0.5}], [0, 5])

    def test_confidences_of_argmin(self):
        preds, conf = temperature_confidences([{0: 2.0, 1: 1.0}, {3: 0.0, 4: 0.0}], TemperatureModel(1.0))
        assert preds == [1, 3]
        assert conf[0] == pytest.approx(expit(1.0), abs=1e-12)
        assert conf[1] == pytest.approx(0.5, abs=1e-15)


def _platt_data(n, tau, beta, rng):
    calls = rng.uniform(0, 4000, n)
    return calls, (rng.random(n) < expit(beta - calls / tau)).astype(float)


class TestFitPlatt:
    def test_parameter_recovery(self):
        rng = np.random.default_rng(1)
        n, y = _platt_data(10_000, 800.0, 2.0, rng)
        m = fit_platt(n, y)
        grid = np.linspace(0, 4000, 401)
        err = np.abs(platt_confidence(m, grid) - expit(2.0 - grid / 800.0))
        assert err.max() <= 0.02

    def test_label_flip_negates_log_odds(self):
        rng = np.random.default_rng(2)
        n, y = _platt_data(2000, 500.0, 1.0, rng)
        a, b = fit_logistic(n, y)
        fa, fb = fit_logistic(n, 1 - y)
        assert fa == pytest.approx(-a, rel=1e-5)
        assert fb == pytest.approx(-b, rel=1e-5, abs=1e-6)

    def test_flipped_labels_have_no_positive_tau(self):
        rng = np.random.default_rng(2)
        n, y = _platt_data(2000, 500.0, 1.0, rng)
        with pytest.raises(ValueError, match="positive tau"):
            fit_platt(n, 1 - y)

    def test_constant_calls(self):
        y = np.array([1.0] * 37 + [0.0] * 13)
        m = fit_platt(np.full(50, 120.0), y)
        assert platt_confidence(m, 120.0) == pytest.approx(0.74, abs=1e-3)

    def test_not_worse_than_initialisation(self):
        rng = np.random.default_rng(3)
        n, y = _platt_data(3000, 700.0, 0.5, rng)
        slope, intercept = fit_logistic(n, y)
        assert logistic_nll(slope, intercept, n, y) <= logistic_nll(-1.0, n.mean(), n, y)

    @pytest.mark.parametrize("y", [np.ones(10), np.zeros(10)])
    def test_single_outcome(self, y):
        with pytest.raises(ValueError):
            fit_platt(np.arange(10.0), y)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            fit_platt([-1.0, 2.0], [0, 1])
        with pytest.raises(ValueError):
            fit_logistic([1.0, 2.0], [0.0, 0.5])


class TestReliability:
    def test_perfect(self):
        r = reliability_and_ece(np.ones(20), np.ones(20))
        assert r.ece == 0.0
        assert r.bins[-1].count == 20

    def test_single_bin(self):
        r = reliability_and_ece(np.full(10, 0.8), [1] * 6 + [0] * 4)
        assert r.ece == pytest.approx(0.2, abs=1e-12)

    def test_two_bins(self):
        conf = [0.9] * 10 + [0.5] * 10
        corr = [1] * 8 + [0] * 2 + [1] * 6 + [0] * 4
        assert reliability_and_ece(conf, corr).ece == pytest.approx(0.1, abs=1e-12)

    def test_bin_edges(self):
        r = reliability_and_ece([0.0, 0.1, 0.19999, 0.2, 1.0], [1, 1, 1, 1, 1])
        assert [b.count for b in r.bins] == [1, 2, 1, 0, 0, 0, 0, 0, 0, 1]
        assert r.bins[3].mean_conf is None and r.bins[3].accuracy is None

    def test_calibrated_synthetic(self):
        rng = np.random.default_rng(4)
        conf = rng.random(100_000)
        corr = rng.random(100_000) < conf
        assert reliability_and_ece(conf, corr).ece <= 0.01

    @given(st.lists(st.tuples(st.floats(0.0, 1.0), st.booleans()), min_size=1, max_size=200),
           st.integers(1, 20))
    def test_invariants(self, pairs, b):
        conf, corr = zip(*pairs)
        r = reliability_and_ece(conf, corr, b)
        assert r.total == len(pairs)
        assert len(r.bins) == b
        assert 0.0 <= r.ece <= 1.0

    def test_json(self):
        r = reliability_and_ece([0.3, 0.95], [0, 1], 4)
        d = json.loads(r.to_json())
        assert set(d) == {"bins", "ece"}
        assert set(d["bins"][0]) == {"lo", "hi", "mean_conf", "accuracy", "count"}
        assert d["bins"][0]["count"] == 0 and d["bins"][0]["mean_conf"] is None

    @pytest.mark.parametrize("conf,corr,b", [([], [], 10), ([0.5], [1, 0], 10), ([1.5], [1], 10),
                                             ([math.nan], [1], 10), ([0.5], [1], 0)])
    def test_contract(self, conf, corr, b):
        with pytest.raises(ValueError):
            reliability_and_ece(conf, corr, b)
