import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diffcls.diffusion import GaussianDenoiser, NoiseSchedule, generate_world_sample, make_world
from diffcls.weighting import (N_BUCKETS, SNR_T_FLOOR, BucketedScores, LearnOptions, WeightingSpec,
                               bucket_index, bucket_scores, classify_buckets, learn_weights,
                               learned_log_likelihood, load_weights, save_weights, weight)


class TestBucketIndex:
    @pytest.mark.parametrize("t,expected", [(0.0, 0), (0.07, 1), (1.0, 19), (0.05, 1), (0.9999, 19)])
    def test_values(self, t, expected):
        assert bucket_index(t) == expected

    def test_every_edge(self):
        for i in range(1, N_BUCKETS):
            edge = 0.05 * i
            assert bucket_index(edge) == i
            assert bucket_index(np.nextafter(edge, 0.0)) == i - 1

    def test_domain(self):
        with pytest.raises(ValueError):
            bucket_index(1.01)

    def test_vectorised(self):
        np.testing.assert_array_equal(bucket_index(np.array([0.0, 0.5, 1.0])), [0, 10, 19])


class TestWeight:
    def test_heuristic_values(self):
        assert weight(WeightingSpec.heuristic(7), 0.0) == 1.0
        assert weight(WeightingSpec.heuristic(7), 0.5) == pytest.approx(0.0301974, abs=1e-7)

    def test_simple_midpoint(self):
        assert weight(WeightingSpec.simple(), 0.5) == pytest.approx(1.0, abs=1e-12)

    def test_simple_clamped_at_zero(self):
        w0 = weight(WeightingSpec.simple(), 0.0)
        assert math.isfinite(w0)
        assert w0 == weight(WeightingSpec.simple(), SNR_T_FLOOR)

    def test_vdm_analytic(self):
        t = 0.3
        th = math.pi * t / 2
        assert weight(WeightingSpec.vdm(), t) == pytest.approx(math.pi * math.cos(th) / math.sin(th) ** 3, rel=1e-12)

    def test_vdm_numeric_family(self):
        sched = NoiseSchedule("sqrt")
        t = np.array([0.2, 0.5, 0.8])
        # snr = (1 - t) / t, so |d snr / dt| = 1 / t^2
        np.testing.assert_allclose(weight(WeightingSpec.vdm(sched), t), 1 / t ** 2, rtol=1e-6)

    def test_vdm_finite_at_zero(self):
        assert math.isfinite(weight(WeightingSpec.vdm(), 0.0))

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.1, 20.0))
    def test_heuristic_positive_decreasing(self, a, b, lam):
        spec = WeightingSpec.heuristic(lam)
        lo, hi = min(a, b), max(a, b)
        assert weight(spec, hi) > 0
        assert weight(spec, hi) <= weight(spec, lo)
        if lam * (hi - lo) > 1e-12:
            assert weight(spec, hi) < weight(spec, lo)

    @given(st.lists(st.floats(-5, 5), min_size=20, max_size=20), st.integers(0, 19), st.floats(0.0, 1.0))
    def test_learned_piecewise_constant(self, v, i, frac):
        t = min(0.05 * i + frac * 0.05, 1.0)
        if t >= 0.05 * (i + 1) and i < 19:
            t = np.nextafter(0.05 * (i + 1), 0.0)
        assert weight(WeightingSpec.learned(v), t) == v[bucket_index(t)]
        assert weight(WeightingSpec.learned(v), 0.05 * i) == v[i]

    def test_scale(self):
        spec = WeightingSpec.heuristic(7).scaled(10.0)
        assert weight(spec, 0.5) == pytest.approx(10 * math.exp(-3.5), rel=1e-15)

    @pytest.mark.parametrize("bad", [
        lambda: WeightingSpec.heuristic(0.0),
        lambda: WeightingSpec.learned([1.0] * 19),
        lambda: WeightingSpec.learned([1.0] * 19 + [math.nan]),
        lambda: WeightingSpec("other"),
        lambda: WeightingSpec.heuristic().scaled(0.0),
    ])
    def test_validation(self, bad):
        with pytest.raises(ValueError):
            bad()


class TestParse:
    @pytest.mark.parametrize("text,variant,lam", [
        ("simple", "simple", 7.0), ("vdm", "vdm", 7.0), ("heuristic", "heuristic", 7.0),
        ("heuristic:6", "heuristic", 6.0), ("HEURISTIC:2.5", "heuristic", 2.5),
    ])
    def test_ok(self, text, variant, lam):
        spec = WeightingSpec.parse(text)
        assert spec.variant == variant
        assert spec.lam == lam
        assert spec.zero_shot

    def test_learned_roundtrip(self, tmp_path):
        v = np.linspace(-1, 2, 20)
        save_weights(tmp_path / "v.txt", v)
        spec = WeightingSpec.parse(f"learned:{tmp_path / 'v.txt'}")
        assert np.array_equal(spec.v, v)
        assert not spec.zero_shot

    @pytest.mark.parametrize("text", ["learned", "bogus", "heuristic:-1"])
    def test_bad(self, text):
        with pytest.raises(ValueError):
            WeightingSpec.parse(text)

    def test_bad_file(self, tmp_path):
        (tmp_path / "v.txt").write_text("1\n2\n")
        with pytest.raises(ValueError, match="expected 20"):
            load_weights(tmp_path / "v.txt")


def _planted(n, k, rng, informative=3):
    """b_3 is 0 for the true class and 1 otherwise; other buckets share noise across classes."""
    labels = rng.integers(0, k, n)
    noise = rng.random((n, 1, N_BUCKETS)) * 5
    values = np.repeat(noise, k, axis=1)
    values[:, :, informative] = 1.0
    values[np.arange(n), labels, informative] = 0.0
    return BucketedScores(values, np.ones((n, N_BUCKETS), dtype=int)), labels


class TestLearnedWeights:
    @given(st.integers(0, 2**31))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        feats = rng.random((6, 3, N_BUCKETS))
        labels = rng.integers(0, 3, 6)
        v = rng.normal(size=N_BUCKETS)
        _, g = learned_log_likelihood(v, feats, labels)
        h = 1e-6
        fd = np.array([(learned_log_likelihood(v + h * e, feats, labels)[0]
                        - learned_log_likelihood(v - h * e, feats, labels)[0]) / (2 * h)
                       for e in np.eye(N_BUCKETS)])
        assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-12) + 1e-9

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        feats = rng.random((5, 4, N_BUCKETS))
        labels = rng.integers(0, 4, 5)
        v = rng.normal(size=N_BUCKETS)
        shifted = feats + rng.random((5, 1, N_BUCKETS))
        assert learned_log_likelihood(v, feats, labels)[0] == pytest.approx(
            learned_log_likelihood(v, shifted, labels)[0], abs=1e-12)

    def test_planted_bucket(self):
        rng = np.random.default_rng(1)
        train, y = _planted(400, 4, rng)
        v = learn_weights(train, y, LearnOptions(max_iter=300))
        assert np.argmax(v) == 3
        assert np.all(v[3] > np.delete(v, 3))
        test, yt = _planted(1000, 4, rng)
        acc = np.mean(classify_buckets(test.features(), v) == yt)
        assert acc >= 0.99

    def test_identical_classes_keep_initialisation(self):
        rng = np.random.default_rng(2)
        vals = np.repeat(rng.random((30, 1, N_BUCKETS)), 2, axis=1)
        v = learn_weights(BucketedScores(vals, np.ones((30, N_BUCKETS), dtype=int)), rng.integers(0, 2, 30))
        assert np.array_equal(v, np.ones(N_BUCKETS))

    def test_never_decreases_likelihood(self):
        rng = np.random.default_rng(4)
        vals = rng.random((50, 3, N_BUCKETS))
        y = rng.integers(0, 3, 50)
        sc = BucketedScores(vals, np.ones((50, N_BUCKETS), dtype=int))
        v = learn_weights(sc, y, LearnOptions(max_iter=50))
        assert learned_log_likelihood(v, vals, y)[0] >= learned_log_likelihood(np.ones(N_BUCKETS), vals, y)[0]

    @pytest.mark.parametrize("mutate,match", [
        (lambda v, c: (v[:0], c[:0]), "no examples"),
        (lambda v, c: (np.where(np.arange(20) == 2, np.nan, v), c), "finite"),
        (lambda v, c: (-v, c), "non-negative"),
        (lambda v, c: (v, np.zeros_like(c)), "every bucket"),
    ])
    def test_contract_errors(self, mutate, match):
        rng = np.random.default_rng(0)
        v, c = mutate(rng.random((4, 2, N_BUCKETS)) + 0.1, np.ones((4, N_BUCKETS), dtype=int))
        with pytest.raises(ValueError, match=match):
            learn_weights(BucketedScores(v, c), np.zeros(v.shape[0], dtype=int))

    def test_empty_buckets_ignored(self):
        vals = np.full((2, 2, N_BUCKETS), np.nan)
        vals[:, :, :10] = 1.0
        counts = np.zeros((2, N_BUCKETS), dtype=int)
        counts[:, :10] = 1
        feats = BucketedScores(vals, counts).features()
        assert np.all(feats[:, :, 10:] == 0)

    def test_bucket_scores_stratified(self, world10, oracle10):
        rng = np.random.default_rng(5)
        x0 = generate_world_sample(world10, 2, rng)
        values, counts = bucket_scores(x0, world10.conditions(), oracle10, rng, per_bucket=3)
        assert values.shape == (10, N_BUCKETS)
        assert np.array_equal(counts, np.full(N_BUCKETS, 3))
        assert np.all(values >= 0)

    def test_gaussian_learned_not_worse_than_uniform(self):
        rng = np.random.default_rng(6)
        w = make_world(3, 8, 1.0, 1.5, rng)
        model = GaussianDenoiser(w)
        conds = w.conditions()
        y = rng.integers(0, 3, 500)
        X = [generate_world_sample(w, int(k), rng) for k in y]
        vals, cnts = zip(*(bucket_scores(x, conds, model, rng, per_bucket=5) for x in X))
        sc = BucketedScores(np.stack(vals), np.stack(cnts))
        half = 250
        tr = BucketedScores(sc.values[:half], sc.counts[:half])
        v = learn_weights(tr, y[:half], LearnOptions(max_iter=2000))
        te = sc.features()[half:]
        acc_learned = np.mean(classify_buckets(te, v) == y[half:])
        acc_uniform = np.mean(classify_buckets(te, np.ones(N_BUCKETS)) == y[half:])
        assert acc_learned >= acc_uniform
