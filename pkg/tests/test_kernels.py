"""The numba and numpy implementations of every kernel must agree."""
import os
import subprocess
import sys

import numpy as np
import pytest
from scipy import special, stats

from diffcls import _accel, kernels


@pytest.fixture(params=["nb", "np"])
def impl(request):
    if request.param == "nb" and not _accel.HAS_NUMBA:
        pytest.skip("numba not installed")
    return request.param


def k(name, impl):
    return getattr(kernels, f"{name}_{impl}")


class TestSpecialFunctions:
    def test_betainc_reference(self, impl):
        rng = np.random.default_rng(0)
        a = rng.uniform(0.1, 800, 400)
        b = rng.uniform(0.1, 30, 400)
        x = rng.random(400)
        np.testing.assert_allclose(k("betainc", impl)(a, b, x), special.betainc(a, b, x), atol=1e-12, rtol=1e-10)

    def test_betainc_edges(self, impl):
        a = np.array([2.0, 2.0])
        b = np.array([3.0, 3.0])
        np.testing.assert_array_equal(k("betainc", impl)(a, b, np.array([0.0, 1.0])), [0.0, 1.0])

    def test_t_sf_reference(self, impl):
        t = np.linspace(-40, 40, 801)
        df = np.repeat([1.0, 4.0, 19.0, 500.0], 801 // 4 + 1)[:801]
        np.testing.assert_allclose(k("t_sf", impl)(t, df), stats.t.sf(t, df), atol=1e-10)


class TestParity:
    def test_paired_pvalues(self):
        rng = np.random.default_rng(1)
        n = rng.integers(0, 50, 200).astype(float)
        mean = rng.normal(size=200)
        m2 = rng.random(200) * n
        m2[::7] = 0.0
        mean[::14] = 0.0
        for two in (False, True):
            a = kernels.paired_pvalues_np(n, mean, m2, two)
            if _accel.HAS_NUMBA:
                b = kernels.paired_pvalues_nb(n, mean, m2, two)
                np.testing.assert_allclose(a, b, atol=1e-13, equal_nan=True)
            assert np.all(np.isnan(a[n < 2]))

    def test_welford(self, impl):
        rng = np.random.default_rng(2)
        vals = rng.normal(size=(30, 6))
        vals[:, 2] = 1.25  # constant column
        mean, m2 = k("welford_build", impl)(vals)
        np.testing.assert_allclose(mean, vals.mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(m2, ((vals - vals.mean(axis=0)) ** 2).sum(axis=0), rtol=1e-10, atol=1e-12)
        assert m2[2] == 0.0 and mean[2] == 1.25
        n = np.zeros(6)
        mu = np.zeros(6)
        s2 = np.zeros(6)
        mask = np.ones(6, dtype=bool)
        mask[4] = False
        for row in vals:
            k("welford_push", impl)(n, mu, s2, row, mask)
        np.testing.assert_allclose(mu[mask], mean[mask], rtol=1e-12)
        np.testing.assert_allclose(s2[mask], m2[mask], rtol=1e-10, atol=1e-12)
        assert n[4] == 0

    def test_gauss_errors(self, impl):
        rng = np.random.default_rng(3)
        means = rng.normal(size=(7, 5))
        x0, xt = rng.normal(size=5), rng.normal(size=5)
        ref = ((x0 - 0.3 * xt - 0.6 * means) ** 2).sum(axis=1)
        np.testing.assert_allclose(k("gauss_errors", impl)(x0, xt, 0.3, 0.6, means), ref, rtol=1e-12)
        xts = rng.normal(size=(4, 5))
        a, b = rng.random(4), rng.random(4)
        out = k("gauss_errors_rounds", impl)(x0, xts, a, b, means)
        for r in range(4):
            np.testing.assert_allclose(out[r], ((x0 - a[r] * xts[r] - b[r] * means) ** 2).sum(axis=1), rtol=1e-12)
        xts3 = rng.normal(size=(7, 3, 5))
        a2, b2 = rng.random((7, 3)), rng.random((7, 3))
        out = k("gauss_errors_indep", impl)(x0, xts3, a2, b2, means)
        for i in range(7):
            for r in range(3):
                ref = ((x0 - a2[i, r] * xts3[i, r] - b2[i, r] * means[i]) ** 2).sum()
                assert out[i, r] == pytest.approx(ref, rel=1e-12)

    @pytest.mark.skipif(not _accel.HAS_NUMBA, reason="numba not installed")
    @pytest.mark.parametrize("seed", range(5))
    def test_prune_rounds(self, seed):
        rng = np.random.default_rng(seed)
        kk, cap = 12, 300
        W = rng.gamma(2.0, 1.0, (cap, kk)) + np.linspace(0, 0.6, kk)[None, :]
        results = []
        for fn in (kernels.prune_rounds_nb, kernels.prune_rounds_np):
            alive = np.ones(kk, dtype=bool)
            state = [np.zeros(kk) for _ in range(4)]
            elim = np.zeros(kk, dtype=np.int64)
            n, best, calls = 0, 0, 0
            for size in (20, 16, 32, 64, 128):
                used, best, made = fn(W, n, size, alive, *state, best, 20, cap, 0.01, False, elim)
                n += used
                calls += made
            results.append((n, best, calls, alive.copy(), elim.copy()))
        assert results[0][:3] == results[1][:3]
        assert np.array_equal(results[0][3], results[1][3])
        assert np.array_equal(results[0][4], results[1][4])


def test_numpy_fallback_selected_by_environment():
    code = ("from diffcls import _accel, kernels; "
            "print(_accel.USE_NUMBA, kernels.prune_rounds is kernels.prune_rounds_np)")
    env = dict(os.environ, DIFFCLS_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["False", "True"]


@pytest.mark.skipif(not _accel.HAS_NUMBA, reason="numba not installed")
def test_fallback_classifies_identically():
    code = ("import numpy as np, json\n"
            "from diffcls.classifier import ClassifierConfig, classify_dataset\n"
            "from diffcls.diffusion import GaussianDenoiser, generate_world_sample, make_world\n"
            "rng = np.random.default_rng(0)\n"
            "w = make_world(12, 6, 1.0, 1.2, rng)\n"
            "X = np.stack([generate_world_sample(w, int(k), rng) for k in rng.integers(0, 12, 40)])\n"
            "preds = classify_dataset(X, w.conditions(), GaussianDenoiser(w), ClassifierConfig(max_scores=500))\n"
            "print(json.dumps([[p.class_id, p.model_calls, p.eliminated] for p in preds]))\n")
    runs = []
    for flag in ("1", "0"):
        env = dict(os.environ, DIFFCLS_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        runs.append(out.stdout)
    assert runs[0] == runs[1]
