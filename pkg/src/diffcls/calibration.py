"""Confidence models and calibration measurement.

Two confidence sources are supported:

* a temperature softmax over the weighted class scores (needs every class
  scored to the end, so it does not apply to pruned runs)
* a logistic function of the number of model calls an example consumed
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit, log_expit, logsumexp

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
LOG_TAU_RANGE = (-10.0, 10.0)


@dataclass(frozen=True)
class TemperatureModel:
    tau: float

    def __post_init__(self):
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise ValueError("tau must be finite and positive")


@dataclass(frozen=True)
class PlattModel:
    """Confidence ``sigmoid(beta - n / tau)`` for an example that used ``n`` calls."""

    tau: float
    beta: float

    def __post_init__(self):
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise ValueError("tau must be finite and positive")
        if not math.isfinite(self.beta):
            raise ValueError("beta must be finite")


# ---------------------------------------------------------------------------
# Temperature softmax
# ---------------------------------------------------------------------------

def _softmax_rows(scores: np.ndarray, tau: float) -> np.ndarray:
    z = -scores / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def score_softmax_probs(weighted_scores: Mapping[int, float], tau: float) -> dict[int, float]:
    """p_k proportional to exp(-s_k / tau), computed after subtracting the max logit."""
    if len(weighted_scores) == 0:
        raise ValueError("no scores")
    if not (math.isfinite(tau) and tau > 0):
        raise ValueError("tau must be finite and positive")
    keys = list(weighted_scores)
    s = np.array([float(weighted_scores[k]) for k in keys])
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    p = _softmax_rows(s, tau)
    return dict(zip(keys, p.tolist()))


def _score_matrix(scores, labels):
    """Accept an (N, K) array with label indices, or class->score maps with class ids."""
    if len(scores) and isinstance(scores[0], Mapping):
        keys = sorted(scores[0])
        if any(sorted(s) != keys for s in scores):
            raise ValueError("every example must score the same classes")
        mat = np.array([[float(s[k]) for k in keys] for s in scores])
        pos = {k: i for i, k in enumerate(keys)}
        try:
            idx = np.array([pos[y] for y in labels], dtype=np.int64)
        except KeyError as err:
            raise ValueError(f"true class {err.args[0]} was not scored") from None
        return mat, idx
    mat = np.asarray(scores, dtype=np.float64)
    idx = np.asarray(labels, dtype=np.int64)
    if mat.ndim != 2:
        raise ValueError("scores must be an (N, K) array")
    if np.any((idx < 0) | (idx >= mat.shape[1])):
        raise ValueError("label index out of range")
    return mat, idx


def temperature_nll(scores: np.ndarray, labels: np.ndarray, tau: float) -> float:
    """Mean negative log-likelihood of the true classes under the temperature softmax."""
    z = -scores / tau
    logp = z[np.arange(len(labels)), labels] - logsumexp(z, axis=1)
    return float(-logp.mean())


def fit_temperature(scores, labels, tol: float = 1e-6) -> TemperatureModel:
    """Golden-section search for the NLL-minimising tau over log tau in [-10, 10].

    ``scores`` is an (N, K) array of weighted scores with ``labels`` the
    column of the true class, or a list of ``{class_id: score}`` maps with
    ``labels`` the true class ids.
    """
    mat, idx = _score_matrix(scores, labels)
    if mat.shape[0] != idx.shape[0] or mat.shape[0] == 0:
        raise ValueError("need one label per scored example")
    if mat.shape[1] < 2 or np.unique(idx).size < 2:
        raise ValueError("temperature fitting needs at least two classes represented")
    if not np.all(np.isfinite(mat)):
        raise ValueError("scores must be finite")

    def f(u):
        return temperature_nll(mat, idx, math.exp(u))

    lo, hi = LOG_TAU_RANGE
    c = hi - GOLDEN * (hi - lo)
    d = lo + GOLDEN * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > tol:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - GOLDEN * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + GOLDEN * (hi - lo)
            fd = f(d)
    u = 0.5 * (lo + hi)
    # the bracket ends are candidates too, so the minimiser never loses to them
    best = min((f(u), u), (f(LOG_TAU_RANGE[0]), LOG_TAU_RANGE[0]), (f(LOG_TAU_RANGE[1]), LOG_TAU_RANGE[1]))
    return TemperatureModel(math.exp(best[1]))


# ---------------------------------------------------------------------------
# Platt scaling of the call count
# ---------------------------------------------------------------------------

def platt_confidence(model: PlattModel, n) -> float | np.ndarray:
    n_arr = np.asarray(n, dtype=np.float64)
    if np.any(n_arr < 0):
        raise ValueError("call count must be non-negative")
    out = expit(model.beta - n_arr / model.tau)
    return float(out) if out.ndim == 0 else out


def logistic_nll(slope: float, intercept: float, x, y) -> float:
    """Mean NLL of binary ``y`` under ``sigmoid(slope * x + intercept)``."""
    z = slope * np.asarray(x, dtype=np.float64) + intercept
    y = np.asarray(y, dtype=np.float64)
    return float(-(y * log_expit(z) + (1.0 - y) * log_expit(-z)).mean())


def fit_logistic(x, y, grad_tol: float = 1e-8, max_iter: int = 100_000,
                 init_slope: float = -1.0) -> tuple[float, float]:
    """One-feature logistic regression by gradient descent with backtracking.

    The feature is standardised internally and the returned
    ``(slope, intercept)`` act on raw ``x``. A constant feature leaves the
    slope at its initial value and fits the intercept alone.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size == 0:
        raise ValueError("x and y must be equal-length vectors")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("outcomes must be 0 or 1")
    if y.min() == y.max():
        raise ValueError("need both outcomes present; the fit is not identifiable otherwise")
    m = x.mean()
    s = x.std()
    scale = s if s > 0 else 1.0
    z = (x - m) / scale
    theta = np.array([init_slope * scale, 0.0])

    def nll_grad(th):
        u = th[0] * z + th[1]
        nll = -(y * log_expit(u) + (1.0 - y) * log_expit(-u)).mean()
        r = expit(u) - y
        return nll, np.array([(r * z).mean(), r.mean()])

    f, g = nll_grad(theta)
    step = 1.0
    for _ in range(max_iter):
        gn2 = g @ g
        if math.sqrt(gn2) < grad_tol:
            break
        while True:
            cand = theta - step * g
            fc, gc = nll_grad(cand)
            if fc <= f - 1e-4 * step * gn2:
                break
            step *= 0.5
            if step < 1e-20:
                break
        if step < 1e-20:
            break
        theta, f, g = cand, fc, gc
        step = min(step * 2.0, 1e6)
    slope = theta[0] / scale
    return float(slope), float(theta[1] - slope * m)


def fit_platt(n, correct, grad_tol: float = 1e-8) -> PlattModel:
    """Fit ``sigmoid(beta - n / tau)`` to per-example correctness.

    Raises ``ValueError`` if only one outcome occurs, or if the fitted
    confidence does not decrease with ``n`` (no positive tau exists).
    """
    n = np.asarray(n, dtype=np.float64)
    if np.any(n < 0):
        raise ValueError("call counts must be non-negative")
    slope, intercept = fit_logistic(n, np.asarray(correct, dtype=np.float64), grad_tol=grad_tol)
    if not slope < 0:
        raise ValueError("confidence does not decrease with the call count; no positive tau fits")
    return PlattModel(tau=-1.0 / slope, beta=intercept)


# ---------------------------------------------------------------------------
# Reliability and ECE
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReliabilityBin:
    lo: float
    hi: float
    mean_conf: float | None
    accuracy: float | None
    count: int


@dataclass(frozen=True)
class ReliabilityReport:
    bins: tuple[ReliabilityBin, ...]
    ece: float

    @property
    def total(self) -> int:
        return sum(b.count for b in self.bins)

    def to_dict(self) -> dict:
        return {"bins": [{"lo": b.lo, "hi": b.hi, "mean_conf": b.mean_conf,
                          "accuracy": b.accuracy, "count": b.count} for b in self.bins],
                "ece": self.ece}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def reliability_and_ece(confidences, correctness, n_bins: int = 10) -> ReliabilityReport:
    """Equal-width reliability bins over [0, 1] and the expected calibration error.

    Bin ``i`` covers ``[i/B, (i+1)/B)``; the last bin also includes 1.
    Empty bins contribute nothing.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    corr = np.asarray(correctness, dtype=np.float64)
    if conf.shape != corr.shape or conf.ndim != 1:
        raise ValueError("confidences and correctness must be equal-length vectors")
    if conf.size == 0:
        raise ValueError("no examples")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if np.any(~np.isfinite(conf)) or np.any((conf < 0) | (conf > 1)):
        raise ValueError("confidences must lie in [0, 1]")
    edges = np.arange(n_bins + 1) / n_bins
    idx = np.clip(np.searchsorted(edges, conf, side="right") - 1, 0, n_bins - 1)
    bins = []
    ece = 0.0
    total = conf.size
    for i in range(n_bins):
        sel = idx == i
        cnt = int(sel.sum())
        if cnt:
            mc = float(conf[sel].mean())
            acc = float(corr[sel].mean())
            ece += cnt / total * abs(acc - mc)
            bins.append(ReliabilityBin(float(edges[i]), float(edges[i + 1]), mc, acc, cnt))
        else:
            bins.append(ReliabilityBin(float(edges[i]), float(edges[i + 1]), None, None, 0))
    return ReliabilityReport(tuple(bins), float(min(max(ece, 0.0), 1.0)))


def temperature_confidences(scores: Sequence[Mapping[int, float]], model: TemperatureModel):
    """Predicted class and its softmax probability for each example."""
    preds, confs = [], []
    for s in scores:
        p = score_softmax_probs(s, model.tau)
        k = min(p, key=lambda c: (s[c], c))
        preds.append(k)
        confs.append(p[k])
    return preds, np.array(confs)
