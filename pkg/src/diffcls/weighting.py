"""Timestep weighting functions and the learned 20-bucket weighting."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .diffusion import COSINE, NoiseSchedule, ScoreModel, check_time

N_BUCKETS = 20
BUCKET_WIDTH = 1.0 / N_BUCKETS
SNR_T_FLOOR = 1e-4
FD_STEP = 1e-6

VARIANTS = ("simple", "vdm", "heuristic", "learned")


@dataclass(frozen=True)
class WeightingSpec:
    """Which w_t to apply. Build with the classmethods, not directly.

    ``scale`` multiplies every weight; it exists so that argmin invariance
    under positive rescaling can be checked end to end.
    """

    variant: str
    lam: float = 7.0
    v: tuple[float, ...] | None = None
    schedule: NoiseSchedule = field(default=COSINE)
    scale: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown weighting {self.variant!r}")
        if self.variant == "heuristic" and not self.lam > 0:
            raise ValueError("heuristic lambda must be > 0")
        if self.variant == "learned":
            if self.v is None or len(self.v) != N_BUCKETS:
                raise ValueError(f"learned weighting needs exactly {N_BUCKETS} values")
            if not all(np.isfinite(self.v)):
                raise ValueError("learned weights must be finite")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError("scale must be positive")

    @classmethod
    def simple(cls, schedule: NoiseSchedule = COSINE):
        return cls("simple", schedule=schedule)

    @classmethod
    def vdm(cls, schedule: NoiseSchedule = COSINE):
        return cls("vdm", schedule=schedule)

    @classmethod
    def heuristic(cls, lam: float = 7.0):
        return cls("heuristic", lam=float(lam))

    @classmethod
    def learned(cls, v: Sequence[float]):
        return cls("learned", v=tuple(float(x) for x in v))

    def scaled(self, c: float) -> "WeightingSpec":
        return WeightingSpec(self.variant, self.lam, self.v, self.schedule, self.scale * c)

    @property
    def zero_shot(self) -> bool:
        # learned weights consume labels
        return self.variant != "learned"

    def describe(self) -> str:
        if self.variant == "heuristic":
            return f"heuristic:{self.lam:g}"
        if self.variant == "learned":
            return "learned"
        return self.variant

    @classmethod
    def parse(cls, text: str, schedule: NoiseSchedule = COSINE) -> "WeightingSpec":
        """Parse ``simple | vdm | heuristic[:lambda] | learned:<path>``."""
        name, _, arg = text.partition(":")
        name = name.strip().lower()
        if name == "simple":
            return cls.simple(schedule)
        if name == "vdm":
            return cls.vdm(schedule)
        if name == "heuristic":
            return cls.heuristic(float(arg) if arg else 7.0)
        if name == "learned":
            if not arg:
                raise ValueError("learned weighting needs a path: learned:<file>")
            return cls.learned(load_weights(arg))
        raise ValueError(f"unknown weighting {text!r}; expected simple | vdm | heuristic:<lambda> | learned:<path>")


def bucket_index(t):
    """floor(t / 0.05), with t = 1 mapped to the last bucket."""
    arr = check_time(t)
    idx = np.floor(arr / BUCKET_WIDTH).astype(np.int64)
    # the division can round across an edge; edges are the products 0.05 * i
    idx = idx - (arr < idx * BUCKET_WIDTH)
    idx = idx + (arr >= (idx + 1) * BUCKET_WIDTH)
    idx = np.clip(idx, 0, N_BUCKETS - 1)
    return int(idx) if idx.ndim == 0 else idx


def _snr_derivative(schedule: NoiseSchedule, t):
    if schedule.has_analytic_snr_derivative:
        return schedule.snr_derivative(t)
    lo = np.clip(t - FD_STEP, 0.0, 1.0)
    hi = np.clip(t + FD_STEP, 0.0, 1.0)
    return (schedule.snr(hi) - schedule.snr(lo)) / (hi - lo)


def weight(spec: WeightingSpec, t):
    """w_t for scalar or array ``t``."""
    arr = check_time(t)
    if spec.variant == "heuristic":
        out = np.exp(-spec.lam * arr)
    elif spec.variant == "learned":
        out = np.asarray(spec.v)[bucket_index(arr)]
    else:
        tc = np.maximum(arr, SNR_T_FLOOR)
        if spec.variant == "simple":
            out = spec.schedule.snr(tc)
        else:
            out = np.abs(_snr_derivative(spec.schedule, tc))
    out = spec.scale * np.asarray(out, dtype=np.float64)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Learned weighting
# ---------------------------------------------------------------------------

@dataclass
class BucketedScores:
    """Per-bucket mean squared errors for a set of examples.

    values : (N, K, 20) mean error per example, class and bucket
    counts : (N, 20) number of shared draws that landed in each bucket
    """

    values: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.values.ndim != 3 or self.values.shape[2] != N_BUCKETS:
            raise ValueError("values must have shape (N, K, 20)")
        if self.counts.shape != (self.values.shape[0], N_BUCKETS):
            raise ValueError("counts must have shape (N, 20)")

    def features(self) -> np.ndarray:
        """Values with empty buckets zeroed; validates the populated ones."""
        filled = np.broadcast_to(self.counts[:, None, :] > 0, self.values.shape)
        vals = self.values[filled]
        if not np.all(np.isfinite(vals)):
            raise ValueError("bucketed scores must be finite")
        if np.any(vals < 0):
            raise ValueError("bucketed scores must be non-negative")
        return np.where(filled, np.nan_to_num(self.values), 0.0)


def bucket_scores(x0, conditions, model: ScoreModel, rng: np.random.Generator,
                  per_bucket: int = 5, schedule: NoiseSchedule = COSINE):
    """Stratified shared-noise estimate of the per-bucket errors of one example.

    Returns ``(values (K, 20), counts (20,))``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    lo = np.repeat(np.arange(N_BUCKETS) * BUCKET_WIDTH, per_bucket)
    ts = lo + BUCKET_WIDTH * rng.random(lo.shape[0])
    ts = np.minimum(ts, 1.0)
    eps = rng.standard_normal((ts.shape[0], x0.shape[0]))
    x_ts = schedule.alpha(ts)[:, None] * x0 + schedule.sigma(ts)[:, None] * eps
    errs = model.errors_rounds(x0, x_ts, ts, conditions)  # (R, K)
    idx = bucket_index(ts)
    counts = np.bincount(idx, minlength=N_BUCKETS)
    values = np.zeros((len(conditions), N_BUCKETS))
    for i in range(N_BUCKETS):
        if counts[i]:
            values[:, i] = errs[idx == i].mean(axis=0)
    return values, counts


def learned_log_likelihood(v, feats, labels):
    """Mean log p_v(y | x) and its gradient w.r.t. v."""
    logits = -np.einsum("nki,i->nk", feats, v)
    logp = logits - logsumexp(logits, axis=1, keepdims=True)
    n = feats.shape[0]
    rows = np.arange(n)
    ll = logp[rows, labels].mean()
    p = np.exp(logp)
    expected = np.einsum("nk,nki->ni", p, feats)
    grad = (expected - feats[rows, labels]).mean(axis=0)
    return ll, grad


@dataclass
class LearnOptions:
    max_iter: int = 5000
    grad_tol: float = 1e-6
    init_step: float = 1.0
    l2: float = 0.0


def learn_weights(scores: BucketedScores, labels, opts: LearnOptions | None = None) -> np.ndarray:
    """Maximum-likelihood bucket weights by full-batch gradient ascent.

    Starts from all ones and uses a backtracking (Armijo) step. Stops once the
    gradient norm falls below ``opts.grad_tol`` or after ``opts.max_iter``
    iterations; separable data therefore ends at the iteration cap.
    """
    opts = opts or LearnOptions()
    labels = np.asarray(labels, dtype=np.int64)
    if scores.values.shape[0] == 0:
        raise ValueError("no examples")
    if labels.shape != (scores.values.shape[0],):
        raise ValueError("one label per example required")
    n_classes = scores.values.shape[1]
    if np.any((labels < 0) | (labels >= n_classes)):
        raise ValueError("label outside the class set")
    if not np.all(scores.counts.sum(axis=0) > 0):
        raise ValueError("every bucket needs at least one populated example")
    feats = scores.features()

    def objective(v):
        ll, g = learned_log_likelihood(v, feats, labels)
        if opts.l2:
            ll -= 0.5 * opts.l2 * v @ v
            g = g - opts.l2 * v
        return ll, g

    v = np.ones(N_BUCKETS)
    ll, g = objective(v)
    step = opts.init_step
    for _ in range(opts.max_iter):
        gnorm2 = g @ g
        if np.sqrt(gnorm2) < opts.grad_tol:
            break
        while True:
            cand = v + step * g
            ll_c, g_c = objective(cand)
            if ll_c >= ll + 1e-4 * step * gnorm2:
                break
            step *= 0.5
            if step < 1e-20:
                return v
        v, ll, g = cand, ll_c, g_c
        step *= 2.0
    return v


def classify_buckets(feats, v) -> np.ndarray:
    """argmin_k sum_i v_i b_i(x, k) for every example; ties to the lowest k."""
    return np.argmin(np.einsum("nki,i->nk", feats, np.asarray(v, dtype=np.float64)), axis=1)


def save_weights(path, v) -> None:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (N_BUCKETS,):
        raise ValueError(f"expected {N_BUCKETS} weights")
    Path(path).write_text("".join(f"{x!r}\n" for x in v.tolist()), encoding="utf-8")


def load_weights(path) -> np.ndarray:
    lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if len(lines) != N_BUCKETS:
        raise ValueError(f"{path}: expected {N_BUCKETS} lines, found {len(lines)}")
    return np.array([float(x) for x in lines])
