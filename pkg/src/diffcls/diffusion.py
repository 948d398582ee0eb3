"""Continuous-time forward process, denoiser contract and the Gaussian oracle world."""
from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels

__all__ = [
    "NoiseSchedule", "COSINE", "NoisedObservation", "Condition", "ScoreModel",
    "GaussianWorld", "GaussianDenoiser", "schedule_eval", "sample_forward",
    "squared_error_score", "posterior_mean_denoiser", "bayes_classify",
    "generate_world_sample", "make_world", "make_clustered_world", "check_time",
]


def check_time(t):
    """Raise ``ValueError`` unless every entry of ``t`` lies in [0, 1]."""
    arr = np.asarray(t, dtype=np.float64)
    if not np.all((arr >= 0.0) & (arr <= 1.0)):
        raise ValueError(f"time must lie in [0, 1], got {t!r}")
    return arr


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance-preserving schedule ``x_t = alpha(t) x0 + sigma(t) eps``.

    Families
    --------
    ``cosine``  alpha = cos(pi t / 2), sigma = sin(pi t / 2)
    ``sqrt``    alpha = sqrt(1 - t),    sigma = sqrt(t)

    Both satisfy alpha(0)=1, sigma(0)=0, alpha(1)=0, sigma(1)=1 exactly.
    """

    family: str = "cosine"

    def __post_init__(self):
        if self.family not in ("cosine", "sqrt"):
            raise ValueError(f"unknown schedule family {self.family!r}")

    def alpha(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.family == "cosine":
            out = np.cos(0.5 * np.pi * t)
        else:
            out = np.sqrt(np.clip(1.0 - t, 0.0, None))
        return np.where(t >= 1.0, 0.0, out)

    def sigma(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.family == "cosine":
            out = np.sin(0.5 * np.pi * t)
        else:
            out = np.sqrt(np.clip(t, 0.0, None))
        return np.where(t >= 1.0, 1.0, out)

    def snr(self, t):
        a = self.alpha(t)
        s = self.sigma(t)
        with np.errstate(divide="ignore"):
            return np.where(s == 0.0, np.inf, a * a / np.where(s == 0.0, 1.0, s * s))

    @property
    def has_analytic_snr_derivative(self) -> bool:
        return self.family == "cosine"

    def snr_derivative(self, t):
        """d SNR / dt, analytic for the cosine family only."""
        if self.family != "cosine":
            raise NotImplementedError(self.family)
        theta = 0.5 * np.pi * np.asarray(t, dtype=np.float64)
        s = np.sin(theta)
        return -np.pi * np.cos(theta) / s ** 3


COSINE = NoiseSchedule()


def schedule_eval(schedule: NoiseSchedule, t: float) -> tuple[float, float, float]:
    """Return ``(alpha, sigma, snr)`` at ``t``; snr(0) is ``inf``."""
    check_time(t)
    return float(schedule.alpha(t)), float(schedule.sigma(t)), float(schedule.snr(t))


@dataclass(frozen=True)
class NoisedObservation:
    data: np.ndarray
    time: float
    noise: np.ndarray


@dataclass(frozen=True)
class Condition:
    class_id: int
    prompt: str

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("condition prompt must be non-empty")


def sample_forward(x0, t: float, rng: np.random.Generator,
                   schedule: NoiseSchedule = COSINE) -> NoisedObservation:
    check_time(t)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = rng.standard_normal(x0.shape)
    a, s, _ = schedule_eval(schedule, t)
    return NoisedObservation(data=a * x0 + s * eps, time=float(t), noise=eps)


def squared_error_score(x0, x_hat) -> float:
    """Unnormalised squared L2 distance."""
    x0 = np.asarray(x0, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x0.shape != x_hat.shape:
        raise ValueError(f"dimension mismatch: {x0.shape} vs {x_hat.shape}")
    r = x0 - x_hat
    return float(r @ r)


class ScoreModel(abc.ABC):
    """Conditional denoiser ``x_hat = denoise(x_t, t, condition)``.

    Subclasses must implement :meth:`denoise`. The ``errors*`` methods are
    batched conveniences used by the classifier; the defaults loop over
    :meth:`denoise` and may be overridden with faster equivalents.
    """

    @abc.abstractmethod
    def denoise(self, x_t: np.ndarray, t: float, condition: Condition) -> np.ndarray:
        ...

    def errors(self, x0, x_t, t, conditions: Sequence[Condition]) -> np.ndarray:
        return np.array([squared_error_score(x0, self.denoise(x_t, t, c)) for c in conditions])

    def errors_rounds(self, x0, x_ts, ts, conditions) -> np.ndarray:
        """Errors for shared rounds: shape (rounds, len(conditions))."""
        if len(ts) == 0:
            return np.zeros((0, len(conditions)))
        return np.stack([self.errors(x0, x_ts[n], ts[n], conditions) for n in range(len(ts))])

    def errors_indep(self, x0, x_ts, ts, conditions) -> np.ndarray:
        """Errors with a private draw per (condition, sample): shape (K, samples)."""
        out = np.empty(ts.shape)
        for i, c in enumerate(conditions):
            for n in range(ts.shape[1]):
                out[i, n] = squared_error_score(x0, self.denoise(x_ts[i, n], ts[i, n], c))
        return out


@dataclass(frozen=True)
class GaussianWorld:
    """K isotropic Gaussian classes with a shared within-class std and uniform prior."""

    means: np.ndarray
    std: float
    seed: int | None = field(default=None, compare=False)

    def __post_init__(self):
        means = np.array(self.means, dtype=np.float64)
        if means.ndim != 2 or means.shape[0] < 2 or means.shape[1] < 1:
            raise ValueError("means must be a (K>=2, d>=1) array")
        if not np.all(np.isfinite(means)):
            raise ValueError("means must be finite")
        # std == 0 is admitted as the degenerate point-mass limit
        if not (np.isfinite(self.std) and self.std >= 0.0):
            raise ValueError("std must be finite and non-negative")
        means.setflags(write=False)
        object.__setattr__(self, "means", means)

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def conditions(self) -> list[Condition]:
        return [Condition(k, f"class {k}") for k in range(self.n_classes)]


def _posterior_coeffs(std, alpha, sigma):
    # x_hat = a * x_t + b * mu
    s2 = std * std
    denom = alpha * alpha * s2 + sigma * sigma
    if np.ndim(denom) == 0:
        if denom == 0.0:
            # t = 0 with a point-mass prior: the prior wins
            return 0.0, 1.0
        return alpha * s2 / denom, sigma * sigma / denom
    safe = np.where(denom == 0.0, 1.0, denom)
    a = np.where(denom == 0.0, 0.0, alpha * s2 / safe)
    b = np.where(denom == 0.0, 1.0, sigma * sigma / safe)
    return a, b


def posterior_mean_denoiser(world: GaussianWorld, condition: Condition, x_t: NoisedObservation,
                            schedule: NoiseSchedule = COSINE) -> np.ndarray:
    """E[x0 | x_t, class k] under the world, at time ``x_t.time``."""
    if not 0 <= condition.class_id < world.n_classes:
        raise ValueError(f"class_id {condition.class_id} out of range")
    alpha, sigma, _ = schedule_eval(schedule, x_t.time)
    a, b = _posterior_coeffs(world.std, alpha, sigma)
    return a * np.asarray(x_t.data) + b * world.means[condition.class_id]


class GaussianDenoiser(ScoreModel):
    """Exact Bayes denoiser of a :class:`GaussianWorld`, usable as a ScoreModel."""

    def __init__(self, world: GaussianWorld, schedule: NoiseSchedule = COSINE):
        self.world = world
        self.schedule = schedule

    def denoise(self, x_t, t, condition):
        return posterior_mean_denoiser(self.world, condition,
                                       NoisedObservation(np.asarray(x_t), float(t), None),
                                       self.schedule)

    def _means(self, conditions):
        ids = np.fromiter((c.class_id for c in conditions), dtype=np.int64, count=len(conditions))
        return np.ascontiguousarray(self.world.means[ids])

    def _coeffs(self, ts):
        return _posterior_coeffs(self.world.std, self.schedule.alpha(ts), self.schedule.sigma(ts))

    def errors(self, x0, x_t, t, conditions):
        a, b = self._coeffs(float(t))
        return kernels.gauss_errors(np.asarray(x0, dtype=np.float64), np.asarray(x_t, dtype=np.float64),
                                    float(a), float(b), self._means(conditions))

    def errors_rounds(self, x0, x_ts, ts, conditions):
        a, b = self._coeffs(np.asarray(ts, dtype=np.float64))
        return kernels.gauss_errors_rounds(np.asarray(x0, dtype=np.float64), np.ascontiguousarray(x_ts),
                                           np.atleast_1d(a).astype(np.float64),
                                           np.atleast_1d(b).astype(np.float64), self._means(conditions))

    def errors_indep(self, x0, x_ts, ts, conditions):
        a, b = self._coeffs(np.asarray(ts, dtype=np.float64))
        return kernels.gauss_errors_indep(np.asarray(x0, dtype=np.float64), np.ascontiguousarray(x_ts),
                                          np.ascontiguousarray(a, dtype=np.float64),
                                          np.ascontiguousarray(b, dtype=np.float64), self._means(conditions))


def bayes_classify(world: GaussianWorld, x0) -> int:
    """Nearest class mean; ties go to the lowest class id."""
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (world.dim,):
        raise ValueError(f"expected dimension {world.dim}, got {x0.shape}")
    d2 = ((world.means - x0) ** 2).sum(axis=1)
    return int(np.argmin(d2))


def generate_world_sample(world: GaussianWorld, class_id: int, rng: np.random.Generator) -> np.ndarray:
    if not 0 <= class_id < world.n_classes:
        raise ValueError(f"class_id {class_id} out of range")
    return world.means[class_id] + world.std * rng.standard_normal(world.dim)


def make_world(n_classes: int, dim: int, std: float, separation: float,
               rng: np.random.Generator, spread: float | None = None,
               max_tries: int = 10_000, seed: int | None = None) -> GaussianWorld:
    """Rejection-sample class means with pairwise distance >= separation * std.

    Candidate means are drawn from N(0, (spread * std)^2 I); ``spread``
    defaults to ``separation``.
    """
    if n_classes < 2 or dim < 1:
        raise ValueError("need n_classes >= 2 and dim >= 1")
    spread = separation if spread is None else spread
    min_dist = separation * std
    means: list[np.ndarray] = []
    tries = 0
    while len(means) < n_classes:
        cand = spread * std * rng.standard_normal(dim)
        tries += 1
        if all(np.linalg.norm(cand - m) >= min_dist for m in means):
            means.append(cand)
        elif tries >= max_tries:
            raise RuntimeError(
                f"could not place {n_classes} means at separation {separation} "
                f"(placed {len(means)} after {tries} draws); increase spread or dim")
    return GaussianWorld(np.array(means), std, seed=seed)


def make_clustered_world(n_clusters: int, per_cluster: int, dim: int, std: float,
                         separation: float, spread: float, rng: np.random.Generator,
                         seed: int | None = None) -> GaussianWorld:
    """Clusters of confusable classes.

    Cluster centres are placed as in :func:`make_world` (pairwise distance
    >= ``separation * std``); each class mean is its centre plus
    ``N(0, (spread * std)^2 I)``. Classes within a cluster overlap, classes in
    different clusters are easily told apart.
    """
    if per_cluster < 1:
        raise ValueError("per_cluster must be >= 1")
    if spread < 0:
        raise ValueError("spread must be non-negative")
    if n_clusters * per_cluster < 2:
        raise ValueError("need at least two classes")
    if n_clusters >= 2:
        centres = make_world(n_clusters, dim, std, separation, rng).means
    else:
        centres = np.zeros((1, dim))
    means = np.concatenate([c + spread * std * rng.standard_normal((per_cluster, dim)) for c in centres])
    return GaussianWorld(means, std, seed=seed)
