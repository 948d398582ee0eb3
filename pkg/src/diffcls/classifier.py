"""Zero-shot classification by minimum weighted denoising error.

Three estimators of ``argmin_k E_{t,eps}[w_t ||x - x_hat(x_t, t, k)||^2]``:

* :func:`classify_naive`   independent (t, x_t) draws per class and sample
* :func:`classify_shared`  one (t, x_t) per round, shared by every class
* :func:`classify_pruned`  shared rounds plus successive elimination of
  classes whose paired t-test against the running argmin is significant
"""
from __future__ import annotations

import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .diffusion import COSINE, Condition, NoiseSchedule, ScoreModel
from .stats import ALTERNATIVES
from .weighting import WeightingSpec, weight

NOISE_MODES = ("shared", "independent")
STRATEGIES = ("naive", "shared", "pruned")


@dataclass(frozen=True)
class ClassifierConfig:
    min_scores: int = 20
    max_scores: int = 2000
    cutoff_pval: float = 2e-3
    weighting: WeightingSpec = field(default_factory=WeightingSpec.heuristic)
    noise_mode: str = "shared"
    pruning: bool = True
    seed: int = 0
    alternative: str = "greater"
    schedule: NoiseSchedule = COSINE

    def __post_init__(self):
        if not 1 <= self.min_scores <= self.max_scores:
            raise ValueError("need 1 <= min_scores <= max_scores")
        if not 0.0 < self.cutoff_pval < 1.0:
            raise ValueError("cutoff_pval must lie in (0, 1)")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}")
        if self.pruning and self.noise_mode != "shared":
            raise ValueError("pruning relies on paired scores and requires shared noise")
        if self.alternative not in ALTERNATIVES:
            raise ValueError(f"alternative must be one of {ALTERNATIVES}")

    @property
    def strategy(self) -> str:
        if self.pruning:
            return "pruned"
        return "shared" if self.noise_mode == "shared" else "naive"

    def to_dict(self) -> dict:
        return {
            "min_scores": self.min_scores,
            "max_scores": self.max_scores,
            "cutoff_pval": self.cutoff_pval,
            "weighting": self.weighting.describe(),
            "weighting_scale": self.weighting.scale,
            "noise_mode": self.noise_mode,
            "pruning": self.pruning,
            "seed": self.seed,
            "alternative": self.alternative,
            "schedule": self.schedule.family,
        }


class ScoresLedger:
    """Per-round record of (t, w_t, squared error per surviving class).

    ``errors[r, k]`` is NaN once class ``k`` has been eliminated.
    """

    def __init__(self, class_ids: Sequence[int], dim: int, capacity: int = 64):
        self.class_ids = np.asarray(class_ids, dtype=np.int64)
        k = len(self.class_ids)
        self.n = 0
        self._t = np.empty(capacity)
        self._w = np.empty(capacity)
        self._err = np.empty((capacity, k))
        self._eps = np.empty((capacity, dim))

    def _grow(self, need):
        cap = self._t.shape[0]
        if need <= cap:
            return
        new = max(need, 2 * cap)
        self._t = np.resize(self._t, new)
        self._w = np.resize(self._w, new)
        err = np.empty((new, self._err.shape[1]))
        err[:cap] = self._err
        self._err = err
        eps = np.empty((new, self._eps.shape[1]))
        eps[:cap] = self._eps
        self._eps = eps

    def add_round(self, t, w, errors, alive, eps) -> None:
        self._grow(self.n + 1)
        r = self.n
        self._t[r] = t
        self._w[r] = w
        row = np.full(self._err.shape[1], np.nan)
        row[alive] = errors
        self._err[r] = row
        self._eps[r] = eps
        self.n += 1

    def add_block(self, ts, ws, errors, eps) -> None:
        m = len(ts)
        self._grow(self.n + m)
        sl = slice(self.n, self.n + m)
        self._t[sl] = ts
        self._w[sl] = ws
        self._err[sl] = errors
        self._eps[sl] = eps
        self.n += m

    @property
    def t(self):
        return self._t[:self.n]

    @property
    def w(self):
        return self._w[:self.n]

    @property
    def errors(self):
        return self._err[:self.n]

    @property
    def noise(self):
        return self._eps[:self.n]

    def weighted(self):
        return self.w[:, None] * self.errors

    def counts(self):
        return (~np.isnan(self.errors)).sum(axis=0)

    def rows(self):
        """Yield ``(round, t, w_t, class_id, sq_error)`` for every recorded score."""
        for r in range(self.n):
            for j, cid in enumerate(self.class_ids):
                e = self._err[r, j]
                if not np.isnan(e):
                    yield r + 1, self._t[r], self._w[r], int(cid), e


def aggregate_weighted(ledger: ScoresLedger, class_id: int) -> float:
    """Mean of w_t * error over the rounds ``class_id`` was scored in."""
    where = np.nonzero(ledger.class_ids == class_id)[0]
    if where.size == 0:
        raise ValueError(f"class {class_id} not in ledger")
    col = ledger.weighted()[:, where[0]]
    col = col[~np.isnan(col)]
    if col.size == 0:
        raise ValueError(f"class {class_id} has no scores")
    return float(col.mean())


@dataclass
class Prediction:
    class_id: int
    rounds_used: int
    model_calls: int
    scores: dict[int, float]
    eliminated: list[tuple[int, int]] = field(default_factory=list)
    ledger: ScoresLedger | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "class_id": self.class_id,
            "n_rounds": self.rounds_used,
            "model_calls": self.model_calls,
            "scores": {str(k): v for k, v in self.scores.items()},
            "eliminated": [list(e) for e in self.eliminated],
        }


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------

def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Generator for a named sub-stream of a root seed, e.g. ``("episodes", i)``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(_name_key(name), *index)))


def episode_rng(seed: int, example_index: int) -> np.random.Generator:
    return substream(seed, "episodes", example_index)


class _NoiseStream:
    """Separate t and eps streams, so block and round-by-round draws coincide."""

    def __init__(self, rng: np.random.Generator):
        self.t_rng, self.eps_rng = rng.spawn(2)

    def draw(self, n: int, dim: int):
        return self.t_rng.random(n), self.eps_rng.standard_normal((n, dim))


def _noised(x0, ts, eps, schedule):
    return schedule.alpha(ts)[:, None] * x0[None, :] + schedule.sigma(ts)[:, None] * eps


def _sorted_labels(label_set: Sequence[Condition]) -> list[Condition]:
    if len(label_set) == 0:
        raise ValueError("label set is empty")
    labels = sorted(label_set, key=lambda c: c.class_id)
    ids = [c.class_id for c in labels]
    if len(set(ids)) != len(ids):
        raise ValueError("class ids must be unique")
    return labels


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

@dataclass
class ScoredRound:
    t: float
    w: float
    errors: dict[int, float]
    noise: np.ndarray


def score_round(x0, candidates: Sequence[Condition], model: ScoreModel, weighting: WeightingSpec,
                rng: np.random.Generator, schedule: NoiseSchedule = COSINE) -> ScoredRound:
    """One shared draw of (t, x_t) scored against every candidate."""
    if len(candidates) == 0:
        raise ValueError("no candidates")
    x0 = np.asarray(x0, dtype=np.float64)
    t = float(rng.random())
    eps = rng.standard_normal(x0.shape[0])
    x_t = float(schedule.alpha(t)) * x0 + float(schedule.sigma(t)) * eps
    errs = model.errors(x0, x_t, t, candidates)
    return ScoredRound(t, weight(weighting, t), {c.class_id: float(e) for c, e in zip(candidates, errs)}, eps)


def _naive_weighted(x0, labels, model, weighting, n_per_class, rng, schedule) -> np.ndarray:
    """Weighted errors with a private (t, x_t) per class and sample, shape (K, n)."""
    k, d = len(labels), x0.shape[0]
    stream = _NoiseStream(rng)
    # sample-major order: the first m samples per class do not depend on n_per_class
    ts, eps = stream.draw(k * n_per_class, d)
    ts = np.ascontiguousarray(ts.reshape(n_per_class, k).T)
    eps = np.ascontiguousarray(eps.reshape(n_per_class, k, d).transpose(1, 0, 2))
    x_ts = schedule.alpha(ts)[..., None] * x0 + schedule.sigma(ts)[..., None] * eps
    errs = model.errors_indep(x0, x_ts, ts, labels)
    return weight(weighting, ts.ravel()).reshape(k, n_per_class) * errs


def classify_naive(x0, label_set: Sequence[Condition], model: ScoreModel, weighting: WeightingSpec,
                   n_per_class: int, rng: np.random.Generator,
                   schedule: NoiseSchedule = COSINE) -> Prediction:
    """Monte Carlo estimate with an independent (t, x_t) for every class and sample."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    labels = _sorted_labels(label_set)
    x0 = np.asarray(x0, dtype=np.float64)
    k = len(labels)
    means = _naive_weighted(x0, labels, model, weighting, n_per_class, rng, schedule).mean(axis=1)
    best = int(np.argmin(means))
    return Prediction(labels[best].class_id, n_per_class, k * n_per_class,
                      {c.class_id: float(m) for c, m in zip(labels, means)})


def _shared_ledger(x0, labels, model, weighting, n_rounds, rng, schedule) -> ScoresLedger:
    d = x0.shape[0]
    ts, eps = _NoiseStream(rng).draw(n_rounds, d)
    errs = model.errors_rounds(x0, _noised(x0, ts, eps, schedule), ts, labels)
    ledger = ScoresLedger([c.class_id for c in labels], d, capacity=n_rounds)
    ledger.add_block(ts, weight(weighting, ts), errs, eps)
    return ledger


def classify_shared(x0, label_set: Sequence[Condition], model: ScoreModel, weighting: WeightingSpec,
                    n_rounds: int, rng: np.random.Generator,
                    schedule: NoiseSchedule = COSINE) -> Prediction:
    """Shared-noise estimate over the full label set, no pruning."""
    if n_rounds < 1:
        raise ValueError("n_rounds must be >= 1")
    labels = _sorted_labels(label_set)
    x0 = np.asarray(x0, dtype=np.float64)
    k = len(labels)
    ledger = _shared_ledger(x0, labels, model, weighting, n_rounds, rng, schedule)
    means = ledger.weighted().mean(axis=0)
    best = int(np.argmin(means))
    return Prediction(labels[best].class_id, n_rounds, k * n_rounds,
                      {c.class_id: float(m) for c, m in zip(labels, means)}, ledger=ledger)


def classify_pruned(x0, label_set: Sequence[Condition], model: ScoreModel, config: ClassifierConfig,
                    rng: np.random.Generator) -> Prediction:
    """Shared-noise scoring with candidate pruning.

    Each round draws one (t, x_t), scores every surviving candidate and
    recomputes the argmin of the weighted means. From round ``min_scores``
    on, every other survivor whose weighted per-round scores exceed the
    argmin's with paired-t p-value below ``cutoff_pval`` is removed. Runs
    until one candidate is left or ``max_scores`` rounds have been used.

    Rounds are scored in blocks against the survivors at block start; a
    score for a class eliminated earlier in the block is discarded and not
    counted as a model call, so the result equals strict round-by-round
    evaluation.
    """
    labels = _sorted_labels(label_set)
    x0 = np.asarray(x0, dtype=np.float64)
    k, d = len(labels), x0.shape[0]
    ids = [c.class_id for c in labels]
    cap = config.max_scores
    W = np.full((cap, k), np.nan)
    ledger = ScoresLedger(ids, d, capacity=min(cap, 256))
    alive = np.ones(k, dtype=bool)
    sums = np.zeros(k)
    acc_n = np.zeros(k)
    acc_mean = np.zeros(k)
    acc_m2 = np.zeros(k)
    elim = np.zeros(k, dtype=np.int64)
    two_sided = config.alternative == "two-sided"
    stream = _NoiseStream(rng)
    schedule = config.schedule
    best = 0
    calls = 0
    n = 0
    block = 16
    while alive.sum() > 1 and n < cap:
        if n < config.min_scores:
            size = config.min_scores - n
        else:
            size = block
            block = min(2 * block, 256)
        size = min(size, cap - n)
        ts, eps = stream.draw(size, d)
        live = np.nonzero(alive)[0]
        errs = model.errors_rounds(x0, _noised(x0, ts, eps, schedule), ts, [labels[i] for i in live])
        ws = weight(config.weighting, ts)
        W[n:n + size, live] = ws[:, None] * errs
        used, best, made = kernels.prune_rounds(W, n, size, alive, sums, acc_n, acc_mean, acc_m2, best,
                                                config.min_scores, cap, config.cutoff_pval, two_sided, elim)
        calls += made
        rows = np.full((used, k), np.nan)
        rows[:, live] = errs[:used]
        rounds = np.arange(n + 1, n + used + 1)
        for i in live:
            if elim[i] and elim[i] <= n + used:
                rows[rounds > elim[i], i] = np.nan
        ledger.add_block(ts[:used], ws[:used], rows, eps[:used])
        n += used
    eliminated = sorted(((ids[i], int(elim[i])) for i in np.nonzero(elim)[0]), key=lambda e: (e[1], e[0]))
    final = {ids[i]: float(sums[i] / n) for i in np.nonzero(alive)[0]} if n else {}
    return Prediction(ids[int(best)], n, calls, final, eliminated, ledger=ledger)


def classify(x0, label_set: Sequence[Condition], model: ScoreModel, config: ClassifierConfig,
             rng: np.random.Generator) -> Prediction:
    """Dispatch on ``config``: pruned, shared (max_scores rounds) or naive (max_scores per class)."""
    if config.pruning:
        return classify_pruned(x0, label_set, model, config, rng)
    if config.noise_mode == "shared":
        return classify_shared(x0, label_set, model, config.weighting, config.max_scores, rng, config.schedule)
    return classify_naive(x0, label_set, model, config.weighting, config.max_scores, rng, config.schedule)


# ---------------------------------------------------------------------------
# Datasets and efficiency curves
# ---------------------------------------------------------------------------

def _run_one(args):
    i, x, labels, model, config, keep_ledger = args
    pred = classify(x, labels, model, config, episode_rng(config.seed, i))
    if not keep_ledger:
        pred.ledger = None
    return pred


def classify_dataset(X, label_set: Sequence[Condition], model: ScoreModel, config: ClassifierConfig,
                     workers: int = 1, keep_ledger: bool = False) -> list[Prediction]:
    """Classify every row of ``X``; episode ``i`` is seeded from ``(config.seed, i)``.

    Output order follows the rows regardless of ``workers``.
    """
    jobs = [(i, np.asarray(x), label_set, model, config, keep_ledger) for i, x in enumerate(X)]
    if workers <= 1 or len(jobs) < 2:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def config_for(strategy: str, budget: int, base: ClassifierConfig) -> ClassifierConfig:
    """Config running ``strategy`` with ``budget`` samples per class (rounds cap for pruned)."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    kw = dict(weighting=base.weighting, seed=base.seed, alternative=base.alternative,
              schedule=base.schedule, cutoff_pval=base.cutoff_pval)
    if strategy == "pruned":
        return ClassifierConfig(min_scores=min(base.min_scores, budget), max_scores=budget,
                                pruning=True, noise_mode="shared", **kw)
    return ClassifierConfig(min_scores=1, max_scores=budget, pruning=False,
                            noise_mode="shared" if strategy == "shared" else "independent", **kw)


@dataclass(frozen=True)
class CurveRow:
    strategy: str
    budget: int
    accuracy: float
    mean_calls: float


def _prefix_predictions(weighted: np.ndarray, budgets: Sequence[int], ids, axis: int) -> list[int]:
    # same reduction as the classify_* functions, so argmins (and ties) agree exactly
    out = []
    for b in budgets:
        part = weighted[:, :b] if axis == 1 else weighted[:b]
        out.append(ids[int(np.argmin(np.ascontiguousarray(part).mean(axis=axis)))])
    return out


def efficiency_curve(X, y, label_set: Sequence[Condition], model: ScoreModel,
                     strategies: Sequence[str], call_budgets: Sequence[int],
                     base: ClassifierConfig | None = None, workers: int = 1) -> list[CurveRow]:
    """Accuracy against mean model calls for each (strategy, budget).

    ``budget`` is samples per class for naive and shared, and the
    ``max_scores`` cap for pruned. Budgets <= 0 are skipped. Rows come back
    sorted by (strategy, budget).

    Naive and shared draws are prefix-consistent, so each example is scored
    once at the largest budget and smaller budgets read the leading samples;
    the result equals running :func:`classify` at every budget.
    """
    if len(X) == 0:
        raise ValueError("empty dataset")
    for s in strategies:
        if s not in STRATEGIES:
            raise ValueError(f"unknown strategy {s!r}")
    base = base or ClassifierConfig()
    y = np.asarray(y)
    budgets = sorted({int(b) for b in call_budgets if int(b) > 0})
    rows = []
    if not budgets:
        return rows
    labels = _sorted_labels(label_set)
    ids = [c.class_id for c in labels]
    k = len(labels)
    for strategy in sorted(set(strategies)):
        if strategy == "pruned":
            for budget in budgets:
                preds = classify_dataset(X, labels, model, config_for(strategy, budget, base), workers)
                acc = float(np.mean([p.class_id == t for p, t in zip(preds, y)]))
                calls = float(np.mean([p.model_calls for p in preds]))
                rows.append(CurveRow(strategy, budget, acc, calls))
            continue
        top = budgets[-1]
        correct = np.zeros(len(budgets))
        for i, x in enumerate(X):
            x = np.asarray(x, dtype=np.float64)
            rng = episode_rng(base.seed, i)
            if strategy == "naive":
                wmat = _naive_weighted(x, labels, model, base.weighting, top, rng, base.schedule)
                preds = _prefix_predictions(wmat, budgets, ids, axis=1)
            else:
                wmat = _shared_ledger(x, labels, model, base.weighting, top, rng, base.schedule).weighted()
                preds = _prefix_predictions(wmat, budgets, ids, axis=0)
            correct += np.array([p == y[i] for p in preds])
        for b, c in zip(budgets, correct):
            rows.append(CurveRow(strategy, b, float(c / len(X)), float(k * b)))
    return rows


def calls_to_accuracy(rows: Sequence[CurveRow], strategy: str, target: float) -> float:
    """Smallest mean call count at which ``strategy`` reaches ``target`` accuracy (inf if never)."""
    hits = [r.mean_calls for r in rows if r.strategy == strategy and r.accuracy >= target]
    return min(hits) if hits else float("inf")
