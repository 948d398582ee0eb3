"""Hot numeric kernels.

Every kernel has a numba implementation (loop form) and a numpy
implementation (vectorised form). The public names at the bottom of the
module are bound to one or the other by :mod:`diffcls._accel`. Both
implementations are importable directly as ``*_nb`` / ``*_np`` for tests
and benchmarks.
"""
import math

import numpy as np

from ._accel import njit, pick

_EPS = 1e-16
_FPMIN = 1e-300
_MAXIT = 10000


# ---------------------------------------------------------------------------
# Regularised incomplete beta I_x(a, b)
# ---------------------------------------------------------------------------

def _betacf_py(a, b, x):
    # modified Lentz evaluation of the continued fraction
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h


def _betainc_py(a, b, x):
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    lbt = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
           + a * math.log(x) + b * math.log1p(-x))
    bt = math.exp(lbt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf_py(a, b, x) / a
    return 1.0 - bt * _betacf_py(b, a, 1.0 - x) / b


_betacf_nb = njit(_betacf_py)


@njit
def _betainc_nb(a, b, x):
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    lbt = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
           + a * math.log(x) + b * math.log1p(-x))
    bt = math.exp(lbt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf_nb(a, b, x) / a
    return 1.0 - bt * _betacf_nb(b, a, 1.0 - x) / b


def _betacf_vec(a, b, x):
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < _FPMIN, _FPMIN, d)
    d = 1.0 / d
    h = d.copy()
    active = np.ones(x.shape, dtype=bool)
    for m in range(1, _MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d_new = 1.0 + aa * d
        d_new = np.where(np.abs(d_new) < _FPMIN, _FPMIN, d_new)
        c_new = 1.0 + aa / c
        c_new = np.where(np.abs(c_new) < _FPMIN, _FPMIN, c_new)
        d_new = 1.0 / d_new
        h_new = h * d_new * c_new
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d_new = 1.0 + aa * d_new
        d_new = np.where(np.abs(d_new) < _FPMIN, _FPMIN, d_new)
        c_new = 1.0 + aa / c_new
        c_new = np.where(np.abs(c_new) < _FPMIN, _FPMIN, c_new)
        d_new = 1.0 / d_new
        delta = d_new * c_new
        h_new = h_new * delta
        # frozen entries keep their converged state
        d = np.where(active, d_new, d)
        c = np.where(active, c_new, c)
        h = np.where(active, h_new, h)
        active &= ~(np.abs(delta - 1.0) < _EPS)
        if not active.any():
            break
    return h


def betainc_np(a, b, x):
    """Vectorised regularised incomplete beta function."""
    a, b, x = np.broadcast_arrays(np.asarray(a, dtype=np.float64),
                                  np.asarray(b, dtype=np.float64),
                                  np.asarray(x, dtype=np.float64))
    out = np.empty(x.shape)
    lo = x <= 0.0
    hi = x >= 1.0
    mid = ~(lo | hi)
    out[lo] = 0.0
    out[hi] = 1.0
    if mid.any():
        am, bm, xm = a[mid], b[mid], x[mid]
        from scipy.special import gammaln
        lbt = gammaln(am + bm) - gammaln(am) - gammaln(bm) + am * np.log(xm) + bm * np.log1p(-xm)
        bt = np.exp(lbt)
        direct = xm < (am + 1.0) / (am + bm + 2.0)
        res = np.empty(xm.shape)
        if direct.any():
            res[direct] = bt[direct] * _betacf_vec(am[direct], bm[direct], xm[direct]) / am[direct]
        flip = ~direct
        if flip.any():
            res[flip] = 1.0 - bt[flip] * _betacf_vec(bm[flip], am[flip], 1.0 - xm[flip]) / bm[flip]
        out[mid] = res
    return out


@njit
def betainc_nb(a, b, x):
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        out[i] = _betainc_nb(a[i], b[i], x[i])
    return out


# ---------------------------------------------------------------------------
# Student t upper tail and paired p-values
# ---------------------------------------------------------------------------

# P(T > |t|) = I_x(df/2, 1/2) / 2 with x = df / (df + t^2). For small |t| the
# complement 1 - I_y(1/2, df/2), y = t^2 / (df + t^2), keeps precision that
# rounding x to 1 would lose.

@njit
def _t_sf_nb(t, df):
    if t == 0.0:
        return 0.5
    t2 = t * t
    if t2 < df:
        tail = 0.5 - 0.5 * _betainc_nb(0.5, 0.5 * df, t2 / (df + t2))
    else:
        tail = 0.5 * _betainc_nb(0.5 * df, 0.5, df / (df + t2))
    return tail if t > 0.0 else 1.0 - tail


def _t_sf_py(t, df):
    if t == 0.0:
        return 0.5
    t2 = t * t
    if t2 < df:
        tail = 0.5 - 0.5 * _betainc_py(0.5, 0.5 * df, t2 / (df + t2))
    else:
        tail = 0.5 * _betainc_py(0.5 * df, 0.5, df / (df + t2))
    return tail if t > 0.0 else 1.0 - tail


def t_sf_np(t, df):
    t = np.asarray(t, dtype=np.float64)
    df = np.broadcast_to(np.asarray(df, dtype=np.float64), t.shape)
    t2 = t * t
    small = t2 < df
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(np.isfinite(t), df / (df + t2), 0.0)
        y = np.where(small, t2 / (df + t2), 0.0)
    tail = np.where(small, 0.5 - 0.5 * betainc_np(0.5, 0.5 * df, y),
                    0.5 * betainc_np(0.5 * df, 0.5, np.where(small, 0.5, x)))
    out = np.where(t > 0.0, tail, 1.0 - tail)
    return np.where(t == 0.0, 0.5, out)


@njit
def t_sf_nb(t, df):
    out = np.empty(t.shape[0])
    for i in range(t.shape[0]):
        out[i] = _t_sf_nb(t[i], df[i])
    return out


@njit
def paired_pvalues_nb(n, mean, m2, two_sided):
    k = n.shape[0]
    out = np.empty(k)
    for i in range(k):
        ni = n[i]
        if ni < 2:
            out[i] = np.nan
            continue
        var = m2[i] / (ni - 1)
        if var <= 0.0:
            if two_sided:
                out[i] = 1.0 if mean[i] == 0.0 else 0.0
            else:
                out[i] = 1.0 if mean[i] <= 0.0 else 0.0
            continue
        t = mean[i] / math.sqrt(var / ni)
        if two_sided:
            out[i] = min(1.0, 2.0 * _t_sf_nb(abs(t), ni - 1.0))
        else:
            out[i] = _t_sf_nb(t, ni - 1.0)
    return out


def paired_pvalues_np(n, mean, m2, two_sided):
    n = np.asarray(n, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    m2 = np.asarray(m2, dtype=np.float64)
    out = np.full(n.shape, np.nan)
    ok = n >= 2
    var = np.zeros(n.shape)
    var[ok] = m2[ok] / (n[ok] - 1.0)
    degen = ok & (var <= 0.0)
    if two_sided:
        out[degen] = np.where(mean[degen] == 0.0, 1.0, 0.0)
    else:
        out[degen] = np.where(mean[degen] <= 0.0, 1.0, 0.0)
    live = ok & (var > 0.0)
    if live.any():
        t = mean[live] / np.sqrt(var[live] / n[live])
        df = n[live] - 1.0
        if two_sided:
            out[live] = np.minimum(1.0, 2.0 * t_sf_np(np.abs(t), df))
        else:
            out[live] = t_sf_np(t, df)
    return out


# ---------------------------------------------------------------------------
# Welford accumulation, vectorised across candidates
# ---------------------------------------------------------------------------

@njit
def welford_push_nb(n, mean, m2, x, mask):
    for i in range(x.shape[0]):
        if not mask[i]:
            continue
        n[i] += 1
        delta = x[i] - mean[i]
        mean[i] += delta / n[i]
        m2[i] += delta * (x[i] - mean[i])


def welford_push_np(n, mean, m2, x, mask):
    n[mask] += 1
    delta = x[mask] - mean[mask]
    mean[mask] += delta / n[mask]
    m2[mask] += delta * (x[mask] - mean[mask])


@njit
def welford_build_nb(values):
    rows, cols = values.shape
    mean = np.zeros(cols)
    m2 = np.zeros(cols)
    for j in range(rows):
        nj = j + 1.0
        for i in range(cols):
            delta = values[j, i] - mean[i]
            mean[i] += delta / nj
            m2[i] += delta * (values[j, i] - mean[i])
    return mean, m2


def welford_build_np(values):
    if values.shape[0] == 0:
        return np.zeros(values.shape[1]), np.zeros(values.shape[1])
    mean = values.mean(axis=0)
    m2 = ((values - mean) ** 2).sum(axis=0)
    # constant columns must come out exactly degenerate
    const = (values == values[0]).all(axis=0)
    mean[const] = values[0, const]
    m2[const] = 0.0
    return mean, m2


# ---------------------------------------------------------------------------
# Posterior-mean squared errors for the Gaussian oracle denoiser
#   x_hat_k = a * x_t + b * mu_k ;  err_k = ||x0 - x_hat_k||^2
# ---------------------------------------------------------------------------

@njit
def gauss_errors_nb(x0, xt, a, b, means):
    k, d = means.shape
    out = np.empty(k)
    for i in range(k):
        acc = 0.0
        for j in range(d):
            r = x0[j] - a * xt[j] - b * means[i, j]
            acc += r * r
        out[i] = acc
    return out


def gauss_errors_np(x0, xt, a, b, means):
    r = (x0 - a * xt)[None, :] - b * means
    return np.einsum("kd,kd->k", r, r)


@njit
def gauss_errors_rounds_nb(x0, xts, a, b, means):
    rounds, d = xts.shape
    k = means.shape[0]
    out = np.empty((rounds, k))
    r = np.empty(d)
    for n in range(rounds):
        for j in range(d):
            r[j] = x0[j] - a[n] * xts[n, j]
        for i in range(k):
            acc = 0.0
            for j in range(d):
                e = r[j] - b[n] * means[i, j]
                acc += e * e
            out[n, i] = acc
    return out


def gauss_errors_rounds_np(x0, xts, a, b, means):
    r = x0[None, :] - a[:, None] * xts
    diff = r[:, None, :] - b[:, None, None] * means[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


@njit
def gauss_errors_indep_nb(x0, xts, a, b, means):
    k, rounds, d = xts.shape
    out = np.empty((k, rounds))
    for i in range(k):
        for n in range(rounds):
            acc = 0.0
            for j in range(d):
                e = x0[j] - a[i, n] * xts[i, n, j] - b[i, n] * means[i, j]
                acc += e * e
            out[i, n] = acc
    return out


def gauss_errors_indep_np(x0, xts, a, b, means):
    diff = x0[None, None, :] - a[:, :, None] * xts - b[:, :, None] * means[:, None, :]
    return np.einsum("knd,knd->kn", diff, diff)


# ---------------------------------------------------------------------------
# Candidate elimination over a block of pre-scored rounds
# ---------------------------------------------------------------------------
#
# State lives in caller-owned arrays and is updated in place:
#   W         (capacity, K) weighted per-round scores; rows [n0, n0 + B) are new
#   alive     (K,) bool
#   sums      (K,) running sum of weighted scores
#   acc_*     (K,) Welford state of (class - current best) differences
#   elim      (K,) round at which each class was removed (0 = never)
# Returns (rounds consumed, best index, model calls made).

@njit
def prune_rounds_nb(W, n0, n_new, alive, sums, acc_n, acc_mean, acc_m2, best,
                    min_scores, max_scores, cutoff, two_sided, elim):
    k = W.shape[1]
    n = n0
    calls = 0
    n_alive = 0
    for i in range(k):
        if alive[i]:
            n_alive += 1
    while n_alive > 1 and n < max_scores and n - n0 < n_new:
        r = n
        n += 1
        calls += n_alive
        for i in range(k):
            if alive[i]:
                sums[i] += W[r, i]
        new_best = -1
        best_val = np.inf
        for i in range(k):
            if alive[i]:
                m = sums[i] / n
                if m < best_val:
                    best_val = m
                    new_best = i
        if new_best == best and n > 1:
            for i in range(k):
                if alive[i]:
                    acc_n[i] += 1.0
                    x = W[r, i] - W[r, best]
                    delta = x - acc_mean[i]
                    acc_mean[i] += delta / acc_n[i]
                    acc_m2[i] += delta * (x - acc_mean[i])
        else:
            best = new_best
            for i in range(k):
                if not alive[i]:
                    continue
                mean = 0.0
                m2 = 0.0
                for j in range(n):
                    x = W[j, i] - W[j, best]
                    delta = x - mean
                    mean += delta / (j + 1.0)
                    m2 += delta * (x - mean)
                acc_n[i] = n
                acc_mean[i] = mean
                acc_m2[i] = m2
        if n >= min_scores:
            for i in range(k):
                if not alive[i] or i == best:
                    continue
                ni = acc_n[i]
                if ni < 2.0:
                    continue
                var = acc_m2[i] / (ni - 1.0)
                if var <= 0.0:
                    if two_sided:
                        p = 1.0 if acc_mean[i] == 0.0 else 0.0
                    else:
                        p = 1.0 if acc_mean[i] <= 0.0 else 0.0
                else:
                    t = acc_mean[i] / math.sqrt(var / ni)
                    if two_sided:
                        p = min(1.0, 2.0 * _t_sf_nb(abs(t), ni - 1.0))
                    else:
                        p = _t_sf_nb(t, ni - 1.0)
                if p < cutoff:
                    alive[i] = False
                    elim[i] = n
                    n_alive -= 1
    return n - n0, best, calls


def prune_rounds_np(W, n0, n_new, alive, sums, acc_n, acc_mean, acc_m2, best,
                    min_scores, max_scores, cutoff, two_sided, elim):
    n = n0
    calls = 0
    while alive.sum() > 1 and n < max_scores and n - n0 < n_new:
        r = n
        n += 1
        live = np.nonzero(alive)[0]
        calls += live.size
        sums[live] += W[r, live]
        means = np.where(alive, sums / n, np.inf)
        new_best = int(np.argmin(means))
        if new_best == best and n > 1:
            welford_push_np(acc_n, acc_mean, acc_m2, W[r] - W[r, best], alive)
        else:
            best = new_best
            hist = W[:n][:, live]
            m, m2 = welford_build_np(hist - W[:n, [best]])
            acc_n[live] = n
            acc_mean[live] = m
            acc_m2[live] = m2
        if n >= min_scores:
            pv = paired_pvalues_np(acc_n[live], acc_mean[live], acc_m2[live], two_sided)
            drop = live[(pv < cutoff) & (live != best)]
            alive[drop] = False
            elim[drop] = n
    return n - n0, best, calls


betainc = pick(betainc_nb, betainc_np)
t_sf = pick(t_sf_nb, t_sf_np)
paired_pvalues = pick(paired_pvalues_nb, paired_pvalues_np)
welford_push = pick(welford_push_nb, welford_push_np)
welford_build = pick(welford_build_nb, welford_build_np)
gauss_errors = pick(gauss_errors_nb, gauss_errors_np)
gauss_errors_rounds = pick(gauss_errors_rounds_nb, gauss_errors_rounds_np)
gauss_errors_indep = pick(gauss_errors_indep_nb, gauss_errors_indep_np)
scalar_t_sf = pick(_t_sf_nb, _t_sf_py)
prune_rounds = pick(prune_rounds_nb, prune_rounds_np)
