"""Analytic hot loops: weighted Poisson-mixture CDF tables.

``mixture_cdf_rows(weights, means, n_max)`` returns ``F`` of shape
``(R, n_max + 1)`` with ``F[r, x] = sum_s weights[r, s] * P(Pois(means[r, s]) < x)``.
One table answers every threshold ``x`` in ``0..n_max`` at once, which is what
the threshold optimiser needs.
"""

import math

import numpy as np
from scipy.special import gammaln

from ._accel import USE_NUMBA, njit

# Poisson support below mu - _LOW_SIGMAS*sqrt(mu) is treated as empty for large means.
_LOW_SIGMAS = 20.0
_LARGE_MEAN = 500.0
_TAIL_EPS = 1e-17


@njit
def _add_poisson(acc, w, mu, n_max):
    if n_max < 1:
        return
    if mu <= 0.0:
        acc[1] += w
        return
    if mu < _LARGE_MEAN:
        n = 0
        p = math.exp(-mu)
    else:
        n = max(0, int(mu - _LOW_SIGMAS * math.sqrt(mu)))
        p = math.exp(n * math.log(mu) - mu - math.lgamma(n + 1.0))
    cum = 0.0
    while n < n_max:
        cum += p
        acc[n + 1] += w * p
        if n > mu and p < _TAIL_EPS * cum:
            rest = 1.0 - cum
            if rest > 0.0 and n + 2 <= n_max:
                acc[n + 2] += w * rest
            return
        n += 1
        p *= mu / n


@njit
def _add_mixture(acc, w, mu, n_max, inv):
    # All components share one pass over x so the inner loop runs across components.
    S = w.shape[0]
    p = np.empty(S)
    m = np.empty(S)
    wsum = 0.0
    mu_max = 0.0
    for s in range(S):
        if w[s] != 0.0 and mu[s] >= _LARGE_MEAN:
            _add_poisson(acc, w[s], mu[s], n_max)
            p[s] = 0.0
            m[s] = 0.0
            continue
        m[s] = mu[s] if mu[s] > 0.0 else 0.0
        p[s] = w[s] * math.exp(-m[s])
        wsum += w[s]
        if w[s] != 0.0 and m[s] > mu_max:
            mu_max = m[s]
    cum = 0.0
    n = 0
    while n < n_max:
        tot = 0.0
        for s in range(S):
            tot += p[s]
        cum += tot
        acc[n + 1] += tot
        if n > mu_max and tot <= _TAIL_EPS * cum:
            rest = wsum - cum
            if rest > 0.0 and n + 2 <= n_max:
                acc[n + 2] += rest
            return
        n += 1
        for s in range(S):
            p[s] *= m[s] * inv[n]


@njit(nogil=True)
def mixture_cdf_rows_numba(weights, means, n_max):
    R, S = weights.shape
    out = np.zeros((R, n_max + 1))
    if n_max < 1:
        return out
    inv = np.empty(n_max + 1)
    inv[0] = 0.0
    for n in range(1, n_max + 1):
        inv[n] = 1.0 / n
    for r in range(R):
        acc = out[r]
        _add_mixture(acc, weights[r], means[r], n_max, inv)
        c = 0.0
        for x in range(n_max + 1):
            c += acc[x]
            acc[x] = c
    return out


def mixture_cdf_rows_numpy(weights, means, n_max):
    weights = np.asarray(weights, dtype=float)
    means = np.asarray(means, dtype=float)
    R, _ = weights.shape
    out = np.zeros((R, n_max + 1))
    if n_max < 1:
        return out
    top = float(means.max()) if means.size else 0.0
    n_eff = int(min(n_max, math.ceil(top + 12.0 * math.sqrt(top) + 40.0)))
    zero = means <= 0.0
    log_mu = np.log(np.where(zero, 1.0, means))
    cdf = np.zeros_like(means)
    for n in range(n_eff):
        pmf = np.exp(n * log_mu - means - gammaln(n + 1.0))
        pmf = np.where(zero, 1.0 if n == 0 else 0.0, pmf)
        cdf = cdf + pmf
        out[:, n + 1] = np.einsum("rs,rs->r", weights, np.minimum(cdf, 1.0))
    # Beyond n_eff every component has (numerically) all of its mass below x.
    out[:, n_eff + 1 :] = weights.sum(axis=1)[:, None]
    return out


def mixture_cdf_rows(weights, means, n_max):
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    means = np.ascontiguousarray(means, dtype=np.float64)
    if weights.shape != means.shape or weights.ndim != 2:
        raise ValueError("weights and means must be equal-shape 2-D arrays")
    if USE_NUMBA:
        return mixture_cdf_rows_numba(weights, means, int(n_max))
    return mixture_cdf_rows_numpy(weights, means, int(n_max))
