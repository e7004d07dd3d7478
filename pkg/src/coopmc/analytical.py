"""Closed-form error probabilities of SD-Constant cooperative detection.

Two routes to the same numbers:

* literal per-symbol functions (:func:`link_md_fa`, :func:`q_md_fa_asym`,
  :func:`q_md_fa_sym`, :func:`history_distribution`, :func:`q_fc_symbol`),
  which follow the derivation term by term and are meant for checking;
* :func:`sd_constant_tables`, which builds the same mixtures for all TX
  prefixes at once and evaluates every FC threshold in one pass.  Averaging
  and the threshold optimiser run on this one.

Receiver decision histories older than ``isi_window`` symbols are replaced by
their expected value (a deterministic mean offset); ``isi_window=None`` keeps
the whole history exact.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb
from typing import Optional, Sequence, Union

import numpy as np

from . import rng
from ._kernels import mixture_cdf_rows
from .channel import ChannelGains, DiffusionParams, ProtocolTiming, build_gains, poisson_cdf
from .topology import Topology

DEFAULT_ISI_WINDOW = 2
DEFAULT_PREFIX_CAP = 2**16
DEFAULT_STATE_CAP = 2**16
DEFAULT_ENUM_K_CAP = 16


class StateSpaceError(ValueError):
    """An exact enumeration would exceed its configured cap."""


@dataclass(frozen=True)
class Thresholds:
    xi_rx: Union[int, tuple]
    xi_fc: int

    def __post_init__(self):
        xi_rx = self.xi_rx
        if isinstance(xi_rx, (list, tuple, np.ndarray)):
            xi_rx = tuple(int(x) for x in xi_rx)
            values = xi_rx
        else:
            xi_rx = int(xi_rx)
            values = (xi_rx,)
        object.__setattr__(self, "xi_rx", xi_rx)
        object.__setattr__(self, "xi_fc", int(self.xi_fc))
        if min(values) < 1 or self.xi_fc < 1:
            raise ValueError("thresholds must be positive integers (a zero threshold always decides 1)")

    def rx(self, K: int) -> np.ndarray:
        if isinstance(self.xi_rx, tuple):
            if len(self.xi_rx) != K:
                raise ValueError(f"got {len(self.xi_rx)} receiver thresholds for K={K}")
            return np.array(self.xi_rx, dtype=np.int64)
        return np.full(K, self.xi_rx, dtype=np.int64)


@dataclass
class ErrorReport:
    q_md: np.ndarray
    q_fa: np.ndarray
    q_fc: np.ndarray
    q_bar: float
    metadata: dict = field(default_factory=dict)

    CSV_COLUMNS = ("symbol", "q_md", "q_fa", "q_fc", "q_bar")

    def rows(self):
        for j in range(len(self.q_fc)):
            yield (j + 1, self.q_md[j], self.q_fa[j], self.q_fc[j], self.q_bar)


# ---------------------------------------------------------------------------
# TX side


def _toeplitz_lags(c: np.ndarray, j: int) -> np.ndarray:
    """``M[i', i] = c[i - i']`` for ``i >= i'`` (upper triangular), size ``j x j``."""
    idx = np.arange(j)
    lag = idx[None, :] - idx[:, None]
    return np.where(lag >= 0, c[np.clip(lag, 0, None)], 0.0)


def tx_means(bits: np.ndarray, gains: ChannelGains, S_A: float) -> np.ndarray:
    """Poisson means at every receiver and symbol: shape ``(P, K, j)`` for ``bits`` of shape ``(P, j)``."""
    bits = np.atleast_2d(np.asarray(bits, dtype=float))
    j = bits.shape[1]
    if j > gains.L:
        raise ValueError(f"sequence length {j} exceeds gain horizon {gains.L}")
    mats = np.stack([_toeplitz_lags(gains.tx_rx[k], j) for k in range(gains.K)])
    return S_A * np.einsum("pi,kil->pkl", bits, mats)


def decision_probs(bits, gains: ChannelGains, S_A: float, xi_rx: np.ndarray) -> np.ndarray:
    """P(receiver decides 1) for every prefix, receiver and symbol; shape ``(P, K, j)``."""
    mu = tx_means(bits, gains, S_A)
    return 1.0 - poisson_cdf(np.asarray(xi_rx)[None, :, None] - 1, mu)


def link_md_fa(tx_history: Sequence[int], gains: ChannelGains, S_A: float, xi_rx) -> tuple:
    """Per-receiver miss and false-alarm probabilities for the next symbol.

    ``tx_history`` holds the ``j - 1`` previous TX bits.  Returns two arrays of
    length K: ``P_md`` (current bit 1) and ``P_fa`` (current bit 0).
    """
    hist = list(tx_history)
    xi = np.broadcast_to(np.asarray(xi_rx), (gains.K,))
    bits = np.array([hist + [1], hist + [0]])
    mu = tx_means(bits, gains, S_A)[:, :, -1]
    p_md = poisson_cdf(xi - 1, mu[0])
    p_fa = 1.0 - poisson_cdf(xi - 1, mu[1])
    return np.atleast_1d(p_md), np.atleast_1d(p_fa)


# ---------------------------------------------------------------------------
# FC side, literal forms


def fc_tail(total_mean: float, xi_fc: int, direction: str = "below") -> float:
    """P(total < xi_fc) (``"below"``) or P(total >= xi_fc) (``"at_or_above"``) for a Poisson total."""
    below = float(poisson_cdf(int(xi_fc) - 1, total_mean))
    if direction == "below":
        return below
    if direction == "at_or_above":
        return 1.0 - below
    raise ValueError(f"unknown direction {direction!r}")


def _fc_history_mean(history: np.ndarray, rx_fc: np.ndarray, S_B: float) -> np.ndarray:
    """Per-receiver FC mean from decisions at symbols ``1..j-1`` (``history[..., i]``)."""
    h = np.asarray(history, dtype=float)
    jm1 = h.shape[-1]
    if jm1 == 0:
        return np.zeros(h.shape[:-1])
    lags = np.arange(jm1, 0, -1)  # symbol i (0-based) sits jm1 - i lags back from symbol j
    return S_B * np.sum(h * rx_fc[..., lags], axis=-1)


def q_md_fa_asym(
    tx_history,
    current_bit: int,
    histories,
    gains: ChannelGains,
    params: DiffusionParams,
    thresholds: Thresholds,
    k_cap: int = DEFAULT_ENUM_K_CAP,
) -> float:
    """Global miss (``current_bit=1``) or false alarm (``current_bit=0``) given decision histories.

    Sums over all ``2**K`` current-decision vectors.  ``histories`` has shape
    ``(K, j-1)``; entries may be fractional expected decisions.
    """
    K = gains.K
    if K > k_cap:
        raise StateSpaceError(f"K={K} exceeds the exact-enumeration cap {k_cap}")
    hist = np.asarray(histories, dtype=float).reshape(K, -1)
    if hist.shape[1] != len(tx_history):
        raise ValueError("decision histories must cover the same symbols as the TX history")
    p_md, p_fa = link_md_fa(tx_history, gains, params.S_A, thresholds.rx(K))
    p_one = 1.0 - p_md if current_bit else p_fa
    base = _fc_history_mean(hist, gains.rx_fc, params.S_B).sum()
    direction = "below" if current_bit else "at_or_above"
    total = 0.0
    for r in itertools.product((0, 1), repeat=K):
        r = np.array(r)
        weight = np.prod(np.where(r == 1, p_one, 1.0 - p_one))
        mean = base + params.S_B * np.dot(r, gains.rx_fc[:, 0])
        total += weight * fc_tail(mean, thresholds.xi_fc, direction)
    return float(total)


def q_md_fa_sym(
    tx_history,
    current_bit: int,
    history_counts,
    gains: ChannelGains,
    params: DiffusionParams,
    thresholds: Thresholds,
    printed_fa_weights: bool = False,
) -> float:
    """Binomial form of :func:`q_md_fa_asym` for identical links.

    ``history_counts[i]`` is the number of receivers that decided 1 at symbol
    ``i + 1``.  ``n`` counts receivers deciding 1 now, so the miss weight is
    ``C(K,n) P_md^(K-n) (1-P_md)^n`` and the false-alarm weight is
    ``C(K,n) P_fa^n (1-P_fa)^(K-n)``.  ``printed_fa_weights=True`` swaps the
    false-alarm exponents instead (kept only to show that form disagrees).
    """
    if not gains.is_symmetric(rtol=1e-9) or len(set(thresholds.rx(gains.K))) != 1:
        raise ValueError("the binomial form needs identical links and receiver thresholds")
    K = gains.K
    counts = np.asarray(history_counts, dtype=float)
    if counts.shape != (len(tx_history),):
        raise ValueError("history_counts must have one entry per previous symbol")
    p_md, p_fa = link_md_fa(tx_history, gains, params.S_A, thresholds.rx(K))
    p_md, p_fa = float(p_md[0]), float(p_fa[0])
    base = _fc_history_mean(counts, gains.rx_fc[0], params.S_B)
    direction = "below" if current_bit else "at_or_above"
    total = 0.0
    for n in range(K + 1):
        if current_bit:
            weight = comb(K, n) * p_md ** (K - n) * (1.0 - p_md) ** n
        elif printed_fa_weights:
            weight = comb(K, n) * p_fa ** (K - n) * (1.0 - p_fa) ** n
        else:
            weight = comb(K, n) * p_fa**n * (1.0 - p_fa) ** (K - n)
        mean = base + params.S_B * n * gains.rx_fc[0, 0]
        total += weight * fc_tail(mean, thresholds.xi_fc, direction)
    return float(total)


def _window_len(j: int, isi_window: Optional[int]) -> int:
    """Number of previous symbols kept exact at symbol ``j`` (1-based)."""
    if isi_window is None:
        return j - 1
    if isi_window < 0:
        raise ValueError("isi_window must be >= 0")
    return min(isi_window, j - 1)


def history_distribution(
    tx_history,
    gains: ChannelGains,
    params: DiffusionParams,
    thresholds: Thresholds,
    isi_window: Optional[int] = DEFAULT_ISI_WINDOW,
    symmetric: bool = False,
    state_cap: int = DEFAULT_STATE_CAP,
) -> list:
    """Joint law of past receiver decisions given the TX history.

    Returns ``(state, probability)`` pairs.  Asymmetric states have shape
    ``(K, j-1)``; symmetric states are per-symbol counts of shape ``(j-1,)``.
    The last ``isi_window`` symbols are enumerated; older entries hold the
    expected decision (``p`` or ``K*p``) and carry no randomness.
    """
    K = gains.K
    jm1 = len(tx_history)
    w = _window_len(jm1 + 1, isi_window)
    n_states = (K + 1) ** w if symmetric else 2 ** (K * w)
    if n_states > state_cap:
        raise StateSpaceError(f"{n_states} history states exceed the cap {state_cap}")
    if jm1 == 0:
        return [(np.zeros(0) if symmetric else np.zeros((K, 0)), 1.0)]
    p1 = decision_probs(np.asarray(tx_history)[None, :], gains, params.S_A, thresholds.rx(K))[0]
    old = jm1 - w
    out = []
    if symmetric:
        p = p1[0]
        for counts in itertools.product(range(K + 1), repeat=w):
            state = np.concatenate([K * p[:old], np.array(counts, dtype=float)])
            prob = 1.0
            for i, n in enumerate(counts):
                q = p[old + i]
                prob *= comb(K, n) * q**n * (1.0 - q) ** (K - n)
            out.append((state, prob))
    else:
        for flat in itertools.product((0, 1), repeat=K * w):
            pattern = np.array(flat, dtype=float).reshape(K, w)
            state = np.concatenate([p1[:, :old], pattern], axis=1)
            q = p1[:, old:]
            prob = float(np.prod(np.where(pattern == 1, q, 1.0 - q)))
            out.append((state, prob))
    return out


def q_fc_symbol(
    tx_history,
    gains: ChannelGains,
    params: DiffusionParams,
    thresholds: Thresholds,
    P1: float,
    isi_window: Optional[int] = DEFAULT_ISI_WINDOW,
    symmetric: Optional[bool] = None,
) -> tuple:
    """``(Q_md, Q_fa, Q_FC)`` at symbol ``j = len(tx_history) + 1`` for a fixed TX history."""
    if symmetric is None:
        symmetric = _use_symmetric(gains, thresholds)
    states = history_distribution(tx_history, gains, params, thresholds, isi_window, symmetric)
    q = {}
    for bit in (1, 0):
        acc = 0.0
        for state, prob in states:
            if symmetric:
                acc += prob * q_md_fa_sym(tx_history, bit, state, gains, params, thresholds)
            else:
                acc += prob * q_md_fa_asym(tx_history, bit, state, gains, params, thresholds)
        q[bit] = acc
    return q[1], q[0], P1 * q[1] + (1.0 - P1) * q[0]


# ---------------------------------------------------------------------------
# Vectorised tables


def _use_symmetric(gains: ChannelGains, thresholds_rx) -> bool:
    xi = thresholds_rx.rx(gains.K) if isinstance(thresholds_rx, Thresholds) else np.asarray(thresholds_rx)
    return gains.is_symmetric(rtol=1e-9) and len(set(np.atleast_1d(xi).tolist())) == 1


def all_prefixes(n: int) -> np.ndarray:
    """Every binary sequence of length ``n``, shape ``(2**n, n)``, first symbol most significant."""
    if n == 0:
        return np.zeros((1, 0), dtype=np.int8)
    idx = np.arange(2**n)[:, None]
    return ((idx >> np.arange(n - 1, -1, -1)) & 1).astype(np.int8)


def prefix_sets(
    L: int,
    P1: float,
    averaging: str = "exact",
    n_samples: int = 100_000,
    seed: int = 0,
    weighting: str = "prior",
    prefix_cap: int = DEFAULT_PREFIX_CAP,
) -> list:
    """For each symbol ``j = 1..L``: ``(prefixes, weights)`` over the previous ``j-1`` TX bits."""
    if not 0.0 <= P1 <= 1.0:
        raise ValueError("P1 must be a probability")
    out = []
    if averaging == "exact":
        if 2 ** (L - 1) > prefix_cap:
            raise StateSpaceError(f"2^{L - 1} TX prefixes exceed the cap {prefix_cap}; use Monte Carlo averaging")
        for j in range(1, L + 1):
            pre = all_prefixes(j - 1)
            if weighting == "prior":
                ones = pre.sum(axis=1)
                w = P1**ones * (1.0 - P1) ** (j - 1 - ones)
            elif weighting == "uniform":
                w = np.full(len(pre), 0.5 ** (j - 1))
            else:
                raise ValueError(f"unknown prefix weighting {weighting!r}")
            out.append((pre, w))
    elif averaging == "mc":
        if n_samples < 1:
            raise ValueError("Monte Carlo averaging needs at least one sample")
        seqs = rng.tx_bits(seed, np.arange(n_samples), L, P1)
        for j in range(1, L + 1):
            pre, counts = np.unique(seqs[:, : j - 1], axis=0, return_counts=True)
            out.append((pre.astype(np.int8), counts / n_samples))
    else:
        raise ValueError(f"unknown averaging mode {averaging!r}")
    return out


def _count_states(K: int, w: int) -> np.ndarray:
    return np.array(list(itertools.product(range(K + 1), repeat=w)), dtype=float).reshape(-1, w)


def _pattern_states(K: int, w: int) -> np.ndarray:
    return np.array(list(itertools.product((0, 1), repeat=K * w)), dtype=float).reshape(-1, K, w)


def fc_mixture(
    p1: np.ndarray,
    rx_fc: np.ndarray,
    S_B,
    isi_window: Optional[int],
    symmetric: bool,
    state_cap: int = DEFAULT_STATE_CAP,
) -> tuple:
    """Poisson-mixture law of the FC total at the last symbol.

    ``p1`` has shape ``(P, K, j)`` and includes the current symbol.  Returns
    ``(weights, means)`` of shape ``(P, S)``, one column per joint state of the
    decisions inside the window (current symbol included).
    """
    P, K, j = p1.shape
    S_B = np.broadcast_to(np.asarray(S_B, dtype=float), (K,))
    w = _window_len(j, isi_window) + 1
    old = j - w
    lag_of = j - 1 - np.arange(j)  # lag of symbol i relative to symbol j
    b = S_B[:, None] * rx_fc[:, lag_of]  # (K, j) mean contributed by a "1" at symbol i
    tail = np.einsum("pki,ki->p", p1[:, :, :old], b[:, :old])
    if symmetric:
        states = _count_states(K, w)
        if len(states) > state_cap:
            raise StateSpaceError(f"{len(states)} decision states exceed the cap {state_cap}")
        q = p1[:, 0, old:, None]  # (P, w, 1)
        n = np.arange(K + 1)
        binom = np.array([comb(K, int(x)) for x in n], dtype=float)
        pmf = binom * q**n * (1.0 - q) ** (K - n)  # (P, w, K+1)
        weights = np.ones((P, 1))
        for i in range(w):
            weights = (weights[:, :, None] * pmf[:, i, None, :]).reshape(P, -1)
        means = tail[:, None] + states @ b[0, old:]
    else:
        states = _pattern_states(K, w)
        if len(states) > state_cap:
            raise StateSpaceError(f"{len(states)} decision states exceed the cap {state_cap}")
        q = p1[:, :, old:]
        weights = np.ones((P, 1))
        for k in range(K):
            for i in range(w):
                f = q[:, k, i, None]
                weights = np.stack([weights * (1.0 - f), weights * f], axis=2).reshape(P, -1)
        means = tail[:, None] + np.einsum("ski,ki->s", states, b[:, old:])[None, :]
    return weights, means


def rx_threshold_table(mu: np.ndarray, xi_values: np.ndarray) -> np.ndarray:
    """P(Pois(mu) >= xi) for every entry of ``mu`` and every ``xi``; shape ``mu.shape + (len(xi),)``."""
    xi_values = np.asarray(xi_values, dtype=np.int64)
    flat = mu.reshape(-1, 1)
    n_max = int(xi_values.max())
    below = mixture_cdf_rows(np.ones_like(flat), flat, n_max)[:, xi_values]
    return np.clip(1.0 - below, 0.0, 1.0).reshape(mu.shape + (len(xi_values),))


def sd_constant_tables(
    gains: ChannelGains,
    params: DiffusionParams,
    xi_rx_values,
    xi_fc_max: int,
    prefixes: list,
    isi_window: Optional[int] = DEFAULT_ISI_WINDOW,
    symmetric: Optional[bool] = None,
    state_cap: int = DEFAULT_STATE_CAP,
) -> tuple:
    """Per-symbol ``Q_md`` and ``Q_fa`` for a list of (shared) receiver thresholds and all FC thresholds.

    Returns two arrays of shape ``(L, len(xi_rx_values), xi_fc_max + 1)``;
    index ``[j-1, a, x]`` is symbol ``j`` at ``xi_rx_values[a]`` and
    ``xi_fc = x`` (column 0 is meaningless and kept for direct indexing).
    """
    xi_rx_values = np.atleast_1d(np.asarray(xi_rx_values, dtype=np.int64))
    if symmetric is None:
        symmetric = gains.is_symmetric(rtol=1e-9)
    L = len(prefixes)
    A = len(xi_rx_values)
    q_md = np.zeros((L, A, xi_fc_max + 1))
    q_fa = np.zeros((L, A, xi_fc_max + 1))
    for j in range(1, L + 1):
        pre, pw = prefixes[j - 1]
        P = len(pre)
        bits = np.concatenate(
            [np.column_stack([pre, np.ones(P, dtype=np.int8)]), np.column_stack([pre, np.zeros(P, dtype=np.int8)])]
        )
        mu = tx_means(bits, gains, params.S_A)
        p1_all = rx_threshold_table(mu, xi_rx_values)  # (2P, K, j, A)
        for a in range(A):
            weights, means = fc_mixture(p1_all[..., a], gains.rx_fc, params.S_B, isi_window, symmetric, state_cap)
            table = mixture_cdf_rows(weights, means, xi_fc_max)
            mass = weights.sum(axis=1)
            q_md[j - 1, a] = pw @ table[:P]
            q_fa[j - 1, a] = pw @ (mass[P:, None] - table[P:])
    return np.clip(q_md, 0.0, 1.0), np.clip(q_fa, 0.0, 1.0)


def average_error_from_gains(
    gains: ChannelGains,
    params: DiffusionParams,
    thresholds: Thresholds,
    P1: float = 0.5,
    averaging: str = "exact",
    n_samples: int = 100_000,
    seed: int = 0,
    isi_window: Optional[int] = DEFAULT_ISI_WINDOW,
    weighting: str = "prior",
    symmetric: Optional[bool] = None,
    prefix_cap: int = DEFAULT_PREFIX_CAP,
    state_cap: int = DEFAULT_STATE_CAP,
) -> ErrorReport:
    K, L = gains.K, gains.L
    xi = thresholds.rx(K)
    if symmetric is None:
        symmetric = _use_symmetric(gains, xi)
    elif symmetric and not _use_symmetric(gains, xi):
        raise ValueError("symmetric path requested for non-identical links or thresholds")
    pre = prefix_sets(L, P1, averaging, n_samples, seed, weighting, prefix_cap)
    if len(set(xi.tolist())) == 1:
        q_md, q_fa = sd_constant_tables(gains, params, [xi[0]], thresholds.xi_fc, pre, isi_window, symmetric, state_cap)
        q_md, q_fa = q_md[:, 0, thresholds.xi_fc], q_fa[:, 0, thresholds.xi_fc]
    else:
        q_md, q_fa = _per_rx_threshold_tables(gains, params, xi, thresholds.xi_fc, pre, isi_window, state_cap)
    q_fc = P1 * q_md + (1.0 - P1) * q_fa
    meta = {
        "scheme": "sd_constant",
        "xi_rx": list(map(int, xi)),
        "xi_fc": thresholds.xi_fc,
        "isi_window": "full" if isi_window is None else isi_window,
        "averaging": averaging if averaging == "exact" else f"mc(n={n_samples}, seed={seed})",
        "weighting": weighting,
        "path": "symmetric" if symmetric else "asymmetric",
    }
    return ErrorReport(q_md, q_fa, q_fc, float(q_fc.mean()), meta)


def _per_rx_threshold_tables(gains, params, xi, xi_fc, prefixes, isi_window, state_cap):
    L = len(prefixes)
    q_md = np.zeros(L)
    q_fa = np.zeros(L)
    for j in range(1, L + 1):
        pre, pw = prefixes[j - 1]
        P = len(pre)
        bits = np.concatenate(
            [np.column_stack([pre, np.ones(P, dtype=np.int8)]), np.column_stack([pre, np.zeros(P, dtype=np.int8)])]
        )
        p1 = decision_probs(bits, gains, params.S_A, xi)
        weights, means = fc_mixture(p1, gains.rx_fc, params.S_B, isi_window, False, state_cap)
        table = mixture_cdf_rows(weights, means, xi_fc)
        q_md[j - 1] = pw @ table[:P, xi_fc]
        q_fa[j - 1] = pw @ (weights[P:].sum(axis=1) - table[P:, xi_fc])
    return np.clip(q_md, 0, 1), np.clip(q_fa, 0, 1)


def average_error(
    topo: Topology,
    params: DiffusionParams,
    timing: ProtocolTiming,
    thresholds: Thresholds,
    L: int = 10,
    P1: float = 0.5,
    averaging: str = "exact",
    **kwargs,
) -> ErrorReport:
    """Sequence-averaged global error probability of SD-Constant detection.

    ``averaging="exact"`` enumerates every TX prefix; ``"mc"`` samples
    ``n_samples`` sequences from ``seed``.  Extra keyword arguments go to
    :func:`average_error_from_gains`.
    """
    gains = build_gains(topo, params, timing, L)
    report = average_error_from_gains(gains, params, thresholds, P1, averaging, **kwargs)
    report.metadata["topology"] = topo.digest()
    return report
