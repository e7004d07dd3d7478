"""Comparison schemes: a single TX-RX link and distinct-type majority voting.

Majority rule: receiver ``k`` reports with its own molecule type, the FC
compares each type's count with ``xi_type`` and declares 1 when at least
``vote_threshold`` receivers were decoded as 1.  Each report's Poisson mean
carries that receiver's own decision history only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._kernels import mixture_cdf_rows
from .analytical import (
    DEFAULT_ISI_WINDOW,
    ErrorReport,
    Thresholds,
    fc_mixture,
    prefix_sets,
    rx_threshold_table,
    sd_constant_tables,
    tx_means,
)
from .channel import ChannelGains, DiffusionParams, ProtocolTiming, build_gains
from .topology import Topology

SD_CONSTANT = "sd_constant"
MAJORITY = "majority"
SINGLE_LINK = "single_link"
SCHEMES = (SD_CONSTANT, MAJORITY, SINGLE_LINK)

REPORT_BUDGET = 2000
SINGLE_LINK_S_A = 10000


def report_share(K: int, budget: int = REPORT_BUDGET) -> int:
    """Molecules each receiver releases for a 1 when ``budget`` is split over ``K`` receivers."""
    return math.ceil(budget / K)


def default_vote_threshold(K: int) -> int:
    return math.ceil((K + 1) / 2)


@dataclass(frozen=True)
class SchemeSpec:
    variant: str = SD_CONSTANT
    vote_threshold: Optional[int] = None
    S_A_single: int = SINGLE_LINK_S_A

    def __post_init__(self):
        if self.variant not in SCHEMES:
            raise ValueError(f"unknown scheme {self.variant!r}; expected one of {SCHEMES}")
        if self.vote_threshold is not None and self.vote_threshold < 1:
            raise ValueError("vote threshold must be at least 1")

    def votes(self, K: int) -> int:
        n = default_vote_threshold(K) if self.vote_threshold is None else self.vote_threshold
        if not 1 <= n <= K:
            raise ValueError(f"vote threshold {n} outside 1..{K}")
        return n


def _with_current(pre):
    P = len(pre)
    return np.concatenate(
        [np.column_stack([pre, np.ones(P, dtype=np.int8)]), np.column_stack([pre, np.zeros(P, dtype=np.int8)])]
    )


# ---------------------------------------------------------------------------
# single link


def single_link_tables(gains: ChannelGains, S_A: float, xi_rx_max: int, prefixes: list) -> tuple:
    """Per-symbol miss / false alarm of receiver 0 for every threshold ``0..xi_rx_max``.

    Arrays of shape ``(L, xi_rx_max + 1)``.
    """
    L = len(prefixes)
    q_md = np.zeros((L, xi_rx_max + 1))
    q_fa = np.zeros((L, xi_rx_max + 1))
    link = ChannelGains(gains.tx_rx[:1], gains.rx_fc[:1])
    for j in range(1, L + 1):
        pre, pw = prefixes[j - 1]
        P = len(pre)
        mu = tx_means(_with_current(pre), link, S_A)[:, 0, -1:]
        below = mixture_cdf_rows(np.ones_like(mu), mu, xi_rx_max)
        q_md[j - 1] = pw @ below[:P]
        q_fa[j - 1] = pw @ (1.0 - below[P:])
    return np.clip(q_md, 0, 1), np.clip(q_fa, 0, 1)


def single_link_error_from_gains(gains, S_A, xi_rx, P1=0.5, averaging="exact", **kwargs) -> ErrorReport:
    pre = prefix_sets(gains.L, P1, averaging, **kwargs)
    q_md, q_fa = single_link_tables(gains, S_A, int(xi_rx), pre)
    q_md, q_fa = q_md[:, xi_rx], q_fa[:, xi_rx]
    q_fc = P1 * q_md + (1 - P1) * q_fa
    meta = {"scheme": SINGLE_LINK, "xi_rx": int(xi_rx), "S_A": int(S_A), "averaging": averaging}
    return ErrorReport(q_md, q_fa, q_fc, float(q_fc.mean()), meta)


def single_link_error(
    topo: Topology,
    params: DiffusionParams,
    timing: ProtocolTiming,
    xi_rx: int,
    L: int = 10,
    P1: float = 0.5,
    averaging: str = "exact",
    S_A_single: int = SINGLE_LINK_S_A,
    **kwargs,
) -> ErrorReport:
    """Error of the TX to first-receiver link on its own; no fusion stage."""
    gains = build_gains(topo, params, timing, L)
    report = single_link_error_from_gains(gains, S_A_single, xi_rx, P1, averaging, **kwargs)
    report.metadata["topology"] = topo.digest()
    return report


# ---------------------------------------------------------------------------
# majority rule


def _at_least(p_one: np.ndarray, n: int) -> np.ndarray:
    """P(at least ``n`` successes) for independent Bernoullis along the last axis."""
    K = p_one.shape[-1]
    dist = np.zeros(p_one.shape[:-1] + (K + 1,))
    dist[..., 0] = 1.0
    for k in range(K):
        p = p_one[..., k : k + 1]
        shifted = np.zeros_like(dist)
        shifted[..., 1:] = dist[..., :-1]
        dist = dist * (1.0 - p) + shifted * p
    return dist[..., n:].sum(axis=-1)


def majority_tables(
    gains: ChannelGains,
    params: DiffusionParams,
    xi_rx_values,
    xi_type_max: int,
    vote_threshold: int,
    prefixes: list,
    isi_window: Optional[int] = DEFAULT_ISI_WINDOW,
) -> tuple:
    """Per-symbol majority-rule miss / false alarm, shape ``(L, len(xi_rx_values), xi_type_max + 1)``."""
    xi_rx_values = np.atleast_1d(np.asarray(xi_rx_values, dtype=np.int64))
    K, L, A = gains.K, len(prefixes), len(xi_rx_values)
    q_md = np.zeros((L, A, xi_type_max + 1))
    q_fa = np.zeros((L, A, xi_type_max + 1))
    for j in range(1, L + 1):
        pre, pw = prefixes[j - 1]
        P = len(pre)
        mu = tx_means(_with_current(pre), gains, params.S_A)
        p1_all = rx_threshold_table(mu, xi_rx_values)
        for a in range(A):
            decoded = np.empty((2 * P, xi_type_max + 1, K))
            for k in range(K):
                weights, means = fc_mixture(
                    p1_all[:, k : k + 1, :, a], gains.rx_fc[k : k + 1], params.S_B, isi_window, False
                )
                below = mixture_cdf_rows(weights, means, xi_type_max)
                decoded[:, :, k] = weights.sum(axis=1)[:, None] - below
            fc_one = _at_least(np.clip(decoded, 0.0, 1.0), vote_threshold)
            q_md[j - 1, a] = pw @ (1.0 - fc_one[:P])
            q_fa[j - 1, a] = pw @ fc_one[P:]
    return np.clip(q_md, 0, 1), np.clip(q_fa, 0, 1)


def majority_rule_error_from_gains(
    gains, params, thresholds: Thresholds, vote_threshold=None, P1=0.5, averaging="exact",
    isi_window=DEFAULT_ISI_WINDOW, **kwargs,
) -> ErrorReport:
    """``thresholds.xi_fc`` is the per-type detection threshold."""
    xi = thresholds.rx(gains.K)
    if len(set(xi.tolist())) != 1:
        raise ValueError("the majority-rule tables assume one shared receiver threshold")
    N = SchemeSpec(MAJORITY, vote_threshold).votes(gains.K)
    pre = prefix_sets(gains.L, P1, averaging, **kwargs)
    q_md, q_fa = majority_tables(gains, params, [xi[0]], thresholds.xi_fc, N, pre, isi_window)
    q_md, q_fa = q_md[:, 0, thresholds.xi_fc], q_fa[:, 0, thresholds.xi_fc]
    q_fc = P1 * q_md + (1 - P1) * q_fa
    meta = {
        "scheme": MAJORITY,
        "xi_rx": int(xi[0]),
        "xi_type": thresholds.xi_fc,
        "vote_threshold": N,
        "isi_window": "full" if isi_window is None else isi_window,
        "averaging": averaging,
    }
    return ErrorReport(q_md, q_fa, q_fc, float(q_fc.mean()), meta)


def majority_rule_error(
    topo: Topology,
    params: DiffusionParams,
    timing: ProtocolTiming,
    scheme: SchemeSpec,
    thresholds: Thresholds,
    L: int = 10,
    P1: float = 0.5,
    averaging: str = "exact",
    **kwargs,
) -> ErrorReport:
    gains = build_gains(topo, params, timing, L)
    report = majority_rule_error_from_gains(gains, params, thresholds, scheme.vote_threshold, P1, averaging, **kwargs)
    report.metadata["topology"] = topo.digest()
    return report


def surface(
    scheme: SchemeSpec,
    gains: ChannelGains,
    params: DiffusionParams,
    xi_rx_values,
    second_max: int,
    prefixes: list,
    P1: float = 0.5,
    isi_window: Optional[int] = DEFAULT_ISI_WINDOW,
) -> np.ndarray:
    """Averaged error over a threshold grid.

    Rows follow ``xi_rx_values``; column ``x`` is the FC (or per-type)
    threshold ``x`` for ``x = 1..second_max`` (column 0 dropped).  The single
    link has no second threshold and returns one column.
    """
    xi_rx_values = np.atleast_1d(np.asarray(xi_rx_values, dtype=np.int64))
    if scheme.variant == SINGLE_LINK:
        q_md, q_fa = single_link_tables(gains, scheme.S_A_single, int(xi_rx_values.max()), prefixes)
        q = (P1 * q_md + (1 - P1) * q_fa).mean(axis=0)
        return q[xi_rx_values][:, None]
    if scheme.variant == SD_CONSTANT:
        q_md, q_fa = sd_constant_tables(gains, params, xi_rx_values, second_max, prefixes, isi_window)
    else:
        q_md, q_fa = majority_tables(
            gains, params, xi_rx_values, second_max, scheme.votes(gains.K), prefixes, isi_window
        )
    return (P1 * q_md + (1 - P1) * q_fa).mean(axis=0)[:, 1:]
