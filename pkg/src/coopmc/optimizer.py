"""Joint integer search over (xi_RX, xi_FC).

Objectives come in two shapes: a scalar ``objective(xi_rx, xi_fc)`` or a row
objective ``rows(xi_rx_values) -> array (len(xi_rx_values), len(xi_fc_values))``.
The analytic surfaces are much cheaper per row than per cell, so the schemes
are optimised through the row form.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .analytical import DEFAULT_ISI_WINDOW, prefix_sets
from .channel import DiffusionParams, ProtocolTiming, build_gains
from .schemes import SINGLE_LINK, SchemeSpec, surface
from .topology import Topology

DEFAULT_XI_RX_RANGE = (1, 200)
DEFAULT_XI_FC_RANGE = (1, 400)
STRATEGIES = ("exhaustive", "coarse-to-fine")


@dataclass
class OptimizationResult:
    """Best pair, its value and the (possibly partially evaluated) surface.

    Cells never evaluated hold NaN.  ``xi_fc`` is None for objectives without
    a second threshold.
    """

    xi_rx: int
    xi_fc: Optional[int]
    q_star: float
    xi_rx_values: np.ndarray
    xi_fc_values: np.ndarray
    surface: np.ndarray = field(repr=False)
    evaluations: int
    strategy: str

    @property
    def best(self):
        return self.xi_rx, self.xi_fc

    def surface_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["xi_rx", "xi_fc", "q_bar"])
        for a, xr in enumerate(self.xi_rx_values):
            for b, xf in enumerate(self.xi_fc_values):
                v = self.surface[a, b]
                if not np.isnan(v):
                    w.writerow([int(xr), int(xf), repr(float(v))])
        return buf.getvalue()


def _as_values(r, name) -> np.ndarray:
    if isinstance(r, tuple) and len(r) == 2:
        lo, hi = int(r[0]), int(r[1])
        values = np.arange(lo, hi + 1)
    else:
        values = np.unique(np.asarray(list(r), dtype=np.int64))
    if values.size == 0:
        raise ValueError(f"{name} range is empty")
    if values.min() < 1:
        raise ValueError(f"{name} thresholds must be at least 1")
    return values.astype(np.int64)


def _scalar_rows(objective, fc_values):
    def rows(rx_values):
        return np.array([[objective(int(a), int(b)) for b in fc_values] for a in rx_values], dtype=float)

    return rows


def _eval_rows(rows, rx_values, threads, chunk):
    chunks = [rx_values[i : i + chunk] for i in range(0, len(rx_values), chunk)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(rows, chunks))
    else:
        parts = [rows(c) for c in chunks]
    return np.vstack(parts)


def _argmin(surf):
    # nanargmin returns the first minimum in row-major order: smallest xi_rx, then xi_fc
    flat = int(np.nanargmin(surf))
    return np.unravel_index(flat, surf.shape)


def joint_optimize(
    objective: Optional[Callable[[int, int], float]] = None,
    xi_rx_range=DEFAULT_XI_RX_RANGE,
    xi_fc_range=DEFAULT_XI_FC_RANGE,
    strategy: str = "exhaustive",
    row_objective: Optional[Callable] = None,
    stride: int = 4,
    threads: int = 1,
    chunk: int = 16,
) -> OptimizationResult:
    """Minimise over the integer grid ``xi_rx_range x xi_fc_range``.

    Ranges are ``(lo, hi)`` inclusive tuples or explicit sequences.
    ``coarse-to-fine`` is best effort: a stride-``stride`` subgrid, then every
    pair within ``stride`` of the coarse winner.  ``row_objective`` must return
    columns in ``xi_fc_range`` order; a column count of one means the
    objective ignores xi_FC.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}")
    if stride < 1:
        raise ValueError("stride must be positive")
    rx_values = _as_values(xi_rx_range, "xi_rx")
    fc_values = _as_values(xi_fc_range, "xi_fc")
    if row_objective is None:
        if objective is None:
            raise ValueError("need an objective or a row objective")
        row_objective = _scalar_rows(objective, fc_values)

    if strategy == "exhaustive":
        surf = _eval_rows(row_objective, rx_values, threads, chunk)
        evaluations = surf.size
    else:
        probe = _eval_rows(row_objective, rx_values[:1], 1, 1)
        surf = np.full((len(rx_values), probe.shape[1]), np.nan)
        coarse = np.arange(0, len(rx_values), stride)
        surf[coarse] = _eval_rows(row_objective, rx_values[coarse], threads, chunk)
        # a row objective yields whole rows, so the coarse pass keeps only every stride-th column
        fc_mask = np.zeros(surf.shape[1], dtype=bool)
        fc_mask[::stride] = True
        surf[np.ix_(coarse, ~fc_mask)] = np.nan
        a, b = _argmin(surf)
        lo, hi = max(0, a - stride), min(len(rx_values), a + stride + 1)
        fine = _eval_rows(row_objective, rx_values[lo:hi], threads, chunk)
        cols = slice(max(0, b - stride), min(surf.shape[1], b + stride + 1))
        surf[lo:hi, cols] = fine[:, cols]
        evaluations = int(np.count_nonzero(~np.isnan(surf)))

    if surf.shape[1] == 1 and len(fc_values) != 1:
        fc_values = np.array([], dtype=np.int64)
    if surf.shape[1] != max(len(fc_values), 1):
        raise ValueError("row objective returned the wrong number of columns")
    a, b = _argmin(surf)
    return OptimizationResult(
        xi_rx=int(rx_values[a]),
        xi_fc=int(fc_values[b]) if len(fc_values) else None,
        q_star=float(surf[a, b]),
        xi_rx_values=rx_values,
        xi_fc_values=fc_values,
        surface=surf,
        evaluations=evaluations,
        strategy=strategy,
    )


def scheme_row_objective(
    scheme: SchemeSpec,
    gains,
    params: DiffusionParams,
    xi_fc_values: Sequence[int],
    prefixes: list,
    P1: float = 0.5,
    isi_window: Optional[int] = DEFAULT_ISI_WINDOW,
) -> Callable:
    """Row objective for a scheme's analytic surface (single link: one column)."""
    xi_fc_values = np.asarray(xi_fc_values, dtype=np.int64)
    top = int(xi_fc_values.max())

    def rows(rx_values):
        s = surface(scheme, gains, params, rx_values, top, prefixes, P1, isi_window)
        if scheme.variant == SINGLE_LINK:
            return s
        return s[:, xi_fc_values - 1]

    return rows


def optimize_scheme(
    topo: Topology,
    params: DiffusionParams,
    timing: ProtocolTiming,
    scheme: SchemeSpec = SchemeSpec(),
    xi_rx_range=DEFAULT_XI_RX_RANGE,
    xi_fc_range=DEFAULT_XI_FC_RANGE,
    L: int = 10,
    P1: float = 0.5,
    averaging: str = "exact",
    strategy: str = "exhaustive",
    threads: int = 1,
    isi_window: Optional[int] = DEFAULT_ISI_WINDOW,
    **prefix_kwargs,
) -> OptimizationResult:
    """Analytic optimum of one scheme on one topology."""
    gains = build_gains(topo, params, timing, L)
    prefixes = prefix_sets(L, P1, averaging, **prefix_kwargs)
    fc_values = _as_values(xi_fc_range, "xi_fc")
    rows = scheme_row_objective(scheme, gains, params, fc_values, prefixes, P1, isi_window)
    return joint_optimize(
        xi_rx_range=xi_rx_range,
        xi_fc_range=fc_values,
        strategy=strategy,
        row_objective=rows,
        threads=threads,
    )
