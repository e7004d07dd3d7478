"""Particle-based Monte Carlo of the three-phase protocol.

This is the independent check on the analytical module: every molecule is a
Brownian particle, receivers count what is inside them at the sampling
instants, and nothing here uses the Poisson approximation.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _simkernel as sk
from . import rng
from ._accel import USE_NUMBA
from .analytical import Thresholds
from .channel import DiffusionParams, ProtocolTiming
from .schemes import MAJORITY, SD_CONSTANT, SINGLE_LINK, SchemeSpec
from .topology import UM, SphericalObserver, Topology

logger = logging.getLogger(__name__)

SPECIES_A = 0
SPECIES_B = 1
CULLING_MODES = ("none", "aggressive")
_SCHEME_CODES = {SD_CONSTANT: sk.SCHEME_SD, MAJORITY: sk.SCHEME_MAJORITY, SINGLE_LINK: sk.SCHEME_SINGLE}
_CHUNK = 64


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo settings.

    ``sim_step=None`` advances molecules straight from one sampling instant to
    the next, which is exact for free diffusion; a number caps the Brownian
    step length instead.  ``molecule_cull_horizon`` (symbols after emission)
    defaults to the sequence length, i.e. nothing is dropped by age.
    """

    sim_step: Optional[float] = None
    rng_seed: int = 0
    trials: int = 1000
    molecule_cull_horizon: Optional[int] = None
    scheme: SchemeSpec = field(default_factory=SchemeSpec)
    culling: str = "none"
    cull_sigmas: float = 6.0
    threads: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.sim_step is not None and not self.sim_step > 0:
            raise ValueError("sim_step must be positive")
        if self.culling not in CULLING_MODES:
            raise ValueError(f"culling must be one of {CULLING_MODES}")
        if not self.cull_sigmas > 0:
            raise ValueError("cull_sigmas must be positive")
        if self.molecule_cull_horizon is not None and self.molecule_cull_horizon < 1:
            raise ValueError("molecule_cull_horizon must be at least one symbol")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        rng.seed_to_key(self.rng_seed)


@dataclass
class MoleculeCloud:
    """Positions in metres plus species, emitter and emission time per molecule.

    ``emitter`` is the index of the reporting receiver for type-B molecules and
    -1 for type A.  ``ids`` feed the RNG counter.
    """

    positions: np.ndarray
    species: np.ndarray
    emitter: np.ndarray
    emission_time: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("molecule positions must be finite")
        n = len(self.positions)
        for name in ("species", "emitter", "emission_time", "ids"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has the wrong length")

    def __len__(self):
        return len(self.positions)

    @classmethod
    def release(cls, point, n, species=SPECIES_A, emitter=-1, t=0.0, first_id=0) -> "MoleculeCloud":
        return cls(
            np.tile(np.asarray(point, dtype=float), (n, 1)),
            np.full(n, species, dtype=np.int8),
            np.full(n, emitter, dtype=np.int64),
            np.full(n, float(t)),
            np.arange(first_id, first_id + n, dtype=np.uint64),
        )


def step_brownian(cloud: MoleculeCloud, D, dt: float, seed: int = 0, event: int = 0, trial: int = 0) -> MoleculeCloud:
    """Advance every molecule by ``dt``; ``D`` maps species code to diffusion coefficient."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    coeff = np.array([D[int(s)] for s in (SPECIES_A, SPECIES_B)])[cloud.species.astype(int)]
    k0, k1 = rng.seed_to_key(seed)
    step = sk.brownian_step_numba if USE_NUMBA else sk.brownian_step_numpy
    pos = step(cloud.positions, coeff, float(dt), cloud.ids.astype(np.int64), event, trial, k0, k1)
    return MoleculeCloud(pos, cloud.species, cloud.emitter, cloud.emission_time, cloud.ids)


def count_inside(cloud: MoleculeCloud, observer: SphericalObserver, species: Optional[int] = None) -> int:
    """Molecules (optionally of one species) within the observer; the observer is in micrometres."""
    center = observer.center.as_array() * UM
    r = observer.radius * UM
    mask = ((cloud.positions - center) ** 2).sum(axis=1) <= r * r
    if species is not None:
        mask &= cloud.species == species
    return int(mask.sum())


@dataclass
class TrialRecord:
    tx_bits: np.ndarray
    rx_counts: np.ndarray
    rx_decisions: np.ndarray
    fc_count: np.ndarray
    fc_counts_by_rx: np.ndarray
    fc_decision: np.ndarray

    def symbol_errors(self) -> np.ndarray:
        return (self.fc_decision != self.tx_bits).astype(np.int8)

    def to_json(self, trial_index: int) -> str:
        return json.dumps(
            {
                "trial": int(trial_index),
                "tx": self.tx_bits.tolist(),
                "rx_counts": self.rx_counts.tolist(),
                "rx_decisions": self.rx_decisions.tolist(),
                "fc_count": self.fc_count.tolist(),
                "fc_decision": self.fc_decision.tolist(),
            }
        )


@dataclass
class SimEstimate:
    q_bar: float
    stderr_pooled: float
    stderr_trial: float
    per_symbol: np.ndarray
    per_symbol_stderr: np.ndarray
    trials: int
    errors: np.ndarray = field(repr=False)

    CSV_COLUMNS = ("symbol", "error_rate", "stderr", "q_bar", "stderr_pooled", "stderr_trial", "trials")

    def rows(self):
        for j, (p, se) in enumerate(zip(self.per_symbol, self.per_symbol_stderr)):
            yield (j + 1, p, se, self.q_bar, self.stderr_pooled, self.stderr_trial, self.trials)


def _kernel_args(topo, params, timing, thresholds, config):
    scheme = config.scheme
    K = topo.K
    S_A = scheme.S_A_single if scheme.variant == SINGLE_LINK else params.S_A
    return dict(
        tx=topo.tx.as_array() * UM,
        rx_c=np.array([rx.center.as_list() for rx in topo.receivers]) * UM,
        rx_r=topo.rx_radii * UM,
        fc_c=topo.fc.center.as_array() * UM,
        fc_r=topo.fc.radius * UM,
        S_A=int(S_A),
        S_B=np.full(K, int(params.S_B), dtype=np.int64),
        D_A=float(params.D_A),
        D_B=float(params.D_B),
        T=float(timing.T),
        t_trans=float(timing.t_trans),
        dt_rx=float(timing.dt_RX),
        M_rx=int(timing.M_RX),
        dt_fc=float(timing.dt_FC),
        M_fc=int(timing.M_FC),
        xi_rx=thresholds.rx(K).astype(np.int64),
        scheme=_SCHEME_CODES[scheme.variant],
        sim_step=float(config.sim_step or 0.0),
        cull=config.culling == "aggressive",
        zsig=float(config.cull_sigmas),
    )


def _fc_decisions(scheme: SchemeSpec, thresholds: Thresholds, rx_dec, fc_counts, fc_by_rx):
    if scheme.variant == SD_CONSTANT:
        return (fc_counts >= thresholds.xi_fc).astype(np.int8)
    if scheme.variant == MAJORITY:
        votes = (fc_by_rx >= thresholds.xi_fc).sum(axis=-1)
        return (votes >= scheme.votes(fc_by_rx.shape[-1])).astype(np.int8)
    return rx_dec[..., 0].astype(np.int8)


def simulate_trials(topo, params, timing, thresholds, bits, trial_ids, config: SimConfig) -> dict:
    """Run one trial per row of ``bits`` and return the raw per-symbol arrays."""
    bits = np.ascontiguousarray(np.atleast_2d(bits), dtype=np.int8)
    trial_ids = np.ascontiguousarray(trial_ids, dtype=np.int64)
    n, L = bits.shape
    K = topo.K
    if len(trial_ids) != n:
        raise ValueError("one trial index per TX sequence")
    args = _kernel_args(topo, params, timing, thresholds, config)
    horizon = config.molecule_cull_horizon or L
    k0, k1 = rng.seed_to_key(config.rng_seed)
    rx_counts = np.zeros((n, L, K), dtype=np.int64)
    fc_counts = np.zeros((n, L), dtype=np.int64)
    fc_by_rx = np.zeros((n, L, K), dtype=np.int64)
    kernel = sk.run_trials_numba if USE_NUMBA else sk.run_trials_numpy

    def work(lo, hi):
        kernel(
            trial_ids[lo:hi], bits[lo:hi], k0, k1, args["tx"], args["rx_c"], args["rx_r"], args["fc_c"],
            args["fc_r"], args["S_A"], args["S_B"], args["D_A"], args["D_B"], args["T"], args["t_trans"],
            args["dt_rx"], args["M_rx"], args["dt_fc"], args["M_fc"], args["xi_rx"], args["scheme"],
            args["sim_step"], args["cull"], args["zsig"], horizon,
            rx_counts[lo:hi], fc_counts[lo:hi], fc_by_rx[lo:hi],
        )

    chunks = [(lo, min(lo + _CHUNK, n)) for lo in range(0, n, _CHUNK)]
    if config.threads == 1 or len(chunks) == 1:
        for lo, hi in chunks:
            work(lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            list(pool.map(lambda c: work(*c), chunks))
    rx_dec = (rx_counts >= args["xi_rx"][None, None, :]).astype(np.int8)
    fc_dec = _fc_decisions(config.scheme, thresholds, rx_dec, fc_counts, fc_by_rx)
    return dict(bits=bits, rx_counts=rx_counts, rx_dec=rx_dec, fc_counts=fc_counts, fc_by_rx=fc_by_rx, fc_dec=fc_dec)


def run_sequence_trial(
    topo: Topology,
    params: DiffusionParams,
    timing: ProtocolTiming,
    thresholds: Thresholds,
    tx_sequence,
    sim_config: SimConfig,
    trial_index: int = 0,
) -> TrialRecord:
    out = simulate_trials(topo, params, timing, thresholds, np.asarray(tx_sequence)[None, :], [trial_index], sim_config)
    return TrialRecord(
        out["bits"][0], out["rx_counts"][0], out["rx_dec"][0], out["fc_counts"][0], out["fc_by_rx"][0], out["fc_dec"][0]
    )


def estimate_error(
    topo: Topology,
    params: DiffusionParams,
    timing: ProtocolTiming,
    thresholds: Thresholds,
    L: int,
    P1: float,
    sim_config: SimConfig,
    log_file=None,
) -> SimEstimate:
    """Average symbol error over ``sim_config.trials`` fresh random TX sequences.

    ``stderr_pooled`` treats every symbol as an independent Bernoulli trial;
    ``stderr_trial`` uses the spread of per-trial error fractions and so
    accounts for correlation inside a sequence.
    """
    trials = sim_config.trials
    ids = np.arange(trials, dtype=np.int64)
    bits = rng.tx_bits(sim_config.rng_seed, ids, L, P1)
    out = simulate_trials(topo, params, timing, thresholds, bits, ids, sim_config)
    errors = (out["fc_dec"] != bits).astype(np.int8)
    if log_file is not None:
        for t in range(trials):
            rec = TrialRecord(
                bits[t], out["rx_counts"][t], out["rx_dec"][t], out["fc_counts"][t], out["fc_by_rx"][t], out["fc_dec"][t]
            )
            log_file.write(rec.to_json(t) + "\n")
    q = float(errors.mean())
    per_symbol = errors.mean(axis=0)
    per_trial = errors.mean(axis=1)
    stderr_trial = float(per_trial.std(ddof=1) / math.sqrt(trials)) if trials > 1 else float("nan")
    return SimEstimate(
        q_bar=q,
        stderr_pooled=math.sqrt(q * (1.0 - q) / errors.size),
        stderr_trial=stderr_trial,
        per_symbol=per_symbol,
        per_symbol_stderr=np.sqrt(per_symbol * (1.0 - per_symbol) / trials),
        trials=trials,
        errors=errors,
    )
