"""Observation probabilities for passive spheres and Poisson ISI means.

All functions here take SI units (seconds, metres, m^2/s).  ``build_gains``
is the only place that converts topology micrometres to metres.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import erf, erfcx

from .topology import UM, Topology


class UniformApproximationWarning(RuntimeWarning):
    """The uniform-concentration observation probability exceeded one and was clamped."""


@dataclass(frozen=True)
class DiffusionParams:
    D_A: float = 5e-9
    D_B: float = 5e-9
    S_A: int = 8000
    S_B: int = 667

    def __post_init__(self):
        if not (self.D_A > 0 and self.D_B > 0):
            raise ValueError("diffusion coefficients must be positive")
        if self.S_A < 0 or self.S_B < 0 or int(self.S_A) != self.S_A or int(self.S_B) != self.S_B:
            raise ValueError("molecule counts must be non-negative integers")


@dataclass(frozen=True)
class ProtocolTiming:
    T: float = 1.1e-3
    t_trans: float = 1e-3
    t_report: float = 3e-4
    M_RX: int = 5
    M_FC: int = 5
    dt_RX: float = 1e-4
    dt_FC: float = 3e-5

    def violations(self) -> list:
        """Human-readable list of broken invariants (empty when valid)."""
        out = []
        for name in ("T", "t_trans", "t_report", "dt_RX", "dt_FC"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be positive")
        for name in ("M_RX", "M_FC"):
            if getattr(self, name) < 1:
                out.append(f"{name} must be at least 1")
        if out:
            return out
        if not self.M_RX * self.dt_RX < self.t_trans:
            out.append(
                f"half-duplex constraint violated: M_RX*dt_RX = {self.M_RX * self.dt_RX:g} s "
                f"must be < t_trans = {self.t_trans:g} s"
            )
        if not self.M_FC * self.dt_FC < self.t_report:
            out.append(
                f"report window violated: M_FC*dt_FC = {self.M_FC * self.dt_FC:g} s "
                f"must be < t_report = {self.t_report:g} s"
            )
        # The report phase may run past T: type-B sampling and the next type-A
        # emission involve different species, so only the RX phase must fit.
        if not self.M_RX * self.dt_RX < self.T:
            out.append(f"RX sampling window M_RX*dt_RX must be shorter than T = {self.T:g} s")
        return out

    def __post_init__(self):
        problems = self.violations()
        if problems:
            raise ValueError("; ".join(problems))

    def rx_sample_offsets(self) -> np.ndarray:
        return self.dt_RX * np.arange(1, self.M_RX + 1)

    def fc_sample_offsets(self) -> np.ndarray:
        """FC sample times relative to the start of the report phase."""
        return self.dt_FC * np.arange(1, self.M_FC + 1)


@dataclass(frozen=True)
class ChannelGains:
    """Per-lag expected observations of one emitted molecule, summed over the samples.

    ``tx_rx[k, l]`` is for a type-A molecule sent ``l`` symbols ago, seen by
    receiver ``k``; ``rx_fc[k, l]`` is for a type-B molecule sent by receiver
    ``k`` ``l`` symbols ago, seen by the FC.  Multiply by the emission size to
    get Poisson means.
    """

    tx_rx: np.ndarray
    rx_fc: np.ndarray

    @property
    def K(self) -> int:
        return self.tx_rx.shape[0]

    @property
    def L(self) -> int:
        return self.tx_rx.shape[1]

    def is_symmetric(self, rtol: float = 1e-12) -> bool:
        return bool(
            np.allclose(self.tx_rx, self.tx_rx[:1], rtol=rtol, atol=0)
            and np.allclose(self.rx_fc, self.rx_fc[:1], rtol=rtol, atol=0)
        )


def _check_positive(**kwargs):
    for name, value in kwargs.items():
        if np.any(~(np.asarray(value, dtype=float) > 0)):
            raise ValueError(f"{name} must be positive")


def p_ob_uniform(t, observer_volume, d, D):
    """Point-observation probability assuming uniform concentration over the observer.

    Clamped to one (with :class:`UniformApproximationWarning`) where the
    approximation breaks down.
    """
    _check_positive(t=t, observer_volume=observer_volume, d=d, D=D)
    t = np.asarray(t, dtype=float)
    raw = observer_volume / (4.0 * np.pi * D * t) ** 1.5 * np.exp(-(d * d) / (4.0 * D * t))
    if np.any(raw > 1.0):
        warnings.warn(
            "uniform-concentration observation probability exceeded 1 and was clamped",
            UniformApproximationWarning,
            stacklevel=2,
        )
        raw = np.minimum(raw, 1.0)
    return raw if raw.ndim else float(raw)


def p_ob_sphere(t, r_obs, d, D):
    """Exact probability that a molecule released at distance ``d`` is inside a sphere of radius ``r_obs`` at ``t``."""
    _check_positive(t=t, r_obs=r_obs, d=d, D=D)
    t, d = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(d, dtype=float))
    s = np.sqrt(D * t)
    two_s = 2.0 * s
    a = (d - r_obs) / two_s
    b = (d + r_obs) / two_s
    near = 0.5 * (erf(b) - erf(a)) - s / (d * math.sqrt(math.pi)) * (np.exp(-a * a) - np.exp(-b * b))
    # Outside the sphere both terms carry exp(-a^2); factoring it out with the
    # scaled erfc avoids the cancellation that wipes out far-field values.
    a_pos = np.maximum(a, 0.0)
    gap = np.exp(-(b * b - a_pos * a_pos))
    far = np.exp(-a_pos * a_pos) * (
        0.5 * (erfcx(a_pos) - erfcx(b) * gap) - s / (d * math.sqrt(math.pi)) * (1.0 - gap)
    )
    val = np.clip(np.where(a > 1.0, far, near), 0.0, 1.0)
    return val if val.ndim else float(val)


def build_gains(topo: Topology, params: DiffusionParams, timing: ProtocolTiming, L: int) -> ChannelGains:
    if L < 1:
        raise ValueError("sequence length must be at least 1")
    lags = timing.T * np.arange(L)[:, None]
    t_rx = lags + timing.rx_sample_offsets()[None, :]
    t_fc = lags + timing.fc_sample_offsets()[None, :]
    tx_rx = np.empty((topo.K, L))
    rx_fc = np.empty((topo.K, L))
    r_fc = topo.fc.radius * UM
    for k, (rx, d_tx, d_fc) in enumerate(zip(topo.receivers, topo.d_tx, topo.d_fc)):
        volume = rx.volume * UM**3
        tx_rx[k] = p_ob_uniform(t_rx, volume, d_tx * UM, params.D_A).sum(axis=1)
        rx_fc[k] = p_ob_sphere(t_fc, r_fc, d_fc * UM, params.D_B).sum(axis=1)
    return ChannelGains(tx_rx, rx_fc)


def cached_gains(topo, params, timing, L, cache_dir) -> ChannelGains:
    """:func:`build_gains` memoised to ``<cache_dir>/gains-<hash>.npz``.

    The hash covers the topology, diffusion parameters, timing and ``L``; the
    file holds the two arrays ``tx_rx`` and ``rx_fc``.
    """
    blob = json.dumps(
        {"topology": topo.to_dict(), "params": asdict(params), "timing": asdict(timing), "L": L},
        sort_keys=True,
    ).encode()
    path = Path(cache_dir) / f"gains-{hashlib.sha256(blob).hexdigest()[:24]}.npz"
    if path.exists():
        with np.load(path) as data:
            return ChannelGains(data["tx_rx"], data["rx_fc"])
    gains = build_gains(topo, params, timing, L)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.stem + ".tmp.npz")
    np.savez(tmp, tx_rx=gains.tx_rx, rx_fc=gains.rx_fc)
    tmp.replace(path)
    return gains


def poisson_mean(seq_prefix, gains_for_link, emission) -> float:
    """Mean count in the last interval of ``seq_prefix``.

    Entries of ``seq_prefix`` may be fractional (expected decisions).
    """
    seq = np.asarray(seq_prefix, dtype=float)
    c = np.asarray(gains_for_link, dtype=float)
    j = seq.shape[-1]
    if j > c.shape[-1]:
        raise ValueError(f"sequence of length {j} needs at least {j} gain lags, have {c.shape[-1]}")
    if j == 0:
        return 0.0
    return float(emission * np.dot(seq, c[:j][::-1]))


def poisson_cdf(k_max, mean):
    """P(X <= k_max) for X ~ Poisson(mean), by summation of log-space terms.

    Broadcasts over ``k_max`` and ``mean``; ``k_max = -1`` gives 0.
    """
    k = np.asarray(k_max)
    mu = np.asarray(mean, dtype=float)
    if np.any(mu < 0):
        raise ValueError("Poisson mean must be non-negative")
    if np.any(k < -1):
        raise ValueError("k_max must be >= -1")
    k, mu = np.broadcast_arrays(k.astype(np.int64), mu)
    out = np.zeros(mu.shape)
    top = int(k.max()) if k.size else -1
    if top >= 0:
        zero = mu == 0
        log_mu = np.log(np.where(zero, 1.0, mu))
        log_p = -mu.copy()
        for n in range(top + 1):
            if n:
                log_p = log_p + log_mu - math.log(n)
            term = np.where(zero, 1.0 if n == 0 else 0.0, np.exp(log_p))
            out = out + np.where(n <= k, term, 0.0)
    out = np.minimum(out, 1.0)
    return out if out.ndim else float(out)


def poisson_sf(k_max, mean):
    """P(X > k_max) = 1 - poisson_cdf(k_max, mean)."""
    return 1.0 - poisson_cdf(k_max, mean)
