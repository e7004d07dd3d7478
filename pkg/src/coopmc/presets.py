"""Ready-made configurations for the standard parameter set and the three figures."""

from __future__ import annotations

import copy
from typing import Optional

from .config import ExperimentConfig, validate_dict
from .schemes import MAJORITY, SD_CONSTANT, SINGLE_LINK

STANDARD_SETUP = {
    "topology": {"builder": "symmetric_ring", "K": 3, "r_rx": 0.225, "r_fc": 0.225},
    "diffusion": {"D_A": 5e-9, "D_B": 5e-9, "S_A": 8000, "S_B": None},
    "timing": {
        "T": 1.1e-3,
        "t_trans": 1e-3,
        "t_report": 3e-4,
        "M_RX": 5,
        "M_FC": 5,
        "dt_RX": 1e-4,
        "dt_FC": 3e-5,
    },
    "thresholds": {"xi_rx": 20, "xi_fc": 6},
    "analysis": {"L": 10, "P1": 0.5},
}

# Fixed second thresholds for the threshold sweep: FC count for SD-Constant,
# per-type count for the majority rule (vote threshold defaults to 2 of 3).
FIG2_XI_FC = {SD_CONSTANT: 6, MAJORITY: 4}
FIG2_XI_RX = (1, 120)
FIG3_K = tuple(range(1, 7))
FIG3_R_RX = 0.2
FIG4_POSITIONS = tuple(range(1, 6))
FIGURE_TRIALS = 500
FIGURES = ("fig2", "fig3", "fig4")


def base(**overrides) -> dict:
    """The standard parameter set as a raw dict, with ``section.key`` overrides."""
    raw = copy.deepcopy(STANDARD_SETUP)
    for dotted, value in overrides.items():
        section, _, key = dotted.partition(".")
        raw.setdefault(section, {})[key] = value
    return raw


def standard(overrides: Optional[dict] = None) -> ExperimentConfig:
    """Validated standard config; ``overrides`` maps ``section.key`` to values."""
    return validate_dict(base(**(overrides or {})))


def scheme_config(variant: str, **overrides) -> ExperimentConfig:
    raw = base(**{"scheme.variant": variant, **overrides})
    if variant == SINGLE_LINK:
        raw["topology"] = {"builder": "single_link", "r_rx": raw["topology"].get("r_rx", 0.225)}
    return validate_dict(raw)


def fig2_configs() -> dict:
    """One config per scheme, K = 3, r_RX = 0.225 um."""
    out = {v: scheme_config(v, **{"thresholds.xi_fc": FIG2_XI_FC[v]}) for v in (SD_CONSTANT, MAJORITY)}
    out[SINGLE_LINK] = scheme_config(SINGLE_LINK)
    return out


def fig3_configs() -> list:
    """``(K, variant, config)`` for every scheme on the ring, r_RX = 0.2 um, report budget split over K."""
    out = []
    for K in FIG3_K:
        for v in (SD_CONSTANT, MAJORITY, SINGLE_LINK):
            out.append((K, v, scheme_config(v, **{"topology.K": K, "topology.r_rx": FIG3_R_RX})))
    return out


def fig4_configs() -> list:
    """Three receivers, the third moved along the five sweep positions."""
    out = []
    for pos in FIG4_POSITIONS:
        raw = base(**{"topology.builder": "asymmetric", "topology.position": pos, "simulation.trials": FIGURE_TRIALS})
        raw["topology"].pop("K")
        out.append(validate_dict(raw))
    return out
