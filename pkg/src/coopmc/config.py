"""Experiment configuration: YAML in, fully validated :class:`ExperimentConfig` out.

Validation never stops at the first problem.  Every unknown key, missing key,
type error and model-level invariant violation is collected with the line it
refers to, and all of them are reported together in a :class:`ConfigError`.

Schema (``*`` = required)::

    topology:   builder*  symmetric_ring | asymmetric | single_link | explicit
                K (symmetric_ring), position (asymmetric), r_rx, r_fc,
                tx, receivers, fc (explicit; micrometres)
    diffusion:  D_A*, D_B*, S_A*, S_B (default ceil(2000/K))
    timing:     T*, t_trans*, t_report*, M_RX*, M_FC*, dt_RX*, dt_FC*
    thresholds: xi_rx* (int or one per receiver), xi_fc*
    scheme:     variant, vote_threshold, S_A_single
    analysis:   L*, P1*, averaging, mc_samples, seed, isi_window, weighting
    optimize:   xi_rx_range, xi_fc_range, strategy
    simulation: trials, seed, sim_step, culling, cull_sigmas, cull_horizon, threads
    sweep:      parameter (dotted key, e.g. topology.position), values
    output:     dir
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import re
from dataclasses import dataclass
from types import SimpleNamespace
from typing import Any, Optional

import yaml

from .analytical import Thresholds
from .channel import DiffusionParams, ProtocolTiming
from .optimizer import DEFAULT_XI_FC_RANGE, DEFAULT_XI_RX_RANGE, STRATEGIES
from .schemes import SCHEMES, SD_CONSTANT, SINGLE_LINK_S_A, SchemeSpec, report_share
from .simulator import CULLING_MODES, SimConfig
from .topology import (
    DEFAULT_R_FC,
    DEFAULT_R_RX,
    SphericalObserver,
    Topology,
    Vec3,
    build_asymmetric,
    build_single_link,
    build_symmetric_ring,
)


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``5e-9`` (no dot) as a float."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789"),
)

BUILDERS = ("symmetric_ring", "asymmetric", "single_link", "explicit")
REQUIRED = object()


class ConfigError(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("invalid configuration:\n" + "\n".join(self.diagnostics))


# --- value checkers: return (value, error message or None) -------------------


def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        return v, f"expected an integer, got {v!r}"
    return v, None


def _num(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        return v, f"expected a number, got {v!r}"
    if not math.isfinite(v):
        return v, "must be finite"
    return float(v), None


def _opt(check):
    def inner(v):
        return (None, None) if v is None else check(v)

    return inner


def _choice(options):
    def inner(v):
        if v not in options:
            return v, f"expected one of {', '.join(options)}, got {v!r}"
        return v, None

    return inner


def _str(v):
    if not isinstance(v, str):
        return v, f"expected a string, got {v!r}"
    return v, None


def _vec(v):
    if not isinstance(v, (list, tuple)) or len(v) != 3:
        return v, f"expected [x, y, z], got {v!r}"
    out = []
    for x in v:
        x, err = _num(x)
        if err:
            return v, err
        out.append(x)
    return out, None


def _vec_list(v):
    if not isinstance(v, list) or not v:
        return v, "expected a non-empty list of [x, y, z]"
    out = []
    for item in v:
        item, err = _vec(item)
        if err:
            return v, err
        out.append(item)
    return out, None


def _int_or_ints(v):
    if isinstance(v, list):
        if not v:
            return v, "expected at least one threshold"
        for x in v:
            if _int(x)[1]:
                return v, f"expected integers, got {x!r}"
        return list(v), None
    return _int(v)


def _num_or_nums(v):
    if isinstance(v, list):
        out = []
        for x in v:
            x, err = _num(x)
            if err:
                return v, err
            out.append(x)
        return out, None
    return _num(v)


def _range(v):
    if not isinstance(v, list) or len(v) != 2 or any(_int(x)[1] for x in v):
        return v, f"expected [lo, hi] integers, got {v!r}"
    return list(v), None


def _list(v):
    if not isinstance(v, list) or not v:
        return v, "expected a non-empty list"
    return list(v), None


SCHEMA = {
    "topology": {
        "builder": (_choice(BUILDERS), REQUIRED),
        "K": (_opt(_int), None),
        "position": (_opt(_int), None),
        "r_rx": (_num_or_nums, DEFAULT_R_RX),
        "r_fc": (_num, DEFAULT_R_FC),
        "tx": (_opt(_vec), None),
        "receivers": (_opt(_vec_list), None),
        "fc": (_opt(_vec), None),
    },
    "diffusion": {
        "D_A": (_num, REQUIRED),
        "D_B": (_num, REQUIRED),
        "S_A": (_int, REQUIRED),
        "S_B": (_opt(_int), None),
    },
    "timing": {
        "T": (_num, REQUIRED),
        "t_trans": (_num, REQUIRED),
        "t_report": (_num, REQUIRED),
        "M_RX": (_int, REQUIRED),
        "M_FC": (_int, REQUIRED),
        "dt_RX": (_num, REQUIRED),
        "dt_FC": (_num, REQUIRED),
    },
    "thresholds": {
        "xi_rx": (_int_or_ints, REQUIRED),
        "xi_fc": (_int, REQUIRED),
    },
    "scheme": {
        "variant": (_choice(SCHEMES), SD_CONSTANT),
        "vote_threshold": (_opt(_int), None),
        "S_A_single": (_int, SINGLE_LINK_S_A),
    },
    "analysis": {
        "L": (_int, REQUIRED),
        "P1": (_num, REQUIRED),
        "averaging": (_choice(("exact", "mc")), "exact"),
        "mc_samples": (_int, 100_000),
        "seed": (_int, 0),
        "isi_window": (_opt(_int), 2),
        "weighting": (_choice(("prior", "uniform")), "prior"),
    },
    "optimize": {
        "xi_rx_range": (_range, list(DEFAULT_XI_RX_RANGE)),
        "xi_fc_range": (_range, list(DEFAULT_XI_FC_RANGE)),
        "strategy": (_choice(STRATEGIES), "exhaustive"),
    },
    "simulation": {
        "trials": (_int, 1000),
        "seed": (_int, 0),
        "sim_step": (_opt(_num), None),
        "culling": (_choice(CULLING_MODES), "aggressive"),
        "cull_sigmas": (_num, 6.0),
        "cull_horizon": (_opt(_int), None),
        "threads": (_int, 1),
    },
    "sweep": {
        "parameter": (_opt(_str), None),
        "values": (_opt(_list), None),
    },
    "output": {
        "dir": (_str, "out"),
    },
}


def _marks(node, prefix=(), out=None):
    """Map key paths to 1-based source lines."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = prefix + (str(k.value),)
            out[path] = k.start_mark.line + 1
            _marks(v, path, out)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, default-filled configuration tree (plain dicts, lists and scalars)."""

    data: dict

    def __post_init__(self):
        object.__setattr__(self, "data", copy.deepcopy(self.data))

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(self.digest())

    def __getitem__(self, section):
        return self.data[section]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=False)

    def canonical_json(self) -> str:
        """Compact JSON of everything that can change a result.

        Thread count and output directory are left out: neither affects a number.
        """
        data = self.to_dict()
        data["simulation"].pop("threads", None)
        data.pop("output", None)
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def replace(self, dotted: str, value) -> "ExperimentConfig":
        """Copy with one ``section.key`` changed, re-validated."""
        section, _, key = dotted.partition(".")
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError([f"unknown parameter {dotted!r}"])
        data = self.to_dict()
        data[section][key] = value
        return validate_dict(data)

    # model objects

    def topology(self) -> Topology:
        return _build_topology(self.data["topology"])

    def params(self) -> DiffusionParams:
        d = self.data["diffusion"]
        S_B = d["S_B"] if d["S_B"] is not None else report_share(self.topology().K)
        return DiffusionParams(d["D_A"], d["D_B"], d["S_A"], S_B)

    def timing(self) -> ProtocolTiming:
        return ProtocolTiming(**self.data["timing"])

    def thresholds(self) -> Thresholds:
        t = self.data["thresholds"]
        xi = tuple(t["xi_rx"]) if isinstance(t["xi_rx"], list) else t["xi_rx"]
        return Thresholds(xi, t["xi_fc"])

    def scheme(self) -> SchemeSpec:
        s = self.data["scheme"]
        return SchemeSpec(s["variant"], s["vote_threshold"], s["S_A_single"])

    def sim_config(self) -> SimConfig:
        s = self.data["simulation"]
        return SimConfig(
            sim_step=s["sim_step"],
            rng_seed=s["seed"],
            trials=s["trials"],
            molecule_cull_horizon=s["cull_horizon"],
            scheme=self.scheme(),
            culling=s["culling"],
            cull_sigmas=s["cull_sigmas"],
            threads=s["threads"],
        )

    @property
    def L(self) -> int:
        return self.data["analysis"]["L"]

    @property
    def P1(self) -> float:
        return self.data["analysis"]["P1"]

    def averaging_kwargs(self) -> dict:
        a = self.data["analysis"]
        return dict(averaging=a["averaging"], n_samples=a["mc_samples"], seed=a["seed"], weighting=a["weighting"])


def _build_topology(t) -> Topology:
    b = t["builder"]
    if b == "symmetric_ring":
        return build_symmetric_ring(t["K"], t["r_rx"], t["r_fc"])
    if b == "asymmetric":
        return build_asymmetric(t["position"], t["r_rx"], t["r_fc"])
    if b == "single_link":
        return build_single_link(t["r_rx"], t["r_fc"])
    radii = t["r_rx"] if isinstance(t["r_rx"], list) else [t["r_rx"]] * len(t["receivers"])
    if len(radii) != len(t["receivers"]):
        raise ValueError(f"{len(radii)} receiver radii for {len(t['receivers'])} receivers")
    return Topology(
        Vec3.of(t["tx"]),
        tuple(SphericalObserver(Vec3.of(c), r) for c, r in zip(t["receivers"], radii)),
        SphericalObserver(Vec3.of(t["fc"]), t["r_fc"]),
    )


def _semantic(data, line, bad):
    """Model-level checks.  A check runs when the sections it reads are well formed."""
    errs = []

    def ok(*sections):
        return all(sec in data and sec not in bad for sec in sections)

    topo = None
    if ok("topology"):
        t = data["topology"]
        needs = {"symmetric_ring": ("K",), "asymmetric": ("position",), "explicit": ("tx", "receivers", "fc")}
        topo_errs = [
            f"line {line('topology')}: topology.{k} is required for builder {t['builder']}"
            for k in needs.get(t["builder"], ())
            if t[k] is None
        ]
        if t["builder"] != "explicit" and isinstance(t["r_rx"], list):
            topo_errs.append(
                f"line {line('topology', 'r_rx')}: topology.r_rx must be a single radius for builder {t['builder']}"
            )
        if not topo_errs:
            try:
                topo = _build_topology(t)
            except ValueError as e:
                topo_errs.append(f"line {line('topology')}: topology: {e}")
        errs += topo_errs

    if ok("diffusion"):
        d = data["diffusion"]
        try:
            S_B = d["S_B"] if d["S_B"] is not None else report_share(topo.K if topo else 1)
            DiffusionParams(d["D_A"], d["D_B"], d["S_A"], S_B)
        except ValueError as e:
            errs.append(f"line {line('diffusion')}: diffusion: {e}")

    if ok("timing"):
        for msg in ProtocolTiming.violations(SimpleNamespace(**data["timing"])):
            errs.append(f"line {line('timing')}: timing: {msg}")

    if ok("thresholds"):
        th = data["thresholds"]
        try:
            xi = Thresholds(tuple(th["xi_rx"]) if isinstance(th["xi_rx"], list) else th["xi_rx"], th["xi_fc"])
            if topo is not None:
                xi.rx(topo.K)
        except ValueError as e:
            errs.append(f"line {line('thresholds')}: thresholds: {e}")

    if ok("scheme"):
        s = data["scheme"]
        try:
            spec = SchemeSpec(s["variant"], s["vote_threshold"], s["S_A_single"])
            if topo is not None and spec.variant != "single_link" and s["vote_threshold"] is not None:
                spec.votes(topo.K)
        except ValueError as e:
            errs.append(f"line {line('scheme')}: scheme: {e}")

    if ok("analysis"):
        a = data["analysis"]
        if a["L"] < 1:
            errs.append(f"line {line('analysis', 'L')}: analysis.L must be at least 1")
        if not 0.0 <= a["P1"] <= 1.0:
            errs.append(f"line {line('analysis', 'P1')}: analysis.P1 must lie in [0, 1]")
        if a["mc_samples"] < 1:
            errs.append(f"line {line('analysis', 'mc_samples')}: analysis.mc_samples must be at least 1")
        if a["isi_window"] is not None and a["isi_window"] < 0:
            errs.append(f"line {line('analysis', 'isi_window')}: analysis.isi_window must be non-negative or null")
        if not 0 <= a["seed"] < 2**64:
            errs.append(f"line {line('analysis', 'seed')}: analysis.seed must be an unsigned 64-bit integer")

    if ok("optimize"):
        for key in ("xi_rx_range", "xi_fc_range"):
            lo, hi = data["optimize"][key]
            if not 1 <= lo <= hi:
                errs.append(f"line {line('optimize', key)}: optimize.{key} needs 1 <= lo <= hi, got [{lo}, {hi}]")

    if ok("simulation"):
        sim = data["simulation"]
        try:
            SimConfig(
                sim_step=sim["sim_step"], rng_seed=sim["seed"], trials=sim["trials"],
                molecule_cull_horizon=sim["cull_horizon"], culling=sim["culling"],
                cull_sigmas=sim["cull_sigmas"], threads=sim["threads"],
            )
        except ValueError as e:
            errs.append(f"line {line('simulation')}: simulation: {e}")

    if ok("sweep") and data["sweep"]["parameter"] is not None:
        sw = data["sweep"]
        section, _, key = sw["parameter"].partition(".")
        if section not in SCHEMA or key not in SCHEMA[section]:
            errs.append(f"line {line('sweep', 'parameter')}: sweep.parameter {sw['parameter']!r} is not a config key")
        if sw["values"] is None:
            errs.append(f"line {line('sweep')}: sweep.values is required with sweep.parameter")
    return errs


def validate_dict(raw: Any, marks: Optional[dict] = None) -> ExperimentConfig:
    marks = marks or {}

    def line(*path):
        while path and path not in marks:
            path = path[:-1]
        return marks.get(path, 1)

    errs = []
    bad = set()
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(["line 1: top level must be a mapping of sections"])
    for section in raw:
        if section not in SCHEMA:
            errs.append(f"line {line(str(section))}: unknown section {section!r}")
    data = {}
    for section, keys in SCHEMA.items():
        given = raw.get(section)
        if given is None:
            given = {}
        if not isinstance(given, dict):
            errs.append(f"line {line(section)}: section {section!r} must be a mapping")
            bad.add(section)
            continue
        for key in given:
            if key not in keys:
                errs.append(f"line {line(section, str(key))}: unknown key {section}.{key}")
        out = {}
        for key, (check, default) in keys.items():
            if key not in given:
                if default is REQUIRED:
                    errs.append(f"line {line(section)}: missing required key {section}.{key}")
                    bad.add(section)
                    continue
                out[key] = copy.deepcopy(default)
                continue
            value, err = check(given[key])
            if err:
                errs.append(f"line {line(section, key)}: {section}.{key}: {err}")
                bad.add(section)
            out[key] = value
        data[section] = out
    errs += _semantic(data, line, bad)
    if errs:
        raise ConfigError(errs)
    return ExperimentConfig(data)


def validate_config(text: str) -> ExperimentConfig:
    """Parse YAML text; raise :class:`ConfigError` listing every problem."""
    try:
        node = yaml.compose(text, Loader=_Loader)
        raw = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = mark.line + 1 if mark is not None else 1
        raise ConfigError([f"line {where}: YAML syntax error: {getattr(e, 'problem', e)}"]) from None
    return validate_dict(raw, _marks(node) if node is not None else {})


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as f:
        return validate_config(f.read())
