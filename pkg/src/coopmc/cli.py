"""Command-line experiment runner.

Every CSV starts with ``#`` comment lines (tool version, command, config hash,
seed, the full config as JSON) followed by a header row.  Files are written to
a temporary name and renamed into place, so a failed run leaves nothing
behind.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import replace
from typing import Optional

import numpy as np

from . import __version__, presets
from .analytical import ErrorReport, average_error, prefix_sets
from .channel import build_gains
from .config import ConfigError, ExperimentConfig, load_config, validate_dict
from .optimizer import optimize_scheme
from .schemes import MAJORITY, SD_CONSTANT, SINGLE_LINK, majority_rule_error, single_link_error, surface
from .simulator import SimEstimate, estimate_error

logger = logging.getLogger("coopmc")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

FIG4_COLUMNS = ("d_TX3", "xi_rx_star", "xi_fc_star", "q_star_analytic", "q_star_sim", "sim_stderr")
FIG3_COLUMNS = ("K", "scheme", "xi_rx_star", "xi_fc_star", "q_star_analytic")
FIG2_COLUMNS = ("xi_rx", "q_sd_constant", "q_majority", "q_single_link")
OPTIMIZE_COLUMNS = ("scheme", "xi_rx_star", "xi_fc_star", "q_star", "evaluations", "strategy")
SWEEP_COLUMNS = ("parameter", "value", "q_bar")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path: str, columns, rows, meta: dict) -> str:
    """Atomically write a commented CSV; returns ``path``."""
    buf = io.StringIO()
    for key, value in meta.items():
        buf.write(f"# {key}: {value}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _meta(command: str, configs, seed) -> dict:
    if isinstance(configs, ExperimentConfig):
        blob = configs.canonical_json()
    else:
        blob = json.dumps({k: json.loads(c.canonical_json()) for k, c in configs.items()}, sort_keys=True,
                          separators=(",", ":"))
    return {
        "tool": f"coopmc {__version__}",
        "command": command,
        "config_hash": hashlib.sha256(blob.encode()).hexdigest()[:16],
        "seed": seed,
        "config": blob,
    }


# --- configuration plumbing ---------------------------------------------------


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    data = cfg.to_dict()
    if getattr(args, "seed", None) is not None:
        data["simulation"]["seed"] = args.seed
        data["analysis"]["seed"] = args.seed
    if getattr(args, "trials", None) is not None and args.trials > 0:
        data["simulation"]["trials"] = args.trials
    if getattr(args, "averaging", None):
        data["analysis"]["averaging"] = args.averaging
    if getattr(args, "out", None):
        data["output"]["dir"] = args.out
    if data == cfg.to_dict():
        return cfg
    return validate_dict(data)


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else presets.standard()
    return _apply_overrides(cfg, args)


def _threads(args, cfg: ExperimentConfig) -> int:
    return args.threads if args.threads is not None else cfg["simulation"]["threads"]


def _out(cfg: ExperimentConfig, name: str) -> str:
    return os.path.join(cfg["output"]["dir"], name)


def _isi(cfg):
    return cfg["analysis"]["isi_window"]


# --- computations -------------------------------------------------------------


def analytic_report(cfg: ExperimentConfig) -> ErrorReport:
    scheme = cfg.scheme()
    topo, params, timing = cfg.topology(), cfg.params(), cfg.timing()
    avg = cfg.averaging_kwargs()
    averaging = avg.pop("averaging")
    if scheme.variant == SINGLE_LINK:
        return single_link_error(
            topo, params, timing, cfg.thresholds().rx(topo.K)[0], cfg.L, cfg.P1, averaging, scheme.S_A_single, **avg
        )
    if scheme.variant == MAJORITY:
        return majority_rule_error(
            topo, params, timing, scheme, cfg.thresholds(), cfg.L, cfg.P1, averaging, isi_window=_isi(cfg), **avg
        )
    return average_error(
        topo, params, timing, cfg.thresholds(), cfg.L, cfg.P1, averaging, isi_window=_isi(cfg), **avg
    )


def simulate(cfg: ExperimentConfig, threads: int = 1, log_path: Optional[str] = None) -> SimEstimate:
    sim = cfg.sim_config()
    if threads != sim.threads:
        sim = replace(sim, threads=threads)
    log = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        return estimate_error(cfg.topology(), cfg.params(), cfg.timing(), cfg.thresholds(), cfg.L, cfg.P1, sim, log)
    finally:
        if log:
            log.close()


def optimize(cfg: ExperimentConfig, threads: int = 1, strategy: Optional[str] = None):
    o = cfg["optimize"]
    avg = cfg.averaging_kwargs()
    return optimize_scheme(
        cfg.topology(),
        cfg.params(),
        cfg.timing(),
        cfg.scheme(),
        tuple(o["xi_rx_range"]),
        tuple(o["xi_fc_range"]),
        cfg.L,
        cfg.P1,
        strategy=strategy or o["strategy"],
        threads=threads,
        isi_window=_isi(cfg),
        **avg,
    )


def fig2_rows(xi_rx_range=presets.FIG2_XI_RX):
    cfgs = presets.fig2_configs()
    xs = np.arange(xi_rx_range[0], xi_rx_range[1] + 1)
    cols = {}
    for variant, cfg in cfgs.items():
        gains = build_gains(cfg.topology(), cfg.params(), cfg.timing(), cfg.L)
        pre = prefix_sets(cfg.L, cfg.P1, **cfg.averaging_kwargs())
        second = cfg.thresholds().xi_fc
        s = surface(cfg.scheme(), gains, cfg.params(), xs, second, pre, cfg.P1, _isi(cfg))
        cols[variant] = s[:, -1] if variant != SINGLE_LINK else s[:, 0]
    rows = [(int(x), cols[SD_CONSTANT][i], cols[MAJORITY][i], cols[SINGLE_LINK][i]) for i, x in enumerate(xs)]
    return rows, cfgs


def fig3_rows(threads: int = 1):
    rows, cfgs = [], {}
    for K, variant, cfg in presets.fig3_configs():
        r = optimize(cfg, threads)
        rows.append((K, variant, r.xi_rx, r.xi_fc, r.q_star))
        cfgs[f"K{K}_{variant}"] = cfg
        logger.info("fig3 K=%d %s: xi=(%s, %s) Q*=%.6g", K, variant, r.xi_rx, r.xi_fc, r.q_star)
    return rows, cfgs


def fig4_rows(trials: Optional[int] = None, seed: Optional[int] = None, threads: int = 1):
    """``trials=0`` skips the simulation columns."""
    rows, cfgs = [], {}
    for pos, cfg in zip(presets.FIG4_POSITIONS, presets.fig4_configs()):
        if trials:
            cfg = cfg.replace("simulation.trials", trials)
        if seed is not None:
            cfg = cfg.replace("simulation.seed", seed)
        r = optimize(cfg, threads)
        d = float(cfg.topology().d_tx[2])
        q_sim = se = None
        if trials != 0:
            at_opt = cfg.replace("thresholds.xi_rx", r.xi_rx).replace("thresholds.xi_fc", r.xi_fc)
            est = simulate(at_opt, threads)
            q_sim, se = est.q_bar, est.stderr_pooled
        rows.append((d, r.xi_rx, r.xi_fc, r.q_star, q_sim, se))
        cfgs[f"position{pos}"] = cfg
        logger.info("fig4 d=%.4f: xi=(%d, %d) Q*=%.6g sim=%s", d, r.xi_rx, r.xi_fc, r.q_star, q_sim)
    return rows, cfgs


# --- subcommands ----------------------------------------------------------------


def cmd_analytic(args) -> int:
    cfg = _load(args)
    report = analytic_report(cfg)
    path = write_csv(_out(cfg, "analytic.csv"), ErrorReport.CSV_COLUMNS, report.rows(),
                     _meta("analytic", cfg, cfg["analysis"]["seed"]))
    print(f"Q_bar = {report.q_bar:.6g}  ->  {path}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    t0 = time.perf_counter()
    est = simulate(cfg, _threads(args, cfg), args.log)
    logger.info("simulated %d trials in %.1f s", est.trials, time.perf_counter() - t0)
    path = write_csv(_out(cfg, "simulate.csv"), SimEstimate.CSV_COLUMNS, est.rows(),
                     _meta("simulate", cfg, cfg["simulation"]["seed"]))
    print(f"Q_bar = {est.q_bar:.6g} +/- {est.stderr_pooled:.2g}  ->  {path}")
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = _load(args)
    r = optimize(cfg, _threads(args, cfg), args.strategy)
    meta = _meta("optimize", cfg, cfg["analysis"]["seed"])
    row = (cfg["scheme"]["variant"], r.xi_rx, r.xi_fc, r.q_star, r.evaluations, r.strategy)
    path = write_csv(_out(cfg, "optimize.csv"), OPTIMIZE_COLUMNS, [row], meta)
    surf_rows = [tuple(line.split(",")) for line in r.surface_csv().splitlines()[1:]]
    write_csv(_out(cfg, "optimize_surface.csv"), ("xi_rx", "xi_fc", "q_bar"), surf_rows, meta)
    print(f"xi* = ({r.xi_rx}, {r.xi_fc})  Q* = {r.q_star:.6g}  ->  {path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    sw = cfg["sweep"]
    if sw["parameter"] is None:
        raise ConfigError(["line 1: sweep.parameter and sweep.values are required for the sweep command"])
    rows = []
    for value in sw["values"]:
        q = analytic_report(cfg.replace(sw["parameter"], value)).q_bar
        rows.append((sw["parameter"], value, q))
        print(f"{sw['parameter']} = {value}: Q_bar = {q:.6g}")
    write_csv(_out(cfg, "sweep.csv"), SWEEP_COLUMNS, rows, _meta("sweep", cfg, cfg["analysis"]["seed"]))
    return EXIT_OK


def cmd_reproduce(args) -> int:
    out_dir = args.out or "out"
    threads = args.threads or 1
    if args.figure == "fig2":
        rows, cfgs = fig2_rows()
        columns, seed = FIG2_COLUMNS, 0
    elif args.figure == "fig3":
        rows, cfgs = fig3_rows(threads)
        columns, seed = FIG3_COLUMNS, 0
    else:
        rows, cfgs = fig4_rows(args.trials, args.seed, threads)
        columns = FIG4_COLUMNS
        seed = args.seed if args.seed is not None else 0
    path = write_csv(os.path.join(out_dir, f"{args.figure}.csv"), columns, rows,
                     _meta(f"reproduce {args.figure}", cfgs, seed))
    print(path)
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load(args)
    print(f"ok {cfg.digest()}")
    return EXIT_OK


def cmd_show_config(args) -> int:
    cfg = _load(args)
    sys.stdout.write(cfg.to_yaml())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment file (default: the standard K=3 setup)")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--seed", type=int, help="master seed for simulation and MC averaging")
    common.add_argument("--trials", type=int, help="simulation trials")
    common.add_argument("--threads", type=int, help="worker threads; results do not depend on it")
    mode = common.add_mutually_exclusive_group()
    mode.add_argument("--exact", dest="averaging", action="store_const", const="exact",
                      help="average over every TX prefix")
    mode.add_argument("--mc", dest="averaging", action="store_const", const="mc",
                      help="average over sampled TX sequences")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="coopmc", description="Cooperative diffusive MC detection experiments.")
    p.add_argument("--version", action="version", version=f"coopmc {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("analytic", parents=[common], help="analytic error per symbol").set_defaults(func=cmd_analytic)
    sp = sub.add_parser("simulate", parents=[common], help="particle Monte Carlo estimate")
    sp.add_argument("--log", help="write per-trial records as NDJSON to this file")
    sp.set_defaults(func=cmd_simulate)
    sp = sub.add_parser("optimize", parents=[common], help="joint threshold search")
    sp.add_argument("--strategy", choices=("exhaustive", "coarse-to-fine"))
    sp.set_defaults(func=cmd_optimize)
    sub.add_parser("sweep", parents=[common], help="vary sweep.parameter over sweep.values").set_defaults(
        func=cmd_sweep
    )
    sp = sub.add_parser("reproduce", parents=[common], help="figure presets")
    sp.add_argument("figure", choices=presets.FIGURES)
    sp.set_defaults(func=cmd_reproduce)
    sub.add_parser("validate", parents=[common], help="check a config file").set_defaults(func=cmd_validate)
    sub.add_parser("show-config", parents=[common], help="print the effective config as YAML").set_defaults(
        func=cmd_show_config
    )
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as e:
        for line in e.diagnostics:
            print(f"{args.config or '<preset>'}: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
