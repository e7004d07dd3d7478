import io
import json
import math

import numpy as np
import pytest

from coopmc import simulator
from coopmc.analytical import Thresholds, average_error
from coopmc.channel import DiffusionParams, ProtocolTiming
from coopmc.schemes import MAJORITY, SINGLE_LINK, SchemeSpec
from coopmc.simulator import (
    SPECIES_A,
    SPECIES_B,
    MoleculeCloud,
    SimConfig,
    count_inside,
    estimate_error,
    run_sequence_trial,
    simulate_trials,
    step_brownian,
)
from coopmc.topology import UM, SphericalObserver, Vec3, build_single_link, build_symmetric_ring

# A lighter variant of the standard setup keeps the particle tests fast.
LIGHT = DiffusionParams(S_A=1500, S_B=300)
TH = Thresholds(4, 3)


def _run(config, n=40, L=4, topo=None, seed_bits=3):
    topo = topo or build_symmetric_ring(3)
    bits = np.random.default_rng(seed_bits).integers(0, 2, (n, L)).astype(np.int8)
    return simulate_trials(topo, LIGHT, ProtocolTiming(), TH, bits, np.arange(n), config)


def test_config_validation():
    for kw in (dict(trials=0), dict(sim_step=0.0), dict(culling="some"), dict(cull_sigmas=0),
               dict(molecule_cull_horizon=0), dict(threads=0), dict(rng_seed=-3)):
        with pytest.raises(ValueError):
            SimConfig(**kw)


def test_cloud_validation():
    with pytest.raises(ValueError):
        MoleculeCloud(np.zeros((2, 3)), np.zeros(3), np.zeros(2), np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        MoleculeCloud([[0, np.inf, 0]], [0], [0], [0.0], [0])
    assert len(MoleculeCloud.release((0, 0, 0), 5)) == 5


def test_no_diffusion_no_motion():
    cloud = MoleculeCloud.release((1e-6, 2e-6, 0), 100)
    moved = step_brownian(cloud, {SPECIES_A: 0.0, SPECIES_B: 0.0}, 1e-3)
    assert np.array_equal(moved.positions, cloud.positions)


def test_mean_square_displacement():
    D, dt, n = 5e-9, 1e-4, 60_000
    cloud = MoleculeCloud.release((0, 0, 0), n)
    moved = step_brownian(cloud, {SPECIES_A: D, SPECIES_B: D}, dt, seed=9)
    msd = (moved.positions**2).sum(axis=1).mean()
    # the squared displacement is 2 D dt chi^2_3, so its mean has relative spread sqrt(2/3n)
    assert abs(msd / (6 * D * dt) - 1) < 4 * math.sqrt(2 / (3 * n))
    assert abs(moved.positions.mean(axis=0)).max() < 4 * math.sqrt(2 * D * dt / n)


def test_steps_use_species_coefficient():
    cloud = MoleculeCloud.release((0, 0, 0), 20_000)
    cloud.species[10_000:] = SPECIES_B
    moved = step_brownian(cloud, {SPECIES_A: 1e-9, SPECIES_B: 9e-9}, 1e-4, seed=1)
    r2 = (moved.positions**2).sum(axis=1)
    assert r2[10_000:].mean() / r2[:10_000].mean() == pytest.approx(9, rel=0.05)


def test_step_backends_identical(monkeypatch):
    cloud = MoleculeCloud.release((0, 0, 0), 5000)
    D = {SPECIES_A: 5e-9, SPECIES_B: 5e-9}
    a = step_brownian(cloud, D, 1e-4, seed=4, event=2, trial=3)
    monkeypatch.setattr(simulator, "USE_NUMBA", False)
    b = step_brownian(cloud, D, 1e-4, seed=4, event=2, trial=3)
    assert np.array_equal(a.positions, b.positions)


def test_count_inside():
    obs = SphericalObserver(Vec3.of((2, 0, 0)), 0.5)
    assert count_inside(MoleculeCloud.release((0, 0, 0), 0), obs) == 0
    centred = MoleculeCloud.release((2 * UM, 0, 0), 7, species=SPECIES_B)
    assert count_inside(centred, obs) == 7
    assert count_inside(centred, obs, species=SPECIES_A) == 0
    # uniform cloud in a 2 um cube around the observer
    rng = np.random.default_rng(0)
    n = 200_000
    pos = (rng.uniform(-1, 1, (n, 3)) + [2, 0, 0]) * UM
    cloud = MoleculeCloud(pos, np.zeros(n, np.int8), np.full(n, -1), np.zeros(n), np.arange(n, dtype=np.uint64))
    frac = count_inside(cloud, obs) / n
    expected = (4 / 3 * math.pi * 0.5**3) / 8
    assert abs(frac - expected) < 4 * math.sqrt(expected * (1 - expected) / n)


def test_trials_are_deterministic():
    cfg = SimConfig(rng_seed=5, culling="aggressive")
    a, b = _run(cfg), _run(cfg)
    for key in a:
        assert np.array_equal(a[key], b[key])
    c = _run(SimConfig(rng_seed=6, culling="aggressive"))
    assert not np.array_equal(a["rx_counts"], c["rx_counts"])


def test_trial_does_not_depend_on_batch():
    cfg = SimConfig(rng_seed=5)
    full = _run(cfg, n=10)
    bits = full["bits"][7:8]
    one = simulate_trials(build_symmetric_ring(3), LIGHT, ProtocolTiming(), TH, bits, [7], cfg)
    assert np.array_equal(one["rx_counts"][0], full["rx_counts"][7])
    assert np.array_equal(one["fc_counts"][0], full["fc_counts"][7])


def test_threads_do_not_change_results():
    a = _run(SimConfig(rng_seed=2, threads=1), n=150)
    b = _run(SimConfig(rng_seed=2, threads=3), n=150)
    for key in a:
        assert np.array_equal(a[key], b[key])


@pytest.mark.parametrize("culling", ["none", "aggressive"])
@pytest.mark.parametrize("variant", ["sd_constant", MAJORITY])
def test_kernel_backends_identical(monkeypatch, culling, variant):
    cfg = SimConfig(rng_seed=12, culling=culling, scheme=SchemeSpec(variant))
    a = _run(cfg, n=6, L=3)
    monkeypatch.setattr(simulator, "USE_NUMBA", False)
    b = _run(cfg, n=6, L=3)
    for key in a:
        assert np.array_equal(a[key], b[key]), key


def test_culling_and_substeps_are_statistically_neutral():
    n = 400
    base = _run(SimConfig(rng_seed=1), n=n)
    for cfg in (SimConfig(rng_seed=1, culling="aggressive"), SimConfig(rng_seed=101, sim_step=2.5e-5)):
        other = _run(cfg, n=n)
        for key in ("rx_counts", "fc_counts"):
            x, y = base[key].astype(float), other[key].astype(float)
            se = math.sqrt(x.var() / x.size + y.var() / y.size)
            assert abs(x.mean() - y.mean()) < 4 * se, (cfg, key)


def test_age_horizon_drops_old_molecules():
    bits = np.ones((30, 4), dtype=np.int8)
    topo = build_symmetric_ring(3)
    full = simulate_trials(topo, LIGHT, ProtocolTiming(), TH, bits, np.arange(30), SimConfig(rng_seed=3))
    short = simulate_trials(
        topo, LIGHT, ProtocolTiming(), TH, bits, np.arange(30), SimConfig(rng_seed=3, molecule_cull_horizon=1)
    )
    assert short["rx_counts"][:, 1:].mean() < full["rx_counts"][:, 1:].mean()
    assert np.array_equal(short["rx_counts"][:, 0], full["rx_counts"][:, 0])


def test_zero_bits_give_zero_counts():
    bits = np.zeros((5, 3), dtype=np.int8)
    out = simulate_trials(build_symmetric_ring(2), LIGHT, ProtocolTiming(), TH, bits, np.arange(5), SimConfig())
    assert out["rx_counts"].sum() == 0 and out["fc_counts"].sum() == 0
    assert not out["fc_dec"].any()


def test_fc_rules():
    rx_dec = np.array([[[1, 0, 1]]], dtype=np.int8)
    fc = np.array([[5]])
    by_rx = np.array([[[4, 0, 1]]])
    th = Thresholds(3, 4)
    assert simulator._fc_decisions(SchemeSpec(), th, rx_dec, fc, by_rx)[0, 0] == 1
    assert simulator._fc_decisions(SchemeSpec(MAJORITY), th, rx_dec, fc, by_rx)[0, 0] == 0
    assert simulator._fc_decisions(SchemeSpec(MAJORITY, 1), th, rx_dec, fc, by_rx)[0, 0] == 1
    assert simulator._fc_decisions(SchemeSpec(SINGLE_LINK), th, rx_dec, fc, by_rx)[0, 0] == 1


def test_single_link_uses_its_own_budget():
    cfg = SimConfig(rng_seed=4, scheme=SchemeSpec(SINGLE_LINK, S_A_single=3000))
    out = _run(cfg, n=20, topo=build_single_link())
    assert out["fc_counts"].sum() == 0  # nothing reports in the single-link scheme
    assert np.array_equal(out["fc_dec"], out["rx_dec"][..., 0])


def test_sequence_trial_record():
    rec = run_sequence_trial(build_symmetric_ring(3), LIGHT, ProtocolTiming(), TH, [1, 0, 1], SimConfig(), 2)
    assert rec.rx_counts.shape == (3, 3)
    assert rec.symbol_errors().shape == (3,)
    d = json.loads(rec.to_json(2))
    assert d["trial"] == 2 and d["tx"] == [1, 0, 1]


def test_single_trial_estimate():
    est = estimate_error(build_symmetric_ring(3), LIGHT, ProtocolTiming(), TH, 3, 0.5, SimConfig(trials=1))
    assert est.trials == 1 and math.isnan(est.stderr_trial)
    assert 0 <= est.q_bar <= 1


def test_ndjson_log():
    buf = io.StringIO()
    est = estimate_error(build_symmetric_ring(3), LIGHT, ProtocolTiming(), TH, 3, 0.5, SimConfig(trials=12), buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == 12
    recs = [json.loads(x) for x in lines]
    errs = np.array([np.array(r["fc_decision"]) != np.array(r["tx"]) for r in recs])
    assert errs.mean() == pytest.approx(est.q_bar)
    assert list(est.rows())[0][0] == 1


def test_neighbouring_seeds_agree_statistically():
    a = estimate_error(build_symmetric_ring(3), LIGHT, ProtocolTiming(), TH, 4, 0.5, SimConfig(trials=300, rng_seed=20))
    b = estimate_error(build_symmetric_ring(3), LIGHT, ProtocolTiming(), TH, 4, 0.5, SimConfig(trials=300, rng_seed=21))
    assert abs(a.q_bar - b.q_bar) < 3 * math.hypot(a.stderr_trial, b.stderr_trial)


def test_small_simulation_tracks_analysis():
    topo = build_symmetric_ring(3)
    analytic = average_error(topo, LIGHT, ProtocolTiming(), TH, L=4).q_bar
    est = estimate_error(topo, LIGHT, ProtocolTiming(), TH, 4, 0.5, SimConfig(trials=600, rng_seed=30, culling="aggressive"))
    assert abs(est.q_bar - analytic) < 4 * est.stderr_trial
