"""The ten acceptance criteria, one test each.

Every test records a PASS/FAIL line that the conftest prints at the end of the
run.  ``python tests/test_acceptance.py`` runs just this file.
"""

import itertools
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy import integrate, stats

from coopmc import cli, presets
from coopmc.analytical import (
    Thresholds,
    average_error,
    q_md_fa_asym,
    q_md_fa_sym,
)
from coopmc.channel import DiffusionParams, ProtocolTiming, build_gains, p_ob_sphere
from coopmc.schemes import SD_CONSTANT, report_share
from coopmc.simulator import SimConfig, simulate_trials
from coopmc.topology import (
    UM,
    SphericalObserver,
    Topology,
    Vec3,
    build_single_link,
    build_symmetric_ring,
    is_symmetric,
)


# --- 1 ---------------------------------------------------------------------


@pytest.mark.slow
def test_c01_simulation_matches_analysis(criterion):
    cfg = presets.standard({"simulation.trials": 10_000, "simulation.culling": "aggressive"})
    analytic = cli.analytic_report(cfg).q_bar
    t0 = time.perf_counter()
    est = cli.simulate(cfg, threads=os.cpu_count() or 1)
    elapsed = time.perf_counter() - t0
    z = (est.q_bar - analytic) / est.stderr_pooled
    criterion(
        1,
        abs(z) <= 3.0,
        f"sim {est.q_bar:.5f} +/- {est.stderr_pooled:.5f} vs analytic {analytic:.5f} "
        f"(z = {z:+.2f}, {est.trials} trials, {elapsed:.0f} s)",
    )


# --- 2 ---------------------------------------------------------------------

TRUNC = 1e-12


def _support(mu):
    """Poisson pmf on 0..n, with n the first point where the cumulative mass reaches 1 - TRUNC."""
    pmf, cum, n = [], 0.0, 0
    p = math.exp(-mu)
    while True:
        pmf.append(p)
        cum += p
        if cum >= 1.0 - TRUNC:
            return np.array(pmf)
        n += 1
        p *= mu / n


def _brute_force_q(gains, S_A, S_B, xi_rx, xi_fc, P1):
    """Average error for K receivers and L = 2 by summing every outcome explicitly."""
    K = gains.K
    total = np.zeros(2)
    for b1, b2 in itertools.product((0, 1), repeat=2):
        p_tx = (P1 if b1 else 1 - P1) * (P1 if b2 else 1 - P1)
        # RX counts at symbol 1 and 2, per receiver, summed to decision laws
        dec1, dec2 = [], []
        for k in range(K):
            pmf1 = _support(S_A * b1 * gains.tx_rx[k, 0])
            pmf2 = _support(S_A * (b2 * gains.tx_rx[k, 0] + b1 * gains.tx_rx[k, 1]))
            p1 = sum(p for n, p in enumerate(pmf1) if n >= xi_rx)
            p2 = sum(p for n, p in enumerate(pmf2) if n >= xi_rx)
            dec1.append(p1)
            dec2.append(p2)
        for d1 in itertools.product((0, 1), repeat=K):
            w1 = np.prod([dec1[k] if d1[k] else 1 - dec1[k] for k in range(K)])
            # symbol 1: FC sees only the current reports
            pmf = _support(S_B * sum(d1[k] * gains.rx_fc[k, 0] for k in range(K)))
            fc_one = sum(p for n, p in enumerate(pmf) if n >= xi_fc)
            total[0] += p_tx * w1 * (1 - fc_one if b1 else fc_one)
            for d2 in itertools.product((0, 1), repeat=K):
                w2 = np.prod([dec2[k] if d2[k] else 1 - dec2[k] for k in range(K)])
                mean = S_B * sum(d2[k] * gains.rx_fc[k, 0] + d1[k] * gains.rx_fc[k, 1] for k in range(K))
                pmf = _support(mean)
                fc_one = sum(p for n, p in enumerate(pmf) if n >= xi_fc)
                total[1] += p_tx * w1 * w2 * (1 - fc_one if b2 else fc_one)
    return total.mean()


def _tiny_instance(topo, timing):
    unit = build_gains(topo, DiffusionParams(S_A=1, S_B=1), timing, 2)
    S_A = int(4.5 / unit.tx_rx.sum(axis=1).max())
    S_B = int(4.5 / unit.rx_fc.sum())
    return DiffusionParams(S_A=S_A, S_B=S_B)


def test_c02_brute_force_enumeration(criterion, timing):
    asym = Topology(
        Vec3.of((0, 0, 0)),
        (
            SphericalObserver(Vec3.of((2.0, 0.6, 0.0)), 0.225),
            SphericalObserver(Vec3.of((1.6, -0.3, 0.2)), 0.2),
        ),
        SphericalObserver(Vec3.of((2.0, 0.0, 0.0)), 0.225),
    )
    worst, t0, checked = 0.0, time.perf_counter(), 0
    for topo in (build_symmetric_ring(2), asym):
        params = _tiny_instance(topo, timing)
        gains = build_gains(topo, params, timing, 2)
        assert (params.S_A * gains.tx_rx.sum(axis=1)).max() <= 5
        assert params.S_B * gains.rx_fc.sum() <= 5
        for xi_rx, xi_fc, P1 in ((1, 1, 0.5), (2, 2, 0.5), (3, 2, 0.3), (2, 4, 0.7)):
            got = average_error(topo, params, timing, Thresholds(xi_rx, xi_fc), L=2, P1=P1).q_bar
            want = _brute_force_q(gains, params.S_A, params.S_B, xi_rx, xi_fc, P1)
            worst = max(worst, abs(got - want) / want)
            checked += 1
    elapsed = time.perf_counter() - t0
    criterion(2, worst <= 1e-6 and elapsed < 1.0 * checked,
              f"worst relative gap {worst:.2e} over {checked} instances, {elapsed / checked:.3f} s each")


# --- 3 ---------------------------------------------------------------------


def test_c03_symmetric_path_identity(criterion, timing):
    rng = np.random.default_rng(3)
    worst, cases = 0.0, 0
    topologies = [build_symmetric_ring(K, r) for K in range(1, 7) for r in (0.2, 0.225)]
    for topo in topologies:
        assert is_symmetric(topo)
        params = DiffusionParams(S_B=report_share(topo.K))
        gains = build_gains(topo, params, timing, 10)
        for _ in range(100):
            j = int(rng.integers(1, 11))
            tx = rng.integers(0, 2, j - 1).tolist()
            pattern = rng.integers(0, 2, (topo.K, j - 1))
            th = Thresholds(int(rng.integers(1, 40)), int(rng.integers(1, 30)))
            for bit in (0, 1):
                a = q_md_fa_asym(tx, bit, pattern, gains, params, th)
                s = q_md_fa_sym(tx, bit, pattern.sum(axis=0), gains, params, th)
                worst = max(worst, abs(a - s))
                cases += 1
    criterion(3, worst <= 1e-12, f"max |binomial - enumerated| = {worst:.1e} over {cases} cases, {len(topologies)} topologies")


# --- 4 ---------------------------------------------------------------------


def test_c04_fig3_trend(criterion):
    q = {}
    for K, variant, cfg in presets.fig3_configs():
        if variant == SD_CONSTANT:
            q[K] = cli.optimize(cfg, threads=os.cpu_count() or 1).q_star
    ks = sorted(q)
    monotone = all(q[b] <= q[a] for a, b in zip(ks, ks[1:]))
    halved = q[6] < q[1] / 2
    criterion(4, monotone and halved, "Q*(K) = " + ", ".join(f"{q[k]:.5f}" for k in ks))


# --- 5 ---------------------------------------------------------------------


def test_c05_fig4_trend(criterion):
    rows, _ = cli.fig4_rows(trials=0)
    d = np.array([r[0] for r in rows])
    q = np.array([r[3] for r in rows])
    best = int(np.argmin(q))
    at = {round(x, 3): v for x, v in zip(d, q)}
    ok = abs(d[best] - 1.67) < 0.01 and q[best] < at[2.088] and q[best] < at[0.418]
    criterion(5, ok, "Q* by d_TX3: " + ", ".join(f"{x:.3f}->{v:.5f}" for x, v in zip(d, q)))


# --- 6 ---------------------------------------------------------------------


def test_c06_fig2_ordering(criterion):
    rows, _ = cli.fig2_rows()
    arr = np.array([r[1:] for r in rows], dtype=float)
    sd, maj, single = arr.min(axis=0)
    ok = maj < sd < single and single / sd >= 2 and sd / maj <= 1.5
    criterion(
        6, ok,
        f"majority {maj:.5f} < SD {sd:.5f} < single {single:.5f}; "
        f"single/SD = {single / sd:.2f}, SD/majority = {sd / maj:.2f}",
    )


# --- 7 ---------------------------------------------------------------------


def _sphere_integral(t, r_obs, d, D):
    """Free-space Green's function integrated over a ball, in Cartesian coordinates."""
    four_dt = 4.0 * D * t
    norm = (math.pi * four_dt) ** -1.5

    def g(z, y, x):
        return norm * math.exp(-((x - d) ** 2 + y * y + z * z) / four_dt)

    def y_lim(x):
        return math.sqrt(max(r_obs * r_obs - x * x, 0.0))

    def z_lim(x, y):
        return math.sqrt(max(r_obs * r_obs - x * x - y * y, 0.0))

    val, _ = integrate.tplquad(
        g, -r_obs, r_obs,
        lambda x: -y_lim(x), y_lim,
        lambda x, y: -z_lim(x, y), z_lim,
        epsabs=0, epsrel=1e-8,
    )
    return val


def test_c07_sphere_probability_vs_integration(criterion):
    D, r = 5e-9, 0.225 * UM
    times = (3e-5, 1e-4, 3e-4, 1e-3)
    dists = (0.3, 0.6, 1.0, 1.67, 2.09)
    worst = 0.0
    for t in times:
        for d in dists:
            want = _sphere_integral(t, r, d * UM, D)
            got = p_ob_sphere(t, r, d * UM, D)
            worst = max(worst, abs(got - want) / want)
    criterion(7, worst <= 1e-4, f"max relative error {worst:.1e} on {len(times) * len(dists)} (t, d) points")


# --- 8 ---------------------------------------------------------------------


def test_c08_rx_counts_are_poisson(criterion):
    timing = ProtocolTiming(M_RX=1)
    topo = build_single_link()
    params = DiffusionParams()
    n = 10_000
    cfg = SimConfig(trials=n, rng_seed=8, culling="aggressive")
    out = simulate_trials(
        topo, params, timing, Thresholds(10**6, 1), np.ones((n, 1), dtype=np.int8), np.arange(n), cfg
    )
    counts = out["rx_counts"][:, 0, 0]
    mu = params.S_A * build_gains(topo, params, timing, 1).tx_rx[0, 0]
    # bins with expected count >= 5, tails pooled
    top = int(stats.poisson.ppf(1 - 5 / n, mu))
    edges = np.arange(0, top + 1)
    observed = np.array([np.sum(counts == k) for k in edges[:-1]] + [np.sum(counts >= edges[-1])])
    probs = np.append(stats.poisson.pmf(edges[:-1], mu), stats.poisson.sf(edges[-1] - 1, mu))
    expected = n * probs
    while expected[0] < 5:
        expected[1] += expected[0]
        observed[1] += observed[0]
        expected, observed = expected[1:], observed[1:]
    chi2, p = stats.chisquare(observed, expected)
    criterion(
        8, p > 0.01,
        f"chi2 = {chi2:.1f} on {len(observed) - 1} dof, p = {p:.3f} (sample mean {counts.mean():.4f}, model {mu:.4f})",
    )


# --- 9 ---------------------------------------------------------------------


def test_c09_thread_count_does_not_change_output(criterion, tmp_path):
    threads = max(4, os.cpu_count() or 1)
    outputs = []
    for n in (1, threads):
        out = tmp_path / f"t{n}"
        code = cli.main(["simulate", "--trials", "300", "--seed", "11", "--threads", str(n), "--out", str(out)])
        assert code == 0
        outputs.append((out / "simulate.csv").read_bytes())
    criterion(9, outputs[0] == outputs[1], f"simulate CSV at 1 and {threads} threads: {len(outputs[0])} bytes each, identical={outputs[0] == outputs[1]}")


# --- 10 --------------------------------------------------------------------


def test_c10_performance(criterion):
    cfg = presets.standard()
    t0 = time.perf_counter()
    report = cli.analytic_report(cfg)
    t_avg = time.perf_counter() - t0
    t0 = time.perf_counter()
    result = cli.optimize(cfg, threads=os.cpu_count() or 1, strategy="exhaustive")
    t_opt = time.perf_counter() - t0
    assert result.evaluations == 200 * 400
    criterion(
        10, t_avg < 10 and t_opt < 600,
        f"average_error {t_avg:.2f} s (Q = {report.q_bar:.4f}); exhaustive 200x400 search {t_opt:.1f} s",
    )


if __name__ == "__main__":
    sys.exit(subprocess.call([sys.executable, "-m", "pytest", "-v", "-s", __file__]))
