import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coopmc.channel import (
    ChannelGains,
    DiffusionParams,
    ProtocolTiming,
    UniformApproximationWarning,
    build_gains,
    cached_gains,
    p_ob_sphere,
    p_ob_uniform,
    poisson_cdf,
    poisson_mean,
    poisson_sf,
)
from coopmc.topology import UM, build_asymmetric

D = 5e-9
R = 0.225 * UM
V = 4.0 / 3.0 * math.pi * R**3

# Frozen with 40-digit mpmath quadrature of the Gaussian kernel over the ball.
SPHERE_REF = 0.0098155063555931553195
# Frozen with 40-digit mpmath evaluation of the closed form at t = 1e-4 s, d = sqrt(4.36) um.
UNIFORM_REF = 0.00034245569316706208265


def test_sphere_reference_point():
    assert p_ob_sphere(3e-5, R, 0.6 * UM, D) == pytest.approx(SPHERE_REF, rel=1e-6)


def test_uniform_reference_point():
    assert p_ob_uniform(1e-4, V, math.sqrt(4.36) * UM, D) == pytest.approx(UNIFORM_REF, rel=1e-12)


def test_sphere_decreases_with_distance():
    d = np.linspace(0.3, 5.0, 60) * UM
    for t in (3e-5, 1e-4, 1e-3):
        p = p_ob_sphere(t, R, d, D)
        assert np.all(np.diff(p) < 0)


def test_sphere_approaches_uniform_far_away():
    rng = np.random.default_rng(0)
    for _ in range(50):
        d = rng.uniform(10, 40) * R
        t = d * d / (4 * D) * rng.uniform(1, 5)
        a = p_ob_sphere(t, R, d, D)
        b = p_ob_uniform(t, V, d, D)
        assert abs(a - b) / b < 0.01


def test_sphere_far_field_keeps_relative_accuracy():
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 150
    r, Dm = mpmath.mpf(R), mpmath.mpf(D)

    def exact(t, d):
        t, d = mpmath.mpf(t), mpmath.mpf(d)
        s = mpmath.sqrt(Dm * t)
        return (mpmath.erf((r + d) / (2 * s)) + mpmath.erf((r - d) / (2 * s))) / 2 - s / (d * mpmath.sqrt(mpmath.pi)) * (
            mpmath.exp(-((r - d) ** 2) / (4 * Dm * t)) - mpmath.exp(-((r + d) ** 2) / (4 * Dm * t))
        )

    for t, d in [(1e-6, 1.7e-6), (3e-5, 5e-6), (1e-4, 8e-6), (1e-7, 0.5e-6), (1e-3, 0.1e-6)]:
        want = float(exact(t, d))
        assert want > 0
        assert p_ob_sphere(t, R, d, D) == pytest.approx(want, rel=1e-8)


def test_sphere_small_time_near_indicator():
    assert p_ob_sphere(1e-12, R, 0.1 * UM, D) == pytest.approx(1.0, abs=1e-9)
    assert p_ob_sphere(1e-12, R, 1.0 * UM, D) == pytest.approx(0.0, abs=1e-12)


def test_uniform_clamped_with_warning():
    with pytest.warns(UniformApproximationWarning):
        p = p_ob_uniform(1e-9, V, 0.01 * UM, D)
    assert p == 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        p_ob_uniform(1e-4, V, 2 * UM, D)


@pytest.mark.parametrize("fn,arg", [(p_ob_sphere, R), (p_ob_uniform, V)])
@pytest.mark.parametrize("bad", [dict(t=0.0), dict(d=-1e-6), dict(D=0.0)])
def test_non_positive_inputs_rejected(fn, arg, bad):
    kw = dict(t=1e-4, d=1e-6, D=D)
    kw.update(bad)
    with pytest.raises(ValueError):
        fn(kw["t"], arg, kw["d"], kw["D"])


def test_poisson_cdf_values():
    assert poisson_cdf(5, 3.0) == pytest.approx(0.916082, abs=5e-7)
    assert poisson_cdf(5, 3.0) == pytest.approx(0.916082057968697, rel=1e-13)
    assert poisson_cdf(-1, 4.2) == 0.0
    assert poisson_cdf(0, 0.0) == 1.0 and poisson_cdf(7, 0.0) == 1.0
    assert poisson_sf(5, 3.0) == pytest.approx(1 - 0.916082057968697, rel=1e-12)


def test_poisson_cdf_against_scipy():
    from scipy import stats

    k = np.arange(0, 400, 7)
    for mu in (0.01, 2.5, 41.66, 180.0, 300.0):
        assert np.allclose(poisson_cdf(k, mu), stats.poisson.cdf(k, mu), rtol=1e-10, atol=1e-300)


def test_poisson_cdf_fc_reference(ring3, params3, timing):
    gains = build_gains(ring3, params3, timing, 1)
    mu = params3.S_B * gains.rx_fc[0, 0] * 3
    assert mu == pytest.approx(41.6624, rel=1e-5)
    assert poisson_cdf(5, mu) == pytest.approx(9.545030755700e-13, rel=1e-10)


@given(st.integers(0, 60), st.floats(0, 80), st.floats(0, 5))
def test_poisson_cdf_monotone(k, mu, dmu):
    # direct summation carries a few ulps of rounding near 1
    assert poisson_cdf(k, mu + dmu) <= poisson_cdf(k, mu) + 1e-13
    assert poisson_cdf(k + 1, mu) >= poisson_cdf(k, mu) - 1e-13


def test_poisson_cdf_rejects_bad_input():
    with pytest.raises(ValueError):
        poisson_cdf(3, -0.1)
    with pytest.raises(ValueError):
        poisson_cdf(-2, 1.0)


def test_poisson_mean_convolution():
    c = np.array([0.5, 0.2, 0.05])
    assert poisson_mean([1, 0, 1], c, 100) == pytest.approx(100 * (0.5 + 0.05))
    assert poisson_mean([0.5], c, 10) == pytest.approx(2.5)
    assert poisson_mean([], c, 10) == 0.0
    with pytest.raises(ValueError):
        poisson_mean([1, 1, 1, 1], c, 1)


def test_timing_defaults_valid():
    t = ProtocolTiming()
    assert t.violations() == []
    assert np.allclose(t.rx_sample_offsets(), [1e-4, 2e-4, 3e-4, 4e-4, 5e-4])
    assert np.allclose(t.fc_sample_offsets(), 3e-5 * np.arange(1, 6))


@pytest.mark.parametrize(
    "kw,needle",
    [
        (dict(M_RX=10, dt_RX=1e-4), "half-duplex"),
        (dict(M_FC=11), "report window"),
        (dict(T=-1.0), "T must be positive"),
        (dict(M_RX=0), "M_RX"),
    ],
)
def test_timing_violations(kw, needle):
    with pytest.raises(ValueError, match=needle):
        ProtocolTiming(**kw)


def test_diffusion_params_validation():
    with pytest.raises(ValueError):
        DiffusionParams(D_A=0)
    with pytest.raises(ValueError):
        DiffusionParams(S_A=10.5)


def test_gains_shape_and_symmetry(ring3, params3, timing):
    g = build_gains(ring3, params3, timing, 10)
    assert g.tx_rx.shape == (3, 10) and g.rx_fc.shape == (3, 10)
    assert g.is_symmetric()
    assert np.all(g.tx_rx > 0) and np.all(g.rx_fc > 0)
    # the current-symbol term dominates and older lags fade
    assert np.all(np.diff(g.tx_rx[0, 1:]) < 0) and g.rx_fc[0, 0] > g.rx_fc[0, 1]
    direct = sum(p_ob_uniform(m * 1e-4, V, math.sqrt(4.36) * UM, D) for m in range(1, 6))
    assert g.tx_rx[0, 0] == pytest.approx(direct, rel=1e-12)
    assert not build_gains(build_asymmetric(3), params3, timing, 3).is_symmetric()


def test_gains_need_a_symbol(ring3, params3, timing):
    with pytest.raises(ValueError):
        build_gains(ring3, params3, timing, 0)


def test_cached_gains(tmp_path, ring3, params3, timing):
    a = cached_gains(ring3, params3, timing, 4, tmp_path)
    files = list(tmp_path.glob("gains-*.npz"))
    assert len(files) == 1
    b = cached_gains(ring3, params3, timing, 4, tmp_path)
    assert isinstance(b, ChannelGains)
    assert np.array_equal(a.tx_rx, b.tx_rx) and np.array_equal(a.rx_fc, b.rx_fc)
    cached_gains(ring3, params3, timing, 5, tmp_path)
    assert len(list(tmp_path.glob("gains-*.npz"))) == 2
