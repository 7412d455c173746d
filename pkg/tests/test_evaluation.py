from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pvestim.errors import ConfigError, DataError, NormalizationError
from pvestim.estimators import EkfConfig, estimate_series
from pvestim.evaluation import (
    SweepResult,
    amplitude_spectrum,
    compute_metrics,
    estimated_max_power,
    evaluate,
    fill_missing,
    gamma_sweep,
    locate_break_even,
    run_noise_sweep,
)
from pvestim.simulate import REFERENCE_NOISE, NoiseSpec, ScenarioSpec, apply_sensor_noise, simulate

positive = st.floats(0.1, 1e4)


def test_metrics_hand_values():
    r = compute_metrics([1.1, 0.9], [1.0, 1.0])
    assert r.nrmse == pytest.approx(10.0, rel=1e-14)
    assert r.err_max == pytest.approx(10.0, rel=1e-14)
    assert r.nme == pytest.approx(0.0, abs=1e-13)
    assert r.sample_count == 2
    perfect = compute_metrics([3.0, 4.0], [3.0, 4.0])
    assert (perfect.nrmse, perfect.err_max, perfect.nme) == (0.0, 0.0, 0.0)


def test_constant_bias():
    p = np.array([2.0, 4.0, 6.0])
    r = compute_metrics(p + 0.05 * p.mean(), p)
    assert (r.nrmse, r.err_max, r.nme) == pytest.approx((5.0, 5.0, 5.0), rel=1e-12)


def test_metric_errors_and_nan_pairs():
    with pytest.raises(NormalizationError):
        compute_metrics([1.0, -1.0], [1.0, -1.0])
    with pytest.raises(ValueError):
        compute_metrics([1.0], [1.0, 2.0])
    with pytest.raises(DataError):
        compute_metrics([np.nan], [1.0])
    r = compute_metrics([1.1, np.nan, 0.9], [1.0, 5.0, 1.0])
    assert r.sample_count == 2 and r.nrmse == pytest.approx(10.0)


@given(st.lists(st.tuples(positive, positive), min_size=1, max_size=30), positive)
def test_metric_scaling_invariance_and_ordering(pairs, c):
    p_hat, p = np.array(pairs).T
    a = compute_metrics(p_hat, p)
    b = compute_metrics(c * p_hat, c * p)
    assert b.nrmse == pytest.approx(a.nrmse, rel=1e-9)
    assert b.err_max == pytest.approx(a.err_max, rel=1e-9)
    assert b.nme == pytest.approx(a.nme, rel=1e-9, abs=1e-9)
    assert a.err_max >= a.nrmse * (1 - 1e-12) >= abs(a.nme) * (1 - 1e-9)


# --- spectra ---------------------------------------------------------------------


def test_sinusoid_peak():
    n, dt, a = 1024, 1.0, 3.5
    f0 = 64 / (n * dt)
    x = 10.0 + a * np.sin(2 * np.pi * f0 * np.arange(n) * dt)
    sp = amplitude_spectrum(x, dt)
    k = np.argmax(sp.amplitude)
    assert sp.frequency[k] == pytest.approx(f0)
    assert sp.amplitude[k] == pytest.approx(a, rel=0.02)


def test_constant_series_has_no_content():
    sp = amplitude_spectrum(np.full(100, 7.0))
    assert np.max(sp.amplitude) < 1e-12
    assert sp.n_fft == 128


@pytest.mark.parametrize("n", [16, 100, 1000, 1024])
def test_parseval(n, rng):
    x = rng.normal(size=n)
    sp = amplitude_spectrum(x, 0.5)
    assert sp.variance() == pytest.approx(np.var(x), rel=1e-6)


def test_spectrum_input_checks():
    with pytest.raises(DataError):
        amplitude_spectrum(np.zeros(15))
    ts = np.arange(20, dtype=float)
    ts[10] += 0.5
    with pytest.raises(DataError):
        amplitude_spectrum(np.zeros(20), timestamps=ts)
    with pytest.raises(DataError):
        amplitude_spectrum(np.r_[np.zeros(19), np.nan])
    sp = amplitude_spectrum(np.arange(32.0), timestamps=np.arange(32) * 2.0)
    assert sp.frequency[-1] == pytest.approx(0.25)
    np.testing.assert_allclose(fill_missing([1.0, np.nan, 3.0, np.nan]), [1, 2, 3, 3])


# --- sweeps ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def short_sim(plant):
    spec = ScenarioSpec(profile="partly_cloudy", start=11 * 3600.0, duration=240.0, seed=1)
    return simulate(spec, plant)


def test_break_even_interpolation():
    std = np.array([0.0, 1.0, 2.0])
    assert locate_break_even(std, [1.0, 2.0, 3.0], [2.0, 2.5, 2.0]) == (pytest.approx(4 / 3), False)
    assert locate_break_even(std, [1.0, 2.0, 3.0], [0.5, 1.0, 1.0]) == (0.0, True)
    assert locate_break_even(std, [1.0, 2.0, 3.0], [2.0, 3.0, 4.0]) == (None, False)


def test_sweep_result_requires_increasing_levels():
    with pytest.raises(ValueError):
        SweepResult("current", np.array([1.0, 1.0]), {}, np.array([np.nan, np.nan]))


def test_sweep_identity_level_matches_baseline(short_sim, plant):
    res = run_noise_sweep(short_sim, plant, "current", [0.0, 0.5], estimators=("analytical",),
                          repetitions=3, seed=7)
    seeds = np.random.SeedSequence(7).generate_state(3)
    for r, rs in enumerate(seeds):
        measured = apply_sensor_noise(short_sim.clean, replace(REFERENCE_NOISE, seed=int(rs)))
        est = estimate_series(measured, "analytical", plant)
        base = compute_metrics(estimated_max_power(est.s_hat, measured.t, plant),
                               short_sim.p_max_true).nrmse
        assert res.nrmse["analytical"][0, r] == pytest.approx(base, rel=1e-12)
    assert res.total_std[0] == REFERENCE_NOISE.std_i
    assert res.total_std[1] == pytest.approx(np.hypot(0.55, 0.5))
    assert np.all(res.nrmse["analytical"][1] > res.nrmse["analytical"][0])


def test_sweep_gamma_grid_and_validation(short_sim, plant):
    res = run_noise_sweep(short_sim, plant, "voltage", [0.0, 1.0], estimators=("analytical", "iandi"),
                          repetitions=2, gamma_grid=(1.0, 10.0))
    assert set(res.nrmse) == {"analytical", "iandi", "iandi_opt"}
    assert np.all(res.mean("iandi_opt") <= res.mean("iandi") + 1e-12)
    assert set(res.gamma_opt) <= {1.0, 10.0}
    assert len(list(res.rows())) == 3
    with pytest.raises(ConfigError):
        run_noise_sweep(short_sim, plant, "current", [-1.0])
    with pytest.raises(ConfigError):
        run_noise_sweep(short_sim, plant, "humidity", [0.0])
    with pytest.raises(ConfigError):
        run_noise_sweep(short_sim, plant, "current", [0.0], estimators=("ekf",))


def test_gamma_sweep_plateau_and_instability(plant):
    spec = ScenarioSpec(start=10 * 3600.0, duration=600.0)
    sim = simulate(spec, plant, NoiseSpec(0.2, 0.1, 0.1, seed=3))
    res = gamma_sweep(sim, plant, [0.7, 5.0, 20.0, 100.0, 1e4], s_init=400.0)
    assert res.unstable.tolist() == [False, False, False, False, True]
    assert res.reports[-1] is None and np.isnan(res.nrmse[-1])
    lo, hi = res.plateau_range()
    assert np.nanmin(res.nrmse) == pytest.approx(np.nanmin(res.nrmse[res.plateau]))
    assert res.nrmse[0] > res.nrmse[2]  # slow gain lags the start-up transient
    assert lo >= 5.0
    with pytest.raises(ConfigError):
        gamma_sweep(sim, plant, [0.0])


def test_evaluate_reports_each_estimator(short_sim, plant):
    out = evaluate(short_sim, plant, ("analytical", "iandi"))
    assert out["analytical"].nrmse < 1e-6
    assert out["iandi"].sample_count == len(short_sim.clean)


def test_filters_remove_high_band_noise(plant):
    spec = ScenarioSpec(profile="partly_cloudy", start=11 * 3600.0, duration=1800.0, seed=5)
    sim = simulate(spec, plant, replace(REFERENCE_NOISE, seed=2))
    r = tuple(np.array([0.23, 0.55, 0.4]) ** 2)
    cfg = EkfConfig(r_diag=r, q_mode="fixed", q_fixed=25.0)
    band = {}
    for name, kw in (("analytical", {}), ("ekf", {"ekf": cfg})):
        est = estimate_series(sim.measured, name, plant, **kw)
        p_hat = fill_missing(estimated_max_power(est.s_hat, est.t_used, plant))
        band[name] = amplitude_spectrum(p_hat).band_amplitude(0.05)
    assert band["ekf"] < band["analytical"]
