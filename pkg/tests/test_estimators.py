import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DATASHEETS
from pvestim.errors import (
    AbsentChannelError,
    DataError,
    DegenerateOperatingPointError,
    RejectedSampleError,
)
from pvestim.estimators import (
    EkfConfig,
    EkfState,
    ExtendedKalmanEstimator,
    IandIConfig,
    IandIConstants,
    MeasurementSample,
    MeasurementSeries,
    ObservationModel,
    analytical_estimate,
    correct_temperature_reading,
    ekf_step,
    estimate_series,
    iandi_filter,
    iandi_step,
    pyranometer_estimate,
    sensor_noise_variances,
)
from pvestim.model import PlantModel, solve_voltage
from pvestim.simulate import operating_points, simulate_operating_point

PLANT = PlantModel.from_datasheet(DATASHEETS["poly255"])


def on_curve(s, t, v=None, fraction=None, plant=PLANT):
    """Noise-free sample at irradiance s, cell temperature t."""
    if v is None:
        sp = None
        if fraction is not None:
            _, _, p_av = operating_points(plant, np.array([s]), np.array([t]))
            sp = fraction * p_av[0]
        v, i = simulate_operating_point(s, t, plant, sp)
    else:
        i = plant.array_current(v, t, s)
    return MeasurementSample(0.0, v, i, t)


# --- analytical ---------------------------------------------------------------


def test_analytical_inverts_at_mpp_curtailed_and_open_circuit():
    mpp = on_curve(800.0, 303.0)
    v_mp = mpp.v
    assert analytical_estimate(mpp, PLANT).s_hat == pytest.approx(800.0, rel=1e-6)
    low = on_curve(800.0, 303.0, v=0.7 * v_mp)
    assert analytical_estimate(low, PLANT).s_hat == pytest.approx(800.0, rel=1e-6)
    params = PLANT.translate(303.0, 800.0)
    v_oc = solve_voltage(0.0, params, PLANT.array_n_s, PLANT.array_n_p)
    oc = MeasurementSample(0.0, v_oc, 0.0, 303.0)
    assert analytical_estimate(oc, PLANT).s_hat == pytest.approx(800.0, rel=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.floats(60.0, 1200.0), st.floats(270.0, 340.0), st.floats(0.3, 1.0))
def test_analytical_is_operating_point_independent(s, t, fraction):
    a = analytical_estimate(on_curve(s, t), PLANT).s_hat
    b = analytical_estimate(on_curve(s, t, fraction=fraction), PLANT).s_hat
    assert a == pytest.approx(s, rel=1e-6)
    assert b == pytest.approx(a, rel=1e-6)


def test_analytical_rejections():
    with pytest.raises(RejectedSampleError):
        analytical_estimate(MeasurementSample(0.0, 0.0, 0.0, 300.0), PLANT)
    # current far above any physical short-circuit value
    with pytest.raises(RejectedSampleError):
        analytical_estimate(MeasurementSample(0.0, 300.0, 60.0, 300.0), PLANT)
    # a voltage where the irradiance sensitivity of the diode equation vanishes
    stc = PLANT.stc
    ratio = PLANT.array_n_s / PLANT.array_n_p
    u0 = PLANT.array_n_p * stc.i_ph * stc.r_p * ratio
    with pytest.raises(DegenerateOperatingPointError):
        analytical_estimate(MeasurementSample(0.0, u0, 0.0, 298.15), PLANT, eps=1e-6)


# --- I&I ----------------------------------------------------------------------


CONSTS = IandIConstants.from_plant(PLANT)


@settings(max_examples=200, deadline=None)
@given(st.floats(60.0, 1200.0), st.floats(270.0, 340.0), st.floats(0.3, 1.0))
def test_iandi_fixed_point(s, t, fraction):
    smp = on_curve(s, t, fraction=fraction)
    y, _ = CONSTS.signals(smp.v, smp.i, smp.t)
    assert abs(y - CONSTS.phi(s, smp.v, smp.i, smp.t)) < 1e-8


def test_phi_strictly_increasing_in_s(rng):
    for _ in range(1000):
        t = rng.uniform(270.0, 340.0)
        smp = on_curve(rng.uniform(60.0, 1200.0), t, fraction=rng.uniform(0.3, 1.0))
        _, slope = CONSTS.signals(smp.v, smp.i, smp.t)
        assert slope > 0


def _steps_to_converge(gamma, s_true=600.0, s0=100.0, tol=0.01, max_steps=20000):
    smp = on_curve(s_true, 300.0)
    cfg = IandIConfig(gamma=gamma)
    s, path = s0, [s0]
    for k in range(max_steps):
        s = iandi_step(s, smp, cfg, CONSTS, 1.0).s_hat
        path.append(s)
        if abs(s - s_true) < tol * s_true:
            return k + 1, np.array(path)
    raise AssertionError("no convergence")


def test_iandi_monotone_convergence_and_gain_ordering():
    n_slow, path_slow = _steps_to_converge(0.7)
    n_fast, path_fast = _steps_to_converge(10.0)
    assert np.all(np.diff(path_slow) > 0)
    assert np.all(np.diff(path_fast) > 0)
    assert n_fast < n_slow


def test_iandi_equilibrium_is_kept():
    smp = on_curve(640.0, 310.0)
    est = iandi_step(640.0, smp, IandIConfig(gamma=3.0), CONSTS, 1.0)
    assert est.s_hat == pytest.approx(640.0, rel=1e-12)


def test_iandi_deadbeat_gain_tracks_a_step():
    a = on_curve(400.0, 300.0)
    b = on_curve(900.0, 300.0)
    _, slope = CONSTS.signals(b.v, b.i, b.t)
    cfg = IandIConfig(gamma=1.0 / slope)
    s = iandi_step(400.0, a, cfg, CONSTS, 1.0).s_hat
    s = iandi_step(s, b, cfg, CONSTS, 1.0).s_hat
    assert s == pytest.approx(analytical_estimate(b, PLANT).s_hat, rel=0.01)


def test_iandi_clamps_and_validates(caplog):
    smp = on_curve(600.0, 300.0)
    est = iandi_step(1499.0, smp, IandIConfig(gamma=5000.0), CONSTS, 1.0)
    assert 1.0 < est.s_hat <= 1500.0
    with pytest.raises(ValueError):
        iandi_step(500.0, smp, IandIConfig(), CONSTS, 0.0)
    with pytest.raises(ValueError):
        IandIConfig(gamma=0.0)


def test_iandi_filter_matches_stepwise():
    samples = [on_curve(s, 300.0) for s in np.linspace(300.0, 900.0, 40)]
    ser = MeasurementSeries.from_samples(samples)
    y, g = CONSTS.signals(ser.v, ser.i, ser.t)
    vec = iandi_filter(y, g, [0.7, 5.0], 1.0, 500.0)
    for j, gamma in enumerate((0.7, 5.0)):
        s = 500.0
        for k, smp in enumerate(samples):
            s = iandi_step(s, smp, IandIConfig(gamma=gamma), CONSTS, 1.0).s_hat
            assert vec[k, j] == pytest.approx(s, rel=1e-12)


# --- EKF ----------------------------------------------------------------------


OBS = ObservationModel(PLANT)


@pytest.mark.parametrize("s,t,a,fraction", [
    (800.0, 303.0, 790.0, None), (800.0, 303.0, 650.0, None),
    (450.0, 320.0, 470.0, 0.6), (1000.0, 290.0, 900.0, 0.8),
])
def test_jacobian_matches_central_differences(s, t, a, fraction):
    smp = on_curve(s, t, fraction=fraction)
    h, jac, valid = OBS.linearize(a, smp.v, smp.i, smp.t)
    d = 1e-3
    hp, _, vp = OBS.linearize(a + d, smp.v, smp.i, smp.t)
    hm, _, vm = OBS.linearize(a - d, smp.v, smp.i, smp.t)
    ok = valid & vp & vm
    assert ok[1]
    fd = (hp - hm) / (2 * d)
    np.testing.assert_allclose(jac[ok], fd[ok], rtol=1e-5)


def test_non_physical_voltage_channel_is_dropped():
    smp = on_curve(800.0, 303.0)
    _, _, valid = OBS.linearize(400.0, smp.v, smp.i, smp.t)
    assert not valid[0] and valid[1]


def test_ekf_converges_from_wrong_prior():
    smp = on_curve(700.0, 303.0)
    state = EkfState(350.0, 300.0**2, tuple(sensor_noise_variances(PLANT)), 1e-3)
    ps, xs = [], []
    for k in range(60):
        state, est = ekf_step(state, MeasurementSample(float(k), smp.v, smp.i, smp.t),
                              1e-3, OBS)
        ps.append(state.p)
        xs.append(est.s_hat)
    assert abs(xs[-1] - 700.0) < 0.005 * 700.0
    assert all(p > 0 for p in ps)
    assert np.all(np.diff(ps) <= 0)


def test_ekf_tiny_r_single_step_matches_analytical():
    smp = on_curve(800.0, 303.0)
    r = tuple(1e-12 * sensor_noise_variances(PLANT))
    state = EkfState(796.0, 300.0**2, r, 0.0)
    _, est = ekf_step(state, smp, 0.0, OBS)
    assert est.s_hat == pytest.approx(analytical_estimate(smp, PLANT).s_hat, rel=1e-3)


def test_ekf_no_information_limit():
    smp = on_curve(800.0, 303.0)
    state = EkfState(350.0, 300.0**2, (1e18, 1e18, 1e18), 0.0)
    new, est = ekf_step(state, smp, 0.0, OBS)
    assert abs(est.s_hat - 350.0) < 1e-6
    assert new.p <= state.p


def test_ekf_estimator_positive_variance_on_noisy_stream(rng):
    est = ExtendedKalmanEstimator(PLANT, EkfConfig(q_mode="fixed", q_fixed=4.0))
    for k, s in enumerate(np.linspace(200.0, 1000.0, 200)):
        smp = on_curve(s, 300.0)
        noisy = MeasurementSample(float(k), smp.v + rng.normal(0, 0.23),
                                  smp.i + rng.normal(0, 0.55), smp.t + rng.normal(0, 0.4))
        out = est.step(noisy)
        assert out.variance > 0
    assert est.state.x_hat == pytest.approx(1000.0, rel=0.05)


def test_ekf_clustered_mode_needs_model():
    with pytest.raises(ValueError):
        ExtendedKalmanEstimator(PLANT, EkfConfig(q_mode="clustered"))


def test_sensor_noise_variances_from_tolerances():
    r = sensor_noise_variances(PLANT)
    assert r[0] == pytest.approx((0.005 * 37.8 * 14 / 3) ** 2)
    assert r[1] == pytest.approx((0.002 * 8.86 * 2 / 3) ** 2)
    assert r[2] == pytest.approx((0.5 / 3) ** 2)


# --- pyranometer, temperature and series --------------------------------------------


def test_pyranometer_pass_through():
    assert pyranometer_estimate(MeasurementSample(0, 1, 1, 300, gni=812.0)).s_hat == 812.0
    with pytest.raises(AbsentChannelError):
        pyranometer_estimate(MeasurementSample(0, 1, 1, 300))
    with pytest.raises(RejectedSampleError):
        pyranometer_estimate(MeasurementSample(0, 1, 1, 300, gni=0.0))


def test_temperature_correction():
    assert correct_temperature_reading(300.0, 1000.0) == pytest.approx(303.0)
    assert correct_temperature_reading(300.0, 500.0) == pytest.approx(301.5)
    assert correct_temperature_reading(300.0, 1e-6) == pytest.approx(300.0, abs=1e-8)


def test_estimate_series_collects_rejections_without_aborting():
    good = [on_curve(s, 300.0) for s in (300.0, 500.0, 700.0)]
    bad = MeasurementSample(0.0, 0.0, 0.0, 300.0)
    samples = [MeasurementSample(float(k), x.v, x.i, x.t)
               for k, x in enumerate([good[0], bad, good[1], good[2]])]
    held = estimate_series(samples, "iandi", PLANT)
    assert np.all(np.isfinite(held.s_hat))
    out = estimate_series(samples, "analytical", PLANT)
    assert np.isnan(out.s_hat[1])
    assert out.rejections[0][0] == 1
    np.testing.assert_allclose(out.s_hat[[0, 2, 3]], [300.0, 500.0, 700.0], rtol=1e-6)


def test_estimate_series_rejects_non_monotone_time():
    smp = on_curve(500.0, 300.0)
    samples = [MeasurementSample(1.0, smp.v, smp.i, smp.t),
               MeasurementSample(1.0, smp.v, smp.i, smp.t)]
    with pytest.raises(DataError):
        estimate_series(samples, "analytical", PLANT)


def test_estimate_series_with_temperature_correction():
    smp = on_curve(800.0, 303.0)
    raw = [MeasurementSample(float(k), smp.v, smp.i, 303.0 - 2.4) for k in range(5)]
    out = estimate_series(raw, "analytical", PLANT, correct_temperature=True)
    # from the second sample on, the offset brings the reading back to 303 K
    assert out.t_used[0] == pytest.approx(300.6)
    assert out.t_used[-1] == pytest.approx(303.0, abs=0.05)
