"""Irradiance estimators driven by DC voltage, current and cell temperature.

Four estimators share one interface: analytical (closed-form inversion of
the diode equation), immersion-and-invariance (scalar observer ODE),
extended Kalman filter and a pyranometer pass-through. All of them work on
converter-level measurements, i.e. the array voltage of one string and the
summed current of the converter's parallel strings.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import wrightomega

from .errors import (
    AbsentChannelError,
    DataError,
    DegenerateOperatingPointError,
    EstimatorDivergenceError,
    FilterSingularityError,
    PVEstimError,
    RejectedSampleError,
    SolverError,
)
from .model import K_BOLTZMANN, K_EV, Q_ELECTRON, S_MIN, S_STC, T_STC, band_gap
from .variance import compute_features, select_q

log = logging.getLogger(__name__)

S_MAX = 1500.0
ESTIMATORS = ("analytical", "iandi", "ekf", "pyranometer")


@dataclass(frozen=True)
class MeasurementSample:
    timestamp: float
    v: float
    i: float
    t: float
    gni: float | None = None


@dataclass(frozen=True)
class IrradianceEstimate:
    timestamp: float
    s_hat: float
    estimator: str
    variance: float | None = None


@dataclass
class MeasurementSeries:
    """Column view of a measurement stream (one array per channel)."""

    timestamp: np.ndarray
    v: np.ndarray
    i: np.ndarray
    t: np.ndarray
    gni: np.ndarray | None = None

    def __post_init__(self):
        self.timestamp = np.asarray(self.timestamp, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.i = np.asarray(self.i, dtype=float)
        self.t = np.asarray(self.t, dtype=float)
        if self.gni is not None:
            self.gni = np.asarray(self.gni, dtype=float)

    def __len__(self):
        return self.timestamp.size

    @classmethod
    def from_samples(cls, samples):
        samples = list(samples)
        gni = None
        if samples and all(s.gni is not None for s in samples):
            gni = [s.gni for s in samples]
        return cls([s.timestamp for s in samples], [s.v for s in samples],
                   [s.i for s in samples], [s.t for s in samples], gni)

    def sample(self, k):
        gni = None if self.gni is None else float(self.gni[k])
        return MeasurementSample(float(self.timestamp[k]), float(self.v[k]),
                                 float(self.i[k]), float(self.t[k]), gni)

    def samples(self):
        return [self.sample(k) for k in range(len(self))]


def _accept(s_hat, s_min, s_max):
    if not np.isfinite(s_hat) or not s_min < s_hat <= s_max:
        raise RejectedSampleError(
            f"estimate {s_hat:.4g} W/m^2 outside ({s_min:g}, {s_max:g}]")
    return float(s_hat)


# ---------------------------------------------------------------------------
# Analytical


def analytical_irradiance(v, i, t, stc, n_s, n_p):
    """Closed-form irradiance for arrays of measurements (no range checks).

    Returns ``(s_hat, denominator)``; the denominator is the irradiance
    sensitivity of the diode equation and vanishes at degenerate points.
    """
    v = np.asarray(v, dtype=float)
    i = np.asarray(i, dtype=float)
    t = np.asarray(t, dtype=float)
    ratio = n_s / n_p
    u = v + stc.r_s * ratio * i
    a = stc.n_r * K_BOLTZMANN * t * n_s / Q_ELECTRON
    i_d = n_p * stc.i_sat * (t / T_STC) ** 3 * np.exp(
        stc.e_g / (K_EV * T_STC) - band_gap(t) / (K_EV * t))
    with np.errstate(over="ignore"):
        num = i + i_d * np.expm1(u / a)
    den = (n_p * (stc.i_ph + stc.alpha * (t - T_STC))
           - u / (stc.r_p * ratio)) / S_STC
    with np.errstate(divide="ignore", invalid="ignore"):
        return num / den, den


def analytical_estimate(sample, plant, eps=1e-9, s_min=S_MIN, s_max=S_MAX):
    s_hat, den = analytical_irradiance(sample.v, sample.i, sample.t, plant.stc,
                                       plant.array_n_s, plant.array_n_p)
    if abs(den) < eps:
        raise DegenerateOperatingPointError(
            f"irradiance sensitivity {float(den):.3g} below {eps:g} "
            f"at v={sample.v:g}, i={sample.i:g}")
    return IrradianceEstimate(sample.timestamp, _accept(float(s_hat), s_min, s_max),
                              "analytical")


# ---------------------------------------------------------------------------
# Immersion and invariance


@dataclass(frozen=True)
class IandIConstants:
    """Constants of the monotone re-parametrization y = Phi(S, t).

    With u = v + c2*i the diode equation reads::

        y   = i - F(i, v, T),   F = I0(T) * (exp(c1/T * u) - 1)
        I0  = -c6 T^3 exp(c7 - c8/T + c9 T/(T + c10))
        Phi = S * (c4 + c5*T - c3*u)

    The shunt term is proportional to S because the shunt resistance is
    inversely proportional to irradiance. Signals are per string: the
    string voltage with the measured converter current shared equally
    among the parallel strings.
    """

    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    c6: float
    c7: float
    c8: float
    c9: float
    c10: float
    strings: int = 1

    @classmethod
    def from_plant(cls, plant):
        stc = plant.stc
        n_s, n_p = plant.array_n_s, stc.n_p
        ratio = n_s / n_p
        return cls(
            c1=Q_ELECTRON / (stc.n_r * K_BOLTZMANN * n_s),
            c2=stc.r_s * ratio,
            c3=1.0 / (S_STC * stc.r_p * ratio),
            c4=n_p * (stc.i_ph - stc.alpha * T_STC) / S_STC,
            c5=n_p * stc.alpha / S_STC,
            c6=n_p * stc.i_sat / T_STC**3,
            c7=stc.e_g / (K_EV * T_STC),
            c8=1.17 / K_EV,
            c9=4.73e-4 / K_EV,
            c10=636.0,
            strings=plant.topology.strings_per_converter,
        )

    def i0(self, t):
        return -self.c6 * t**3 * np.exp(self.c7 - self.c8 / t + self.c9 * t / (t + self.c10))

    def signals(self, v, i, t):
        """Measurable ``y`` and regressor slope ``dPhi/dS`` (arrays)."""
        i = np.asarray(i, dtype=float) / self.strings
        v = np.asarray(v, dtype=float)
        t = np.asarray(t, dtype=float)
        u = v + self.c2 * i
        y = i - self.i0(t) * np.expm1(self.c1 / t * u)
        slope = self.c4 + self.c5 * t - self.c3 * u
        return y, slope

    def phi(self, s, v, i, t):
        return s * self.signals(v, i, t)[1]


@dataclass(frozen=True)
class IandIConfig:
    gamma: float = 0.7
    s_init: float = 500.0
    s_min: float = S_MIN
    s_max: float = S_MAX

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")


def iandi_update(s_prev, y, slope, gamma, dt, s_min=S_MIN, s_max=S_MAX):
    """One forward-Euler step of dS/dt = gamma * (y - Phi(S)).

    Works element-wise on arrays (e.g. one entry per gain). Returns the
    new state and a boolean mask of clamped entries.
    """
    s_new = s_prev + dt * gamma * (y - s_prev * slope)
    if np.any(np.isnan(s_new)):
        raise EstimatorDivergenceError("I&I state became NaN")
    clamped = (s_new <= s_min) | (s_new > s_max)
    return np.clip(s_new, s_min * (1 + 1e-12), s_max), clamped


def iandi_step(s_prev, sample, config, constants, dt):
    """Advance the I&I observer by one sample of length ``dt`` seconds."""
    if not dt > 0 or not s_prev > 0:
        raise ValueError("iandi_step requires dt > 0 and a positive state")
    with np.errstate(over="ignore", invalid="ignore"):
        y, slope = constants.signals(sample.v, sample.i, sample.t)
    if not (np.isfinite(y) and np.isfinite(slope)):
        raise EstimatorDivergenceError("I&I signals overflowed")
    if config.gamma * dt * slope >= 2.0:
        log.warning("I&I Euler step unstable: gamma*dt*dPhi/dS = %.3g >= 2",
                    config.gamma * dt * slope)
    s_new, clamped = iandi_update(s_prev, float(y), float(slope), config.gamma,
                                  dt, config.s_min, config.s_max)
    if clamped:
        log.warning("I&I estimate clamped to [%g, %g] at t=%g",
                    config.s_min, config.s_max, sample.timestamp)
    return IrradianceEstimate(sample.timestamp, float(s_new), "iandi")


def iandi_filter(y, slope, gammas, dt, s_init=500.0, s_min=S_MIN, s_max=S_MAX):
    """Run the observer over whole signal arrays for one or several gains.

    Returns an array shaped ``(len(y),) + np.shape(gammas)``.
    """
    gammas = np.asarray(gammas, dtype=float)
    dt = np.broadcast_to(np.asarray(dt, dtype=float), np.shape(y))
    out = np.empty(np.shape(y) + gammas.shape)
    s = np.full(gammas.shape, float(s_init))
    lo, hi = s_min * (1 + 1e-12), s_max
    for k in range(len(y)):
        yk, gk = y[k], slope[k]
        if np.isfinite(yk) and np.isfinite(gk):
            s = s + dt[k] * gammas * (yk - s * gk)
            if np.any(np.isnan(s)):
                raise EstimatorDivergenceError("I&I state became NaN")
            s = np.clip(s, lo, hi)
        out[k] = s
    return out


# ---------------------------------------------------------------------------
# Extended Kalman filter


def sensor_noise_variances(plant, current_tol=0.002, voltage_tol=0.005,
                           temperature_tol=0.5, current_full_scale=None,
                           voltage_full_scale=None):
    """Diagonal of R from sensor tolerances taken as 3-sigma bounds.

    Current and voltage tolerances are relative to full scale (defaults:
    array short-circuit current and open-circuit voltage at STC); the
    temperature tolerance is absolute, in kelvin.
    """
    ds, top = plant.datasheet, plant.topology
    if current_full_scale is None:
        current_full_scale = ds.i_sc_stc * top.strings_per_converter
    if voltage_full_scale is None:
        voltage_full_scale = ds.v_oc_stc * top.modules_per_string
    sigma = np.array([voltage_tol * voltage_full_scale,
                      current_tol * current_full_scale,
                      temperature_tol]) / 3.0
    return sigma**2


class ObservationModel:
    """The diode equation solved for v, i and T, with S-derivatives.

    ``linearize`` evaluates, at irradiance ``a`` and the measured triple,
    the three implicit solutions and their derivatives with respect to
    irradiance (first-order Taylor terms).
    """

    def __init__(self, plant):
        stc = plant.stc
        self.stc = stc
        self.n_s = plant.array_n_s
        self.n_p = plant.array_n_p
        ratio = self.n_s / self.n_p
        self.r_s = stc.r_s * ratio
        self.r_p_stc = stc.r_p * ratio
        self._a_per_t = stc.n_r * K_BOLTZMANN * self.n_s / Q_ELECTRON
        self._gap_ref = stc.e_g / (K_EV * T_STC)

    def _lumped(self, t, s):
        stc = self.stc
        e_g = 1.17 - 4.73e-4 * t * t / (t + 636.0)
        i_0 = self.n_p * stc.i_sat * (t / T_STC) ** 3 * math.exp(
            self._gap_ref - e_g / (K_EV * t))
        i_l_stc = self.n_p * (stc.i_ph + stc.alpha * (t - T_STC))
        return i_l_stc * s / S_STC, i_0, self.r_p_stc * S_STC / s, self._a_per_t * t

    def residual(self, v, i, t, s):
        i_l, i_0, r_p, a = self._lumped(t, s)
        u = v + self.r_s * i
        return i_l - u / r_p - i - i_0 * math.expm1(u / a)

    def partials(self, v, i, t, s):
        """``(f_S, f_v, f_i, f_T)`` of the residual at (v, i, T, S)."""
        i_l, i_0, r_p, a = self._lumped(t, s)
        u = v + self.r_s * i
        x = u / a
        ex = math.exp(x)
        f_s = (i_l - u / r_p) / s
        f_v = -1.0 / r_p - i_0 * ex / a
        f_i = -self.r_s / r_p - 1.0 - i_0 * self.r_s * ex / a
        dln_i0 = 3.0 / t + 1.17 / (K_EV * t * t) + 4.73e-4 * 636.0 / (K_EV * (t + 636.0) ** 2)
        f_t = (self.n_p * self.stc.alpha * s / S_STC
               - i_0 * (dln_i0 * math.expm1(x) - ex * x / t))
        return f_s, f_v, f_i, f_t

    def solve_v(self, i, t, s):
        i_l, i_0, r_p, a = self._lumped(t, s)
        w = float(wrightomega(math.log(i_0 * r_p / a) + r_p * (i_l + i_0 - i) / a))
        return (i_l + i_0 - i) * r_p - i * self.r_s - a * w

    def solve_i(self, v, t, s):
        i_l, i_0, r_p, a = self._lumped(t, s)
        r_s = self.r_s
        theta = (math.log(i_0 * r_s * r_p / (a * (r_s + r_p)))
                 + r_p * (r_s * (i_l + i_0) + v) / (a * (r_s + r_p)))
        cur = (r_p * (i_l + i_0) - v) / (r_s + r_p) - (a / r_s) * float(wrightomega(theta))
        # one Newton polish keeps the residual at rounding level
        f_s, f_v, f_i, f_t = self.partials(v, cur, t, s)
        return cur - self.residual(v, cur, t, s) / f_i

    def solve_t(self, v, i, t_guess, s, tol=1e-11, maxiter=50):
        t = t_guess
        for _ in range(maxiter):
            if not 150.0 < t < 500.0:
                break
            f = self.residual(v, i, t, s)
            f_t = self.partials(v, i, t, s)[3]
            step = f / f_t
            t -= step
            if abs(step) < tol * t:
                return t
        raise SolverError(f"temperature solve failed (v={v:g}, i={i:g}, S={s:g})")

    def linearize(self, a, v, i, t):
        """Return ``(h, H, valid)`` at linearization irradiance ``a``.

        ``valid`` flags the channels whose implicit solution exists and is
        physical; an invalid channel is excluded from the update. A
        negative voltage solution (measured current above the short-circuit
        current at ``a``) lies on the reverse-bias branch, whose steep
        slope would claim spurious information, so it is excluded too.
        """
        h = np.zeros(3)
        jac = np.zeros(3)
        valid = np.ones(3, dtype=bool)
        try:
            v1 = self.solve_v(i, t, a)
            f_s, f_v, _, _ = self.partials(v1, i, t, a)
            h[0], jac[0] = v1, -f_s / f_v
            valid[0] = v1 >= 0.0
        except (ValueError, OverflowError):
            valid[0] = False
        try:
            i2 = self.solve_i(v, t, a)
            f_s, _, f_i, _ = self.partials(v, i2, t, a)
            h[1], jac[1] = i2, -f_s / f_i
        except (ValueError, OverflowError):
            valid[1] = False
        try:
            t3 = self.solve_t(v, i, t, a)
            f_s, _, _, f_t = self.partials(v, i, t3, a)
            h[2], jac[2] = t3, -f_s / f_t
        except (SolverError, ValueError, OverflowError, ZeroDivisionError):
            valid[2] = False
        valid &= np.isfinite(h) & np.isfinite(jac)
        return h, jac, valid


@dataclass(frozen=True)
class EkfState:
    x_hat: float
    p: float
    r_diag: tuple
    q: float

    def __post_init__(self):
        if any(not r > 0 for r in self.r_diag):
            raise ValueError("measurement variances must be positive")


@dataclass(frozen=True)
class EkfConfig:
    prior_mean: float = 500.0
    prior_var: float = 300.0**2
    r_diag: tuple | None = None
    q_mode: str = "clustered"
    q_fixed: float = 25.0
    s_min: float = S_MIN
    s_max: float = S_MAX


def ekf_step(state, sample, q_next, obs, s_min=S_MIN, s_max=S_MAX):
    """One EKF predict/update with a random-walk irradiance model.

    The previous estimate is both the prediction and the linearization
    point. Returns ``(new_state, estimate)``; a rejected update raises
    :class:`RejectedSampleError` so the caller can hold the state.
    """
    a = state.x_hat
    p_pred = state.p + state.q
    h, jac, valid = obs.linearize(a, sample.v, sample.i, sample.t)
    if not np.any(valid):
        raise SolverError("no observation channel could be linearized")
    y = np.array([sample.v, sample.i, sample.t])
    jac_v, innov = jac[valid], (y - h)[valid]
    r = np.asarray(state.r_diag, dtype=float)[valid]
    # scalar state with diagonal R: information form of the standard
    # gain, algebraically equal to P H^T (H P H^T + R)^-1 and always P > 0
    info = float(np.sum(jac_v**2 / r))
    if not np.isfinite(info) or not p_pred > 0:
        raise FilterSingularityError("innovation covariance is singular")
    p_new = p_pred / (1.0 + p_pred * info)
    gain = p_new * jac_v / r
    x_new = a + float(gain @ innov)
    _accept(x_new, s_min, s_max)
    new_state = EkfState(x_new, p_new, state.r_diag, q_next)
    return new_state, IrradianceEstimate(sample.timestamp, x_new, "ekf", p_new)


class ExtendedKalmanEstimator:
    """Stateful EKF that also selects the process noise per step.

    In ``clustered`` mode Q comes from ``cluster_model`` using features of
    the filter's own recent estimates; until enough history exists the
    largest cluster variance is used.
    """

    def __init__(self, plant, config=None, cluster_model=None):
        self.config = config or EkfConfig()
        if self.config.q_mode not in ("clustered", "fixed"):
            raise ValueError(f"unknown q_mode {self.config.q_mode!r}")
        if self.config.q_mode == "clustered" and cluster_model is None:
            raise ValueError("clustered q_mode needs a cluster model")
        self.obs = ObservationModel(plant)
        self.cluster_model = cluster_model
        r_diag = self.config.r_diag
        if r_diag is None:
            r_diag = sensor_noise_variances(plant)
        self.r_diag = tuple(float(r) for r in r_diag)
        self.reset()

    def reset(self):
        c = self.config
        self.state = EkfState(c.prior_mean, c.prior_var, self.r_diag,
                              self._initial_q())
        self.history = [c.prior_mean]

    def _initial_q(self):
        if self.config.q_mode == "fixed":
            return self.config.q_fixed
        return float(np.max(self.cluster_model.variances))

    def _next_q(self):
        if self.config.q_mode == "fixed":
            return self.config.q_fixed
        cm = self.cluster_model
        n = cm.window_length
        if len(self.history) < n + 2:
            return self._initial_q()
        ds = np.diff(self.history[-(n + 2):])
        feat = compute_features(ds, n)[-1]
        return select_q(cm, feat)

    def step(self, sample):
        state, est = ekf_step(self.state, sample, self.state.q, self.obs,
                              self.config.s_min, self.config.s_max)
        if not state.p > 0:
            log.warning("EKF variance non-positive at t=%g; filter reset",
                        sample.timestamp)
            self.reset()
            return IrradianceEstimate(sample.timestamp, self.state.x_hat, "ekf",
                                      self.state.p)
        self.history.append(state.x_hat)
        if len(self.history) > 64:
            del self.history[:-32]
        self.state = EkfState(state.x_hat, state.p, state.r_diag, self._next_q())
        return est


# ---------------------------------------------------------------------------
# Pyranometer


def pyranometer_estimate(sample, s_min=S_MIN, s_max=S_MAX):
    if sample.gni is None or not np.isfinite(sample.gni):
        raise AbsentChannelError("sample carries no GNI reading")
    return IrradianceEstimate(sample.timestamp, _accept(sample.gni, s_min, s_max),
                              "pyranometer")


# ---------------------------------------------------------------------------
# Streams


TEMPERATURE_OFFSET_K = 3.0


def correct_temperature_reading(t_raw, s_prev_estimate):
    """Rear-surface to cell temperature: add 3 K per 1000 W/m^2."""
    if not np.all(np.asarray(s_prev_estimate) > 0):
        raise ValueError("previous irradiance estimate must be positive")
    return t_raw + TEMPERATURE_OFFSET_K * s_prev_estimate / 1000.0


@dataclass
class EstimateSeries:
    """One estimate slot per input sample; NaN marks rejected samples."""

    estimator: str
    timestamp: np.ndarray
    s_hat: np.ndarray
    t_used: np.ndarray
    variance: np.ndarray | None = None
    rejections: list = field(default_factory=list)

    @property
    def accepted(self):
        return np.isfinite(self.s_hat)

    def estimates(self):
        out = []
        for k in np.nonzero(self.accepted)[0]:
            var = None if self.variance is None else float(self.variance[k])
            out.append(IrradianceEstimate(float(self.timestamp[k]),
                                          float(self.s_hat[k]), self.estimator, var))
        return out


def _check_monotone(ts):
    if np.any(np.diff(ts) <= 0):
        k = int(np.nonzero(np.diff(ts) <= 0)[0][0]) + 1
        raise DataError(f"timestamps not strictly increasing at sample {k}")


def estimate_series(samples, estimator, plant, iandi=None, ekf=None,
                    cluster_model=None, correct_temperature=False,
                    s_min=S_MIN, s_max=S_MAX):
    """Run one estimator over a stream, collecting per-sample rejections.

    ``samples`` may be a :class:`MeasurementSeries` or a sequence of
    :class:`MeasurementSample`. With ``correct_temperature`` the raw
    temperature reading is offset using the previous accepted estimate.
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}")
    series = samples if isinstance(samples, MeasurementSeries) \
        else MeasurementSeries.from_samples(samples)
    _check_monotone(series.timestamp)
    n = len(series)
    s_hat = np.full(n, np.nan)
    t_used = series.t.copy()
    variance = np.full(n, np.nan) if estimator == "ekf" else None
    rejections = []

    if estimator == "analytical" and not correct_temperature:
        raw, den = analytical_irradiance(series.v, series.i, series.t, plant.stc,
                                         plant.array_n_s, plant.array_n_p)
        ok = np.isfinite(raw) & (np.abs(den) >= 1e-9) & (raw > s_min) & (raw <= s_max)
        s_hat[ok] = raw[ok]
        for k in np.nonzero(~ok)[0]:
            reason = "degenerate operating point" if abs(den[k]) < 1e-9 \
                else f"estimate {raw[k]:.4g} W/m^2 out of range"
            rejections.append((int(k), float(series.timestamp[k]), reason))
        return EstimateSeries(estimator, series.timestamp, s_hat, t_used, None, rejections)

    iandi = iandi or IandIConfig(s_min=s_min, s_max=s_max)
    consts = IandIConstants.from_plant(plant) if estimator == "iandi" else None
    ekf_est = None
    if estimator == "ekf":
        ekf_est = ExtendedKalmanEstimator(plant, ekf or EkfConfig(s_min=s_min, s_max=s_max),
                                          cluster_model)
    s_prev = iandi.s_init if estimator == "iandi" else None
    last = ekf_est.state.x_hat if ekf_est else (s_prev or None)
    dt_default = float(np.median(np.diff(series.timestamp))) if n > 1 else 1.0

    for k in range(n):
        sample = series.sample(k)
        if correct_temperature and last is not None:
            t_corr = correct_temperature_reading(sample.t, last)
            sample = MeasurementSample(sample.timestamp, sample.v, sample.i,
                                       t_corr, sample.gni)
            t_used[k] = t_corr
        try:
            if estimator == "analytical":
                est = analytical_estimate(sample, plant, s_min=s_min, s_max=s_max)
            elif estimator == "pyranometer":
                est = pyranometer_estimate(sample, s_min, s_max)
            elif estimator == "iandi":
                dt = sample.timestamp - series.timestamp[k - 1] if k else dt_default
                est = iandi_step(s_prev, sample, iandi, consts, dt)
                s_prev = est.s_hat
            else:
                est = ekf_est.step(sample)
        except PVEstimError as exc:
            rejections.append((k, sample.timestamp, str(exc)))
            continue
        s_hat[k] = est.s_hat
        if variance is not None:
            variance[k] = est.variance
        last = est.s_hat
    return EstimateSeries(estimator, series.timestamp, s_hat, t_used, variance, rejections)
