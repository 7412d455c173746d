"""Synthetic ground-truth experiments for the estimators.

A scenario produces a true irradiance / cell-temperature profile, the
converter operating point on the true i-v curve (MPPT or curtailed), and
noisy sensor readings. Everything is deterministic given the seeds.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParseError, RejectedSampleError
from .estimators import MeasurementSeries
from .model import S_MIN, current_batch, lumped_batch, mpp_batch, voltage_batch

PROFILES = ("clear_sky", "partly_cloudy", "step", "custom_csv")

CSV_COLUMNS = ("timestamp_s", "v_V", "i_A", "t_K", "gni_Wm2", "s_true_Wm2",
               "p_max_true_W")


@dataclass(frozen=True)
class CurtailmentWindow:
    """Power limit over ``[start, end)``: a fraction of available power
    or an absolute converter setpoint in watts."""

    start: float
    end: float
    fraction: float | None = None
    setpoint_w: float | None = None

    def __post_init__(self):
        if not self.end > self.start:
            raise ConfigError("curtailment window must have end > start")
        if (self.fraction is None) == (self.setpoint_w is None):
            raise ConfigError("give exactly one of fraction / setpoint_w")
        if self.fraction is not None and not 0 < self.fraction <= 1:
            raise ConfigError("power fraction must lie in (0, 1]")
        if self.setpoint_w is not None and not self.setpoint_w > 0:
            raise ConfigError("power setpoint must be positive")


@dataclass(frozen=True)
class ScenarioSpec:
    profile: str = "clear_sky"
    start: float = 6 * 3600.0
    duration: float = 12 * 3600.0
    sample_interval: float = 1.0
    s_peak: float = 1000.0
    sunrise: float = 6 * 3600.0
    sunset: float = 18 * 3600.0
    shape: float = 1.3
    daylight_fraction: float = 0.05
    # partly cloudy: two-state Markov cloud process, first-order edges
    mean_clear_s: float = 600.0
    mean_cloud_s: float = 240.0
    cloud_depth: tuple = (0.3, 0.8)
    edge_tau_s: float = 30.0
    steps: tuple = ()
    csv_path: str | None = None
    curtailment: tuple = ()
    ambient_k: float = 293.15
    k_th: float = 0.025
    thermal_tau_s: float = 300.0
    tracker: str = "ideal"
    po_step_v: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}")
        if not self.sample_interval > 0 or not self.duration > 0:
            raise ConfigError("sample_interval and duration must be positive")
        if self.tracker not in ("ideal", "po"):
            raise ConfigError("tracker must be 'ideal' or 'po'")
        windows = sorted(self.curtailment, key=lambda w: w.start)
        for a, b in zip(windows, windows[1:]):
            if b.start < a.end:
                raise ConfigError("curtailment windows overlap")


@dataclass(frozen=True)
class NoiseSpec:
    std_i: float = 0.0
    std_v: float = 0.0
    std_t: float = 0.0
    seed: int = 0
    std_gni_rel: float = 0.0
    rear_offset: bool = False

    def __post_init__(self):
        if min(self.std_i, self.std_v, self.std_t, self.std_gni_rel) < 0:
            raise ConfigError("noise standard deviations must be >= 0")


# Original sensor noise levels of the reference installation (A, V, K)
REFERENCE_NOISE = NoiseSpec(std_i=0.55, std_v=0.23, std_t=0.4)


@dataclass
class Profile:
    timestamp: np.ndarray
    s_true: np.ndarray
    t_cell: np.ndarray


def _clear_sky(t, spec):
    x = (t - spec.sunrise) / (spec.sunset - spec.sunrise)
    return spec.s_peak * np.clip(np.sin(np.pi * x), 0.0, None) ** spec.shape


def _cloud_attenuation(n, dt, spec, rng):
    p_on = min(1.0, dt / spec.mean_clear_s)
    p_off = min(1.0, dt / spec.mean_cloud_s)
    lo, hi = spec.cloud_depth
    target = np.empty(n)
    cloudy, depth = False, 0.0
    u = rng.random(n)
    depths = rng.uniform(lo, hi, n)
    for k in range(n):
        if cloudy and u[k] < p_off:
            cloudy = False
        elif not cloudy and u[k] < p_on:
            cloudy, depth = True, depths[k]
        target[k] = depth if cloudy else 0.0
    alpha = 1.0 - math.exp(-dt / spec.edge_tau_s)
    c = np.empty(n)
    level = target[0]
    for k in range(n):
        level += alpha * (target[k] - level)
        c[k] = level
    return c


def cell_temperature(timestamp, s_true, spec):
    """First-order lag towards ambient + k_th * S, started in equilibrium."""
    eq = spec.ambient_k + spec.k_th * np.asarray(s_true)
    out = np.empty_like(eq)
    out[0] = eq[0]
    for k in range(1, eq.size):
        a = 1.0 - math.exp(-(timestamp[k] - timestamp[k - 1]) / spec.thermal_tau_s)
        out[k] = out[k - 1] + a * (eq[k] - out[k - 1])
    return out


def read_profile_csv(path):
    """Read ``timestamp_s, s_Wm2[, t_K]`` rows; fails with the line number."""
    ts, ss, tt = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty profile file", 1)
        header = [h.strip() for h in header]
        if header[:2] != ["timestamp_s", "s_Wm2"]:
            raise ParseError("header must start with timestamp_s,s_Wm2", 1)
        has_t = len(header) > 2 and header[2] == "t_K"
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                ts.append(float(row[0]))
                ss.append(float(row[1]))
                if has_t:
                    tt.append(float(row[2]))
            except (ValueError, IndexError):
                raise ParseError(f"malformed row {row!r}", lineno) from None
            if len(ts) > 1 and ts[-1] <= ts[-2]:
                raise ParseError("timestamps must be strictly increasing", lineno)
    return np.array(ts), np.array(ss), (np.array(tt) if has_t else None)


def generate_profile(spec):
    """True (timestamp, irradiance, cell temperature) series of a scenario."""
    if spec.profile == "custom_csv":
        if spec.csv_path is None:
            raise ConfigError("custom_csv profile needs csv_path")
        t, s, t_cell = read_profile_csv(spec.csv_path)
        if t_cell is None:
            t_cell = cell_temperature(t, s, spec)
        return Profile(t, s, t_cell)
    n = int(round(spec.duration / spec.sample_interval))
    t = spec.start + spec.sample_interval * np.arange(n)
    if spec.profile == "step":
        if not spec.steps:
            raise ConfigError("step profile needs steps")
        starts = np.array([st for st, _ in spec.steps], dtype=float)
        levels = np.array([lv for _, lv in spec.steps], dtype=float)
        idx = np.searchsorted(starts, t, side="right") - 1
        s = levels[np.clip(idx, 0, None)]
        s = np.where(idx < 0, levels[0], s)
    else:
        s = _clear_sky(t, spec)
        if spec.profile == "partly_cloudy":
            rng = np.random.default_rng(spec.seed)
            s = s * (1.0 - _cloud_attenuation(n, spec.sample_interval, spec, rng))
    return Profile(t, s, cell_temperature(t, s, spec))


def daylight_mask(spec, timestamp):
    """Samples whose clear-sky envelope exceeds the daylight fraction."""
    if spec.profile in ("step", "custom_csv"):
        return np.ones(np.shape(timestamp), dtype=bool)
    return _clear_sky(np.asarray(timestamp), spec) > spec.daylight_fraction * spec.s_peak


# ---------------------------------------------------------------------------
# Operating point


def _array_lumped(plant, t_cell, s_true):
    return lumped_batch(plant.stc, t_cell, s_true, plant.array_n_s, plant.array_n_p)


def _setpoint_voltage(lumped, v_mp, v_oc, p_target, iters=80):
    lo, hi = np.array(v_mp, dtype=float), np.array(v_oc, dtype=float)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        above = mid * current_batch(mid, lumped) > p_target
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    return 0.5 * (lo + hi)


def operating_points(plant, s_true, t_cell, setpoint_w=None):
    """Vectorized converter operating points.

    ``setpoint_w`` (NaN = no limit) caps the converter power; the point is
    taken on the high-voltage side of the maximum. Returns
    ``(v, i, p_available)`` with ``p_available`` at converter level.
    """
    s_true = np.asarray(s_true, dtype=float)
    t_cell = np.asarray(t_cell, dtype=float)
    if np.any(s_true <= S_MIN):
        raise RejectedSampleError("operating point needs S > S_min")
    lumped = _array_lumped(plant, t_cell, s_true)
    v_oc = voltage_batch(0.0, lumped)
    v_mp, i_mp, p_mp = mpp_batch(lumped, v_oc, 64)
    v, i = v_mp.copy(), i_mp.copy()
    if setpoint_w is not None:
        sp = np.broadcast_to(np.asarray(setpoint_w, dtype=float), s_true.shape)
        if np.any(sp[np.isfinite(sp)] <= 0):
            raise ConfigError("power setpoint must be positive")
        limit = np.isfinite(sp) & (sp < p_mp)
        if np.any(limit):
            sub = tuple(np.asarray(x)[limit] for x in lumped)
            vs = _setpoint_voltage(sub, v_mp[limit], v_oc[limit], sp[limit])
            v[limit] = vs
            i[limit] = current_batch(vs, sub)
    return v, i, p_mp


def simulate_operating_point(s_true, t_cell, plant, setpoint_w=None):
    """Scalar operating point ``(v, i)``: MPPT, or capped at ``setpoint_w``."""
    if setpoint_w is not None and not setpoint_w > 0:
        raise ConfigError("power setpoint must be positive")
    sp = None if setpoint_w is None else np.array([setpoint_w])
    v, i, _ = operating_points(plant, np.array([s_true]), np.array([t_cell]), sp)
    return float(v[0]), float(i[0])


def perturb_and_observe(plant, s_true, t_cell, step_v=2.0, v_start=None):
    """Fixed-step P&O tracker, one perturbation per sample."""
    lumped = _array_lumped(plant, t_cell, s_true)
    n = np.size(s_true)
    v_out, i_out = np.empty(n), np.empty(n)
    v = v_start if v_start is not None else 0.8 * float(voltage_batch(0.0, tuple(x[0] for x in lumped)))
    direction, p_prev = 1.0, -np.inf
    for k in range(n):
        lk = tuple(float(x[k]) for x in lumped)
        v = min(max(v, 0.0), float(voltage_batch(0.0, lk)))
        i = float(current_batch(v, lk))
        p = v * i
        if p < p_prev:
            direction = -direction
        v_out[k], i_out[k], p_prev = v, i, p
        v += direction * step_v
    return v_out, i_out


def setpoint_schedule(spec, timestamp, p_available):
    """Per-sample power cap (converter watts, NaN where not curtailed)."""
    sp = np.full(np.shape(timestamp), np.nan)
    for w in spec.curtailment:
        inside = (timestamp >= w.start) & (timestamp < w.end)
        if w.fraction is not None:
            sp[inside] = w.fraction * p_available[inside]
        else:
            sp[inside] = w.setpoint_w
    return sp


# ---------------------------------------------------------------------------
# Sensors


def apply_sensor_noise(clean, noise, s_true=None):
    """Add seeded i.i.d. Gaussian noise to each channel.

    Draw order is fixed (v, i, T, GNI) so a seed defines one realization
    regardless of the standard deviations. With ``rear_offset`` the
    temperature reading is the rear-surface value, 3 K per 1000 W/m^2
    below the cell temperature.
    """
    rng = np.random.default_rng(noise.seed)
    n = len(clean)
    z = rng.standard_normal((4, n))
    t = clean.t + noise.std_t * z[2]
    if noise.rear_offset:
        if s_true is None:
            raise ConfigError("rear_offset needs the true irradiance")
        t = t - 3.0 * np.asarray(s_true) / 1000.0
    gni = clean.gni
    if gni is not None:
        gni = gni * (1.0 + noise.std_gni_rel * z[3])
    return MeasurementSeries(clean.timestamp.copy(), clean.v + noise.std_v * z[0],
                             clean.i + noise.std_i * z[1], t, gni)


@dataclass
class Simulation:
    """Clean data, noisy readings and ground truth of one scenario run."""

    spec: ScenarioSpec
    clean: MeasurementSeries
    measured: MeasurementSeries
    s_true: np.ndarray
    t_true: np.ndarray
    p_max_true: np.ndarray  # plant level, W
    p_available: np.ndarray  # converter level, W
    setpoint_w: np.ndarray = field(default=None)

    @property
    def curtailed(self):
        return np.isfinite(self.setpoint_w) & (self.setpoint_w < self.p_available)

    @property
    def p_measured(self):
        """Measured converter power scaled to the plant."""
        return self.measured.v * self.measured.i

    def with_noise(self, noise):
        measured = apply_sensor_noise(self.clean, noise, self.s_true)
        return Simulation(self.spec, self.clean, measured, self.s_true, self.t_true,
                          self.p_max_true, self.p_available, self.setpoint_w)


def simulate(spec, plant, noise=None):
    """Run a scenario end to end."""
    prof = generate_profile(spec)
    keep = daylight_mask(spec, prof.timestamp) & (prof.s_true > S_MIN)
    ts, s, tc = prof.timestamp[keep], prof.s_true[keep], prof.t_cell[keep]
    v, i, p_av = operating_points(plant, s, tc)
    sp = setpoint_schedule(spec, ts, p_av)
    if np.any(np.isfinite(sp)):
        v, i, _ = operating_points(plant, s, tc, sp)
    if spec.tracker == "po":
        v_po, i_po = perturb_and_observe(plant, s, tc, spec.po_step_v)
        free = ~np.isfinite(sp)
        v[free], i[free] = v_po[free], i_po[free]
    clean = MeasurementSeries(ts, v, i, tc, s.copy())
    measured = apply_sensor_noise(clean, noise or NoiseSpec(), s)
    p_max = p_av * plant.topology.converter_count
    return Simulation(spec, clean, measured, s, tc, p_max, p_av, sp)


def write_measurement_csv(path, series, s_true=None, p_max_true=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for k in range(len(series)):
            row = [series.timestamp[k], series.v[k], series.i[k], series.t[k]]
            row.append("" if series.gni is None else series.gni[k])
            row.append("" if s_true is None else s_true[k])
            row.append("" if p_max_true is None else p_max_true[k])
            w.writerow([x if isinstance(x, str) else repr(float(x)) for x in row])


def write_simulation_csv(path, sim):
    write_measurement_csv(path, sim.measured, sim.s_true, sim.p_max_true)
