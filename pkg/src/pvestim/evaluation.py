"""Scoring of estimator outputs: error metrics, noise sweeps, spectra."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .errors import ConfigError, DataError, NormalizationError, PVEstimError
from .estimators import (
    EkfConfig,
    IandIConstants,
    estimate_series,
    iandi_filter,
)
from .model import max_power_batch
from .simulate import REFERENCE_NOISE, apply_sensor_noise

log = logging.getLogger(__name__)

CHANNELS = {"current": "std_i", "voltage": "std_v", "temperature": "std_t"}
_R_INDEX = {"voltage": 0, "current": 1, "temperature": 2}


@dataclass(frozen=True)
class MetricReport:
    nrmse: float
    err_max: float
    nme: float
    sample_count: int

    def as_dict(self):
        return {"nrmse": self.nrmse, "err_max": self.err_max, "nme": self.nme,
                "sample_count": self.sample_count}


def compute_metrics(p_hat, p):
    """nRMSE, Err_max and nME in percent of the mean ground truth.

    Pairs where either value is NaN (rejected samples) are left out; the
    normalizing mean is taken over the remaining pairs.
    """
    p_hat = np.asarray(p_hat, dtype=float)
    p = np.asarray(p, dtype=float)
    if p_hat.shape != p.shape or p.size < 1:
        raise ValueError("series must have equal, non-zero length")
    ok = np.isfinite(p_hat) & np.isfinite(p)
    if not np.any(ok):
        raise DataError("no valid sample pairs")
    e, p_bar = p_hat[ok] - p[ok], np.mean(p[ok])
    if p_bar == 0:
        raise NormalizationError("ground-truth mean is zero")
    scale = 100.0 / abs(p_bar)
    return MetricReport(float(np.sqrt(np.mean(e**2)) * scale),
                        float(np.max(np.abs(e)) * scale),
                        float(np.mean(e) * scale), int(ok.sum()))


def estimated_max_power(s_hat, t, plant):
    """Plant maximum power implied by irradiance estimates (NaN stays NaN)."""
    s_hat = np.asarray(s_hat, dtype=float)
    out = np.full(s_hat.shape, np.nan)
    ok = np.isfinite(s_hat)
    if np.any(ok):
        out[ok] = max_power_batch(plant.stc, plant.datasheet, plant.topology,
                                  np.asarray(t, dtype=float)[ok], s_hat[ok])
    return out


def evaluate(sim, plant, estimators=("analytical", "iandi", "ekf"), **kw):
    """Metric report of each estimator's max-power estimate on a simulation."""
    out = {}
    for name in estimators:
        est = estimate_series(sim.measured, name, plant, **kw)
        p_hat = estimated_max_power(est.s_hat, est.t_used, plant)
        out[name] = compute_metrics(p_hat, sim.p_max_true)
    return out


# ---------------------------------------------------------------------------
# Noise sweep


@dataclass
class SweepResult:
    channel: str
    total_std: np.ndarray
    nrmse: dict  # estimator -> (levels, repetitions)
    gamma_opt: np.ndarray
    break_even: dict = field(default_factory=dict)
    below_range: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def __post_init__(self):
        if np.any(np.diff(self.total_std) <= 0):
            raise ValueError("sweep std values must be strictly increasing")

    def mean(self, name):
        return np.nanmean(self.nrmse[name], axis=1)

    def monotone_increasing(self, name="analytical", confidence=0.95):
        """Paired one-sided t-test of each consecutive level increase."""
        x = self.nrmse[name]
        for a, b in zip(x[:-1], x[1:]):
            ok = np.isfinite(a) & np.isfinite(b)
            if ok.sum() < 2:
                return False
            d = b[ok] - a[ok]
            if np.all(d > 0):
                continue
            res = stats.ttest_rel(b[ok], a[ok], alternative="greater")
            if not res.pvalue < 1.0 - confidence:
                return False
        return True

    def rows(self):
        names = list(self.nrmse)
        yield ["total_std"] + names + ["gamma_opt"]
        for j, s in enumerate(self.total_std):
            yield [s] + [self.mean(n)[j] for n in names] + [self.gamma_opt[j]]


def locate_break_even(std, base, other):
    """First std where ``other`` drops below ``base``, linearly interpolated.

    Returns ``(std, below_range)``; ``below_range`` is True when ``other``
    already wins at the lowest level, and the std is then that level.
    The std is None when no crossing occurs.
    """
    d = np.asarray(other) - np.asarray(base)
    idx = np.nonzero(d < 0)[0]
    if idx.size == 0:
        return None, False
    j = int(idx[0])
    if j == 0:
        return float(std[0]), True
    s0, s1, d0, d1 = std[j - 1], std[j], d[j - 1], d[j]
    return float(s0 + (s1 - s0) * d0 / (d0 - d1)), False


def _sweep_cell(args):
    (sim, plant, channel, total, rep_seed, base_noise, estimators, gammas,
     cluster_model, ekf_config) = args
    noise = replace(base_noise, seed=rep_seed, **{CHANNELS[channel]: total})
    measured = apply_sensor_noise(sim.clean, noise, sim.s_true)
    p_true = sim.p_max_true
    out, fails = {}, []
    for name in estimators:
        try:
            if name == "iandi":
                c = IandIConstants.from_plant(plant)
                y, g = c.signals(measured.v, measured.i, measured.t)
                dt = np.diff(measured.timestamp, prepend=measured.timestamp[0]
                             - np.median(np.diff(measured.timestamp)))
                s_all = iandi_filter(y, g, gammas, dt)
                out["iandi"] = np.array([
                    compute_metrics(estimated_max_power(s_all[:, j], measured.t, plant),
                                    p_true).nrmse for j in range(len(gammas))])
                continue
            kw = {}
            if name == "ekf":
                r = np.array([noise.std_v, noise.std_i, noise.std_t]) ** 2
                kw = {"ekf": replace(ekf_config, r_diag=tuple(r)),
                      "cluster_model": cluster_model}
            est = estimate_series(measured, name, plant, **kw)
            p_hat = estimated_max_power(est.s_hat, est.t_used, plant)
            out[name] = compute_metrics(p_hat, p_true).nrmse
        except PVEstimError as exc:
            fails.append((channel, total, rep_seed, name, str(exc)))
            out[name] = np.full(len(gammas), np.nan) if name == "iandi" else np.nan
    return out, fails


def run_noise_sweep(sim, plant, channel, added_std, estimators=("analytical", "ekf", "iandi"),
                    repetitions=20, seed=0, base_noise=REFERENCE_NOISE, gamma=1.0,
                    gamma_grid=(0.3, 1.0, 3.0, 10.0, 30.0, 100.0), cluster_model=None,
                    ekf_config=None, workers=None):
    """Add Gaussian noise to one channel at increasing levels.

    The total std per level is ``sqrt(base^2 + added^2)``. Repetition
    ``r`` uses one noise realization scaled to every level, so levels are
    compared on common random numbers. The EKF's R is the total noise
    variance of each channel. I&I is run over ``gamma_grid`` (``gamma`` is
    always included); ``iandi`` reports the fixed gain and ``iandi_opt``
    the best gain per level.
    """
    if channel not in CHANNELS:
        raise ConfigError(f"unknown channel {channel!r}")
    added = np.asarray(added_std, dtype=float)
    if np.any(added < 0):
        raise ConfigError("added std values must be >= 0")
    if repetitions < 1:
        raise ConfigError("repetitions must be >= 1")
    if "ekf" in estimators and cluster_model is None and (
            ekf_config is None or ekf_config.q_mode == "clustered"):
        raise ConfigError("EKF sweep needs a cluster model or a fixed-Q config")
    base = getattr(base_noise, CHANNELS[channel])
    total = np.sqrt(base**2 + added**2)
    gammas = np.unique(np.append(np.asarray(gamma_grid, dtype=float), gamma))
    g_fixed = int(np.nonzero(gammas == gamma)[0][0])
    ekf_config = ekf_config or EkfConfig()
    seeds = np.random.SeedSequence(seed).generate_state(repetitions)
    cells = [(sim, plant, channel, float(s), int(rs), base_noise, tuple(estimators),
              gammas, cluster_model, ekf_config) for s in total for rs in seeds]
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(c) for c in cells]

    n_lv = len(total)
    nrmse, failures = {}, []
    for name in estimators:
        if name == "iandi":
            arr = np.array([r[0]["iandi"] for r in results]).reshape(n_lv, repetitions, -1)
            nrmse["iandi"] = arr[:, :, g_fixed]
            grid_mean = np.nanmean(arr, axis=1)
            best = np.nanargmin(grid_mean, axis=1)
            nrmse["iandi_opt"] = arr[np.arange(n_lv), :, best]
            gamma_opt = gammas[best]
        else:
            nrmse[name] = np.array([r[0][name] for r in results]).reshape(n_lv, repetitions)
    for r in results:
        failures.extend(r[1])
    if "iandi" not in estimators:
        gamma_opt = np.full(n_lv, np.nan)
    res = SweepResult(channel, total, nrmse, gamma_opt, failures=failures)
    if "analytical" in nrmse:
        for name in nrmse:
            if name != "analytical":
                be, low = locate_break_even(total, res.mean("analytical"), res.mean(name))
                res.break_even[name], res.below_range[name] = be, low
    return res


# ---------------------------------------------------------------------------
# Spectra


@dataclass(frozen=True)
class Spectrum:
    frequency: np.ndarray
    amplitude: np.ndarray
    n: int  # samples in the series
    n_fft: int  # padded transform length

    def variance(self):
        """Series variance recovered from the amplitudes (Parseval)."""
        a = self.amplitude
        interior = a[1:-1] if self.n_fft % 2 == 0 else a[1:]
        edge = a[0] ** 2 + (a[-1] ** 2 if self.n_fft % 2 == 0 else 0.0)
        return (self.n / self.n_fft) * (edge + 0.5 * np.sum(interior**2))

    def band_amplitude(self, f_min=0.05):
        """Total amplitude above ``f_min`` hertz."""
        return float(np.sum(self.amplitude[self.frequency > f_min]))


def amplitude_spectrum(series, sample_interval=1.0, timestamps=None):
    """Single-sided amplitude spectrum of the de-meaned series.

    The series is zero-padded to the next power of two; amplitudes are
    ``2|X_k|/N`` with ``N`` the unpadded length (DC and Nyquist bins not
    doubled), so a sinusoid of amplitude A spanning a whole number of
    periods over a power-of-two length peaks at exactly A.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size < 16:
        raise DataError("spectrum needs a 1-D series of at least 16 samples")
    if not np.all(np.isfinite(x)):
        raise DataError("spectrum input contains missing values")
    if timestamps is not None:
        d = np.diff(np.asarray(timestamps, dtype=float))
        if np.any(np.abs(d - d[0]) > 1e-6 * abs(d[0])):
            raise DataError("spectrum needs uniformly sampled timestamps")
        sample_interval = float(d[0])
    if not sample_interval > 0:
        raise ConfigError("sample interval must be positive")
    n = x.size
    m = 1 << int(np.ceil(np.log2(n)))
    spec = np.fft.rfft(x - x.mean(), m)
    amp = 2.0 * np.abs(spec) / n
    amp[0] /= 2.0
    if m % 2 == 0:
        amp[-1] /= 2.0
    return Spectrum(np.fft.rfftfreq(m, sample_interval), amp, n, m)


def fill_missing(x):
    """Linear interpolation over NaN gaps (ends held), for spectrum input."""
    x = np.asarray(x, dtype=float).copy()
    bad = ~np.isfinite(x)
    if np.all(bad):
        raise DataError("series has no valid values")
    if np.any(bad):
        idx = np.arange(x.size)
        x[bad] = np.interp(idx[bad], idx[~bad], x[~bad])
    return x


# ---------------------------------------------------------------------------
# Gain sweep


@dataclass
class GammaSweepResult:
    gammas: np.ndarray
    reports: list  # MetricReport or None for unstable runs
    unstable: np.ndarray
    plateau: np.ndarray

    @property
    def nrmse(self):
        return np.array([r.nrmse if r is not None else np.nan for r in self.reports])

    def plateau_range(self):
        g = self.gammas[self.plateau]
        return (float(g.min()), float(g.max())) if g.size else None


def gamma_sweep(sim, plant, gammas, s_init=500.0, plateau_tol=0.05):
    """I&I metrics per gain on one simulation's measurements.

    A gain whose forward-Euler step would overshoot (``gamma*dt*slope >= 2``
    anywhere) is flagged unstable and not scored. The plateau is the set
    of stable gains with nRMSE within ``plateau_tol`` of the minimum.
    """
    g = np.asarray(gammas, dtype=float)
    if np.any(g <= 0):
        raise ConfigError("gains must be positive")
    m = sim.measured
    c = IandIConstants.from_plant(plant)
    y, slope = c.signals(m.v, m.i, m.t)
    dt = np.diff(m.timestamp, prepend=m.timestamp[0] - np.median(np.diff(m.timestamp)))
    worst = np.nanmax(dt * slope)
    unstable = g * worst >= 2.0
    reports = [None] * g.size
    stable = np.nonzero(~unstable)[0]
    if stable.size:
        s_all = iandi_filter(y, slope, g[stable], dt, s_init)
        for col, j in enumerate(stable):
            p_hat = estimated_max_power(s_all[:, col], m.t, plant)
            reports[j] = compute_metrics(p_hat, sim.p_max_true)
    for j in np.nonzero(unstable)[0]:
        log.warning("gamma=%g unstable for the sample interval; skipped", g[j])
    nr = np.array([r.nrmse if r is not None else np.nan for r in reports])
    plateau = np.zeros(g.size, dtype=bool)
    if stable.size:
        plateau = np.isfinite(nr) & (nr <= (1.0 + plateau_tol) * np.nanmin(nr))
    return GammaSweepResult(g, reports, unstable, plateau)
