"""Forecast training data with and without maximum-power reconstruction.

DF trains on measured converter power, which under curtailment says more
about the controller than about the sun. FF trains on the maximum power
reconstructed from an irradiance estimator. Both feed the same
deterministic baseline forecaster.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError, InsufficientHistoryError, NormalizationError
from .estimators import ESTIMATORS, EkfConfig, MeasurementSeries, estimate_series
from .evaluation import estimated_max_power
from .simulate import REFERENCE_NOISE, CurtailmentWindow, ScenarioSpec, simulate
from .variance import fit_clusters, training_pairs

AGGREGATION_S = 300.0
WINDOW_CANDIDATES = (1, 2, 3, 4, 6, 8, 12)


@dataclass
class TrainingSeries:
    timestamp: np.ndarray  # interval starts
    power: np.ndarray  # W, NaN marks a missing interval
    provenance: str  # "raw_measured" or "reconstructed"
    estimator: str | None = None
    interval: float = AGGREGATION_S

    def __post_init__(self):
        p = self.power[np.isfinite(self.power)]
        if np.any(p < 0):
            raise DataError("training power must be non-negative")

    @property
    def label(self):
        return "DF" if self.provenance == "raw_measured" else f"FF({self.estimator})"


@dataclass(frozen=True)
class ForecastReport:
    nmae: float
    horizon: float
    split: str = ""
    count: int = 0


def aggregate(timestamp, values, interval=AGGREGATION_S, start=None, end=None):
    """Mean of finite values per interval; empty intervals are NaN."""
    ts = np.asarray(timestamp, dtype=float)
    x = np.asarray(values, dtype=float)
    start = np.floor(ts[0] / interval) * interval if start is None else start
    end = ts[-1] if end is None else end
    n = int(np.floor((end - start) / interval)) + 1
    idx = np.floor((ts - start) / interval).astype(int)
    ok = np.isfinite(x) & (idx >= 0) & (idx < n)
    sums = np.bincount(idx[ok], weights=x[ok], minlength=n)
    counts = np.bincount(idx[ok], minlength=n)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(counts > 0, sums / counts, np.nan)
    return start + interval * np.arange(n), mean


def build_training_series(samples, estimator, plant, interval=AGGREGATION_S,
                          start=None, end=None, **estimator_kw):
    """Aggregate measurements into a DF (``estimator=None``) or FF series.

    DF is the measured plant power ``v * i`` times the converter count.
    FF is the maximum power implied by each accepted estimate. Rejected
    samples drop out of the interval mean.
    """
    series = samples if isinstance(samples, MeasurementSeries) \
        else MeasurementSeries.from_samples(samples)
    ts = series.timestamp
    if ts[-1] - ts[0] < interval:
        raise InsufficientHistoryError("samples must span at least two intervals")
    if estimator is None:
        p = np.clip(series.v * series.i, 0.0, None) * plant.topology.converter_count
        t_out, agg = aggregate(ts, p, interval, start, end)
        return TrainingSeries(t_out, agg, "raw_measured", None, interval)
    if estimator not in ESTIMATORS:
        raise ConfigError(f"unknown estimator {estimator!r}")
    est = estimate_series(series, estimator, plant, **estimator_kw)
    p = estimated_max_power(est.s_hat, est.t_used, plant)
    t_out, agg = aggregate(ts, p, interval, start, end)
    return TrainingSeries(t_out, agg, "reconstructed", estimator, interval)


def baseline_forecast(series, window=3):
    """One-step-ahead persistence plus mean recent increment.

    ``pred[k] = x[k-1] + (x[k-1] - x[k-1-window]) / window``; the first
    ``window + 1`` entries have no forecast (NaN), and a missing input
    gives a missing prediction.
    """
    x = np.asarray(series.power if isinstance(series, TrainingSeries) else series,
                   dtype=float)
    if window < 1:
        raise ConfigError("window must be >= 1")
    if x.size < window + 2:
        raise InsufficientHistoryError(
            f"need at least {window + 2} values, got {x.size}")
    pred = np.full(x.size, np.nan)
    last = x[window:-1]
    pred[window + 1:] = last + (last - x[:-window - 1]) / window
    return pred


def score_forecast(predictions, truth, horizon=AGGREGATION_S, split=""):
    """nMAE in percent of the mean truth over pairs where both exist."""
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(truth, dtype=float)
    if p.shape != y.shape:
        raise ValueError("predictions and truth must be aligned")
    ok = np.isfinite(p) & np.isfinite(y)
    if not np.any(ok):
        raise DataError("no scored pairs")
    y_bar = np.mean(y[ok])
    if y_bar == 0:
        raise NormalizationError("ground-truth mean is zero")
    nmae = float(np.mean(np.abs(p[ok] - y[ok])) / abs(y_bar) * 100.0)
    return ForecastReport(nmae, horizon, split, int(ok.sum()))


def select_window(days, candidates=WINDOW_CANDIDATES):
    """Window with the lowest one-step error on a list of training series."""
    best, best_err = None, np.inf
    for w in candidates:
        errs = []
        for x in days:
            if x.size >= w + 2:
                pred = baseline_forecast(x, w)
                ok = np.isfinite(pred) & np.isfinite(x)
                errs.append(np.abs(pred[ok] - x[ok]))
        if errs:
            err = float(np.mean(np.concatenate(errs)))
            if err < best_err:
                best, best_err = w, err
    if best is None:
        raise InsufficientHistoryError("training days too short for any window")
    return best


# ---------------------------------------------------------------------------
# Synthetic multi-day experiment


@dataclass(frozen=True)
class ForecastDatasetSpec:
    n_train: int = 6
    n_test: int = 2
    curtailed_train: int = 2
    curtailed_test: int = 1
    sample_interval: float = 5.0
    windows_per_day: int = 3
    window_hours: tuple = (1.0, 2.5)
    fraction_range: tuple = (0.3, 0.9)
    interval: float = AGGREGATION_S


@dataclass
class DaySimulation:
    sim: object
    curtailed: bool
    train: bool


def make_dataset(plant, seed=0, spec=None, noise=REFERENCE_NOISE):
    """Seeded train/test days with curtailment on a random subset."""
    spec = spec or ForecastDatasetSpec()
    rng = np.random.default_rng(seed)
    n_days = spec.n_train + spec.n_test
    curtailed = np.zeros(n_days, dtype=bool)
    curtailed[rng.choice(spec.n_train, spec.curtailed_train, replace=False)] = True
    curtailed[spec.n_train + rng.choice(spec.n_test, spec.curtailed_test, replace=False)] = True
    days = []
    for d in range(n_days):
        windows = ()
        if curtailed[d]:
            starts = np.sort(rng.uniform(8.0, 15.0, spec.windows_per_day))
            out, t_free = [], 0.0
            for s in starts:
                s = max(s, t_free)
                length = rng.uniform(*spec.window_hours)
                e = min(s + length, 17.5)
                if e - s > 0.25:
                    out.append(CurtailmentWindow(s * 3600, e * 3600,
                                                 fraction=float(rng.uniform(*spec.fraction_range))))
                    t_free = e
            windows = tuple(out)
        day_seed = int(rng.integers(2**31))
        scen = ScenarioSpec(profile="partly_cloudy", sample_interval=spec.sample_interval,
                            curtailment=windows, seed=day_seed,
                            s_peak=float(rng.uniform(850.0, 1050.0)))
        sim = simulate(scen, plant, replace(noise, seed=day_seed + 1))
        days.append(DaySimulation(sim, bool(curtailed[d]), d < spec.n_train))
    return days


@dataclass
class ForecastComparison:
    reports: dict  # label -> ForecastReport on the test days
    windows: dict  # label -> selected window
    curtailed_days: list = field(default_factory=list)


def compare_forecasts(plant, days, estimators=("analytical", "ekf"), interval=AGGREGATION_S,
                      ekf_config=None, cluster_k=4):
    """Train DF and FF baselines on training days, score on test days.

    Every forecast is scored against the true maximum power; the EKF's
    process-noise clusters come from the training days' pyranometer data.
    """
    train = [d for d in days if d.train]
    test = [d for d in days if not d.train]
    if not train or not test:
        raise ConfigError("need at least one training and one test day")
    kw_by_est = {}
    if "ekf" in estimators:
        feats, ds = [], []
        for d in train:
            f, x = training_pairs(d.sim.measured.gni, 10)
            feats.extend(f)
            ds.append(x)
        cm = fit_clusters(feats, np.concatenate(ds), k=cluster_k, window_length=10)
        r = np.array([REFERENCE_NOISE.std_v, REFERENCE_NOISE.std_i, REFERENCE_NOISE.std_t]) ** 2
        kw_by_est["ekf"] = {"cluster_model": cm,
                            "ekf": ekf_config or EkfConfig(r_diag=tuple(r))}

    def series_for(day, est):
        m = day.sim.measured
        start = np.floor(m.timestamp[0] / interval) * interval
        ts = build_training_series(m, est, plant, interval, start, m.timestamp[-1],
                                   **kw_by_est.get(est, {}))
        _, truth = aggregate(m.timestamp, day.sim.p_max_true, interval, start,
                             m.timestamp[-1])
        return ts.power, truth

    reports, windows = {}, {}
    for est in (None,) + tuple(estimators):
        label = "DF" if est is None else f"FF({est})"
        w = select_window([series_for(d, est)[0] for d in train])
        preds, truths = [], []
        for d in test:
            x, truth = series_for(d, est)
            preds.append(baseline_forecast(x, w))
            truths.append(truth)
        reports[label] = score_forecast(np.concatenate(preds), np.concatenate(truths),
                                        interval, f"{len(train)} train / {len(test)} test days")
        windows[label] = w
    return ForecastComparison(reports, windows,
                              [i for i, d in enumerate(days) if d.curtailed])
