"""Command-line entry point: ``pvestim <subcommand> ...``.

Every subcommand writes its outputs plus ``manifest.json`` into ``--out``.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .errors import ConfigError, DataError, NumericalError, PVEstimError
from .estimators import ESTIMATORS, EkfConfig, IandIConfig, estimate_series, sensor_noise_variances
from .evaluation import (
    amplitude_spectrum,
    compute_metrics,
    estimated_max_power,
    fill_missing,
    gamma_sweep,
    run_noise_sweep,
)
from .forecast import (
    DaySimulation,
    ForecastDatasetSpec,
    compare_forecasts,
    make_dataset,
)
from .io import (
    DEFAULT_PLANT,
    ingest_csv,
    load_flat_json,
    noise_from_dict,
    plant_from_dict,
    read_manifest,
    scenario_from_dict,
    write_manifest,
    write_summary,
    write_table,
)
from .model import stc_residuals
from .simulate import REFERENCE_NOISE, NoiseSpec, simulate, write_simulation_csv
from .variance import ClusterModel, fit_clusters, k_sweep, training_pairs

log = logging.getLogger("pvestim")

EXIT_CODES = {ConfigError: 2, DataError: 3, NumericalError: 4}


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


# ---------------------------------------------------------------------------
# Shared loading


def _plant_dict(args):
    return DEFAULT_PLANT if args.plant is None else load_flat_json(args.plant)


def _plant(args):
    data = _plant_dict(args)
    return plant_from_dict(data, args.plant or "default plant")


def _r_diag(args, plant):
    data = _plant_dict(args)
    return sensor_noise_variances(plant,
                                  current_full_scale=data.get("current_full_scale"),
                                  voltage_full_scale=data.get("voltage_full_scale"))


def _scenario(args):
    data = load_flat_json(args.scenario) if getattr(args, "scenario", None) else {}
    if getattr(args, "seed", None) is not None:
        data = dict(data, seed=args.seed)
    return scenario_from_dict(data, args.scenario or "default scenario")


def _noise(args, default=None):
    if getattr(args, "noise", None):
        return noise_from_dict(load_flat_json(args.noise))
    return default or NoiseSpec()


def _cluster_model(args):
    if getattr(args, "cluster_model", None):
        return ClusterModel.load(args.cluster_model)
    return None


def _estimator_kw(args, plant):
    kw = {"correct_temperature": getattr(args, "correct_temperature", False)}
    if args.estimator == "iandi":
        kw["iandi"] = IandIConfig(gamma=args.gamma, s_init=args.s_init)
    if args.estimator == "ekf":
        cm = _cluster_model(args)
        mode = "clustered" if cm is not None else "fixed"
        kw["ekf"] = EkfConfig(r_diag=tuple(_r_diag(args, plant)), q_mode=mode,
                              q_fixed=args.q_fixed)
        kw["cluster_model"] = cm
    return kw


def _truth_check(mf, what="p_max_true_W"):
    arr = mf.p_max_true if what == "p_max_true_W" else mf.s_true
    if arr is None:
        raise DataError(f"{mf.path}: column {what} needed for scoring")
    return arr


# ---------------------------------------------------------------------------
# Subcommands


def cmd_simulate(args):
    plant = _plant(args)
    sim = simulate(_scenario(args), plant, _noise(args))
    write_simulation_csv(os.path.join(args.out, "measurements.csv"), sim)
    write_summary(os.path.join(args.out, "summary.txt"), {
        "samples": len(sim.measured), "curtailed_samples": int(sim.curtailed.sum()),
        "mean_s_true_Wm2": float(np.mean(sim.s_true)),
        "mean_p_max_true_W": float(np.mean(sim.p_max_true))})


def cmd_estimate(args):
    plant = _plant(args)
    mf = ingest_csv(args.input, plant, not args.no_daylight_filter, False)
    est = estimate_series(mf.series, args.estimator, plant, **_estimator_kw(args, plant))
    p_hat = estimated_max_power(est.s_hat, est.t_used, plant)
    var = est.variance if est.variance is not None else np.full(len(p_hat), np.nan)
    write_table(os.path.join(args.out, "estimates.csv"),
                ["timestamp_s", "s_hat_Wm2", "p_max_hat_W", "t_used_K", "variance"],
                zip(est.timestamp, est.s_hat, p_hat, est.t_used, var))
    write_table(os.path.join(args.out, "rejections.csv"), ["index", "timestamp_s", "reason"],
                est.rejections)
    write_summary(os.path.join(args.out, "summary.txt"), {
        "estimator": args.estimator, "samples": len(est.s_hat),
        "accepted": int(np.isfinite(est.s_hat).sum()), "rejected": len(est.rejections),
        "dropped_by_daylight_filter": mf.dropped})


def cmd_evaluate(args):
    plant = _plant(args)
    mf = ingest_csv(args.input, plant, not args.no_daylight_filter, False)
    truth = _truth_check(mf)
    rows, summary = [], {}
    for name in args.estimators.split(","):
        args.estimator = name
        if name not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {name!r}")
        est = estimate_series(mf.series, name, plant, **_estimator_kw(args, plant))
        rep = compute_metrics(estimated_max_power(est.s_hat, est.t_used, plant), truth)
        rows.append([name, rep.nrmse, rep.err_max, rep.nme, rep.sample_count])
        for k, v in rep.as_dict().items():
            summary[f"{name}.{k}"] = v
    write_table(os.path.join(args.out, "metrics.csv"),
                ["estimator", "nrmse_pct", "err_max_pct", "nme_pct", "sample_count"], rows)
    write_summary(os.path.join(args.out, "summary.txt"), summary)


def cmd_sweep(args):
    plant = _plant(args)
    scen = _scenario(args)
    sim = simulate(scen, plant)
    cm = _cluster_model(args)
    if cm is None:
        f, ds = training_pairs(sim.s_true, 10)
        cm = fit_clusters(f, ds, k=args.k, seed=scen.seed)
    res = run_noise_sweep(sim, plant, args.channel, _floats(args.added_std),
                          repetitions=args.repetitions, seed=args.seed or 0,
                          base_noise=_noise(args, REFERENCE_NOISE), gamma=args.gamma,
                          cluster_model=cm, workers=args.workers)
    write_table(os.path.join(args.out, "sweep.csv"), *_split(res.rows()))
    summary = {"channel": res.channel,
               "analytical_monotone_95": res.monotone_increasing("analytical")}
    for name, be in res.break_even.items():
        summary[f"{name}.break_even_std"] = be
        summary[f"{name}.break_even_below_range"] = res.below_range[name]
    summary["failures"] = len(res.failures)
    write_summary(os.path.join(args.out, "summary.txt"), summary)


def _split(rows):
    rows = list(rows)
    return rows[0], rows[1:]


def _power_series(args, plant, mf):
    if args.source == "truth":
        return _truth_check(mf)
    if args.source == "measured":
        return mf.series.v * mf.series.i * plant.topology.converter_count
    args.estimator = args.source
    est = estimate_series(mf.series, args.source, plant, **_estimator_kw(args, plant))
    return fill_missing(estimated_max_power(est.s_hat, est.t_used, plant))


def cmd_spectrum(args):
    plant = _plant(args)
    mf = ingest_csv(args.input, plant, not args.no_daylight_filter, False)
    spec = amplitude_spectrum(_power_series(args, plant, mf), timestamps=mf.series.timestamp)
    write_table(os.path.join(args.out, "spectrum.csv"), ["frequency_Hz", "amplitude_W"],
                zip(spec.frequency, spec.amplitude))
    write_summary(os.path.join(args.out, "summary.txt"), {
        "source": args.source, "samples": spec.n, "n_fft": spec.n_fft,
        "band_amplitude_above_0.05Hz_W": spec.band_amplitude(0.05),
        "variance_W2": spec.variance()})


class _FileSim:
    """Measurements and truth from a CSV, shaped like a simulation."""

    def __init__(self, mf):
        self.measured = mf.series
        self.clean = mf.series
        self.s_true = mf.s_true
        self.p_max_true = _truth_check(mf)


def cmd_gamma_sweep(args):
    plant = _plant(args)
    mf = ingest_csv(args.input, plant, not args.no_daylight_filter, False)
    res = gamma_sweep(_FileSim(mf), plant, _floats(args.gammas), s_init=args.s_init)
    rows = []
    for g, rep, bad, flat in zip(res.gammas, res.reports, res.unstable, res.plateau):
        rows.append([g, None if rep is None else rep.nrmse, None if rep is None else rep.err_max,
                     None if rep is None else rep.nme, bad, flat])
    write_table(os.path.join(args.out, "gamma_sweep.csv"),
                ["gamma", "nrmse_pct", "err_max_pct", "nme_pct", "unstable", "plateau"], rows)
    pr = res.plateau_range()
    write_summary(os.path.join(args.out, "summary.txt"), {
        "plateau_min_gamma": None if pr is None else pr[0],
        "plateau_max_gamma": None if pr is None else pr[1]})


def cmd_forecast_compare(args):
    plant = _plant(args)
    estimators = tuple(args.estimators.split(","))
    if args.synthetic_seed is not None:
        days = make_dataset(plant, args.synthetic_seed, ForecastDatasetSpec())
    else:
        if not args.train or not args.test:
            raise ConfigError("give --train and --test CSVs or --synthetic-seed")
        days = []
        for paths, train in ((args.train, True), (args.test, False)):
            for p in paths:
                mf = ingest_csv(p, plant, True, False)
                days.append(DaySimulation(_FileSim(mf), False, train))
    cmp = compare_forecasts(plant, days, estimators)
    write_table(os.path.join(args.out, "forecast.csv"),
                ["series", "nmae_pct", "horizon_s", "window", "scored", "split"],
                [[k, r.nmae, r.horizon, cmp.windows[k], r.count, r.split]
                 for k, r in cmp.reports.items()])
    write_summary(os.path.join(args.out, "summary.txt"),
                  {f"{k}.nmae_pct": r.nmae for k, r in cmp.reports.items()})


def cmd_fit_clusters(args):
    mf = ingest_csv(args.input)
    s = mf.series.gni if args.column == "gni" else mf.s_true
    if s is None:
        raise DataError(f"{args.input}: no {args.column} column for clustering")
    feats, ds = training_pairs(s, args.window)
    model = fit_clusters(feats, ds, args.k, args.seed or 0, args.window)
    model.save(os.path.join(args.out, "clusters.txt"))
    if args.k_sweep:
        sweep = k_sweep(feats, ds, seed=args.seed or 0)
        write_table(os.path.join(args.out, "k_sweep.csv"), ["k", "mean_variance"],
                    sweep.items())


def cmd_extract_params(args):
    plant = _plant(args)
    stc = plant.stc
    res = stc_residuals(stc, plant.datasheet)
    values = {f"stc_{k}": getattr(stc, k) for k in
              ("r_s", "r_p", "i_ph", "i_sat", "n_r", "e_g", "alpha", "n_s", "n_p")}
    for j, r in enumerate(res):
        values[f"residual_{j}"] = float(r)
    values["p_max_stc_W"] = float(plant.plant_max_power(298.15, 1000.0))
    write_summary(os.path.join(args.out, "stc_parameters.txt"), values)


COMMANDS = {
    "simulate": cmd_simulate, "estimate": cmd_estimate, "evaluate": cmd_evaluate,
    "sweep": cmd_sweep, "spectrum": cmd_spectrum, "gamma-sweep": cmd_gamma_sweep,
    "forecast-compare": cmd_forecast_compare, "fit-clusters": cmd_fit_clusters,
    "extract-params": cmd_extract_params,
}


def build_parser():
    p = argparse.ArgumentParser(prog="pvestim", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(name, help_text, needs_input=False):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--plant", help="flat JSON plant config (default: built-in plant)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        if needs_input:
            sp.add_argument("--input", required=True, help="measurement CSV")
            sp.add_argument("--no-daylight-filter", action="store_true")
        return sp

    def est_opts(sp):
        sp.add_argument("--gamma", type=float, default=0.7, help="I&I gain")
        sp.add_argument("--s-init", type=float, default=500.0)
        sp.add_argument("--cluster-model", help="cluster file for the EKF process noise")
        sp.add_argument("--q-fixed", type=float, default=25.0,
                        help="EKF process noise when no cluster file is given")
        sp.add_argument("--correct-temperature", action="store_true")

    sp = common("simulate", "generate a synthetic measurement CSV")
    sp.add_argument("--scenario", help="flat JSON scenario config")
    sp.add_argument("--noise", help="flat JSON noise config")

    sp = common("estimate", "run one estimator over a measurement CSV", True)
    sp.add_argument("--estimator", choices=ESTIMATORS, default="analytical")
    est_opts(sp)

    sp = common("evaluate", "score estimators against the CSV's ground truth", True)
    sp.add_argument("--estimators", default="analytical,iandi,ekf")
    est_opts(sp)

    sp = common("sweep", "noise-robustness sweep on one channel")
    sp.add_argument("--scenario")
    sp.add_argument("--noise", help="baseline noise config (default: reference levels)")
    sp.add_argument("--channel", choices=("current", "voltage", "temperature"), required=True)
    sp.add_argument("--added-std", required=True, help="comma-separated added stds")
    sp.add_argument("--repetitions", type=int, default=20)
    sp.add_argument("--gamma", type=float, default=1.0)
    sp.add_argument("--k", type=int, default=4)
    sp.add_argument("--cluster-model")
    sp.add_argument("--workers", type=int, default=None)

    sp = common("spectrum", "amplitude spectrum of a power series", True)
    sp.add_argument("--source", default="analytical",
                    choices=("truth", "measured") + ESTIMATORS)
    sp.set_defaults(estimator=None)
    est_opts(sp)

    sp = common("gamma-sweep", "I&I metrics over a list of gains", True)
    sp.add_argument("--gammas", default="0.1,0.3,0.7,1,3,10,30,100,200")
    sp.add_argument("--s-init", type=float, default=500.0)

    sp = common("forecast-compare", "DF vs FF forecast training")
    sp.add_argument("--train", nargs="*", default=[])
    sp.add_argument("--test", nargs="*", default=[])
    sp.add_argument("--synthetic-seed", type=int, default=None)
    sp.add_argument("--estimators", default="analytical,ekf")

    sp = common("fit-clusters", "fit the EKF process-noise clusters", True)
    sp.add_argument("--k", type=int, default=4)
    sp.add_argument("--window", type=int, default=10)
    sp.add_argument("--column", choices=("gni", "s_true"), default="gni")
    sp.add_argument("--k-sweep", action="store_true")

    common("extract-params", "identify STC parameters from the datasheet")

    rp = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    rp.add_argument("manifest")
    rp.add_argument("--out", required=True)
    return p


def _record(args):
    rec = {k: v for k, v in vars(args).items() if k not in ("verbose",)}
    return rec


def run(args):
    """Execute a parsed command; returns the exit status."""
    if args.command == "replay":
        doc = read_manifest(args.manifest)
        rec = dict(doc["args"])
        rec["out"] = args.out
        args = argparse.Namespace(verbose=False, **rec)
    os.makedirs(args.out, exist_ok=True)
    COMMANDS[args.command](args)
    write_manifest(os.path.join(args.out, "manifest.json"), args.command, _record(args),
                   args.seed)
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except PVEstimError as exc:
        code = next((c for cls, c in EXIT_CODES.items() if isinstance(exc, cls)), 4)
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return code
    except (OSError, ValueError) as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
