"""Configuration files, measurement CSV ingestion and run manifests.

Config files are flat JSON objects (one level of keys, scalar or list
values). All quantities are SI: volts, amperes, kelvin, W/m^2, seconds.
"""

from __future__ import annotations

import csv
import json
import math
import platform
from dataclasses import dataclass, fields

import numpy as np
import scipy

from .errors import ConfigError, ParseError
from .estimators import (
    MeasurementSeries,
    analytical_irradiance,
    correct_temperature_reading,
)
from .model import S_MIN, PanelDatasheet, PlantModel, PlantTopology, StcParameters
from .simulate import CSV_COLUMNS, CurtailmentWindow, NoiseSpec, ScenarioSpec

REQUIRED_COLUMNS = CSV_COLUMNS[:4]

DEFAULT_PLANT = {
    "v_oc_stc": 37.8, "i_sc_stc": 8.86, "v_mp_stc": 30.4, "i_mp_stc": 8.39,
    "alpha": 0.0005 * 8.86, "beta": -0.0032, "n_s": 60, "n_p": 1,
    "modules_per_string": 14, "strings_per_converter": 2, "converter_count": 2,
}


def load_flat_json(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    for k, v in data.items():
        if isinstance(v, dict):
            raise ConfigError(f"{path}: key {k!r} is nested; config must be flat")
    return data


def _pick(data, cls, source):
    names = {f.name for f in fields(cls)}
    try:
        return cls(**{k: v for k, v in data.items() if k in names})
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def plant_from_dict(data, source="plant config"):
    """Datasheet, topology and optional pre-extracted STC parameters."""
    known = {f.name for f in fields(PanelDatasheet)} | {f.name for f in fields(PlantTopology)} \
        | {"current_full_scale", "voltage_full_scale", "grid_points"} \
        | {f"stc_{f.name}" for f in fields(StcParameters)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{source}: unknown keys {sorted(unknown)}")
    ds = _pick(data, PanelDatasheet, source)
    top = _pick(data, PlantTopology, source)
    stc_keys = {k[4:]: v for k, v in data.items() if k.startswith("stc_")}
    if stc_keys:
        stc = _pick(stc_keys, StcParameters, source)
        plant = PlantModel(stc, ds, top)
    else:
        plant = PlantModel.from_datasheet(ds, top)
    if top.rated_power_w is not None:
        top.check_rating(ds)
    return plant


def load_plant(path=None):
    """Plant from a flat JSON file; the built-in 14.3 kWp plant if None."""
    return plant_from_dict(DEFAULT_PLANT if path is None else load_flat_json(path),
                           str(path or "default plant"))


def scenario_from_dict(data, source="scenario config"):
    """``curtailment`` is a list of ``[start, end, fraction]`` or
    ``[start, end, null, setpoint_w]``; ``steps`` a list of ``[start, value]``."""
    d = dict(data)
    try:
        windows = []
        for w in d.pop("curtailment", []):
            if len(w) == 3:
                windows.append(CurtailmentWindow(w[0], w[1], fraction=w[2]))
            elif len(w) == 4 and w[2] is None:
                windows.append(CurtailmentWindow(w[0], w[1], setpoint_w=w[3]))
            else:
                raise ConfigError(f"{source}: bad curtailment entry {w!r}")
        d["curtailment"] = tuple(windows)
        d["steps"] = tuple(tuple(s) for s in d.get("steps", ()))
        if "cloud_depth" in d:
            d["cloud_depth"] = tuple(d["cloud_depth"])
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    names = {f.name for f in fields(ScenarioSpec)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"{source}: unknown keys {sorted(unknown)}")
    return _pick(d, ScenarioSpec, source)


def noise_from_dict(data):
    return _pick({k: v for k, v in data.items() if k in {f.name for f in fields(NoiseSpec)}},
                 NoiseSpec, "noise config")


# ---------------------------------------------------------------------------
# CSV


@dataclass
class MeasurementFile:
    series: MeasurementSeries
    s_true: np.ndarray | None
    p_max_true: np.ndarray | None
    dropped: int = 0
    path: str = ""

    def samples(self):
        return self.series.samples()


def _parse_float(text, lineno, name):
    try:
        x = float(text)
    except ValueError:
        raise ParseError(f"column {name}: not a number: {text!r}", lineno) from None
    if not math.isfinite(x):
        raise ParseError(f"column {name}: non-finite value", lineno)
    return x


def read_measurement_csv(path):
    """Parse the canonical CSV; raises :class:`ParseError` with line numbers."""
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise ConfigError(f"input file not found: {path}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file", 1)
        header = [h.strip() for h in header]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise ParseError(f"missing columns {missing}", 1)
        unknown = [c for c in header if c not in CSV_COLUMNS]
        if unknown:
            raise ParseError(f"unknown columns {unknown}", 1)
        col = {c: header.index(c) for c in header}
        optional = [c for c in CSV_COLUMNS[4:] if c in col]
        data = {c: [] for c in REQUIRED_COLUMNS + tuple(optional)}
        prev_t = -math.inf
        for lineno, row in enumerate(reader, 2):
            if not row or all(not x.strip() for x in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno)
            for c in REQUIRED_COLUMNS:
                data[c].append(_parse_float(row[col[c]], lineno, c))
            for c in optional:
                txt = row[col[c]].strip()
                data[c].append(math.nan if txt == "" else _parse_float(txt, lineno, c))
            t = data["timestamp_s"][-1]
            if not t > prev_t:
                raise ParseError(f"timestamp {t:g} does not increase", lineno)
            prev_t = t
    if not data["timestamp_s"]:
        raise ParseError("no data rows", 2)
    arr = {c: np.array(v) for c, v in data.items()}
    gni = arr.get("gni_Wm2")
    if gni is not None and np.all(np.isnan(gni)):
        gni = None
    series = MeasurementSeries(arr["timestamp_s"], arr["v_V"], arr["i_A"], arr["t_K"], gni)
    s_true = arr.get("s_true_Wm2")
    p_true = arr.get("p_max_true_W")
    if s_true is not None and np.all(np.isnan(s_true)):
        s_true = None
    if p_true is not None and np.all(np.isnan(p_true)):
        p_true = None
    return MeasurementFile(series, s_true, p_true, 0, str(path))


def ingest_csv(path, plant=None, daylight_filter=True, correct_temperature=False,
               s_min=S_MIN):
    """Read a measurement CSV and apply the daylight and temperature rules.

    With a plant, samples whose analytical irradiance estimate is at or
    below ``s_min`` are dropped (night, dawn, dusk). With
    ``correct_temperature`` each temperature reading is raised by the
    rear-surface offset computed from the previous sample's estimate.
    """
    mf = read_measurement_csv(path)
    if plant is None:
        return mf
    s = mf.series
    t = s.t.copy()
    if correct_temperature:
        s_prev = None
        for k in range(len(s)):
            if s_prev is not None and s_prev > 0:
                t[k] = correct_temperature_reading(s.t[k], s_prev)
            raw, _ = analytical_irradiance(s.v[k], s.i[k], t[k], plant.stc,
                                           plant.array_n_s, plant.array_n_p)
            s_prev = float(raw) if np.isfinite(raw) else None
    keep = np.ones(len(s), dtype=bool)
    if daylight_filter:
        raw, _ = analytical_irradiance(s.v, s.i, t, plant.stc, plant.array_n_s, plant.array_n_p)
        keep = np.isfinite(raw) & (raw > s_min)

    def sel(x):
        return None if x is None else x[keep]

    series = MeasurementSeries(s.timestamp[keep], s.v[keep], s.i[keep], t[keep], sel(s.gni))
    return MeasurementFile(series, sel(mf.s_true), sel(mf.p_max_true),
                           int((~keep).sum()), mf.path)


def write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "" if np.isnan(x) else repr(float(x))
    return str(x)


def write_summary(path, values):
    """Flat ``key = value`` summary file, keys in insertion order."""
    with open(path, "w") as fh:
        for k, v in values.items():
            fh.write(f"{k} = {_fmt(v)}\n")


def versions():
    from . import __version__

    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pvestim": __version__}


def write_manifest(path, command, args, seed):
    """Config echo, seed and library versions of a run."""
    doc = {"command": command, "args": args, "seed": seed, "versions": versions()}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path):
    data = load_flat_json_any(path)
    for key in ("command", "args"):
        if key not in data:
            raise ConfigError(f"{path}: manifest lacks {key!r}")
    return data


def load_flat_json_any(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}") from None
