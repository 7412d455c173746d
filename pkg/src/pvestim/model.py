"""Single-diode five-parameter PV model.

The model is written for a panel of ``n_s`` cells in series and ``n_p``
cell strings in parallel. Every function that evaluates the diode equation
accepts optional ``n_s`` / ``n_p`` overrides, so the same cell-level
parameters describe a whole array: a string of ``m`` modules fed into ``s``
parallel strings behaves like a panel of ``m * n_s`` by ``s * n_p`` cells
(uniform irradiance and temperature assumed).

Units are SI throughout (V, A, K, W/m^2), except band-gap energies in eV.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.constants import Boltzmann, elementary_charge
from scipy.optimize import brentq
from scipy.special import wrightomega

from .errors import (
    ConfigError,
    ExponentOverflowError,
    IdentificationError,
    RejectedSampleError,
    SolverError,
)

K_BOLTZMANN = Boltzmann
Q_ELECTRON = elementary_charge
K_EV = Boltzmann / elementary_charge  # eV/K

T_STC = 298.15
S_STC = 1000.0
S_MIN = 1.0
MAX_EXPONENT = 700.0

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def band_gap(temperature):
    """Band-gap energy in eV at cell temperature ``temperature`` (K)."""
    t = np.asarray(temperature, dtype=float)
    return 1.17 - 4.73e-4 * t**2 / (t + 636.0)


def thermal_voltage(temperature):
    return K_BOLTZMANN * temperature / Q_ELECTRON


@dataclass(frozen=True)
class PanelDatasheet:
    """Manufacturer values at STC.

    ``alpha`` is the absolute short-circuit current coefficient of the
    panel (A/K); ``beta`` is the *relative* open-circuit voltage
    coefficient (1/K, e.g. -0.0032 for -0.32 %/K).
    """

    v_oc_stc: float
    i_sc_stc: float
    v_mp_stc: float
    i_mp_stc: float
    alpha: float
    beta: float
    n_s: int = 60
    n_p: int = 1

    def __post_init__(self):
        if not 0 < self.v_mp_stc < self.v_oc_stc:
            raise ConfigError("datasheet requires 0 < v_mp_stc < v_oc_stc")
        if not 0 < self.i_mp_stc < self.i_sc_stc:
            raise ConfigError("datasheet requires 0 < i_mp_stc < i_sc_stc")
        if self.n_s < 1 or self.n_p < 1:
            raise ConfigError("cell counts must be >= 1")

    @property
    def p_mp_stc(self):
        return self.v_mp_stc * self.i_mp_stc


@dataclass(frozen=True)
class StcParameters:
    """Cell-level model parameters identified at STC.

    Besides the five model parameters this carries what the translation
    to other conditions needs: the band gap at STC, the cell-level current
    temperature coefficient and the cell layout of the panel.
    """

    r_s: float
    r_p: float
    i_ph: float
    i_sat: float
    n_r: float
    e_g: float = float(band_gap(T_STC))
    alpha: float = 0.0
    n_s: int = 60
    n_p: int = 1

    def __post_init__(self):
        if not (self.r_s >= 0 and self.r_p > 0 and self.i_ph > 0
                and self.i_sat > 0 and self.n_r > 0):
            raise ConfigError(f"non-physical STC parameters: {self}")
        if not self.r_p > self.r_s:
            raise ConfigError("STC parameters require r_p > r_s")


@dataclass(frozen=True)
class OperatingConditions:
    temperature: float
    irradiance: float

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive (kelvin)")
        if not self.irradiance > 0:
            raise RejectedSampleError("irradiance must be positive")


@dataclass(frozen=True)
class TranslatedParameters:
    """Cell-level parameters valid at one (T, S) operating condition."""

    r_s: float
    r_p: float
    i_ph: float
    i_sat: float
    n_r: float
    e_g: float
    temperature: float
    irradiance: float
    n_s: int = 60
    n_p: int = 1

    def lumped(self, n_s=None, n_p=None):
        """Return ``(i_l, i_0, r_s, r_p, a)`` for an ``n_s`` x ``n_p`` panel.

        ``a`` is the modified ideality voltage ``n_r k T n_s / q``.
        """
        n_s = self.n_s if n_s is None else n_s
        n_p = self.n_p if n_p is None else n_p
        ratio = n_s / n_p
        a = self.n_r * K_BOLTZMANN * self.temperature * n_s / Q_ELECTRON
        return (self.i_ph * n_p, self.i_sat * n_p, self.r_s * ratio,
                self.r_p * ratio, a)


@dataclass(frozen=True)
class PlantTopology:
    modules_per_string: int = 14
    strings_per_converter: int = 2
    converter_count: int = 2
    rated_power_w: float | None = None

    def __post_init__(self):
        if min(self.modules_per_string, self.strings_per_converter,
               self.converter_count) < 1:
            raise ConfigError("all topology counts must be >= 1")

    @property
    def modules_per_converter(self):
        return self.modules_per_string * self.strings_per_converter

    @property
    def module_count(self):
        return self.modules_per_converter * self.converter_count

    def check_rating(self, datasheet, rel_tol=0.01):
        """Raise if module count x STC power misses the declared rating."""
        if self.rated_power_w is None:
            return
        total = self.module_count * datasheet.p_mp_stc
        if abs(total - self.rated_power_w) > rel_tol * self.rated_power_w:
            raise ConfigError(
                f"{self.module_count} modules x {datasheet.p_mp_stc:.1f} W = "
                f"{total:.0f} W does not match rating {self.rated_power_w:.0f} W")


@dataclass(frozen=True)
class IVCurve:
    voltage: np.ndarray
    current: np.ndarray

    @property
    def power(self):
        return self.voltage * self.current


# ---------------------------------------------------------------------------
# Translation and the diode equation


def translate_parameters(stc, cond, s_min=S_MIN):
    """Parameters at arbitrary (T, S) from their STC values."""
    if cond.irradiance <= s_min:
        raise RejectedSampleError(
            f"irradiance {cond.irradiance:g} W/m^2 is below S_min={s_min:g}")
    t, s = cond.temperature, cond.irradiance
    e_g = float(band_gap(t))
    i_sat = stc.i_sat * (t / T_STC) ** 3 * math.exp(
        stc.e_g / (K_EV * T_STC) - e_g / (K_EV * t))
    return TranslatedParameters(
        r_s=stc.r_s,
        r_p=stc.r_p * S_STC / s,
        i_ph=(stc.i_ph + stc.alpha * (t - T_STC)) * s / S_STC,
        i_sat=i_sat,
        n_r=stc.n_r,
        e_g=e_g,
        temperature=t,
        irradiance=s,
        n_s=stc.n_s,
        n_p=stc.n_p,
    )


def _checked_exp(x, max_exponent):
    if np.any(np.asarray(x) > max_exponent):
        raise ExponentOverflowError(
            f"diode exponent {np.max(x):.1f} exceeds bound {max_exponent:g}")
    return np.exp(x)


def diode_residual(v, i, params, n_s=None, n_p=None, max_exponent=MAX_EXPONENT):
    """Residual of the single-diode equation, in amperes."""
    i_l, i_0, r_s, r_p, a = params.lumped(n_s, n_p)
    v = np.asarray(v, dtype=float)
    i = np.asarray(i, dtype=float)
    u = v + r_s * i
    return i_l - u / r_p - i - i_0 * (_checked_exp(u / a, max_exponent) - 1.0)


def _residual_and_slope(v, i, lumped):
    i_l, i_0, r_s, r_p, a = lumped
    u = v + r_s * i
    ex = math.exp(min(u / a, MAX_EXPONENT))
    f = i_l - u / r_p - i - i_0 * (ex - 1.0)
    df_di = -r_s / r_p - 1.0 - i_0 * r_s / a * ex
    return f, df_di


def _bracketed_current(v, lumped, tol=1e-12, maxiter=200):
    """Safeguarded Newton on i with a bisection fallback."""
    i_l, i_0, r_s, r_p, a = lumped
    hi = i_l + i_0
    lo = min(0.0, hi - 1.0)
    step = max(1.0, abs(hi))
    for _ in range(200):
        if _residual_and_slope(v, lo, lumped)[0] > 0:
            break
        lo -= step
        step *= 2.0
    else:
        raise SolverError(f"cannot bracket current at v={v:g}")
    x = 0.5 * (lo + hi)
    for _ in range(maxiter):
        f, df = _residual_and_slope(v, x, lumped)
        if abs(f) < tol:
            return x
        if f > 0:
            lo = x
        else:
            hi = x
        newton = x - f / df
        x = newton if lo < newton < hi else 0.5 * (lo + hi)
        if hi - lo < tol * max(1.0, abs(x)):
            return x
    raise SolverError(f"current solve did not converge at v={v:g}")


def solve_current(v, params, n_s=None, n_p=None, tol=1e-10):
    """Current at terminal voltage ``v`` (scalar or array).

    Uses the explicit Lambert-W solution, evaluated through the Wright
    omega function so that large arguments cannot overflow. Any element
    whose residual exceeds ``tol`` is re-solved numerically.
    """
    lumped = params.lumped(n_s, n_p)
    i_l, i_0, r_s, r_p, a = lumped
    v_arr = np.asarray(v, dtype=float)
    with np.errstate(all="ignore"):
        if r_s == 0.0:
            cur = i_l - v_arr / r_p - i_0 * np.expm1(v_arr / a)
        else:
            theta = (math.log(i_0 * r_s * r_p / (a * (r_s + r_p)))
                     + r_p * (r_s * (i_l + i_0) + v_arr) / (a * (r_s + r_p)))
            cur = (r_p * (i_l + i_0) - v_arr) / (r_s + r_p) \
                - (a / r_s) * wrightomega(theta)
    cur = np.atleast_1d(np.array(cur, dtype=float))
    flat_v = np.atleast_1d(v_arr)
    for k in range(cur.size):
        bad = not np.isfinite(cur[k])
        if not bad:
            f, _ = _residual_and_slope(flat_v[k], cur[k], lumped)
            bad = abs(f) > tol
        if bad:
            cur[k] = _bracketed_current(float(flat_v[k]), lumped)
    return cur.reshape(v_arr.shape) if v_arr.ndim else float(cur[0])


def solve_voltage(i, params, n_s=None, n_p=None):
    """Terminal voltage at current ``i`` (explicit Lambert-W form)."""
    i_l, i_0, r_s, r_p, a = params.lumped(n_s, n_p)
    i_arr = np.asarray(i, dtype=float)
    w = wrightomega(math.log(i_0 * r_p / a) + r_p * (i_l + i_0 - i_arr) / a)
    v = (i_l + i_0 - i_arr) * r_p - i_arr * r_s - a * w
    return v if i_arr.ndim else float(v)


def model_open_circuit_voltage(params, n_s=None, n_p=None):
    """Exact open-circuit voltage of the translated model."""
    return solve_voltage(0.0, params, n_s, n_p)


def solve_temperature(v, i, irradiance, stc, n_s=None, n_p=None,
                      bracket=(150.0, 500.0), tol=1e-10, scan_points=71):
    """Cell temperature at which (v, i) lies on the curve for ``irradiance``.

    The residual is not monotone in T (the light current grows with T
    until the diode term takes over), so the bracket is scanned and the
    highest sign change, where the diode term dominates, is refined.
    """
    def g(t):
        p = translate_parameters(stc, OperatingConditions(t, irradiance))
        try:
            return float(diode_residual(v, i, p, n_s, n_p))
        except ExponentOverflowError:
            return -np.inf

    grid = np.linspace(bracket[0], bracket[1], scan_points)
    vals = np.array([g(t) for t in grid])
    change = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]
    if change.size == 0:
        raise SolverError(f"temperature solve failed: no root in {bracket}")
    k = change[-1]
    if vals[k] == 0:
        return float(grid[k])
    hi = grid[k + 1]
    if not np.isfinite(vals[k + 1]):
        hi = grid[k] + (grid[k + 1] - grid[k]) * 0.999
        while not np.isfinite(g(hi)):
            hi = 0.5 * (grid[k] + hi)
    return float(brentq(g, grid[k], hi, xtol=tol, rtol=4 * np.finfo(float).eps))


def iv_curve(params, points=200, n_s=None, n_p=None):
    """Sampled i-v characteristic from short circuit to open circuit."""
    v_oc = model_open_circuit_voltage(params, n_s, n_p)
    v = np.linspace(0.0, v_oc, points)
    i = solve_current(v, params, n_s, n_p)
    i[-1] = 0.0
    return IVCurve(v, i)


def open_circuit_voltage(stc, datasheet, temperature, irradiance):
    """Datasheet-based open-circuit voltage at (T, S) of one panel."""
    if irradiance <= 0:
        raise RejectedSampleError("irradiance must be positive")
    v_t = thermal_voltage(temperature)
    return (datasheet.v_oc_stc * (1.0 + datasheet.beta * (temperature - T_STC))
            + v_t * stc.n_r * datasheet.n_s * math.log(irradiance / S_STC))


# ---------------------------------------------------------------------------
# Maximum power


def max_power_point(params, v_upper, grid_points=1000, n_s=None, n_p=None,
                    rtol=1e-6):
    """Locate the maximum of v*i on [0, v_upper].

    A uniform grid picks the best sample; golden-section search then refines
    inside its two neighbouring cells. Returns ``(v, i, p)``.
    """
    if grid_points < 3:
        raise ValueError("grid_points must be >= 3")
    v = np.linspace(0.0, v_upper, grid_points)
    p = v * solve_current(v, params, n_s, n_p)
    j = int(np.argmax(p))
    lo, hi = v[max(j - 1, 0)], v[min(j + 1, grid_points - 1)]

    def power(x):
        return x * solve_current(x, params, n_s, n_p)

    # refine until the bracket is far below the power tolerance
    xtol = rtol * 1e-3 * max(v_upper, 1.0)
    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    pc, pd = power(c), power(d)
    while hi - lo > xtol:
        if pc > pd:
            hi, d, pd = d, c, pc
            c = hi - _GOLDEN * (hi - lo)
            pc = power(c)
        else:
            lo, c, pc = c, d, pd
            d = lo + _GOLDEN * (hi - lo)
            pd = power(d)
    v_best = 0.5 * (lo + hi)
    i_best = solve_current(v_best, params, n_s, n_p)
    return v_best, i_best, v_best * i_best


def module_max_power(stc, datasheet, temperature, irradiance, grid_points=1000):
    params = translate_parameters(stc, OperatingConditions(temperature, irradiance))
    v_oc = open_circuit_voltage(stc, datasheet, temperature, irradiance)
    return max_power_point(params, v_oc, grid_points)[2]


def max_power(stc, datasheet, topology, temperature, irradiance, grid_points=1000):
    """Plant maximum DC power: module maximum times the module count."""
    if grid_points < 100:
        raise ValueError("grid_points must be >= 100")
    return topology.module_count * module_max_power(
        stc, datasheet, temperature, irradiance, grid_points)


# ---------------------------------------------------------------------------
# Batch evaluation
#
# Same equations as above, broadcast over arrays of operating conditions.
# Used by the simulator and the evaluation harness where one call covers a
# whole day of samples.


def lumped_batch(stc, temperature, irradiance, n_s=None, n_p=None):
    """Lumped ``(i_l, i_0, r_s, r_p, a)`` arrays for arrays of (T, S)."""
    t = np.asarray(temperature, dtype=float)
    s = np.asarray(irradiance, dtype=float)
    n_s = stc.n_s if n_s is None else n_s
    n_p = stc.n_p if n_p is None else n_p
    ratio = n_s / n_p
    e_g = band_gap(t)
    i_sat = stc.i_sat * (t / T_STC) ** 3 * np.exp(
        stc.e_g / (K_EV * T_STC) - e_g / (K_EV * t))
    i_l = (stc.i_ph + stc.alpha * (t - T_STC)) * s / S_STC * n_p
    r_p = stc.r_p * S_STC / s * ratio
    a = stc.n_r * K_BOLTZMANN * t * n_s / Q_ELECTRON
    r_s = np.full_like(i_l, stc.r_s * ratio)
    return np.broadcast_arrays(i_l, i_sat * n_p, r_s, r_p, a)


def current_batch(v, lumped, tol=1e-10):
    """Vectorized Lambert-W current with per-element numeric fallback."""
    v, i_l, i_0, r_s, r_p, a = np.broadcast_arrays(
        np.asarray(v, dtype=float), *lumped)
    with np.errstate(all="ignore"):
        theta = (np.log(i_0 * r_s * r_p / (a * (r_s + r_p)))
                 + r_p * (r_s * (i_l + i_0) + v) / (a * (r_s + r_p)))
        cur = (r_p * (i_l + i_0) - v) / (r_s + r_p) - (a / r_s) * wrightomega(theta)
        u = v + r_s * cur
        res = i_l - u / r_p - cur - i_0 * np.expm1(np.minimum(u / a, MAX_EXPONENT))
    bad = ~np.isfinite(cur) | ~(np.abs(res) <= tol) | (r_s == 0)
    if np.any(bad):
        cur = np.array(cur, dtype=float)
        for idx in zip(*np.nonzero(bad)):
            lp = tuple(float(x[idx]) for x in (i_l, i_0, r_s, r_p, a))
            cur[idx] = _bracketed_current(float(v[idx]), lp)
    return cur


def voltage_batch(i, lumped):
    i_l, i_0, r_s, r_p, a = lumped
    w = wrightomega(np.log(i_0 * r_p / a) + r_p * (i_l + i_0 - i) / a)
    return (i_l + i_0 - i) * r_p - i * r_s - a * w


def mpp_batch(lumped, v_upper, grid_points=64, rtol=1e-6):
    """Vectorized maximum power point ``(v, i, p)`` on [0, v_upper].

    Coarse uniform grid, then golden-section refinement per element.
    """
    i_l = lumped[0]
    shape = np.shape(i_l)
    v_upper = np.broadcast_to(np.asarray(v_upper, dtype=float), shape)
    frac = np.linspace(0.0, 1.0, grid_points)
    grid = v_upper[..., None] * frac
    lp_grid = tuple(np.asarray(x)[..., None] for x in lumped)
    p_grid = grid * current_batch(grid, lp_grid)
    j = np.argmax(p_grid, axis=-1)
    step = v_upper / (grid_points - 1)
    lo = np.maximum(j - 1, 0) * step
    hi = np.minimum(j + 1, grid_points - 1) * step

    def power(x):
        return x * current_batch(x, lumped)

    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    pc, pd = power(c), power(d)
    xtol = rtol * 1e-3 * np.maximum(v_upper, 1.0)
    while np.any(hi - lo > xtol):
        left = pc > pd
        hi = np.where(left, d, hi)
        lo = np.where(left, lo, c)
        new_c = hi - _GOLDEN * (hi - lo)
        new_d = lo + _GOLDEN * (hi - lo)
        c_next = np.where(left, new_c, d)
        d_next = np.where(left, c, new_d)
        p_new = power(np.where(left, new_c, new_d))
        pc, pd = np.where(left, p_new, pd), np.where(left, pc, p_new)
        c, d = c_next, d_next
    v = 0.5 * (lo + hi)
    i = current_batch(v, lumped)
    return v, i, v * i


def open_circuit_voltage_batch(stc, datasheet, temperature, irradiance):
    t = np.asarray(temperature, dtype=float)
    s = np.asarray(irradiance, dtype=float)
    return (datasheet.v_oc_stc * (1.0 + datasheet.beta * (t - T_STC))
            + thermal_voltage(t) * stc.n_r * datasheet.n_s * np.log(s / S_STC))


def max_power_batch(stc, datasheet, topology, temperature, irradiance,
                    grid_points=64):
    """Plant maximum power for arrays of (T, S); NaN where S <= S_MIN."""
    t = np.asarray(temperature, dtype=float)
    s = np.asarray(irradiance, dtype=float)
    t, s = np.broadcast_arrays(t, s)
    out = np.full(t.shape, np.nan)
    ok = np.isfinite(s) & np.isfinite(t) & (s > S_MIN) & (t > 0)
    if np.any(ok):
        lumped = lumped_batch(stc, t[ok], s[ok])
        v_oc = open_circuit_voltage_batch(stc, datasheet, t[ok], s[ok])
        out[ok] = mpp_batch(lumped, v_oc, grid_points)[2] * topology.module_count
    return out


# ---------------------------------------------------------------------------
# STC identification


def _stc_system(x, ds):
    """Normalized residuals of the five identification conditions.

    ``x`` = (n_r, ln R_s, ln R_p, I_L, ln I_0) at panel level.
    """
    n_r, ln_rs, ln_rp, i_l, ln_i0 = x
    r_s, r_p, i_0 = math.exp(ln_rs), math.exp(ln_rp), math.exp(ln_i0)
    a = n_r * K_BOLTZMANN * T_STC * ds.n_s / Q_ELECTRON
    if not a > 0:
        return np.full(5, np.inf)

    def f(v, i):
        u = v + r_s * i
        return i_l - u / r_p - i - i_0 * math.expm1(min(u / a, MAX_EXPONENT))

    def slope(v, i):
        ex = math.exp(min((v + r_s * i) / a, MAX_EXPONENT))
        f_v = -1.0 / r_p - i_0 / a * ex
        f_i = -r_s / r_p - 1.0 - i_0 * r_s / a * ex
        return -f_v / f_i

    isc, imp, vmp = ds.i_sc_stc, ds.i_mp_stc, ds.v_mp_stc
    return np.array([
        f(ds.v_oc_stc, 0.0) / isc,
        f(0.0, isc) / isc,
        f(vmp, imp) / isc,
        (imp + vmp * slope(vmp, imp)) / imp,
        slope(0.0, isc) * r_p + 1.0,
    ])


def stc_residuals(stc, datasheet):
    """Relative residuals of the identification conditions for ``stc``."""
    ratio = stc.n_s / stc.n_p
    x = np.array([stc.n_r, math.log(stc.r_s * ratio), math.log(stc.r_p * ratio),
                  stc.i_ph * stc.n_p, math.log(stc.i_sat * stc.n_p)])
    return _stc_system(x, datasheet)


def _initial_guess(ds):
    n_r = 1.2
    a = n_r * K_BOLTZMANN * T_STC * ds.n_s / Q_ELECTRON
    r_s = 0.1 * (ds.v_oc_stc - ds.v_mp_stc) / ds.i_mp_stc
    r_p = 10.0 * ds.v_mp_stc / (ds.i_sc_stc - ds.i_mp_stc)
    i_0 = ds.i_sc_stc / math.expm1(ds.v_oc_stc / a)
    return np.array([n_r, math.log(r_s), math.log(r_p), ds.i_sc_stc, math.log(i_0)])


def extract_stc_parameters(datasheet, initial_guess=None, tol=1e-9,
                           max_iter=100):
    """Identify the STC parameters from datasheet values.

    Solves the open-circuit, short-circuit and maximum-power point
    conditions together with dP/dv = 0 at the maximum-power point and the
    short-circuit slope condition di/dv = -1/R_p, by damped Newton
    iteration on log-transformed resistances and saturation current.
    """
    ds = datasheet
    if initial_guess is None:
        x = _initial_guess(ds)
    else:
        g = initial_guess
        ratio = ds.n_s / ds.n_p
        x = np.array([g.n_r, math.log(max(g.r_s, 1e-12) * ratio),
                      math.log(g.r_p * ratio), g.i_ph * ds.n_p,
                      math.log(g.i_sat * ds.n_p)])
    r = _stc_system(x, ds)
    norm = np.linalg.norm(r)
    for _ in range(max_iter):
        if np.max(np.abs(r)) < tol * 1e-2:
            break
        jac = np.empty((5, 5))
        for k in range(5):
            h = 1e-7 * max(1.0, abs(x[k]))
            xp, xm = x.copy(), x.copy()
            xp[k] += h
            xm[k] -= h
            jac[:, k] = (_stc_system(xp, ds) - _stc_system(xm, ds)) / (2 * h)
        try:
            dx = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(jac, -r, rcond=None)[0]
        lam = 1.0
        while lam > 1e-6:
            x_new = x + lam * dx
            r_new = _stc_system(x_new, ds)
            if np.all(np.isfinite(r_new)) and np.linalg.norm(r_new) < norm:
                break
            lam *= 0.5
        else:
            break
        x, r, norm = x_new, r_new, np.linalg.norm(r_new)
    if not np.max(np.abs(r)) < tol:
        raise IdentificationError(
            f"STC identification failed, residuals {r}", residuals=r)
    n_r, ln_rs, ln_rp, i_l, ln_i0 = x
    ratio = ds.n_s / ds.n_p
    return StcParameters(
        r_s=math.exp(ln_rs) / ratio,
        r_p=math.exp(ln_rp) / ratio,
        i_ph=float(i_l) / ds.n_p,
        i_sat=math.exp(ln_i0) / ds.n_p,
        n_r=float(n_r),
        e_g=float(band_gap(T_STC)),
        alpha=ds.alpha / ds.n_p,
        n_s=ds.n_s,
        n_p=ds.n_p,
    )


# ---------------------------------------------------------------------------
# Plant context


@dataclass(frozen=True)
class PlantModel:
    """Panel parameters plus topology: what every estimator needs.

    Measurements refer to one converter, i.e. ``strings_per_converter``
    parallel strings of ``modules_per_string`` modules.
    """

    stc: StcParameters
    datasheet: PanelDatasheet
    topology: PlantTopology = field(default_factory=PlantTopology)
    grid_points: int = 1000

    @classmethod
    def from_datasheet(cls, datasheet, topology=None, **kw):
        return cls(extract_stc_parameters(datasheet), datasheet,
                   topology or PlantTopology(), **kw)

    @property
    def array_n_s(self):
        return self.stc.n_s * self.topology.modules_per_string

    @property
    def array_n_p(self):
        return self.stc.n_p * self.topology.strings_per_converter

    def translate(self, temperature, irradiance):
        return translate_parameters(
            self.stc, OperatingConditions(temperature, irradiance))

    def array_current(self, v, temperature, irradiance):
        return solve_current(v, self.translate(temperature, irradiance),
                             self.array_n_s, self.array_n_p)

    def array_residual(self, v, i, temperature, irradiance):
        return diode_residual(v, i, self.translate(temperature, irradiance),
                              self.array_n_s, self.array_n_p)

    def array_mpp(self, temperature, irradiance):
        """Converter-level maximum power point ``(v, i, p)``."""
        params = self.translate(temperature, irradiance)
        v_oc = open_circuit_voltage(self.stc, self.datasheet, temperature, irradiance)
        v_oc = max(v_oc, model_open_circuit_voltage(params))
        v, i, p = max_power_point(params, v_oc, self.grid_points)
        m, s = self.topology.modules_per_string, self.topology.strings_per_converter
        return v * m, i * s, p * m * s

    def plant_max_power(self, temperature, irradiance):
        return max_power(self.stc, self.datasheet, self.topology, temperature,
                         irradiance, self.grid_points)

    def plant_max_power_batch(self, temperature, irradiance):
        return max_power_batch(self.stc, self.datasheet, self.topology,
                               temperature, irradiance)

    def with_topology(self, topology):
        return replace(self, topology=topology)
