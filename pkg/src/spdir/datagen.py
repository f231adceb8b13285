"""Synthetic scenario data from the continuous 2R2C truth model.

The truth model is simulated exactly for a given input reconstruction:
"foh" treats every input as linear between samples, "zoh" holds it constant.
Both use the matrix exponential of an augmented system.
"""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import expm

from .errors import DomainError, ParseError
from .rc_model import (DEFAULT_PRESET, DEFAULT_TS, PRESETS, ContinuousStateSpace, RcParams,
                       build_state_space)

log = logging.getLogger(__name__)

SCENARIOS = ("OL-PW", "OL-NPW", "CL-PW", "CL-NPW")
CSV_COLUMNS = ("k", "qhvac_kW", "Toa_C", "etasol_kWm2", "Tz_C")
CSV_OPTIONAL = ("qint_kW", "Tref_C")


@dataclass(frozen=True, eq=False)
class TimeSeriesDataset:
    t_s: float
    u1: np.ndarray
    u2: np.ndarray
    u3: np.ndarray
    y: np.ndarray
    w: np.ndarray | None = None
    setpoint: np.ndarray | None = None

    def __post_init__(self):
        if not self.t_s > 0:
            raise DomainError(f"t_s must be positive, got {self.t_s!r}")
        n = None
        for name in ("u1", "u2", "u3", "y", "w", "setpoint"):
            v = getattr(self, name)
            if v is None:
                continue
            a = np.array(v, dtype=float).reshape(-1)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
            if n is None:
                n = a.size
            elif a.size != n:
                raise DomainError(f"series {name} has length {a.size}, expected {n}")
        if n < 3:
            raise DomainError(f"need at least 3 samples, got {n}")

    @property
    def k_max(self) -> int:
        return self.y.size

    @property
    def u(self) -> np.ndarray:
        """3 x k_max input array."""
        return np.vstack([self.u1, self.u2, self.u3])

    def equals(self, other: "TimeSeriesDataset", rtol: float = 0.0) -> bool:
        if not math.isclose(self.t_s, other.t_s, rel_tol=max(rtol, 1e-15)):
            return False
        for name in ("u1", "u2", "u3", "y", "w", "setpoint"):
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and not np.allclose(a, b, rtol=rtol, atol=0.0):
                return False
        return True


@dataclass(frozen=True)
class PiConfig:
    kp: float = 5.0
    ki: float = 2.0
    u_min: float = -50.0
    u_max: float = 0.0

    def __post_init__(self):
        if self.u_min > self.u_max:
            raise DomainError(f"u_min={self.u_min} exceeds u_max={self.u_max}")


@dataclass(frozen=True)
class DisturbanceProfile:
    """Weekday occupancy schedule of internal gains.

    segments: (start_hour, end_hour, level_kW) blocks within a day.
    jitter_h / level_jitter: per-day random shift of block edges (hours) and
    relative level perturbation, both drawn from the seed. Zero by default.
    """
    kind: str = "piecewise"
    segments: tuple = ((8.0, 12.0, 0.8), (12.0, 13.0, 0.48), (13.0, 18.0, 1.0))
    w_u: float = 1.0
    weekdays_only: bool = True
    smoothing_sigma: float = 8.0
    jitter_h: float = 0.0
    level_jitter: float = 0.0

    def __post_init__(self):
        if self.kind not in ("piecewise", "smooth"):
            raise DomainError(f"unknown disturbance kind {self.kind!r}")
        if not self.w_u >= 0:
            raise DomainError("w_u must be non-negative")


@dataclass(frozen=True)
class OpenLoopInput:
    """q_hvac = -(base + schedule * occupied + prbs_amp * prbs), prbs in {0, 1}."""
    base: float = 1.0
    schedule: float = 6.0
    prbs_amp: float = 4.0
    hours: tuple = (7.0, 19.0)


@dataclass(frozen=True)
class WeatherConfig:
    mean: float = 28.0
    amplitude: float = 4.0
    peak_hour: float = 15.0
    ar_phi: float = 0.9
    ar_sigma: float = 0.5
    solar_peak: float = 0.8
    sunrise: float = 6.0
    cloud_prob: float = 0.3


# ---------------------------------------------------------------- signals

def _lfsr10(state: int, n_bits: int) -> np.ndarray:
    # Fibonacci LFSR for x^10 + x^7 + 1, period 1023
    bits = np.empty(n_bits, dtype=np.int8)
    for i in range(n_bits):
        bits[i] = state & 1
        fb = (state ^ (state >> 3)) & 1
        state = (state >> 1) | (fb << 9)
    return bits


def generate_prbs(low: float, high: float, bit_period: int, n: int, seed: int = 0) -> np.ndarray:
    if not low < high:
        raise DomainError(f"low={low} must be below high={high}")
    if int(bit_period) != bit_period or bit_period < 1:
        raise DomainError(f"bit_period must be a positive integer, got {bit_period!r}")
    if n < 1:
        raise DomainError(f"n must be positive, got {n}")
    state = 1 + int(seed) % 1023
    n_bits = -(-n // int(bit_period))
    bits = _lfsr10(state, n_bits)
    return np.where(np.repeat(bits, int(bit_period))[:n] == 1, float(high), float(low))


def _hours(n: int, t_s: float) -> tuple[np.ndarray, np.ndarray]:
    t = np.round(np.arange(n) * t_s, 9)
    return t % 24.0, (t // 24.0).astype(int)


def synth_weather(n: int, t_s: float = DEFAULT_TS, seed: int = 0,
                  cfg: WeatherConfig = WeatherConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Outdoor temperature (degC) and solar irradiance (kW/m^2)."""
    rng = np.random.default_rng(seed)
    t = np.arange(n) * t_s
    ar = np.zeros(n)
    noise = rng.standard_normal(n)
    for k in range(1, n):
        ar[k] = cfg.ar_phi * ar[k - 1] + cfg.ar_sigma * noise[k]
    toa = cfg.mean + cfg.amplitude * np.sin(2 * np.pi * (t - cfg.peak_hour + 6) / 24) + ar
    cloud = np.ones(n)
    k = 0
    while k < n:
        length = int(rng.integers(3, 24))
        if rng.random() < cfg.cloud_prob:
            cloud[k:k + length] = rng.uniform(0.2, 0.7)
        k += length
    eta = cfg.solar_peak * np.maximum(0.0, np.sin(2 * np.pi * (t - cfg.sunrise) / 24)) * cloud
    return toa, eta


def occupancy(n: int, t_s: float, hours: tuple = (7.0, 19.0)) -> np.ndarray:
    """1 during weekday hours in [start, end), else 0."""
    hour, day = _hours(n, t_s)
    return ((hour >= hours[0]) & (hour < hours[1]) & (day % 7 < 5)).astype(float)


def make_disturbance(profile: DisturbanceProfile, n: int, t_s: float = DEFAULT_TS,
                     seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    hour, day = _hours(n, t_s)
    w = np.zeros(n)
    for d in range(int(day[-1]) + 1):
        if profile.weekdays_only and d % 7 >= 5:
            continue
        mask = day == d
        for start, end, level in profile.segments:
            if profile.jitter_h:
                start += rng.uniform(-profile.jitter_h, profile.jitter_h)
                end += rng.uniform(-profile.jitter_h, profile.jitter_h)
            if profile.level_jitter:
                level *= 1 + rng.uniform(-profile.level_jitter, profile.level_jitter)
            seg = mask & (hour >= start) & (hour < end)
            w[seg] = level
    if profile.kind == "smooth":
        half = int(math.ceil(3 * profile.smoothing_sigma))
        ker = np.exp(-0.5 * (np.arange(-half, half + 1) / profile.smoothing_sigma) ** 2)
        w = np.convolve(w, ker / ker.sum(), mode="same")
    return np.clip(w, -profile.w_u, profile.w_u)


# ---------------------------------------------------------------- simulation

def discretize(ss: ContinuousStateSpace, t_s: float, hold: str = "foh"):
    """Exact discretization x[k+1] = Ad x[k] + B0 v[k] + B1 v[k+1].

    v = (q_hvac, T_oa, eta_sol, q_int). For "zoh", B1 = 0.
    """
    if not t_s > 0:
        raise DomainError(f"t_s must be positive, got {t_s!r}")
    B = ss.inputs
    nx, nv = B.shape
    if hold == "zoh":
        M = np.zeros((nx + nv, nx + nv))
        M[:nx, :nx] = ss.F
        M[:nx, nx:] = B
        E = expm(M * t_s)
        return E[:nx, :nx], E[:nx, nx:], np.zeros((nx, nv))
    if hold == "foh":
        M = np.zeros((nx + 2 * nv, nx + 2 * nv))
        M[:nx, :nx] = ss.F
        M[:nx, nx:nx + nv] = B
        M[nx:nx + nv, nx + nv:] = np.eye(nv) / t_s
        E = expm(M * t_s)
        B1 = E[:nx, nx + nv:]
        return E[:nx, :nx], E[:nx, nx:nx + nv] - B1, B1
    raise DomainError(f"unknown hold {hold!r}, expected 'foh' or 'zoh'")


def _check_len(n, **series):
    for name, s in series.items():
        if s.shape[-1] != n:
            raise DomainError(f"{name} has length {s.shape[-1]}, expected {n}")


def simulate_open_loop(ss: ContinuousStateSpace, u, w, t_s: float, x0, hold: str = "foh",
                       return_states: bool = False):
    u = np.asarray(u, dtype=float)
    if u.ndim != 2 or u.shape[0] != 3:
        raise DomainError(f"u must be 3 x k_max, got shape {u.shape}")
    n = u.shape[1]
    w = np.asarray(w, dtype=float).reshape(-1)
    _check_len(n, w=w)
    Ad, B0, B1 = discretize(ss, t_s, hold)
    V = np.vstack([u, w])
    X = np.empty((n, 2))
    X[0] = np.asarray(x0, dtype=float)
    drive = (B0 @ V[:, :-1] + B1 @ V[:, 1:]).T
    for k in range(n - 1):
        X[k + 1] = Ad @ X[k] + drive[k]
    y = X @ ss.J.ravel()
    ds = TimeSeriesDataset(t_s, u[0], u[1], u[2], y, w=w)
    return (ds, X) if return_states else ds


def simulate_closed_loop(ss: ContinuousStateSpace, u2, u3, w, setpoint, pi: PiConfig,
                         t_s: float, x0, hold: str = "foh", return_states: bool = False):
    """PI loop q[k] = clamp(kp e[k] + ki I[k]); I += e t_s only when unsaturated.

    With "foh", x[k] depends on q[k] through B1, so the control law and the
    state update are solved jointly (the law is affine before clamping).
    """
    u2, u3, w, ref = (np.asarray(a, dtype=float).reshape(-1) for a in (u2, u3, w, setpoint))
    n = u2.size
    _check_len(n, u3=u3, w=w, setpoint=ref)
    Ad, B0, B1 = discretize(ss, t_s, hold)
    c = ss.J.ravel()
    V = np.vstack([np.zeros(n), u2, u3, w])
    X = np.empty((n, 2))
    q = np.empty(n)
    integ = 0.0
    xpre = np.asarray(x0, dtype=float).copy()
    b1q = B1[:, 0]
    for k in range(n):
        gain = 0.0 if k == 0 else c @ b1q
        a = pi.kp * (ref[k] - c @ xpre) + pi.ki * integ
        q_raw = a / (1.0 + pi.kp * gain)
        q[k] = min(pi.u_max, max(pi.u_min, q_raw))
        X[k] = xpre + (b1q * q[k] if k > 0 else 0.0)
        if q[k] == q_raw:
            integ += (ref[k] - c @ X[k]) * t_s
        if k < n - 1:
            v0 = V[:, k].copy()
            v0[0] = q[k]
            xpre = Ad @ X[k] + B0 @ v0 + B1 @ V[:, k + 1]
    y = X @ c
    ds = TimeSeriesDataset(t_s, q, u2, u3, y, w=w, setpoint=ref)
    return (ds, X) if return_states else ds


# ---------------------------------------------------------------- scenarios

@dataclass(frozen=True)
class ScenarioSettings:
    """Everything needed to generate one scenario deterministically."""
    scenario: str = "OL-PW"
    params: RcParams = PRESETS[DEFAULT_PRESET]
    t_s: float = DEFAULT_TS
    horizon: int = 2016
    seed: int = 0
    hold: str = "foh"
    x0: tuple = (25.0, 25.5)
    pi: PiConfig = PiConfig()
    prbs_low: float = 22.0
    prbs_high: float = 27.0
    prbs_bit_period: int = 6
    disturbance: DisturbanceProfile = DisturbanceProfile()
    open_loop: OpenLoopInput = OpenLoopInput()
    weather: WeatherConfig = WeatherConfig()

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise DomainError(f"unknown scenario {self.scenario!r}, expected one of {SCENARIOS}")

    @property
    def closed_loop(self) -> bool:
        return self.scenario.startswith("CL")

    @property
    def profile(self) -> DisturbanceProfile:
        kind = "piecewise" if self.scenario.endswith("-PW") else "smooth"
        return replace(self.disturbance, kind=kind)


def _one_run(cfg: ScenarioSettings, ss, w, weather_seed: int, prbs_seed: int) -> TimeSeriesDataset:
    n = cfg.horizon
    toa, eta = synth_weather(n, cfg.t_s, weather_seed, cfg.weather)
    if cfg.closed_loop:
        ref = generate_prbs(cfg.prbs_low, cfg.prbs_high, cfg.prbs_bit_period, n, prbs_seed)
        return simulate_closed_loop(ss, toa, eta, w, ref, cfg.pi, cfg.t_s, cfg.x0, cfg.hold)
    ol = cfg.open_loop
    bits = generate_prbs(0.0, 1.0, cfg.prbs_bit_period, n, prbs_seed)
    q = -(ol.base + ol.schedule * occupancy(n, cfg.t_s, ol.hours) + ol.prbs_amp * bits)
    return simulate_open_loop(ss, np.vstack([q, toa, eta]), w, cfg.t_s, cfg.x0, cfg.hold)


def make_scenario(cfg: ScenarioSettings) -> tuple[TimeSeriesDataset, TimeSeriesDataset]:
    """Training and validation weeks. Both share the disturbance series;
    weather and excitation come from different seeds."""
    ss = build_state_space(cfg.params)
    w = make_disturbance(cfg.profile, cfg.horizon, cfg.t_s, cfg.seed)
    train = _one_run(cfg, ss, w, weather_seed=cfg.seed, prbs_seed=2 * cfg.seed + 122)
    valid = _one_run(cfg, ss, w, weather_seed=cfg.seed + 1, prbs_seed=2 * cfg.seed + 320)
    return train, valid


# ---------------------------------------------------------------- CSV

def write_csv(d: TimeSeriesDataset, path) -> None:
    cols = list(CSV_COLUMNS)
    series = [d.u1, d.u2, d.u3, d.y]
    if d.w is not None:
        cols.append("qint_kW")
        series.append(d.w)
    if d.setpoint is not None:
        cols.append("Tref_C")
        series.append(d.setpoint)
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as f:
        wr = csv.writer(f)
        wr.writerow(cols)
        for k in range(d.k_max):
            wr.writerow([k + 1] + [repr(float(s[k])) for s in series])
    os.replace(tmp, path)


def load_csv(path, t_s: float = DEFAULT_TS) -> TimeSeriesDataset:
    """Read the dataset schema. The sampling period is not stored in the file."""
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ParseError("empty file", row=1)
    header = [h.strip() for h in rows[0]]
    for col in CSV_COLUMNS:
        if col not in header:
            raise ParseError(f"missing required column {col!r}", row=1, column=col)
    known = set(CSV_COLUMNS) | set(CSV_OPTIONAL)
    extras = [h for h in header if h not in known]
    if extras:
        log.warning("ignoring unknown columns %s", extras)
    wanted = [c for c in list(CSV_COLUMNS) + list(CSV_OPTIONAL) if c in header]
    idx = {c: header.index(c) for c in wanted}
    data = {c: [] for c in wanted}
    for r, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", row=r)
        for c in wanted:
            cell = row[idx[c]]
            try:
                data[c].append(float(cell))
            except ValueError:
                raise ParseError(f"non-numeric cell {cell!r}", row=r, column=c) from None
    k = np.array(data["k"])
    if k.size and not np.array_equal(k, np.arange(1, k.size + 1)):
        raise ParseError("column k must run 1, 2, ..., k_max", column="k")
    return TimeSeriesDataset(
        t_s, data["qhvac_kW"], data["Toa_C"], data["etasol_kWm2"], data["Tz_C"],
        w=data["qint_kW"] if "qint_kW" in data else None,
        setpoint=data["Tref_C"] if "Tref_C" in data else None)
