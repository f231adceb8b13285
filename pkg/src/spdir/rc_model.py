"""Continuous 2R2C zone/wall model and its Tustin discretization.

Units: capacitances in kWh/degC, resistances in degC/kW, time in hours,
heat inputs in kW, solar irradiance in kW/m^2.

The discrete model is

    y[k] = th1 y[k-1] + th2 y[k-2] + sum_j (a_j u_j[k-2] + b_j u_j[k-1] + c_j u_j[k]) + wbar[k]

with (a, b, c) = (th3, th4, th5) for q_hvac, (th6, th7, th8) for T_oa and
(th9, th10, th11) for eta_sol. Index names below are 0-based.
"""
from __future__ import annotations

import json
import math
import numbers
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError, PreconditionError

N_THETA = 11
CHANNELS = ("qhvac", "Toa", "etasol")
# sign of each coefficient for a Tustin plant, +1 / -1
SIGN_PATTERN = np.array([1, -1, -1, 1, 1, 1, 1, 1, -1, 1, 1])


@dataclass(frozen=True)
class RcParams:
    Cz: float
    Cw: float
    Rz: float
    Rw: float
    Ae: float

    def __post_init__(self):
        for name in ("Cz", "Cw", "Rz", "Rw", "Ae"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, numbers.Real) or not (math.isfinite(v) and v > 0):
                raise DomainError(f"RcParams.{name} must be a positive finite number, got {v!r}")
            object.__setattr__(self, name, float(v))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "RcParams":
        missing = [k for k in ("Cz", "Cw", "Rz", "Rw", "Ae") if k not in d]
        if missing:
            raise DomainError(f"RcParams is missing keys {missing}")
        return cls(**{k: float(d[k]) for k in ("Cz", "Cw", "Rz", "Rw", "Ae")})

    @classmethod
    def from_json(cls, s: str) -> "RcParams":
        return cls.from_dict(json.loads(s))


# Named parameter sets. None of them is a calibrated building.
# "light_wall" is the scenario default; "heavy_wall" keeps a 10x slower wall.
PRESETS = {
    "light_wall": RcParams(Cz=2.0, Cw=5.0, Rz=1.0, Rw=5.0, Ae=10.0),
    "heavy_wall": RcParams(Cz=2.0, Cw=20.0, Rz=1.0, Rw=5.0, Ae=10.0),
}
DEFAULT_PRESET = "light_wall"
DEFAULT_TS = 1.0 / 12.0


@dataclass(frozen=True, eq=False)
class ContinuousStateSpace:
    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    J: np.ndarray

    @property
    def inputs(self) -> np.ndarray:
        """[G H]: 2x4 input matrix for (q_hvac, T_oa, eta_sol, q_int)."""
        return np.hstack([self.G, self.H])


@dataclass(frozen=True, eq=False)
class PlantParams:
    theta: np.ndarray

    def __post_init__(self):
        th = np.array(self.theta, dtype=float).reshape(-1)
        if th.size != N_THETA:
            raise DomainError(f"theta must have {N_THETA} entries, got {th.size}")
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)

    def numerator(self, channel: str) -> np.ndarray:
        """(a, b, c) multiplying u[k-2], u[k-1], u[k]."""
        j = channel_index(channel)
        return self.theta[2 + 3 * j: 5 + 3 * j]


@dataclass(frozen=True)
class DisturbanceCoeffs:
    beta0: float
    beta1: float
    beta2: float
    eps0: float
    gain: float | None = None  # t_s / (Cz D0), so beta = gain * (2 + eps0, 2 eps0, -2 + eps0)

    @property
    def beta(self) -> np.ndarray:
        return np.array([self.beta0, self.beta1, self.beta2])


def channel_index(channel: str) -> int:
    if channel not in CHANNELS:
        raise DomainError(f"unknown channel {channel!r}, expected one of {CHANNELS}")
    return CHANNELS.index(channel)


def build_state_space(p: RcParams) -> ContinuousStateSpace:
    Cz, Cw, Rz, Rw, Ae = p.Cz, p.Cw, p.Rz, p.Rw, p.Ae
    F = np.array([[-1 / (Cz * Rz), 1 / (Cz * Rz)],
                  [1 / (Cw * Rz), -(1 / Rw + 1 / Rz) / Cw]])
    G = np.array([[1 / Cz, 0.0, Ae / Cz],
                  [0.0, 1 / (Cw * Rw), 0.0]])
    H = np.array([[1 / Cz], [0.0]])
    J = np.array([[1.0, 0.0]])
    return ContinuousStateSpace(F, G, H, J)


def char_poly(p: RcParams) -> tuple[float, float]:
    """(d1, d2) with D(s) = s^2 + d1 s + d2."""
    d1 = 1 / (p.Cz * p.Rz) + (1 / p.Rz + 1 / p.Rw) / p.Cw
    d2 = 1 / (p.Cz * p.Cw * p.Rz * p.Rw)
    return d1, d2


def sampling_bound(p: RcParams) -> float:
    Cz, Cw, Rz, Rw = p.Cz, p.Cw, p.Rz, p.Rw
    l = 2 * Cw * Rw * Rz / (Rz + Rw)
    m = 2 * math.sqrt(Rz * Cz * Rw * Cw)
    n = 2 / 3 * min(Rz * Cz, Rz * Cw, Rw * Cw)
    return min(l, m, n)


def _check_ts(p: RcParams, t_s: float) -> None:
    bound = sampling_bound(p)
    if not (t_s > 0 and t_s < bound):
        raise PreconditionError(f"t_s={t_s!r} h must lie in (0, {bound:.6g}) for these RcParams")


def _D0(p: RcParams, t_s: float) -> float:
    d1, d2 = char_poly(p)
    return d2 * t_s**2 + 2 * d1 * t_s + 4


def tustin_plant_params(p: RcParams, t_s: float) -> PlantParams:
    _check_ts(p, t_s)
    ss = build_state_space(p)
    d1, d2 = char_poly(p)
    D0 = _D0(p, t_s)
    f12, f22 = ss.F[0, 1], ss.F[1, 1]
    g11, g13, g22 = ss.G[0, 0], ss.G[0, 2], ss.G[1, 1]
    th = np.empty(N_THETA)
    th[0] = (8 - 2 * d2 * t_s**2) / D0
    th[1] = -(d2 * t_s**2 - 2 * d1 * t_s + 4) / D0
    v = t_s / D0 * np.array([-2 - f22 * t_s, -2 * f22 * t_s, 2 - f22 * t_s])
    th[2:5] = v * g11
    th[5:8] = np.array([1.0, 2.0, 1.0]) * f12 * g22 * t_s**2 / D0
    th[8:11] = v * g13
    return PlantParams(th)


def tustin_disturbance_coeffs(p: RcParams, t_s: float) -> DisturbanceCoeffs:
    _check_ts(p, t_s)
    ss = build_state_space(p)
    D0 = _D0(p, t_s)
    e0 = -ss.F[1, 1] * t_s
    k = t_s / (p.Cz * D0)
    return DisturbanceCoeffs(k * (2 + e0), k * 2 * e0, k * (-2 + e0), e0, k)


def transform_disturbance(w, c: DisturbanceCoeffs) -> np.ndarray:
    """wbar[i] = beta0 w[i+2] + beta1 w[i+1] + beta2 w[i] (0-based, length n-2).

    With the gain known this is evaluated as
    gain * (2 (w[i+2] - w[i]) + eps0 (w[i+2] + 2 w[i+1] + w[i])), which keeps
    the small eps0 part exact when w[i+2] == w[i].
    """
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.size < 3:
        raise DomainError(f"need at least 3 samples, got {w.size}")
    if c.gain is not None:
        return c.gain * (2 * (w[2:] - w[:-2]) + c.eps0 * (w[2:] + 2 * w[1:-1] + w[:-2]))
    return c.beta0 * w[2:] + c.beta1 * w[1:-1] + c.beta2 * w[:-2]


def continuous_dc_gains(p: RcParams) -> np.ndarray:
    """Steady-state T_z change per unit input on each of the three channels."""
    ss = build_state_space(p)
    return (-ss.J @ np.linalg.solve(ss.F, ss.G)).ravel()
