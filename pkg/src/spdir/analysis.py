"""Quality metrics for an identified model: parameter errors, frequency
responses, disturbance sparsity and prediction RMS."""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .rc_model import (CHANNELS, N_THETA, PlantParams, RcParams, build_state_space, channel_index,
                       transform_disturbance, tustin_disturbance_coeffs)

TEN_WEEKS_H = 10 * 7 * 24.0
BODE_COLUMNS = ("omega_rad_per_h", "channel", "mag_true", "mag_est")


def _theta(th) -> np.ndarray:
    if isinstance(th, PlantParams):
        return th.theta
    th = np.asarray(th, dtype=float).reshape(-1)
    if th.size < N_THETA:
        raise DomainError(f"theta_p needs {N_THETA} entries, got {th.size}")
    return th[:N_THETA]


# ---------------------------------------------------------------- sparsity

def change_frequency(x) -> float:
    """Fraction of entries that differ (exactly) from their predecessor."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size < 2:
        raise DomainError("change_frequency needs at least 2 entries")
    return float(np.count_nonzero(x[1:] != x[:-1])) / (x.size - 1)


def eps_f_sparse(x, epsilon: float):
    """(fraction of entries outside [-epsilon, epsilon], predicate f -> fraction <= f)."""
    if not epsilon >= 0:
        raise DomainError("epsilon must be non-negative")
    x = np.asarray(x, dtype=float).reshape(-1)
    frac = float(np.count_nonzero(np.abs(x) > epsilon)) / x.size if x.size else 0.0
    return frac, (lambda f: frac <= f)


@dataclass(frozen=True)
class SparsityReport:
    epsilon: float
    fraction_outside: float
    change_frequency: float | None
    prop1_bound: float | None  # 2 c_f(w)
    asserted: bool = False  # whether w changes infrequently enough to test the bound
    holds: bool | None = None
    n_outside: int = 0
    n_changes: int | None = None

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "fraction_outside": self.fraction_outside,
                "change_frequency": self.change_frequency, "prop1_bound": self.prop1_bound,
                "asserted": self.asserted, "holds": self.holds, "n_outside": self.n_outside,
                "n_changes": self.n_changes}


def eps_bar(p: RcParams, t_s: float, w_u: float) -> float:
    """4 t_s w_u eps0 / (Cz D0): the bound on |wbar| where w[k] == w[k-2]."""
    c = tustin_disturbance_coeffs(p, t_s)
    # same operation order as transform_disturbance on a constant window
    return float(c.gain * (c.eps0 * (4 * w_u)))


def prop1_check(w, p: RcParams, t_s: float, infrequent: float = 0.25) -> SparsityReport:
    """Count the entries of wbar outside [-eps_bar, eps_bar] against 2 c_f(w).

    The comparison is only asserted when c_f(w) <= infrequent; for
    frequently changing w the report is computed but `holds` is left None.
    """
    w = np.asarray(w, dtype=float).reshape(-1)
    if not np.all(np.isfinite(w)):
        raise DomainError("w must be finite")
    wu = float(np.abs(w).max())
    eb = eps_bar(p, t_s, wu)
    wbar = transform_disturbance(w, tustin_disturbance_coeffs(p, t_s))
    frac, _ = eps_f_sparse(wbar, eb)
    cf = change_frequency(w)
    asserted = cf <= infrequent
    return SparsityReport(eb, frac, cf, 2 * cf, asserted, (frac <= 2 * cf) if asserted else None,
                          int(np.count_nonzero(np.abs(wbar) > eb)),
                          int(np.count_nonzero(w[1:] != w[:-1])))


def wbar_report(wbar_hat, epsilon: float) -> SparsityReport:
    """Sparsity statistics of an estimated wbar alone (no truth available)."""
    frac, _ = eps_f_sparse(wbar_hat, epsilon)
    return SparsityReport(float(epsilon), frac, None, None,
                          n_outside=int(np.count_nonzero(np.abs(np.asarray(wbar_hat)) > epsilon)))


# ---------------------------------------------------------------- frequency response

@dataclass(frozen=True, eq=False)
class FrequencyResponse:
    omegas: np.ndarray
    magnitudes: np.ndarray
    channel: str


def default_omegas(t_s: float, n: int = 200) -> np.ndarray:
    """n log-spaced points from 2 pi / (10 weeks) to Nyquist, in rad/h."""
    if not t_s > 0:
        raise DomainError("t_s must be positive")
    return np.logspace(math.log10(2 * math.pi / TEN_WEEKS_H), math.log10(math.pi / t_s), n)


def _check_omegas(omegas, t_s: float) -> np.ndarray:
    om = np.asarray(omegas, dtype=float).reshape(-1)
    nyq = math.pi / t_s
    if np.any(om <= 0) or np.any(om > nyq * (1 + 1e-12)):
        raise DomainError(f"frequencies must lie in (0, {nyq:g}] rad/h")
    return om


def transfer_function(theta_p, channel: str, omegas, t_s: float) -> np.ndarray:
    """Complex G(e^{j w t_s}) = N(z^-1) / (1 - th1 z^-1 - th2 z^-2)."""
    th = _theta(theta_p)
    j = channel_index(channel)
    om = _check_omegas(omegas, t_s)
    zi = np.exp(-1j * om * t_s)
    a, b, c = th[2 + 3 * j: 5 + 3 * j]
    num = c + b * zi + a * zi**2
    den = 1 - th[0] * zi - th[1] * zi**2
    return num / den


def frequency_response(theta_p, channel: str, omegas=None, t_s: float = 1 / 12) -> FrequencyResponse:
    om = default_omegas(t_s) if omegas is None else _check_omegas(omegas, t_s)
    return FrequencyResponse(om, np.abs(transfer_function(theta_p, channel, om, t_s)), channel)


def continuous_response(p: RcParams, channel: str, s) -> np.ndarray:
    """J (sI - F)^-1 G_c at complex frequencies s."""
    ss = build_state_space(p)
    g = ss.G[:, channel_index(channel)]
    s = np.asarray(s, dtype=complex).reshape(-1)
    F = ss.F
    det = (s - F[0, 0]) * (s - F[1, 1]) - F[0, 1] * F[1, 0]
    # first row of the adjugate of (sI - F)
    return ((s - F[1, 1]) * g[0] + F[0, 1] * g[1]) / det


def max_relative_fr_error(theta_true, theta_hat, channel: str, omegas=None, t_s: float = 1 / 12,
                          zero_rtol: float = 1e-9):
    """max over the grid of |G_hat - G| / |G| and the maximizing frequency.

    Frequencies where |G| <= zero_rtol * max|G| are left out with a warning.
    """
    om = default_omegas(t_s) if omegas is None else _check_omegas(omegas, t_s)
    g = transfer_function(theta_true, channel, om, t_s)
    gh = transfer_function(theta_hat, channel, om, t_s)
    mag = np.abs(g)
    keep = mag > zero_rtol * mag.max() if mag.max() > 0 else np.zeros(om.size, dtype=bool)
    if not keep.all():
        warnings.warn(f"{channel}: {np.count_nonzero(~keep)} frequencies with |G| = 0 excluded",
                      RuntimeWarning, stacklevel=2)
    if not keep.any():
        raise DomainError("the true response is zero on the whole grid")
    err = np.abs(gh[keep] - g[keep]) / mag[keep]
    i = int(np.argmax(err))
    return float(err[i]), float(om[keep][i])


def bode_rows(theta_true, theta_hat, t_s: float, omegas=None, channels=CHANNELS) -> list[tuple]:
    om = default_omegas(t_s) if omegas is None else _check_omegas(omegas, t_s)
    rows = []
    for ch in channels:
        me = frequency_response(theta_hat, ch, om, t_s).magnitudes
        mt = (frequency_response(theta_true, ch, om, t_s).magnitudes if theta_true is not None
              else [None] * om.size)
        rows += [(float(w), ch, None if t is None else float(t), float(e)) for w, t, e in zip(om, mt, me)]
    return rows


def bode_csv(rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(BODE_COLUMNS)
    for w, ch, t, e in rows:
        wr.writerow([repr(w), ch, "" if t is None else repr(t), repr(e)])
    return buf.getvalue()


# ---------------------------------------------------------------- parameters and RMS

@dataclass(frozen=True)
class ParamError:
    name: str
    true: float
    estimate: float
    percent: float | None  # (true - estimate) / true * 100, None where true == 0

    @property
    def defined(self) -> bool:
        return self.percent is not None

    def to_dict(self) -> dict:
        return {"name": self.name, "true": self.true, "estimate": self.estimate,
                "percent_error": self.percent}


def param_error_table(theta_true, theta_hat) -> list[ParamError]:
    t = _theta(theta_true)
    h = _theta(theta_hat)
    out = []
    for i in range(N_THETA):
        pct = (t[i] - h[i]) / t[i] * 100 if t[i] != 0 else None
        out.append(ParamError(f"theta{i + 1}", float(t[i]), float(h[i]),
                              None if pct is None else float(pct)))
    return out


def rms_error(y, y_hat) -> float:
    y = np.asarray(y, dtype=float).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=float).reshape(-1)
    if y.size != y_hat.size:
        raise DomainError(f"length mismatch: {y.size} vs {y_hat.size}")
    if y.size == 0:
        raise DomainError("empty series")
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


def to_json(obj) -> str:
    """JSON for reports built from the dataclasses above."""
    def conv(o):
        if hasattr(o, "to_dict"):
            return o.to_dict()
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, np.generic):
            return o.item()
        raise TypeError(type(o))
    return json.dumps(obj, default=conv, indent=2)
