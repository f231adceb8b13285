"""Linear regression form y = Phi theta of the discrete plant plus disturbance.

Rows correspond to samples k = 3..k_max (1-based), i.e. 0-based sample
index i + 2 for row i. theta = [theta_p (11), wbar (k_max - 2)].
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from .datagen import TimeSeriesDataset
from .errors import DomainError
from .rc_model import N_THETA, PlantParams

DENSE_LIMIT = 5000


@dataclass(frozen=True, eq=False)
class RegressionProblem:
    y: np.ndarray
    X: np.ndarray  # the 11 data columns of Phi
    k_max: int
    dense_limit: int = DENSE_LIMIT

    @property
    def n_rows(self) -> int:
        return self.k_max - 2

    @property
    def n_cols(self) -> int:
        return self.k_max + 9

    @property
    def Phi(self):
        """Dense [X I] for small problems, else a LinearOperator."""
        if self.k_max <= self.dense_limit:
            return np.hstack([self.X, np.eye(self.n_rows)])
        return LinearOperator((self.n_rows, self.n_cols), matvec=self.matvec,
                              rmatvec=self.rmatvec, dtype=float)

    def phi_sparse(self) -> sp.csc_matrix:
        return sp.hstack([sp.csc_matrix(self.X), sp.identity(self.n_rows, format="csc")],
                         format="csc")

    def matvec(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        return self.X @ theta[:N_THETA] + theta[N_THETA:]

    def rmatvec(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float).reshape(-1)
        return np.concatenate([self.X.T @ r, r])


@dataclass(frozen=True, eq=False)
class ThetaFull:
    theta_p: np.ndarray
    w_bar: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.theta_p, self.w_bar])

    @classmethod
    def from_vector(cls, theta) -> "ThetaFull":
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:N_THETA].copy(), theta[N_THETA:].copy())

    def to_dict(self) -> dict:
        return {"theta_p": [float(v) for v in self.theta_p], "w_bar": [float(v) for v in self.w_bar]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "ThetaFull":
        return cls(np.asarray(d["theta_p"], dtype=float), np.asarray(d["w_bar"], dtype=float))


def data_columns(y, u) -> np.ndarray:
    """The 11 leading columns of Phi for rows k = 3..k_max."""
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    n = y.size
    cols = [y[1:n - 1], y[0:n - 2]]
    for j in range(3):
        cols += [u[j, 0:n - 2], u[j, 1:n - 1], u[j, 2:n]]
    return np.column_stack(cols)


def build_regression(d: TimeSeriesDataset, dense_limit: int = DENSE_LIMIT) -> RegressionProblem:
    if d.k_max < 3:
        raise DomainError(f"need at least 3 samples, got {d.k_max}")
    return RegressionProblem(d.y[2:].copy(), data_columns(d.y, d.u), d.k_max, dense_limit)


def selector_matrix(k_max: int) -> sp.csr_matrix:
    """S = [0 | I] picking wbar out of theta."""
    if k_max < 3:
        raise DomainError(f"need k_max >= 3, got {k_max}")
    n = k_max - 2
    return sp.csr_matrix((np.ones(n), (np.arange(n), np.arange(N_THETA, N_THETA + n))),
                         shape=(n, n + N_THETA))


def predict(theta_p, w_bar, u, y_init, one_step_y=None) -> np.ndarray:
    """Simulate the identified difference equation.

    u: 3 x k_max inputs; y_init: the first two outputs. Free-run by default;
    pass the measured outputs as one_step_y for one-step-ahead prediction.
    """
    th = theta_p.theta if isinstance(theta_p, PlantParams) else np.asarray(theta_p, dtype=float)
    u = np.asarray(u, dtype=float)
    w_bar = np.asarray(w_bar, dtype=float).reshape(-1)
    n = u.shape[1]
    if w_bar.size != n - 2:
        raise DomainError(f"w_bar has length {w_bar.size}, expected {n - 2}")
    if len(y_init) != 2:
        raise DomainError("y_init must hold the first two outputs")
    # exogenous part of each row: numerator terms + wbar
    ex = data_columns(np.zeros(n), u)[:, 2:] @ th[2:] + w_bar
    yh = np.empty(n)
    yh[:2] = y_init
    if one_step_y is not None:
        ym = np.asarray(one_step_y, dtype=float)
        yh[2:] = th[0] * ym[1:n - 1] + th[1] * ym[:n - 2] + ex
        return yh
    a1, a2 = th[0], th[1]
    for k in range(2, n):
        yh[k] = a1 * yh[k - 1] + a2 * yh[k - 2] + ex[k - 2]
    return yh
