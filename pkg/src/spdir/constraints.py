"""Linear inequality constraints A theta_p <= b on the 11 plant coefficients."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .rc_model import N_THETA

BLOCKS = ("g1",) * 4 + ("g2",) * 4 + ("g3",) * 3 + ("g4",) * 4
DEFAULT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    A: np.ndarray
    b: np.ndarray
    blocks: tuple

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]


def build_constraints() -> ConstraintSet:
    A = np.zeros((15, N_THETA))
    b = np.zeros(15)
    # g1: stability of z^2 - th1 z - th2
    A[0, 0] = -1
    A[1, 1] = 1
    A[2, 1] = -1
    b[2] = 1
    A[3, [0, 1]] = 1
    b[3] = 1
    # g2: q_hvac numerator signs and DC gain
    A[4, 2] = 1
    A[5, 3] = -1
    A[6, 4] = -1
    A[7, 2:5] = -1
    # g3: T_oa numerator signs
    A[8, 5] = -1
    A[9, 6] = -1
    A[10, 7] = -1
    # g4: eta_sol numerator signs and DC gain
    A[11, 8] = 1
    A[12, 9] = -1
    A[13, 10] = -1
    A[14, 8:11] = -1
    A.setflags(write=False)
    b.setflags(write=False)
    return ConstraintSet(A, b, BLOCKS)


def dropped_rows() -> tuple[np.ndarray, np.ndarray]:
    """The two rows left out because the others imply them:
    th2 - th1 <= 1 and -(th6 + th7 + th8) <= 0."""
    A = np.zeros((2, N_THETA))
    A[0, 0], A[0, 1] = -1, 1
    A[1, 5:8] = -1
    return A, np.array([1.0, 0.0])


def max_over_set(C: ConstraintSet, a, bound: float = 1e3) -> float:
    """max a.theta over {A theta <= b, |theta|_inf <= bound} by LP."""
    res = linprog(-np.asarray(a, dtype=float), A_ub=C.A, b_ub=C.b,
                  bounds=[(-bound, bound)] * C.A.shape[1], method="highs")
    if res.status != 0:
        raise RuntimeError(f"LP failed: {res.message}")
    return -res.fun


def redundancy_check(C: ConstraintSet, bounds=(1e1, 1e3, 1e6)) -> list[dict]:
    """For each dropped row, the LP maximum of its left side for several box sizes."""
    Ad, bd = dropped_rows()
    out = []
    for i in range(Ad.shape[0]):
        vals = [max_over_set(C, Ad[i], M) for M in bounds]
        out.append({"row": Ad[i].tolist(), "rhs": float(bd[i]), "lp_max": vals,
                    "implied": all(v <= bd[i] + 1e-9 for v in vals)})
    return out


@dataclass(frozen=True)
class Violation:
    row: int
    block: str
    slack: float  # b - A theta; negative means violated

    def to_dict(self) -> dict:
        return {"row": self.row, "block": self.block, "slack": self.slack}


@dataclass(frozen=True)
class FeasibilityReport:
    violations: tuple
    boundary: tuple  # rows with |slack| <= tol that are not violated
    slack: np.ndarray

    @property
    def feasible(self) -> bool:
        return not self.violations

    def to_json(self) -> str:
        return json.dumps([v.to_dict() for v in self.violations])


def check_feasible(theta_p, tol: float = DEFAULT_TOL, C: ConstraintSet | None = None) -> FeasibilityReport:
    if tol < 0:
        raise ValueError("tol must be non-negative")
    C = C or build_constraints()
    slack = C.b - C.A @ np.asarray(theta_p, dtype=float)[:C.A.shape[1]]
    viol = tuple(Violation(i, C.blocks[i], float(s)) for i, s in enumerate(slack) if -s > tol)
    bnd = tuple(i for i, s in enumerate(slack) if abs(s) <= tol and -s <= tol)
    return FeasibilityReport(viol, bnd, slack)


def is_physically_meaningful(theta_p) -> bool:
    th = np.asarray(theta_p, dtype=float)
    return all(np.any(np.abs(th[s:s + 3]) > 0) for s in (2, 5, 8))


@dataclass(frozen=True)
class RegularityReport:
    regular: bool
    active: tuple
    rank: int


def check_regularity(theta_p, tol: float = DEFAULT_TOL, C: ConstraintSet | None = None) -> RegularityReport:
    C = C or build_constraints()
    rep = check_feasible(theta_p, tol, C)
    if not rep.feasible:
        raise ValueError(f"theta_p is infeasible at tol={tol}: rows {[v.row for v in rep.violations]}")
    active = tuple(int(i) for i in np.flatnonzero(np.abs(rep.slack) <= tol))
    rank = int(np.linalg.matrix_rank(C.A[list(active)])) if active else 0
    return RegularityReport(rank == len(active), active, rank)
