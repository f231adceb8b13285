"""Choice of the sparsity weight lambda from the solution-norm and
residual-norm curves along a grid.

lambda1 is the smallest grid value beyond which every solution norm is
below tau_sol; lambda2 is the largest grid value below which every residual
norm is below tau_res. The pair is accepted when lambda2 > lambda1 and
lambda1 is returned.
"""
from __future__ import annotations

import csv
import io
import logging
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstraintSet
from .errors import DomainError, ParseError, SelectionError
from .solver import CONVERGED, SolverOptions, SolverResult, SpdirWorkspace, huber_active_set

log = logging.getLogger(__name__)

PATH_COLUMNS = ("lambda", "solution_norm", "residual_norm", "status")


@dataclass(frozen=True, eq=False)
class LambdaPath:
    lambdas: np.ndarray
    solution_norms: np.ndarray
    residual_norms: np.ndarray
    statuses: tuple
    results: tuple = field(default=(), repr=False)

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float).reshape(-1)
        sn = np.asarray(self.solution_norms, dtype=float).reshape(-1)
        rn = np.asarray(self.residual_norms, dtype=float).reshape(-1)
        if not (lam.size == sn.size == rn.size == len(self.statuses)):
            raise DomainError("path arrays have different lengths")
        _check_grid(lam)
        for a in (lam, sn, rn):
            a.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "solution_norms", sn)
        object.__setattr__(self, "residual_norms", rn)
        object.__setattr__(self, "statuses", tuple(self.statuses))

    def __len__(self) -> int:
        return self.lambdas.size

    @property
    def degraded(self) -> np.ndarray:
        return np.array([s != CONVERGED for s in self.statuses], dtype=bool)

    def result_at(self, lam: float) -> SolverResult | None:
        i = int(np.argmin(np.abs(self.lambdas - lam)))
        return self.results[i] if self.results else None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(PATH_COLUMNS)
        for row in zip(self.lambdas, self.solution_norms, self.residual_norms, self.statuses):
            w.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])), row[3]])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        _atomic_write(path, self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "LambdaPath":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != PATH_COLUMNS:
            raise ParseError(f"expected header {','.join(PATH_COLUMNS)}", row=1)
        vals = [[], [], []]
        st = []
        for i, r in enumerate(rows[1:], start=2):
            if len(r) != 4:
                raise ParseError(f"expected 4 fields, got {len(r)}", row=i)
            for j in range(3):
                try:
                    vals[j].append(float(r[j]))
                except ValueError:
                    raise ParseError(f"not a number: {r[j]!r}", row=i, column=PATH_COLUMNS[j]) from None
            st.append(r[3])
        return cls(np.array(vals[0]), np.array(vals[1]), np.array(vals[2]), tuple(st))

    @classmethod
    def read_csv(cls, path) -> "LambdaPath":
        with open(path, newline="") as f:
            return cls.from_csv(f.read())


@dataclass(frozen=True)
class Selection:
    lambda_star: float | None
    lambda1: float | None
    lambda2: float | None
    accepted: bool
    index1: int | None = None
    index2: int | None = None
    diagnostic: str = ""

    def to_dict(self) -> dict:
        return {"lambda_star": self.lambda_star, "lambda1": self.lambda1, "lambda2": self.lambda2,
                "accepted": self.accepted, "diagnostic": self.diagnostic}


@dataclass(frozen=True)
class ThresholdSchedule:
    """Initial thresholds relative to the path and the relaxation per round."""
    sol_fraction: float = 0.1
    res_factor: float = 2.0
    relax: float = 1.5
    max_rounds: int = 10

    def __post_init__(self):
        if not (self.sol_fraction > 0 and self.res_factor > 0):
            raise DomainError("threshold multipliers must be positive")
        if not self.relax > 1:
            raise DomainError("relax must exceed 1")
        if self.max_rounds < 1:
            raise DomainError("max_rounds must be at least 1")


@dataclass(frozen=True, eq=False)
class AutoSelection:
    lambda_star: float
    selection: Selection
    tau_sol: float
    tau_res: float
    rounds: int
    path: LambdaPath = field(repr=False)

    @property
    def result(self) -> SolverResult | None:
        return self.path.result_at(self.lambda_star)


def _check_grid(grid: np.ndarray) -> None:
    if grid.size == 0:
        raise DomainError("lambda grid is empty")
    if not np.all(np.isfinite(grid)) or np.any(grid <= 0):
        raise DomainError("lambda grid values must be positive and finite")
    if np.any(np.diff(grid) <= 0):
        raise DomainError("lambda grid must be strictly increasing")


def _atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def lambda_max(prob, S, C: ConstraintSet) -> float:
    """Smallest lambda at which wbar = 0 is optimal, 2 ||y - X theta_cls||_inf,
    where theta_cls is the constrained least-squares fit without wbar.

    For problems without the [X I] structure, falls back to ||2 Phi_S' y||_inf.
    """
    y = np.asarray(prob.y, dtype=float)
    X = getattr(prob, "X", None)
    if X is None or not np.all(np.asarray(C.b) >= 0):
        from .solver import _phi_matrix, selector_indices
        Phi = _phi_matrix(prob)
        sel = selector_indices(S, Phi.shape[1])
        return float(np.max(np.abs(2 * (Phi.T @ y)[sel])))
    X = np.asarray(X, dtype=float)
    A = np.hstack([np.asarray(C.A, dtype=float), np.zeros((C.A.shape[0], X.shape[1] - C.A.shape[1]))])
    # the Huber fit is plain least squares once lam/2 exceeds every residual
    lam = 4.0 * max(np.abs(y).max(), 1e-300)
    th = np.zeros(X.shape[1])
    for _ in range(60):
        th = huber_active_set(X, y, lam, A, np.asarray(C.b, dtype=float), th)
        rmax = float(np.abs(y - X @ th).max())
        if rmax <= lam / 2:
            return 2 * rmax
        lam *= 4
    raise RuntimeError("could not bracket the least-squares residual")


def default_grid(prob, S, C: ConstraintSet, n: int = 30, lo: float = 1e-6, hi: float = 1e2) -> np.ndarray:
    """n log-spaced points over [lo, hi] times the lambda_max estimate."""
    lm = lambda_max(prob, S, C)
    if not lm > 0:
        raise DomainError("lambda_max is zero: the data are fitted exactly without wbar")
    return lm * np.logspace(np.log10(lo), np.log10(hi), n)


def sweep(prob, S, C: ConstraintSet, grid, opts: SolverOptions | None = None,
          warm_start: bool = True) -> LambdaPath:
    """Solve at every grid value in increasing order. Points that do not
    converge are kept and reported through their status."""
    grid = np.asarray(grid, dtype=float).reshape(-1)
    _check_grid(grid)
    ws = SpdirWorkspace(prob, S, C, opts)
    results = []
    warm = None
    for lam in grid:
        r = ws.solve(float(lam), warm if warm_start else None)
        if r.status != CONVERGED:
            log.warning("sweep: lambda=%g degraded (%s)", lam, r.status)
        results.append(r)
        warm = r.warm
    return LambdaPath(grid, np.array([r.solution_norm for r in results]),
                      np.array([r.residual_norm for r in results]),
                      tuple(r.status for r in results), tuple(results))


def select_lambda(path: LambdaPath, tau_sol: float, tau_res: float) -> Selection:
    """Pure threshold test on the path arrays.

    Grid points at the ends qualify only through at least one neighbour on
    the tested side: the largest point is never lambda1 and the smallest is
    never lambda2 by an empty condition.
    """
    if not (tau_sol > 0 and tau_res > 0):
        raise DomainError("thresholds must be positive")
    if len(path) == 0:
        raise DomainError("path is empty")
    lam, sn, rn = path.lambdas, path.solution_norms, path.residual_norms
    n = lam.size
    i1 = None
    for i in range(n - 1):
        if np.all(sn[i + 1:] < tau_sol):
            i1 = i
            break
    i2 = None
    for i in range(n - 1, 0, -1):
        if np.all(rn[:i] < tau_res):
            i2 = i
            break
    msg = []
    if i1 is None:
        msg.append(f"no lambda1: solution norm never stays below {tau_sol:g}")
    if i2 is None:
        msg.append(f"no lambda2: residual norm is not below {tau_res:g} at the smallest grid point")
    l1 = float(lam[i1]) if i1 is not None else None
    l2 = float(lam[i2]) if i2 is not None else None
    ok = i1 is not None and i2 is not None and i2 > i1
    if i1 is not None and i2 is not None and not ok:
        msg.append(f"lambda2={l2:g} does not exceed lambda1={l1:g}")
    return Selection(l1 if ok else None, l1, l2, ok, i1, i2, "; ".join(msg))


def auto_select(prob, S, C: ConstraintSet, opts: SolverOptions | None = None, grid=None,
                schedule: ThresholdSchedule | None = None, path: LambdaPath | None = None) -> AutoSelection:
    """Sweep once, then relax the thresholds until a pair is accepted.

    Raises SelectionError carrying the path when the schedule runs out.
    """
    schedule = schedule or ThresholdSchedule()
    if path is None:
        if grid is None:
            grid = default_grid(prob, S, C)
        path = sweep(prob, S, C, grid, opts)
    tau_sol = schedule.sol_fraction * float(path.solution_norms.max())
    tau_res = schedule.res_factor * float(path.residual_norms.min())
    if not (tau_sol > 0 and tau_res > 0):
        raise SelectionError("initial thresholds are zero: the curves are degenerate", path)
    last = None
    for rnd in range(schedule.max_rounds):
        last = select_lambda(path, tau_sol, tau_res)
        log.info("auto_select round %d: tau_sol=%g tau_res=%g -> %s", rnd, tau_sol, tau_res,
                 "accepted" if last.accepted else last.diagnostic)
        if last.accepted:
            return AutoSelection(last.lambda_star, last, tau_sol, tau_res, rnd + 1, path)
        tau_sol *= schedule.relax
        tau_res *= schedule.relax
    raise SelectionError(f"no accepted lambda after {schedule.max_rounds} rounds ({last.diagnostic})", path)
