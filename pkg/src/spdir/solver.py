"""ADMM operator splitting for the sparse plant/disturbance problem

    minimize  ||y - Phi theta||^2 + lam ||S theta||_1
    s.t.      A theta[:A.shape[1]] <= b

S must be a coordinate selector (one unit entry per row). The default
"split" formulation writes the selected coordinates as p - q with p, q >= 0
and solves the resulting QP with an OSQP-style iteration

    (P + sigma I + rho C'C) x~ = sigma x - q + C'(rho z - y)
    z = Proj(alpha C x~ + (1 - alpha) z + y / rho)

on a Ruiz-equilibrated copy of the data. The "direct" formulation keeps
theta as the variable and replaces the projection on the selected rows by
soft-thresholding. Iterates are periodically polished: the active set and
sign pattern are guessed and an equality-constrained KKT system is solved;
the polished point is kept only if it certifies optimality.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import lsq_linear
from scipy.sparse.linalg import splu

from .constraints import ConstraintSet
from .errors import DomainError
from .regression import ThetaFull

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITER = "max-iter"
INFEASIBLE = "infeasible-detected"

RHO_MIN, RHO_MAX = 1e-6, 1e6
SCALE_MIN, SCALE_MAX = 1e-4, 1e4


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 50_000
    eps_abs: float = 1e-8
    eps_rel: float = 1e-8
    rho: float = 1.0
    adaptive_rho: bool = True
    over_relaxation: float = 1.6
    sigma: float = 1e-6
    scaling_iter: int = 10
    check_interval: int = 25
    polish: bool = True
    polish_interval: int = 100
    polish_refine: int = 5
    polish_steps: int = 20
    eps_infeasible: float = 1e-6
    formulation: str = "split"
    record_history: bool = False

    def __post_init__(self):
        if not (self.eps_abs > 0 and self.eps_rel > 0):
            raise DomainError("tolerances must be positive")
        if self.max_iter < 1:
            raise DomainError("max_iter must be at least 1")
        if not (0 < self.over_relaxation < 2):
            raise DomainError("over_relaxation must lie in (0, 2)")
        if self.rho <= 0 or self.sigma <= 0:
            raise DomainError("rho and sigma must be positive")
        if self.formulation not in ("split", "direct"):
            raise DomainError(f"unknown formulation {self.formulation!r}")


@dataclass(frozen=True, eq=False)
class DenseProblem:
    """Generic least-squares data for solve_spdir: Phi (n_obs x n) and y."""
    Phi: np.ndarray
    y: np.ndarray


@dataclass(frozen=True, eq=False)
class WarmStart:
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    rho: float
    formulation: str


@dataclass(frozen=True, eq=False)
class SolverResult:
    x: np.ndarray  # full theta
    lam: float
    objective: float
    residual_norm: float
    solution_norm: float
    iterations: int
    status: str
    kkt: dict
    polished: bool = False
    mu: np.ndarray | None = None
    warm: WarmStart | None = field(default=None, repr=False)
    history: list | None = field(default=None, repr=False)

    @property
    def theta(self) -> ThetaFull:
        return ThetaFull.from_vector(self.x)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def to_dict(self) -> dict:
        th = self.theta
        return {"lambda": self.lam, "theta_p": th.theta_p.tolist(), "w_bar": th.w_bar.tolist(),
                "objective": self.objective, "residual_norm": self.residual_norm,
                "solution_norm": self.solution_norm, "iterations": self.iterations,
                "status": self.status, "polished": self.polished,
                "kkt": {k: float(v) for k, v in self.kkt.items()}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


# ------------------------------------------------------------------ helpers

def _phi_matrix(prob) -> sp.csc_matrix:
    if hasattr(prob, "phi_sparse"):
        return prob.phi_sparse()
    return sp.csc_matrix(np.asarray(prob.Phi, dtype=float))


def selector_indices(S, n: int) -> np.ndarray:
    S = sp.csr_matrix(S)
    if S.shape[1] != n:
        raise DomainError(f"S has {S.shape[1]} columns, expected {n}")
    S.eliminate_zeros()
    if np.any(np.diff(S.indptr) != 1) or not np.allclose(S.data, 1.0):
        raise DomainError("S must have exactly one unit entry per row")
    idx = S.indices.copy()
    if np.unique(idx).size != idx.size:
        raise DomainError("S selects a coordinate twice")
    return idx


def _padded_A(C: ConstraintSet, n: int) -> sp.csr_matrix:
    A = np.asarray(C.A, dtype=float)
    if A.shape[1] > n:
        raise DomainError(f"constraints act on {A.shape[1]} coordinates but theta has {n}")
    return sp.hstack([sp.csr_matrix(A), sp.csr_matrix((A.shape[0], n - A.shape[1]))], format="csr")


def _inf(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


def objective(Phi, y, sel, lam, theta) -> float:
    r = y - Phi @ theta
    return float(r @ r + lam * np.abs(theta[sel]).sum())


# ------------------------------------------------------------------ KKT certificate

def kkt_residual(prob, S, C: ConstraintSet, lam: float, theta, active_tol: float | None = None,
                 _cache=None) -> dict:
    """Primal infeasibility and minimum stationarity residual of theta.

    The l1 subgradient is exactly sign(theta_i) on nonzero selected
    coordinates and free in [-1, 1] on zero ones; multipliers are allowed on
    rows whose slack is at most active_tol. Returns infinity norms plus the
    scales used for relative tolerances.
    """
    if _cache is None:
        Phi = _phi_matrix(prob)
        y = np.asarray(prob.y, dtype=float)
        sel = selector_indices(S, Phi.shape[1])
    else:
        Phi, y, sel = _cache
    theta = np.asarray(theta, dtype=float)
    n = Phi.shape[1]
    A = np.asarray(C.A, dtype=float)
    b = np.asarray(C.b, dtype=float)
    mA = A.shape[1]
    Ath = A @ theta[:mA]
    slack = b - Ath
    primal_inf = max(0.0, float(np.max(-slack))) if slack.size else 0.0
    pscale = max(_inf(Ath), _inf(b))
    if active_tol is None:
        active_tol = 1e-6 * max(1.0, pscale)

    res = Phi @ theta - y
    g = 2 * (Phi.T @ res)
    r = g.copy()
    is_sel = np.zeros(n, dtype=bool)
    is_sel[sel] = True
    zero = is_sel & (theta == 0)
    nz = is_sel & ~zero
    r[nz] += lam * np.sign(theta[nz])
    # separable coordinates outside the constrained block
    sep = np.arange(n) >= mA
    zs = zero & sep
    r[zs] = np.sign(g[zs]) * np.maximum(np.abs(g[zs]) - lam, 0.0)

    act = np.flatnonzero(slack <= active_tol)
    zA = np.flatnonzero(zero[:mA])
    mu = np.zeros(b.size)
    if act.size or zA.size:
        cols = []
        lo, hi = [], []
        if act.size:
            cols.append(A[act].T)
            lo += [0.0] * act.size
            hi += [np.inf] * act.size
        if zA.size:
            E = np.zeros((mA, zA.size))
            E[zA, np.arange(zA.size)] = lam
            cols.append(E)
            lo += [-1.0] * zA.size
            hi += [1.0] * zA.size
        M = np.hstack(cols)
        if np.any(M):
            sol = lsq_linear(M, -r[:mA], bounds=(lo, hi), method="bvls", tol=1e-14)
            v = sol.x
            r[:mA] += M @ v
            mu[act] = v[:act.size]
    stationarity = _inf(r)
    # size of the summands of the gradient, the precision it can be computed to
    dscale = max(_inf(2 * (abs(Phi).T @ np.abs(res))), lam if is_sel.any() else 0.0)
    comp = _inf(mu * np.maximum(slack, 0.0))
    return {"primal_inf": primal_inf, "stationarity_inf": stationarity, "complementarity": comp,
            "primal_scale": pscale, "dual_scale": dscale, "_mu": mu}


def kkt_ok(kkt: dict, opts: SolverOptions) -> bool:
    return (kkt["primal_inf"] <= opts.eps_abs + opts.eps_rel * kkt["primal_scale"]
            and kkt["stationarity_inf"] <= opts.eps_abs + opts.eps_rel * kkt["dual_scale"]
            and kkt["complementarity"] <= opts.eps_abs + opts.eps_rel * kkt["dual_scale"])


def _public_kkt(k: dict) -> dict:
    return {"primal_inf": k["primal_inf"], "dual_inf": k["stationarity_inf"],
            "duality_gap_estimate": k["complementarity"]}


# ------------------------------------------------------------------ workspace

class SpdirWorkspace:
    """Scaled QP data and factorization, reusable across lambda values."""

    def __init__(self, prob, S, C: ConstraintSet, opts: SolverOptions | None = None):
        self.opts = opts or SolverOptions()
        self.Phi = _phi_matrix(prob)
        self.yobs = np.asarray(prob.y, dtype=float).reshape(-1)
        n = self.Phi.shape[1]
        if self.Phi.shape[0] != self.yobs.size:
            raise DomainError("Phi and y have inconsistent sizes")
        self.n = n
        self.sel = selector_indices(S, n)
        self.C = C
        self.Ab = _padded_A(C, n)
        self.b = np.asarray(C.b, dtype=float)
        self.m = self.b.size
        self._cache = (self.Phi, self.yobs, self.sel)
        self._H = None
        self._last_polish = None
        # Phi = [X I] with the identity block selected: wbar can be eliminated
        self.X = None
        if hasattr(prob, "X"):
            p = prob.X.shape[1]
            if (np.array_equal(self.sel, np.arange(p, n)) and C.A.shape[1] <= p
                    and np.all(np.asarray(C.b) >= 0)):
                self.X = np.asarray(prob.X, dtype=float)
        self._build()
        self._scale()
        self.rho = self.opts.rho
        self._factor()

    # -- problem data in QP form
    def _build(self):
        n, s, Phi = self.n, self.sel.size, self.Phi
        if self.opts.formulation == "split":
            free = np.setdiff1d(np.arange(n), self.sel)
            nf = free.size
            rows = np.concatenate([free, self.sel, self.sel])
            cols = np.arange(nf + 2 * s)
            vals = np.concatenate([np.ones(nf + s), -np.ones(s)])
            self.M = sp.csr_matrix((vals, (rows, cols)), shape=(n, nf + 2 * s))
            nx = nf + 2 * s
            Cb = sp.vstack([self.Ab @ self.M,
                            sp.hstack([sp.csr_matrix((2 * s, nf)), sp.identity(2 * s)])], format="csc")
            self.l = np.concatenate([np.full(self.m, -np.inf), np.zeros(2 * s)])
            self.u = np.concatenate([self.b, np.full(2 * s, np.inf)])
            self.l1 = np.zeros(0, dtype=int)
            self.lin_lam = np.concatenate([np.zeros(nf), np.ones(2 * s)])
        else:
            self.M = sp.identity(n, format="csr")
            nx = n
            E = sp.csr_matrix((np.ones(s), (np.arange(s), self.sel)), shape=(s, n))
            Cb = sp.vstack([self.Ab, E], format="csc")
            self.l = np.concatenate([np.full(self.m, -np.inf), np.full(s, -np.inf)])
            self.u = np.concatenate([self.b, np.full(s, np.inf)])
            self.l1 = np.arange(self.m, self.m + s)
            self.lin_lam = np.zeros(n)
        Psi = (Phi @ self.M).tocsc()
        self.P = (2 * (Psi.T @ Psi)).tocsc()
        self.q0 = -2 * (Psi.T @ self.yobs)
        self.Cq = Cb
        self.nx = nx
        self.mc = Cb.shape[0]

    def _scale(self):
        P, C = self.P.copy(), self.Cq.copy()
        D = np.ones(self.nx)
        E = np.ones(self.mc)
        for _ in range(self.opts.scaling_iter):
            cn = np.maximum(_colmax(P), _colmax(C))
            rn = _colmax(C.T.tocsc()) if self.mc else np.zeros(0)
            dd = 1 / np.sqrt(np.clip(cn, SCALE_MIN, SCALE_MAX))
            de = 1 / np.sqrt(np.clip(rn, SCALE_MIN, SCALE_MAX))
            Dd, De = sp.diags(dd), sp.diags(de)
            P = (Dd @ P @ Dd).tocsc()
            C = (De @ C @ Dd).tocsc()
            D *= dd
            E *= de
        pn = np.mean(_colmax(P)) if self.nx else 1.0
        c = 1 / np.clip(pn, SCALE_MIN, SCALE_MAX)
        self.Ps = (c * P).tocsc()
        self.Cs = C.tocsc()
        self.CsT = self.Cs.T.tocsc()
        self.D, self.E, self.c = D, E, c
        self.ls = E * self.l
        self.us = E * self.u

    def _factor(self):
        K = self.Ps + self.opts.sigma * sp.identity(self.nx) + self.rho * (self.CsT @ self.Cs)
        self.lu = splu(K.tocsc(), permc_spec="MMD_AT_PLUS_A")

    # -- conversions
    def theta_of(self, x):
        return self.M @ x

    # -- main loop
    def solve(self, lam: float, warm: WarmStart | None = None) -> SolverResult:
        if not lam >= 0:
            raise DomainError(f"lambda must be non-negative, got {lam!r}")
        o = self.opts
        D, E, c = self.D, self.E, self.c
        qs = c * D * (self.q0 + lam * self.lin_lam)
        thr = c * lam / E[self.l1] if self.l1.size else np.zeros(0)
        if warm is not None and warm.formulation == o.formulation and warm.x.size == self.nx:
            x = warm.x / D
            z = warm.z * E
            yd = warm.y * c / E
            if warm.rho != self.rho:
                self.rho = warm.rho
                self._factor()
        else:
            x = np.zeros(self.nx)
            z = np.zeros(self.mc)
            yd = np.zeros(self.mc)
            if self.rho != o.rho:
                self.rho = o.rho
                self._factor()
        alpha, sigma = o.over_relaxation, o.sigma
        history = [] if o.record_history else None
        best = None
        n_polish = 0
        status = MAX_ITER
        it = 0
        z_prev, y_prev = z, yd
        for it in range(1, o.max_iter + 1):
            z_prev, y_prev, x_prev = z, yd, x
            rhs = sigma * x - qs + self.CsT @ (self.rho * z - yd)
            xt = self.lu.solve(rhs)
            zt = self.Cs @ xt
            x = alpha * xt + (1 - alpha) * x
            zh = alpha * zt + (1 - alpha) * z
            v = zh + yd / self.rho
            z = np.minimum(np.maximum(v, self.ls), self.us)
            if self.l1.size:
                vv = v[self.l1]
                z[self.l1] = np.sign(vv) * np.maximum(np.abs(vv) - thr / self.rho, 0.0)
            yd = yd + self.rho * (zh - z)
            if history is not None:
                history.append(float(np.sqrt(sigma * np.sum((x - x_prev) ** 2)
                                             + self.rho * np.sum((z - z_prev) ** 2)
                                             + np.sum((yd - y_prev) ** 2) / self.rho)))

            if it % o.check_interval and it != o.max_iter:
                continue
            # residuals in unscaled units
            Cx = self.Cs @ x
            prim = _inf((Cx - z) / E)
            pscale = max(_inf(Cx / E), _inf(z / E))
            Px = self.Ps @ x
            Cty = self.CsT @ yd
            dual = _inf((Px + qs + Cty) / D) / c
            dscale = max(_inf(Px / D), _inf(Cty / D), _inf(qs / D)) / c
            admm_done = (prim <= o.eps_abs + o.eps_rel * pscale
                         and dual <= o.eps_abs + o.eps_rel * dscale)
            if self._infeasible(yd - y_prev):
                status = INFEASIBLE
                break
            if admm_done or (o.polish and it % o.polish_interval == 0) or it == o.max_iter:
                cand = self._candidate(lam, x, z, yd, polish=o.polish, deep=n_polish == 0)
                n_polish += 1
                if best is None or _merit(cand[1]) < _merit(best[1]):
                    best = cand
                if kkt_ok(cand[1], o):
                    status = CONVERGED
                    best = cand
                    break
            if o.adaptive_rho and prim > 0 and dual > 0:
                ratio = np.sqrt((prim / max(pscale, 1e-30)) / (dual / max(dscale, 1e-30)))
                new = float(np.clip(self.rho * ratio, RHO_MIN, RHO_MAX))
                if new > 5 * self.rho or new < self.rho / 5:
                    self.rho = new
                    self._factor()
        if best is None:
            best = self._candidate(lam, x, z, yd, polish=False)
        theta, kkt, polished = best
        r = self.yobs - self.Phi @ theta
        warm = WarmStart(D * x, z / E, E * yd / c, self.rho, o.formulation)
        return SolverResult(
            x=theta, lam=float(lam), objective=float(r @ r + lam * np.abs(theta[self.sel]).sum()),
            residual_norm=float(np.linalg.norm(r)), solution_norm=float(np.abs(theta[self.sel]).sum()),
            iterations=it, status=status, kkt=_public_kkt(kkt), polished=polished,
            mu=kkt["_mu"], warm=warm, history=history)

    def _infeasible(self, dy) -> bool:
        ndy = _inf(self.E * dy)
        if ndy < 1e-12:
            return False
        eps = self.opts.eps_infeasible
        dyu = self.E * dy / ndy  # unscaled direction
        if _inf((self.CsT @ dy) / self.D) > eps * ndy:
            return False
        pos, neg = np.maximum(dyu, 0), np.minimum(dyu, 0)
        if np.any((pos > eps) & ~np.isfinite(self.u)) or np.any((neg < -eps) & ~np.isfinite(self.l)):
            return False
        fu = np.where(np.isfinite(self.u), self.u, 0.0)
        fl = np.where(np.isfinite(self.l), self.l, 0.0)
        return float(fu @ pos + fl @ neg) < -eps

    def _candidate(self, lam, x, z, yd, polish: bool, deep: bool = False):
        theta = self.theta_of(self.D * x)
        if self.opts.formulation == "direct":
            # take the thresholded copy of the selected coordinates
            theta = theta.copy()
            theta[self.sel] = z[self.l1] / self.E[self.l1]
        k_raw = kkt_residual(None, None, self.C, lam, theta, _cache=self._cache)
        snapped = _snap(theta, self.sel)
        if snapped is not None:
            k_s = kkt_residual(None, None, self.C, lam, snapped, _cache=self._cache)
            if _merit(k_s) < _merit(k_raw):
                theta, k_raw = snapped, k_s
        best = (theta, k_raw, False)
        if polish:
            mu = (self.E * yd / self.c)[:self.m]
            if self.X is not None:
                pt = self._polish_reduced(lam, theta, deep=deep)
            else:
                pt = self._polish(lam, theta, mu)
            if pt is not None:
                k_pol = kkt_residual(None, None, self.C, lam, pt, _cache=self._cache)
                if _merit(k_pol) < _merit(k_raw):
                    best = (pt, k_pol, True)
        return best

    def _polish_reduced(self, lam, theta, deep: bool = False):
        """Solve the problem with wbar eliminated (a constrained Huber fit in
        theta_p). Starts from the ADMM iterate and the last polished point; if
        deep, also walks lambda down from a large value by decades, which is
        much more reliable when lambda is tiny and the fit is close to LAD."""
        p = self.X.shape[1]
        A = np.asarray(self.C.A, dtype=float)
        A = np.hstack([A, np.zeros((A.shape[0], p - A.shape[1]))])
        X, y, b = self.X, self.yobs, self.b

        def full(tp):
            r = y - X @ tp
            return np.concatenate([tp, np.sign(r) * np.maximum(np.abs(r) - lam / 2, 0.0)])

        starts = [theta[:p]]
        if self._last_polish is not None:
            starts.append(self._last_polish)
        best, best_m = None, np.inf
        for th0 in starts:
            cand = full(huber_active_set(X, y, lam, A, b, th0, max_iter=300))
            k = kkt_residual(None, None, self.C, lam, cand, _cache=self._cache)
            if _merit(k) < best_m:
                best, best_m = cand, _merit(k)
            if kkt_ok(k, self.opts):
                self._last_polish = cand[:p]
                return cand
        if deep and lam > 0:
            lam_hi = 0.1 * 2 * _inf(y - X @ best[:p])
            n_dec = int(np.ceil(np.log10(lam_hi / lam))) if lam_hi > lam else 0
            tp = best[:p]
            for j in range(n_dec, -1, -1):
                tp = huber_active_set(X, y, lam * 10.0**j, A, b, tp)
            cand = full(tp)
            k = kkt_residual(None, None, self.C, lam, cand, _cache=self._cache)
            if _merit(k) < best_m:
                best, best_m = cand, _merit(k)
            if kkt_ok(k, self.opts):
                self._last_polish = cand[:p]
        return best

    def _polish(self, lam, theta, mu):
        """Primal-dual active-set refinement started from the ADMM guess."""
        Phi, yobs, sel, n = self.Phi, self.yobs, self.sel, self.n
        if self._H is None:
            self._H = (2 * (Phi.T @ Phi)).tocsc()
            self._Pty = 2 * (Phi.T @ yobs)
        g = self._H @ theta - self._Pty
        zero = np.zeros(n, dtype=bool)
        s = np.zeros(n)
        if lam > 0:
            ts, gs = theta[sel], g[sel]
            zmask = np.abs(ts) < lam - np.abs(gs)
            zero[sel[zmask]] = True
            s[sel] = np.where(ts != 0, np.sign(ts), -np.sign(gs))
            s[sel[zmask]] = 0.0
        slack = self.b - self.Ab @ theta
        act = slack < np.maximum(mu, 0.0)
        best, best_m = None, np.inf
        seen = set()
        for _ in range(self.opts.polish_steps):
            key = (zero.tobytes(), s.tobytes(), act.tobytes())
            if key in seen:
                break
            seen.add(key)
            sol = self._eq_qp(lam, zero, s, act)
            if sol is None:
                break
            th, nu_act = sol
            k = kkt_residual(None, None, self.C, lam, th, _cache=self._cache)
            m = _merit(k)
            if m < best_m:
                best, best_m = th, m
            if kkt_ok(k, self.opts):
                break
            # update the guess from the new point
            g = self._H @ th - self._Pty
            if lam > 0:
                gs, ts = g[sel], th[sel]
                was0 = zero[sel]
                release = was0 & (np.abs(gs) > lam)
                flip = ~was0 & (s[sel] * ts <= 0)
                new0 = (was0 & ~release) | flip
                ns = np.where(release, -np.sign(gs), s[sel])
                ns[new0] = 0.0
                zero[sel] = new0
                s[sel] = ns
            slack = self.b - self.Ab @ th
            act = (act & (nu_act >= 0)) | (slack < 0)
        return best

    def _eq_qp(self, lam, zero, s, act):
        n = self.n
        Z = np.flatnonzero(zero)
        ai = np.flatnonzero(act)
        Eq = sp.vstack([sp.csr_matrix((np.ones(Z.size), (np.arange(Z.size), Z)), shape=(Z.size, n)),
                        self.Ab[ai]], format="csc")
        req = np.concatenate([np.zeros(Z.size), self.b[ai]])
        H = self._H
        rhs = np.concatenate([self._Pty - lam * s, req])
        k = Eq.shape[0]
        delta = 1e-10 * max(1.0, _inf(H.diagonal()))
        K = sp.bmat([[H, Eq.T], [Eq, None]], format="csc") if k else H
        Kr = (sp.bmat([[H + delta * sp.identity(n), Eq.T], [Eq, -delta * sp.identity(k)]], format="csc")
              if k else (H + delta * sp.identity(n)).tocsc())
        try:
            lu = splu(Kr, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError:
            return None
        sol = lu.solve(rhs)
        for _ in range(self.opts.polish_refine):
            sol = sol + lu.solve(rhs - K @ sol)
        if not np.all(np.isfinite(sol)):
            return None
        th = sol[:n].copy()
        th[Z] = 0.0
        nu_act = np.zeros(self.m, dtype=float)
        nu_act[ai] = sol[n + Z.size:]
        return th, nu_act


def _snap(theta, sel, rtol: float = 1e-10):
    """Copy of theta with negligible selected entries set to exactly zero,
    or None when there is nothing to snap."""
    tiny = np.abs(theta[sel]) <= rtol * max(1.0, _inf(theta))
    tiny &= theta[sel] != 0
    if not tiny.any():
        return None
    out = theta.copy()
    out[sel[tiny]] = 0.0
    return out


def _shrink_feasible(A, b, th):
    """Largest t in [0, 1] with A (t th) <= b; needs b >= 0."""
    ath = A @ th
    viol = ath > b
    if not viol.any():
        return th
    return th * float(np.min(b[viol] / ath[viol]))


def huber_active_set(X, y, lam, A, b, theta0, max_iter=2000):
    """Minimize sum_i rho(y_i - x_i theta) s.t. A theta <= b, where
    rho(t) = t^2 for |t| <= lam/2 and lam |t| - lam^2/4 otherwise.

    This is the sparse problem with wbar = soft(y - X theta, lam/2)
    eliminated. Primal active-set method: Newton steps on the current
    working set with exact line search over the kinks of rho. Samples
    sitting on a kink are assigned to the piece the step moves them into.
    """
    th = _shrink_feasible(A, b, np.asarray(theta0, dtype=float).copy())
    if lam == 0:
        return th
    h = lam / 2
    p = th.size
    reg = 1e-13 * np.sum(X * X, axis=0).max()
    W = [int(j) for j in np.flatnonzero(b - A @ th <= 1e-13 * (1 + np.abs(b)))]
    for _ in range(max_iter):
        r = y - X @ th
        onk = np.abs(np.abs(r) - h) <= 1e-9 * h
        inside = (np.abs(r) < h) & ~onk
        Nb = _null_space(A[W]) if W else np.eye(p)
        d = None
        quad = inside | onk
        for _k in range(6):
            sg = np.where(quad, 0.0, np.sign(r))
            grad = -2 * X[quad].T @ r[quad] - lam * X[~quad].T @ sg[~quad]
            if not Nb.shape[1]:
                d = None
                break
            Hr = Nb.T @ (2 * X[quad].T @ X[quad]) @ Nb
            gr = Nb.T @ grad
            gtol = 1e-12 * max(1e-300, 2 * float(np.max(np.abs(X).T @ np.minimum(np.abs(r), h))))
            d = Nb @ -np.linalg.solve(Hr + reg * np.eye(Hr.shape[0]), gr)
            if (grad @ d >= 0 or np.abs(gr).max() <= gtol
                    or np.abs(d).max() <= 1e-15 * (1 + np.abs(th).max())):
                d = None
                break
            c = X @ d
            new = inside | (onk & (np.sign(r) * c >= 0))
            if np.array_equal(new, quad):
                break
            quad = new
        if d is None:
            # stationary on W: check multipliers
            if not W:
                break
            mu = np.linalg.lstsq(A[W].T, -grad, rcond=None)[0]
            if mu.min() >= -1e-12 * max(1.0, np.abs(mu).max()):
                break
            W.pop(int(np.argmin(mu)))
            continue
        c = X @ d
        ad = A @ d
        t_max, block = np.inf, None
        for j in range(A.shape[0]):
            if j not in W and ad[j] > 1e-15 * np.abs(A[j]).sum() * np.abs(d).max():
                t = max((b[j] - A[j] @ th) / ad[j], 0.0)
                if t < t_max:
                    t_max, block = t, j
        t = _line_search(r, c, h, lam, t_max, onk)
        if block is not None and t >= t_max:
            th = th + t_max * d
            W.append(block)
            continue
        if t == 0:
            break
        th = th + t * d
    return th


def _dphi(r, c, h, lam, t):
    u = r - t * c
    return float(-c @ np.where(np.abs(u) <= h, 2 * u, lam * np.sign(u)))


def _line_search(r, c, h, lam, t_max, onk):
    """Exact minimizer over [0, t_max] of the convex piecewise quadratic
    t -> sum rho(r - t c). Kinks at t ~ 0 of samples already on a kink are skipped."""
    nz = c != 0
    off = nz & ~onk
    on = nz & onk
    s_on = np.sign(r[on])
    bp = np.concatenate([(r[off] - h) / c[off], (r[off] + h) / c[off], (r[on] + s_on * h) / c[on]])
    bp = np.unique(bp[(bp > 0) & (bp < t_max)])
    if _dphi(r, c, h, lam, 0.0) >= 0:
        return 0.0
    pts = np.concatenate([[0.0], bp])
    if np.isfinite(t_max):
        pts = np.append(pts, t_max)
    lo, hi = 0, len(pts) - 1
    if _dphi(r, c, h, lam, pts[hi]) < 0:
        if np.isfinite(t_max):
            return float(t_max)
        ta = pts[hi]
        tb = ta + 1.0 + abs(ta)
        while _dphi(r, c, h, lam, tb) < 0:  # phi is linear beyond the last kink
            tb *= 2
            if tb > 1e300:
                return float(ta)
    else:
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if _dphi(r, c, h, lam, pts[mid]) < 0:
                lo = mid
            else:
                hi = mid
        ta, tb = pts[lo], pts[hi]
    u = r - 0.5 * (ta + tb) * c
    qm = np.abs(u) <= h
    slope = 2 * float(c[qm] @ c[qm])
    g0 = _dphi(r, c, h, lam, ta)
    if slope <= 0:
        return float(tb)
    return float(min(max(ta - g0 / slope, ta), tb))


def _null_space(Aw):
    u, sv, vt = np.linalg.svd(Aw)
    rank = int(np.sum(sv > 1e-12 * max(1.0, sv.max())))
    return vt[rank:].T


def _colmax(M) -> np.ndarray:
    M = sp.csc_matrix(M)
    out = np.zeros(M.shape[1])
    if M.nnz:
        a = np.abs(M.data)
        nonempty = np.diff(M.indptr) > 0
        out[nonempty] = np.maximum.reduceat(a, M.indptr[:-1][nonempty])
    return out


def _merit(k: dict) -> float:
    return max(k["primal_inf"] / (1 + k["primal_scale"]),
               k["stationarity_inf"] / (1 + k["dual_scale"]),
               k["complementarity"] / (1 + k["dual_scale"]))


def solve_spdir(prob, S, C: ConstraintSet, lam: float, opts: SolverOptions | None = None,
                warm: WarmStart | None = None) -> SolverResult:
    ws = SpdirWorkspace(prob, S, C, opts)
    res = ws.solve(lam, warm)
    if res.status != CONVERGED:
        log.warning("solve_spdir: status %s after %d iterations (lambda=%g)", res.status,
                    res.iterations, lam)
    return res
