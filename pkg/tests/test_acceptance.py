"""Acceptance criteria, one test each. Every test reports a PASS/FAIL line with
the measured value and its runtime; the lines are repeated in the terminal
summary."""
import time

import numpy as np
import pytest

from _util import (piecewise_constant, random_admissible, random_instance, reference_objective,
                   sample_on_face)
from spdir.analysis import prop1_check
from spdir.constraints import ConstraintSet, build_constraints, check_feasible, check_regularity, redundancy_check
from spdir.datagen import SCENARIOS
from spdir.lambda_select import select_lambda
from spdir.rc_model import PRESETS, SIGN_PATTERN, tustin_plant_params
from spdir.solver import SolverOptions, DenseProblem, solve_spdir

TS = 1 / 12


def selector(sel, n):
    S = np.zeros((len(sel), n))
    S[np.arange(len(sel)), sel] = 1.0
    return S


def test_criterion_1_constraint_set(acceptance_report):
    t0 = time.perf_counter()
    C = build_constraints()
    reps = redundancy_check(C)
    dt = time.perf_counter() - t0
    ok = C.A.shape == (15, 11) and len(reps) == 2 and all(r["implied"] for r in reps) and dt < 1
    assert acceptance_report(1, ok, f"{C.A.shape[0]} rows, dropped rows implied: "
                             f"{[r['implied'] for r in reps]}", dt)


def test_criterion_2_tustin_sign_theorem(acceptance_report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    C = build_constraints()
    A, b = np.asarray(C.A), np.asarray(C.b)
    thetas = np.array([tustin_plant_params(*random_admissible(rng)).theta for _ in range(10_000)])
    worst_slack = float((thetas @ A.T - b).max())
    feasible = bool(np.all(thetas @ A.T <= b))
    struct = float(max(np.abs(thetas[:, 6] - 2 * thetas[:, 5]).max(),
                       np.abs(thetas[:, 6] - 2 * thetas[:, 7]).max()))
    dt = time.perf_counter() - t0
    ok = feasible and struct <= 1e-12 and dt < 10
    assert acceptance_report(2, ok, f"1e4 points, max A theta - b = {worst_slack:.3g}, "
                             f"structure deviation {struct:.2g}", dt)


def test_criterion_3_sparsity_bound(acceptance_report):
    # literal inequality: fraction outside eps_bar <= 2 c_f(w), no tolerance
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    p = PRESETS["light_wall"]
    failures, worst = 0, 0.0
    for _ in range(100):
        w = piecewise_constant(rng, 2016, 0.05, levels=(0.0, 1.0))
        r = prop1_check(w, p, TS)
        if not r.fraction_outside <= r.prop1_bound:
            failures += 1
            worst = max(worst, r.fraction_outside - r.prop1_bound)
        assert r.n_outside <= 2 * r.n_changes  # the count form always holds
    dt = time.perf_counter() - t0
    ok = failures == 0 and dt < 5
    assert acceptance_report(3, ok, f"{failures}/100 trials exceed 2 c_f (worst excess {worst:.2e}); "
                             f"count <= 2 changes held in all", dt)


def test_criterion_4_solver_oracle(acceptance_report):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(50):
        Phi, y, sel, lam, A, b = random_instance(np.random.default_rng(1000 + seed))
        C = ConstraintSet(A, b, ("c",) * A.shape[0])
        r = solve_spdir(DenseProblem(Phi, y), selector(sel, Phi.shape[1]), C, lam)
        f_ref, _ = reference_objective(Phi, y, sel, lam, A, b)
        worst = max(worst, abs(r.objective - f_ref) / abs(f_ref))
    worst_st = 0.0
    for seed in range(20):
        rng = np.random.default_rng(2000 + seed)
        n = int(rng.integers(2, 30))
        Q, _ = np.linalg.qr(rng.normal(size=(n + 5, n)))
        y = rng.normal(size=n + 5) * 2
        sel = np.sort(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False))
        lam = float(rng.uniform(0.05, 4))
        r = solve_spdir(DenseProblem(Q, y), selector(sel, n), ConstraintSet(np.zeros((0, n)), np.zeros(0), ()), lam)
        c = Q.T @ y
        expect = c.copy()
        expect[sel] = np.sign(c[sel]) * np.maximum(np.abs(c[sel]) - lam / 2, 0)
        worst_st = max(worst_st, float(np.abs(r.x - expect).max()))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and worst_st <= 1e-8 and dt < 60
    assert acceptance_report(4, ok, f"50 instances, max relative objective gap {worst:.2e}; "
                             f"soft threshold max abs error {worst_st:.2e}", dt)


@pytest.mark.parametrize("scenario", ["OL-PW", "CL-NPW"])
def test_criterion_5_table(scenario, scenario_runs, acceptance_report):
    run = scenario_runs(scenario)
    errs = run["errors"]
    th = run["result"].theta.theta_p
    e12 = [abs(errs[0].percent), abs(errs[1].percent)]
    signs = bool(np.all(np.sign(th) == SIGN_PATTERN))
    ok = max(e12) <= 1.0 and signs and run["seconds"] < 300
    assert acceptance_report(5, ok, f"{scenario}: |err theta1| = {e12[0]:.3f}%, |err theta2| = {e12[1]:.3f}%, "
                             f"signs match: {signs}", run["seconds"])


@pytest.mark.parametrize("scenario", ["OL-PW", "CL-NPW"])
def test_criterion_6_frequency_response(scenario, scenario_runs, acceptance_report):
    run = scenario_runs(scenario)
    err, w = run["fr_error"]
    assert acceptance_report(6, err <= 0.15, f"{scenario}: max relative FR error {err:.4f} at {w:.3g} rad/h",
                             run["seconds"])


@pytest.mark.parametrize("scenario,band", [("OL-PW", 1.5), ("CL-NPW", 0.3)])
def test_criterion_7_validation_rms(scenario, band, scenario_runs, acceptance_report):
    run = scenario_runs(scenario)
    assert acceptance_report(7, run["rms"] <= band, f"{scenario}: RMS {run['rms']:.4f} C (band {band})",
                             run["seconds"])


def test_criterion_8_lambda_path(scenario_runs, acceptance_report):
    opts = SolverOptions()
    parts, ok, total = [], True, 0.0
    for sc in SCENARIOS:
        run = scenario_runs(sc)
        total += run["seconds"]
        p = run["path"]
        sn, rn = p.solution_norms, p.residual_norms
        tol_s = 10 * (opts.eps_abs + opts.eps_rel * np.maximum(sn[1:], sn[:-1]))
        tol_r = 10 * (opts.eps_abs + opts.eps_rel * np.maximum(rn[1:], rn[:-1]))
        up = float(np.max(np.diff(sn) - tol_s))
        down = float(np.max(-np.diff(rn) - tol_r))
        sel = run["selection"]
        again = select_lambda(p, sel.tau_sol, sel.tau_res)
        good = up <= 0 and down <= 0 and sel.selection.accepted and again.accepted and not p.degraded.any()
        ok &= good
        parts.append(f"{sc} rounds={sel.rounds} lambda*={sel.lambda_star:.3g}")
    ok &= total < 900
    assert acceptance_report(8, ok, "monotone and accepted on " + ", ".join(parts), total)


def test_criterion_9_regularity(acceptance_report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    bad, n_active = 0, 0
    for _ in range(1000):
        th, active = sample_on_face(rng)
        assert check_feasible(th, tol=1e-12).feasible
        r = check_regularity(th)
        n_active += len(active)
        bad += (not r.regular) or list(r.active) != active
    dt = time.perf_counter() - t0
    ok = bad == 0 and dt < 5
    assert acceptance_report(9, ok, f"1e3 face points, {n_active} active rows in total, {bad} irregular", dt)
