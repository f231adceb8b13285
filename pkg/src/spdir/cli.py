"""Command-line front end: simulate, identify, sweep, validate, reproduce.

Exit codes: 0 when every requested stage converged and passed the
feasibility check, 1 when a solve, the feasibility check or the lambda
selection failed, 2 for usage, configuration and I/O errors.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import analysis
from .constraints import DEFAULT_TOL, build_constraints, check_feasible
from .datagen import (SCENARIOS, DisturbanceProfile, OpenLoopInput, PiConfig, ScenarioSettings,
                      TimeSeriesDataset, WeatherConfig, load_csv, make_scenario, write_csv)
from .errors import DomainError, ParseError, PreconditionError, SelectionError
from .lambda_select import (LambdaPath, ThresholdSchedule, auto_select, default_grid, select_lambda,
                            sweep)
from .rc_model import CHANNELS, DEFAULT_PRESET, DEFAULT_TS, PRESETS, RcParams, tustin_plant_params
from .regression import build_regression, predict, selector_matrix
from .solver import CONVERGED, SolverOptions, solve_spdir

log = logging.getLogger("spdir")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- config

@dataclass
class ScenarioConfig:
    scenario: str = "OL-PW"
    rc_preset: str | None = DEFAULT_PRESET
    rc_params: dict | None = None
    t_s: float = DEFAULT_TS
    horizon: int = 2016
    seed: int = 0
    hold: str = "foh"
    x0: tuple = (25.0, 25.5)
    pi: dict = field(default_factory=lambda: asdict(PiConfig()))
    prbs: dict = field(default_factory=lambda: {"low": 22.0, "high": 27.0, "bit_period": 6})
    disturbance: dict = field(default_factory=dict)
    open_loop: dict = field(default_factory=dict)
    weather: dict = field(default_factory=dict)
    output_dir: str = "."

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known - {"seeds"}
        if extra:
            raise DomainError(f"unknown config keys {sorted(extra)}")
        d = dict(d)
        if "seeds" in d:  # {"seed": n} accepted as an alias block
            d["seed"] = int(d.pop("seeds").get("seed", 0))
        if "x0" in d:
            d["x0"] = tuple(d["x0"])
        cfg = cls(**d)
        try:
            cfg.settings()  # validate eagerly
        except TypeError as e:
            raise DomainError(f"bad config block: {e}") from None
        return cfg

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        try:
            with open(path, encoding="utf-8") as f:
                d = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON in {path}: {e.msg}", row=e.lineno, column=e.colno) from None
        if not isinstance(d, dict):
            raise ParseError(f"{path}: top level must be an object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["x0"] = list(self.x0)
        return d

    @property
    def params(self) -> RcParams:
        if self.rc_params is not None:
            return RcParams.from_dict(self.rc_params)
        if self.rc_preset not in PRESETS:
            raise DomainError(f"unknown rc_preset {self.rc_preset!r}, expected one of {sorted(PRESETS)}")
        return PRESETS[self.rc_preset]

    def settings(self) -> ScenarioSettings:
        if self.scenario not in SCENARIOS:
            raise DomainError(f"unknown scenario {self.scenario!r}, expected one of {SCENARIOS}")
        pr = self.prbs
        dist = dict(self.disturbance)
        if "segments" in dist:
            dist["segments"] = tuple(tuple(s) for s in dist["segments"])
        ol = dict(self.open_loop)
        if "hours" in ol:
            ol["hours"] = tuple(ol["hours"])
        return ScenarioSettings(
            scenario=self.scenario, params=self.params, t_s=float(self.t_s), horizon=int(self.horizon),
            seed=int(self.seed), hold=self.hold, x0=tuple(float(v) for v in self.x0),
            pi=PiConfig(**self.pi), prbs_low=float(pr.get("low", 22.0)),
            prbs_high=float(pr.get("high", 27.0)), prbs_bit_period=int(pr.get("bit_period", 6)),
            disturbance=DisturbanceProfile(**dist), open_loop=OpenLoopInput(**ol),
            weather=WeatherConfig(**self.weather))


def _atomic_text(path, text: str) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path, obj) -> None:
    _atomic_text(path, json.dumps(obj, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if hasattr(o, "to_dict"):
        return o.to_dict()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _solver_opts(a) -> SolverOptions:
    return SolverOptions(max_iter=a.max_iter, eps_abs=a.eps_abs, eps_rel=a.eps_rel)


# ---------------------------------------------------------------- stages

def simulate(cfg: ScenarioConfig, out_dir=None) -> dict:
    out = out_dir or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    train, valid = make_scenario(cfg.settings())
    paths = {"train": os.path.join(out, f"{cfg.scenario}_train.csv"),
             "valid": os.path.join(out, f"{cfg.scenario}_valid.csv"),
             "config": os.path.join(out, f"{cfg.scenario}_config.json")}
    write_csv(train, paths["train"])
    write_csv(valid, paths["valid"])
    _write_json(paths["config"], cfg.to_dict())
    return paths


def identify(d: TimeSeriesDataset, lam: float | None, opts: SolverOptions, feas_tol: float = DEFAULT_TOL,
             grid=None, schedule: ThresholdSchedule | None = None) -> tuple[dict, bool]:
    """Solve at lam, or choose lam automatically when it is None.

    Returns (report, ok) where ok means converged and feasible."""
    prob = build_regression(d)
    S = selector_matrix(d.k_max)
    C = build_constraints()
    report = {"t_s": d.t_s, "k_max": d.k_max}
    if lam is None:
        try:
            sel = auto_select(prob, S, C, opts, grid=grid, schedule=schedule)
        except SelectionError as e:
            report["selection"] = {"accepted": False, "diagnostic": str(e)}
            if e.path is not None:
                report["path"] = _path_dict(e.path)
            return report, False
        res = sel.result
        report["selection"] = {**sel.selection.to_dict(), "tau_sol": sel.tau_sol, "tau_res": sel.tau_res,
                               "rounds": sel.rounds}
    else:
        res = solve_spdir(prob, S, C, lam, opts)
    feas = check_feasible(res.theta.theta_p, feas_tol, C)
    report.update(res.to_dict())
    report["feasibility"] = {"tol": feas_tol, "feasible": feas.feasible,
                             "violations": [v.to_dict() for v in feas.violations],
                             "boundary_rows": list(feas.boundary)}
    ok = res.status == CONVERGED and feas.feasible
    return report, ok


def _path_dict(path: LambdaPath) -> dict:
    return {"lambda": path.lambdas.tolist(), "solution_norm": path.solution_norms.tolist(),
            "residual_norm": path.residual_norms.tolist(), "status": list(path.statuses)}


def validate(result: dict, valid: TimeSeriesDataset, params: RcParams | None = None) -> dict:
    th = np.asarray(result["theta_p"], dtype=float)
    wbar = np.asarray(result["w_bar"], dtype=float)
    t_s = float(result.get("t_s", valid.t_s))
    if wbar.size != valid.k_max - 2:
        raise DomainError(f"result has {wbar.size + 2} samples but the validation set has {valid.k_max}")
    y_hat = predict(th, wbar, valid.u, valid.y[:2])
    m = {"rms_C": analysis.rms_error(valid.y, y_hat), "t_s": t_s}
    if params is not None:
        truth = tustin_plant_params(params, t_s)
        m["param_errors"] = [r.to_dict() for r in analysis.param_error_table(truth, th)]
        fr = {}
        for ch in CHANNELS:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                err, w = analysis.max_relative_fr_error(truth, th, ch, t_s=t_s)
            for c in caught:
                log.info("%s", c.message)
            fr[ch] = {"max_rel_error": err, "omega_rad_per_h": w}
        m["fr_error"] = fr
    eps = 0.0
    if valid.w is not None and params is not None:
        rep = analysis.prop1_check(valid.w, params, t_s)
        m["sparsity_true"] = rep.to_dict()
        eps = rep.epsilon
    elif params is not None:
        eps = analysis.eps_bar(params, t_s, 1.0)
    m["sparsity_estimate"] = analysis.wbar_report(wbar, eps).to_dict()
    m["_y_hat"] = y_hat
    return m


# ---------------------------------------------------------------- commands

def cmd_simulate(a) -> int:
    cfg = _config(a)
    paths = simulate(cfg, a.out)
    print(json.dumps(paths))
    return EXIT_OK


def cmd_identify(a) -> int:
    d = load_csv(a.data, t_s=a.t_s)
    if a.auto == (a.lam is not None):
        raise UsageError("give exactly one of --lambda or --auto")
    report, ok = identify(d, None if a.auto else a.lam, _solver_opts(a), a.feas_tol)
    base = os.path.splitext(a.data)[0]
    out = a.out or base + "_result.json"
    _write_json(out, report)
    if "w_bar" in report:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["k", "wbar_hat"])
        for k, v in enumerate(report["w_bar"], start=3):
            wr.writerow([k, repr(float(v))])
        _atomic_text(a.wbar or base + "_wbar.csv", buf.getvalue())
    summary = {k: report.get(k) for k in ("lambda", "status", "iterations", "objective")}
    summary["feasible"] = report.get("feasibility", {}).get("feasible")
    print(json.dumps(summary))
    if not ok:
        log.error("identify did not succeed: %s", report.get("selection", {}).get("diagnostic")
                  or f"status={report.get('status')} feasible={summary['feasible']}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_sweep(a) -> int:
    d = load_csv(a.data, t_s=a.t_s)
    prob = build_regression(d)
    S = selector_matrix(d.k_max)
    C = build_constraints()
    if a.grid:
        grid = np.array([float(v) for v in a.grid.split(",")])
    else:
        grid = default_grid(prob, S, C, n=a.n, lo=a.lo, hi=a.hi)
    path = sweep(prob, S, C, grid, _solver_opts(a))
    out = a.out or os.path.splitext(a.data)[0] + "_path.csv"
    path.write_csv(out)
    try:
        sel = auto_select(prob, S, C, path=path)
        info = {**sel.selection.to_dict(), "tau_sol": sel.tau_sol, "tau_res": sel.tau_res}
    except SelectionError as e:
        info = {"accepted": False, "diagnostic": str(e)}
    info["degraded_points"] = int(path.degraded.sum())
    print(json.dumps(info))
    return EXIT_OK if not path.degraded.any() else EXIT_FAIL


def cmd_validate(a) -> int:
    with open(a.result, encoding="utf-8") as f:
        try:
            result = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON: {e.msg}", row=e.lineno, column=e.colno) from None
    if "theta_p" not in result:
        raise ParseError(f"{a.result} holds no solution (theta_p missing)")
    t_s = float(result.get("t_s", a.t_s))
    valid = load_csv(a.data, t_s=t_s)
    params = _config(a).params if a.config else None
    m = validate(result, valid, params)
    if a.bode:
        truth = tustin_plant_params(params, t_s) if params is not None else None
        _atomic_text(a.bode, analysis.bode_csv(analysis.bode_rows(truth, result["theta_p"], t_s)))
    m.pop("_y_hat")
    out = a.out or os.path.splitext(a.result)[0] + "_metrics.json"
    _write_json(out, m)
    print(json.dumps({"rms_C": m["rms_C"], **({"fr_error_qhvac": m["fr_error"]["qhvac"]["max_rel_error"]}
                                              if "fr_error" in m else {})}))
    return EXIT_OK


def reproduce(base: ScenarioConfig, out: str, scenarios=SCENARIOS, opts: SolverOptions | None = None,
              feas_tol: float = DEFAULT_TOL) -> tuple[dict, bool]:
    """All scenarios end to end, with a parameter table laid out per scenario."""
    os.makedirs(out, exist_ok=True)
    opts = opts or SolverOptions()
    summary = {}
    ok_all = True
    for sc in scenarios:
        cfg = replace(base, scenario=sc)
        paths = simulate(cfg, out)
        train = load_csv(paths["train"], t_s=cfg.t_s)
        valid = load_csv(paths["valid"], t_s=cfg.t_s)
        report, ok = identify(train, None, opts, feas_tol)
        _write_json(os.path.join(out, f"{sc}_result.json"), report)
        entry = {"converged": report.get("status") == CONVERGED, "feasible": ok,
                 "lambda": report.get("lambda")}
        if "theta_p" in report:
            m = validate(report, valid, cfg.params)
            m.pop("_y_hat")
            _write_json(os.path.join(out, f"{sc}_metrics.json"), m)
            entry.update(rms_C=m["rms_C"], fr_error_qhvac=m["fr_error"]["qhvac"]["max_rel_error"],
                         params=m["param_errors"])
        summary[sc] = entry
        ok_all &= ok
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    header = ["parameter"]
    for sc in scenarios:
        header += [f"{sc}_true", f"{sc}_estimate", f"{sc}_error_pct"]
    wr.writerow(header)
    for i in range(11):
        row = [f"theta{i + 1}"]
        for sc in scenarios:
            p = summary[sc].get("params")
            if p is None:
                row += ["", "", ""]
            else:
                pe = p[i]["percent_error"]
                row += [repr(p[i]["true"]), repr(p[i]["estimate"]), "" if pe is None else f"{pe:.4f}"]
        wr.writerow(row)
    _atomic_text(os.path.join(out, "table.csv"), buf.getvalue())
    _write_json(os.path.join(out, "summary.json"), summary)
    return summary, ok_all


def cmd_reproduce(a) -> int:
    base = _config(a)
    scen = a.scenarios.split(",") if a.scenarios else list(SCENARIOS)
    for s in scen:
        if s not in SCENARIOS:
            raise UsageError(f"unknown scenario {s!r}")
    summary, ok = reproduce(base, a.out or base.output_dir, scen, _solver_opts(a), a.feas_tol)
    print(json.dumps({sc: {k: v for k, v in e.items() if k != "params"} for sc, e in summary.items()}))
    return EXIT_OK if ok else EXIT_FAIL


def _config(a) -> ScenarioConfig:
    cfg = ScenarioConfig.load(a.config) if getattr(a, "config", None) else ScenarioConfig()
    over = {}
    for key in ("scenario", "seed", "horizon"):
        v = getattr(a, key, None)
        if v is not None:
            over[key] = v
    if getattr(a, "preset", None):
        over["rc_preset"] = a.preset
        over["rc_params"] = None
    if getattr(a, "ts_override", None) is not None:
        over["t_s"] = a.ts_override
    if over:
        cfg = ScenarioConfig.from_dict({**cfg.to_dict(), **over})
    return cfg


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spdir", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def solver_flags(q):
        q.add_argument("--max-iter", type=int, default=SolverOptions.max_iter)
        q.add_argument("--eps-abs", type=float, default=SolverOptions.eps_abs)
        q.add_argument("--eps-rel", type=float, default=SolverOptions.eps_rel)

    def scenario_flags(q):
        q.add_argument("--config", help="scenario JSON")
        q.add_argument("--scenario", choices=SCENARIOS)
        q.add_argument("--seed", type=int)
        q.add_argument("--horizon", type=int)
        q.add_argument("--preset", choices=sorted(PRESETS))
        q.add_argument("--ts", dest="ts_override", type=float, help="sampling period in hours")

    q = sub.add_parser("simulate", help="generate training and validation CSVs")
    scenario_flags(q)
    q.add_argument("--out", help="output directory (default: config output_dir)")
    q.set_defaults(func=cmd_simulate)

    q = sub.add_parser("identify", help="estimate theta_p and wbar from a dataset")
    q.add_argument("data")
    q.add_argument("--lambda", dest="lam", type=float)
    q.add_argument("--auto", action="store_true", help="choose lambda by the threshold heuristic")
    q.add_argument("--t-s", type=float, default=DEFAULT_TS)
    q.add_argument("--feas-tol", type=float, default=DEFAULT_TOL)
    q.add_argument("--out", help="result JSON path")
    q.add_argument("--wbar", help="estimated wbar CSV path")
    solver_flags(q)
    q.set_defaults(func=cmd_identify)

    q = sub.add_parser("sweep", help="solve along a lambda grid and write the two curves")
    q.add_argument("data")
    q.add_argument("--t-s", type=float, default=DEFAULT_TS)
    q.add_argument("--grid", help="comma separated lambda values")
    q.add_argument("--n", type=int, default=30)
    q.add_argument("--lo", type=float, default=1e-6)
    q.add_argument("--hi", type=float, default=1e2)
    q.add_argument("--out", help="path CSV")
    solver_flags(q)
    q.set_defaults(func=cmd_sweep)

    q = sub.add_parser("validate", help="prediction and model-quality metrics")
    q.add_argument("result")
    q.add_argument("data")
    q.add_argument("--config", help="scenario JSON with the true RcParams")
    q.add_argument("--t-s", type=float, default=DEFAULT_TS)
    q.add_argument("--bode", help="write Bode magnitude CSV here")
    q.add_argument("--out", help="metrics JSON path")
    q.set_defaults(func=cmd_validate)

    q = sub.add_parser("reproduce", help="run every scenario end to end")
    scenario_flags(q)
    q.add_argument("--scenarios", help="comma separated subset")
    q.add_argument("--out", help="output directory")
    q.add_argument("--feas-tol", type=float, default=DEFAULT_TOL)
    solver_flags(q)
    q.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    p = build_parser()
    a = p.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(a.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return a.func(a)
    except (UsageError, DomainError, ParseError, PreconditionError, OSError) as e:
        print(f"spdir {a.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
