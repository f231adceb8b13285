import time

import pytest

from spdir.analysis import max_relative_fr_error, param_error_table, rms_error
from spdir.constraints import build_constraints
from spdir.datagen import ScenarioSettings, make_scenario
from spdir.lambda_select import auto_select, default_grid, sweep
from spdir.rc_model import tustin_plant_params
from spdir.regression import build_regression, predict, selector_matrix


class ScenarioRuns:
    """Default-grid sweep plus automatic selection, once per scenario per session."""

    def __init__(self):
        self._cache = {}

    def __call__(self, scenario: str) -> dict:
        if scenario not in self._cache:
            self._cache[scenario] = self._run(scenario)
        return self._cache[scenario]

    @staticmethod
    def _run(scenario):
        t0 = time.perf_counter()
        cfg = ScenarioSettings(scenario=scenario)
        train, valid = make_scenario(cfg)
        prob = build_regression(train)
        S = selector_matrix(train.k_max)
        C = build_constraints()
        grid = default_grid(prob, S, C)
        path = sweep(prob, S, C, grid)
        sel = auto_select(prob, S, C, path=path)
        res = sel.result
        truth = tustin_plant_params(cfg.params, cfg.t_s)
        th = res.theta.theta_p
        y_hat = predict(th, res.theta.w_bar, valid.u, valid.y[:2])
        return {
            "cfg": cfg, "train": train, "valid": valid, "path": path, "selection": sel,
            "result": res, "truth": truth,
            "errors": param_error_table(truth, th),
            "fr_error": max_relative_fr_error(truth, th, "qhvac", t_s=cfg.t_s),
            "rms": rms_error(valid.y, y_hat),
            "seconds": time.perf_counter() - t0,
        }


@pytest.fixture(scope="session")
def scenario_runs():
    return ScenarioRuns()


# one line per acceptance criterion, repeated at the end of the run
ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    def report(criterion: int, ok: bool, detail: str, seconds: float):
        line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail} ({seconds:.2f} s)"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
