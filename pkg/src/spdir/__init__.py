"""Simultaneous identification of a building thermal model and a sparse
transformed disturbance from input/output data."""
from .constraints import ConstraintSet, build_constraints, check_feasible, check_regularity
from .datagen import ScenarioSettings, TimeSeriesDataset, load_csv, make_scenario, write_csv
from .lambda_select import LambdaPath, auto_select, default_grid, select_lambda, sweep
from .rc_model import PRESETS, PlantParams, RcParams, tustin_disturbance_coeffs, tustin_plant_params
from .regression import ThetaFull, build_regression, predict, selector_matrix
from .solver import SolverOptions, SolverResult, kkt_residual, solve_spdir

__version__ = "0.1.0"
