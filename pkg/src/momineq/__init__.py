"""Two-stage inference for separable moment-inequality models."""

__version__ = "0.1.0"

from .confset import ConfidenceGrid, GridDim, GridSpec, evaluate_point, export_slices, invert_test
from .demand import DemandData, Draws, estimate_demand, gmm_objective, invert_shares, simulate_shares
from .market import SunkCostTheta, SynthConfig, VehicleEvent, VehicleMarketModel, prepare_panel, synth_dgp
from .moment_model import CallableMomentModel, MomentModel
from .polyhedra import eliminate_nuisance, enumerate_h, nuisance_feasible
from .qp import QpProblem, QpSolution, solve_projection
from .rcc import RccResult, rcc_decide, rcc_test, slackness_z
from .stats import chi2_quantile, spd_solve, std_normal_cdf
from .two_stage import FirstStageEstimate, corrected_covariance, jacobian_p_delta

__all__ = [
    "CallableMomentModel",
    "ConfidenceGrid",
    "DemandData",
    "Draws",
    "FirstStageEstimate",
    "GridDim",
    "GridSpec",
    "MomentModel",
    "QpProblem",
    "QpSolution",
    "RccResult",
    "SunkCostTheta",
    "SynthConfig",
    "VehicleEvent",
    "VehicleMarketModel",
    "chi2_quantile",
    "corrected_covariance",
    "eliminate_nuisance",
    "enumerate_h",
    "estimate_demand",
    "evaluate_point",
    "export_slices",
    "gmm_objective",
    "invert_shares",
    "invert_test",
    "jacobian_p_delta",
    "nuisance_feasible",
    "prepare_panel",
    "rcc_decide",
    "rcc_test",
    "simulate_shares",
    "slackness_z",
    "solve_projection",
    "spd_solve",
    "std_normal_cdf",
    "synth_dgp",
]
