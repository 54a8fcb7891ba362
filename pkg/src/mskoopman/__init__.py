"""Multi-step EDMD predictors for Koopman model predictive control."""
from .config import ExperimentConfig, load_config
from .dictionary import Dictionary, build_dictionary, legendre_eval_1d
from .dynamics import (PlantSpec, SamplingSpec, TrajectoryDataset, generate_dataset,
                       plant_derivative, prbs_sequence, rk4_step)
from .edmd_multistep import (CondensedModel, build_cache, fit_multistep, predict_multistep,
                             prune)
from .edmd_onestep import OneStepModel, condense, fit_onestep, spectral_radius
from .evaluation import MseReport, evaluate_mse
from .io import load_model, save_model
from .mpc_loop import ClosedLoopRun, run_closed_loop
from .qp import MpcConfig, QpProblem, build_qp, check_kkt, solve_qp
from .regression import LsProblem, LsSolution, solve_elastic_net, solve_ls

__version__ = "0.1.0"

__all__ = [
    "ClosedLoopRun", "CondensedModel", "Dictionary", "ExperimentConfig", "LsProblem", "LsSolution", "MpcConfig",
    "MseReport", "OneStepModel", "PlantSpec", "QpProblem", "SamplingSpec", "TrajectoryDataset",
    "build_cache", "build_dictionary", "build_qp", "check_kkt", "condense", "evaluate_mse",
    "fit_multistep", "fit_onestep", "generate_dataset", "legendre_eval_1d", "load_config", "load_model",
    "plant_derivative", "prbs_sequence", "predict_multistep", "prune", "rk4_step",
    "run_closed_loop", "save_model", "solve_elastic_net", "solve_ls", "solve_qp",
    "spectral_radius",
]
