"""Backstepping boundary control of Markov-jump hyperbolic PDE-ODE systems.

Kernel equations are solved on the triangular domain by characteristics
(:mod:`mjbackstep.kernel_solver`) or approximated by a branch/trunk
operator network (:mod:`mjbackstep.neural_operator`); the closed loop is
simulated with upwind differences under Markov mode switching
(:mod:`mjbackstep.simulator`).
"""

from .kernel_solver import KernelGrid, evaluate_kernels, solve_kernels
from .markov import MarkovChainSpec, MarkovPath, kolmogorov_evolve, sample_path
from .metrics import fit_decay, lyapunov_value, solve_lyapunov
from .neural_operator import DeepONetKernelRegressor, ParamSpec, TrainConfig, generate_dataset, infer, train
from .params import ModeParams, OdeMatrices, ScenarioConfig, load_bundled_config, load_config
from .simulator import KernelController, ZeroController, run_ensemble, simulate
from .transform import StateSnapshot, apply_transform, control_input, invert_transform

__version__ = "0.1.0"

__all__ = [
    "KernelGrid",
    "evaluate_kernels",
    "solve_kernels",
    "MarkovChainSpec",
    "MarkovPath",
    "kolmogorov_evolve",
    "sample_path",
    "fit_decay",
    "lyapunov_value",
    "solve_lyapunov",
    "DeepONetKernelRegressor",
    "ParamSpec",
    "TrainConfig",
    "generate_dataset",
    "infer",
    "train",
    "ModeParams",
    "OdeMatrices",
    "ScenarioConfig",
    "load_bundled_config",
    "load_config",
    "KernelController",
    "ZeroController",
    "run_ensemble",
    "simulate",
    "StateSnapshot",
    "apply_transform",
    "control_input",
    "invert_transform",
]
