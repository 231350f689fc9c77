"""Learning distribution-grid power flow mappings with kernel SVR."""

from .baselines import (AverageRegressor, LADRegressor, LeastSquaresRegressor, LinearModel,
                        fit_average, fit_lad, fit_least_squares, predict_linear)
from .exceptions import (CaseFormatError, ConvergenceError, NetworkValidationError,
                         SingularJacobianError)
from .features import (construct_beta_star, physical_features, quad_feature_map,
                       to_rectangular)
from .grid import (Branch, DroopController, Network, OperatingPoint, build_admittance,
                   builtin_case, droop_output, evaluate_injections, evaluate_injections_rect,
                   generate_feeder, kron_reduce, load_case, solve_newton_raphson)
from .svr import (EpsilonSVR, KernelSpec, SvrConfig, SvrModel, cross_validate, fit_svr,
                  kernel_eval, predict_svr, support_vectors)

__version__ = "0.1.0"

__all__ = [
    "AverageRegressor", "Branch", "CaseFormatError", "ConvergenceError", "DroopController",
    "EpsilonSVR", "KernelSpec", "LADRegressor", "LeastSquaresRegressor", "LinearModel",
    "Network", "NetworkValidationError", "OperatingPoint", "SingularJacobianError",
    "SvrConfig", "SvrModel", "build_admittance", "builtin_case", "construct_beta_star",
    "cross_validate", "droop_output", "evaluate_injections", "evaluate_injections_rect",
    "fit_average", "fit_lad", "fit_least_squares", "fit_svr", "generate_feeder",
    "kernel_eval", "kron_reduce", "load_case", "physical_features", "predict_linear",
    "predict_svr", "quad_feature_map", "solve_newton_raphson", "support_vectors",
    "to_rectangular",
]
