"""CARMA processes as stochastic delay equations: kernels, simulation, noise recovery and prediction."""
from .drivers import (DriverPath, DriverSpec, frac_integrate, gen_driver, gen_fractional,
                      gen_levy)
from .engine import (PredictionResult, SampledPath, predict, predict_msdde, recover_noise,
                     simulate_continuations, simulate_ma, simulate_statespace)
from .kernels import (CarmaModel, HypothesisViolation, f_kernel, gtilde, gtilde_j, matrix_exp,
                      truncation_horizon)
from .matpoly import MatrixPoly, companion, long_divide, solve_E, solve_F
from .msdde import (DelayMeasure, HigherOrderSdde, MatExpDensity, SampledKernel, eval_h,
                    kernel_fft, nest)
from .stability import HalfPlaneReport, halfplane_check, msdde_char_scan

__version__ = "0.1.0"

__all__ = [
    "CarmaModel", "DelayMeasure", "DriverPath", "DriverSpec", "HalfPlaneReport",
    "HigherOrderSdde", "HypothesisViolation", "MatExpDensity", "MatrixPoly", "PredictionResult",
    "SampledKernel", "SampledPath", "companion", "eval_h", "f_kernel", "frac_integrate",
    "gen_driver", "gen_fractional", "gen_levy", "gtilde", "gtilde_j", "halfplane_check",
    "kernel_fft", "long_divide", "matrix_exp", "msdde_char_scan", "nest", "predict",
    "predict_msdde", "recover_noise", "simulate_continuations", "simulate_ma",
    "simulate_statespace", "solve_E", "solve_F", "truncation_horizon",
]
