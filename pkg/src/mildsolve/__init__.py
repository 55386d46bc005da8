"""Certified windows, continuation and blow-up classification for mild evolution equations."""

from .continuation import SolveReport, SolverConfig, classify_outcome, glue, shifted_forcing, solve_maximal
from .errors import MildSolveError
from .kernels import Kernel, apply_extended, apply_kernel, holder_modulus, singularity_bound
from .nonlinear import Nonlinearity, audit_psi, eval_F, lipschitz_modulus
from .picard import WindowCertificate, certified_window, picard_map, solve_local
from .spaces import SpaceSpec, StateVector, Trajectory, norm, sup_distance
from .specialfn import gamma, ml_gronwall, perturbation_bound
from .verify import check_perturbation, check_uniqueness, refinement_continuity_check
from .volterra import QuadratureSpec, convolution_path, convolve, defect

__all__ = [
    "Kernel", "MildSolveError", "Nonlinearity", "QuadratureSpec", "SolveReport", "SolverConfig",
    "SpaceSpec", "StateVector", "Trajectory", "WindowCertificate", "apply_extended", "apply_kernel",
    "audit_psi", "certified_window", "check_perturbation", "check_uniqueness", "classify_outcome",
    "convolution_path", "convolve", "defect", "eval_F", "gamma", "glue", "holder_modulus",
    "lipschitz_modulus", "ml_gronwall", "norm", "perturbation_bound", "picard_map",
    "refinement_continuity_check", "shifted_forcing", "singularity_bound", "solve_local",
    "solve_maximal", "sup_distance",
]
