"""Delay-compensated boundary stabilization of a 1D reaction-diffusion equation.

Pipeline: :mod:`spectral` (eigenpairs of ``d2/dx2 + c``), :mod:`reduction`
(finite-dimensional unstable part), :mod:`predictor` (Artstein transform,
gain, series inversions), :mod:`sim` (modal closed-loop simulation),
:mod:`monitor` (Lyapunov functional and norms) and :mod:`cli`.
"""

from .errors import (ConditioningWarning, ConfigError, ConvergenceWarning, DelayHeatError,
                     DesignError, DivergenceError, NumericalError, SpectralWarning)
from .expm import matrix_exponential
from .monitor import big_m, decay_rate_fit, h1_norm, v_d
from .predictor import (artstein_state, feedback, inversion_kernel_f, place_poles,
                        predictor_series_alpha, solve_lyapunov)
from .reduction import build_reduced_system, kalman_determinant_closed_form, kalman_rank
from .sim import SimConfig, project_initial, reconstruct_y, simulate
from .spectral import (Grid, Potential, decompose, discretize_operator, modal_coefficients,
                       solve_eigen)

__version__ = "0.1.0"
