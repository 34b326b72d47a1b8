"""Simulation and verification toolkit for parabolic homogenization with
large oscillatory random potentials.

Layers: stationary random fields (mode-sum Gaussian, Poisson shot noise),
the effective-constant quadrature, the regularized corrector, Feynman-Kac
path sampling with its martingale decomposition, and the fluctuation-theory
statistical harness.  The `homfluct` command drives everything from flat
key = value configs with fully deterministic, worker-count-independent
output.
"""

from ._seeds import generator, mix
from .config import (ExperimentConfig, InitialConfig, PotentialConfig,
                     SegmentConfig, parse_config, parse_config_text,
                     serialize_config, validate_config)
from .corrector import (CorrectorEvaluator, D4LogTable, corrector_variance,
                        d4_log_asymptotics, eval_corrector,
                        eval_corrector_grad, make_corrector_matched_field,
                        sample_poisson_corrector_origin, sigma_lambda2,
                        stationary_corrector_exists)
from .estimates import MCEstimate
from .feynman_kac import (BrownianPath, MCLTRow, PathFunctionals,
                          adaptive_path_count, decomposition_ensemble,
                          default_path_dt, malliavin_duality_check,
                          martingale_decomposition, mclt_bound_check,
                          pooled, simulate_path, standard_qv_profiles,
                          u_eps_ensemble, u_eps_estimate, u_eps_estimate_cv,
                          v_eps_ensemble, v_eps_estimate,
                          v_eps_exact_constant_initial)
from .fluctuation import (D4CltResult, D5ExpansionResult, DistTestResult,
                          RateFitResult, clt_self_calibration, clt_test_d3,
                          corrected_outer_variance, d4_corrector_clt,
                          d5_expansion_check, rate_experiment, sample_limit_v,
                          v_eps_exact_ensemble, var_eps, var_limit)
from .homogenization import (HomogenizedModel, InitialCondition, green_lambda,
                             sigma2, u_hom, u_hom_mc_check)
from .radial import (radial_fourier, radial_integral, radial_inverse_fourier,
                     sphere_area)
from .random_field import (GaussianFieldRealization, PoissonFieldRealization,
                           ShapeFunction, SpectrumModel, covariance,
                           gaussian_fourth_moment, gaussian_fourth_moment_mc,
                           make_gaussian_field, make_importance_gaussian_field,
                           make_poisson_field, poisson_moment_identity)

__version__ = "1.0.0"
