"""Maximum-entropy stationary markets: simulation, densities and verification."""

__version__ = "0.1.0"

from .activity import ActivityProfile, connect_markets, equilibrium_maximize, relative_entropy_analytic, relative_entropy_mc
from .density import GammaLaw, StationaryDensity, VolatilityLaw, entropy, fp_residual, kl_divergence, stationary_from_phi
from .gop import GeneralMarketSpec, NoGop, ReferenceWeights, gop_solve, growth_rate, market_of_reference, prices_of_risk_invariance
from .maxent import match_phi_to_gamma, maximize_reference_level, solve_lagrange, theorem1_report
from .params import GAMMA_E, Y_BAR, ModelParams, ParameterError
from .sde import MarketPaths, simulate_basis_market
from .stats import TestReport, leverage_correlation, student_t_fit, supermartingale_defect

__all__ = [
    "ActivityProfile",
    "GAMMA_E",
    "GammaLaw",
    "GeneralMarketSpec",
    "MarketPaths",
    "ModelParams",
    "NoGop",
    "ParameterError",
    "ReferenceWeights",
    "StationaryDensity",
    "TestReport",
    "VolatilityLaw",
    "Y_BAR",
    "connect_markets",
    "entropy",
    "equilibrium_maximize",
    "fp_residual",
    "gop_solve",
    "growth_rate",
    "kl_divergence",
    "leverage_correlation",
    "market_of_reference",
    "match_phi_to_gamma",
    "maximize_reference_level",
    "prices_of_risk_invariance",
    "relative_entropy_analytic",
    "relative_entropy_mc",
    "simulate_basis_market",
    "solve_lagrange",
    "stationary_from_phi",
    "student_t_fit",
    "supermartingale_defect",
    "theorem1_report",
]
