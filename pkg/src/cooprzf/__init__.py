"""Deterministic-equivalent analysis of cooperative multi-cell RZF precoding with imperfect CSIT."""

from .bitalloc import (BitAllocation, GainRanking, enumerate_full, enumerate_restricted, rank_links,
                       search_allocation, tau2_from_bits)
from .det_sinr import DetEquivalent, deterministic_equivalent, det_sum_rate, gamma_bar, gamma_bar_perfect
from .montecarlo import draw_channels, ergodic_sum_rate, instant_sinr, rzf_precoder, validate_appendix_terms
from .regopt import AlphaResult, alpha_uncorrelated, golden_section_alpha, optimize_alpha, prop1_alpha
from .rmt_core import ConvergenceError, FixedPointSolution, det_stieltjes, solve_dotc, solve_fixed_point
from .scenario import Scenario, ScenarioError, build_scenario, exp_correlation, load_scenario, scale_path_gain

__version__ = "0.1.0"
