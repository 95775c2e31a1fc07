"""Rest-point analysis of semi-explicit DAE systems ``A x' = F(x, u, t)``,
``0 = G(x, u, t)``: linearized stability, certified basins, trajectory
classification with blow-up detection, and branching for degenerate
constraints.
"""
from .errors import DAEError
from .model import DAEProblem, builtin, load_problem, problem_from_dict
from .reduction import implicit_u, linearize, reduced_field
from .stability import basin_radius, estimate_decay, estimate_q, spectral_test
from .dynamics import (Options, classify, delta_sweep, integrate_reduced,
                       successive_approximations, volterra_picard)
from .branching import BranchingSpec, enumerate_branches, simulate_branch

__version__ = "0.1.0"
