"""Uniform rectifiability and epsilon-approximability of harmonic functions, at desk scale."""

from .geometry import AmbientBox, BoundarySet, build_boundary_set, distance_to_set
from .grid import SurfaceGrid, build_dyadic_grid, surface_ball_mass, verify_adr
from .whitney import WhitneyDecomposition, corkscrew_point, fatten, whitney_decompose
from .corona import bwgl_classify, build_corona, packing_constant
from .regions import Regions, verify_nta, verify_sawtooth_adr, boundary_containment_check
from .harmonic import BoundaryData, carleson_functional, solve_harmonic
from .carleson import (DiscreteCarlesonMeasure, corona_coefficients, energy_coefficients,
                       extract_stopping_family, packing_norm, restricted_norm,
                       verify_extrapolation)
from .approx import (assemble_global, build_epsilon_approximant, build_generations,
                     bv_carleson_norm, classify_components)
from .config import ScenarioConfig, load_config

__version__ = "0.1.0"
