"""Phase-field (Allen-Cahn) min-max levels under a half-volume constraint, with discrete voxel analogues."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .energy import (
    CriticalPoint,
    EnergyBreakdown,
    constrained_gradient,
    constrained_index,
    energy,
    first_variation,
    lagrange_multiplier,
    second_variation_apply,
)
from .grid import ScalarField, SpectralBasis, TorusGrid
from .minmax import SpectrumTable, SweepoutFamily, WidthEstimate, chain_check, optimize_family, weyl_fit
from .potentials import DoubleWellPotential, build_glued_quartic, pure_quartic, sigma, verify_potential
from .solver import FlowConfig, flow_step, solve_critical
from .voxel import MorseOrder, VoxelSet

__all__ = [
    "CriticalPoint", "DoubleWellPotential", "EnergyBreakdown", "FlowConfig", "MorseOrder", "ScalarField",
    "SpectralBasis", "SpectrumTable", "SweepoutFamily", "TorusGrid", "VoxelSet", "WidthEstimate",
    "build_glued_quartic", "chain_check", "constrained_gradient", "constrained_index", "energy",
    "first_variation", "flow_step", "lagrange_multiplier", "optimize_family", "pure_quartic",
    "second_variation_apply", "sigma", "solve_critical", "verify_potential", "weyl_fit",
]
