"""Diffusion in a cylinder with reactive walls: analytic Green's function,
particle simulation, and on-off keying channel analysis."""

from .analytic_cgf import (
    CgfSeries,
    CylinderEnvironment,
    CylPoint,
    FreeSpaceSeries,
    cgf,
    unbounded_cgf,
)
from .channel import IsiProfile, ObservationPdf, ReceiverModel, p_obs
from .eigenmodes import ABSORBING, EigenMode, find_eigenvalues, find_modes
from .ook import BerResult, OokLink, analytic_ber, map_threshold, monte_carlo_ber
from .pbs import PbsConfig, Poiseuille, SphereProbe, Uniform, run

__all__ = [
    "ABSORBING",
    "BerResult",
    "CgfSeries",
    "CylPoint",
    "CylinderEnvironment",
    "EigenMode",
    "FreeSpaceSeries",
    "IsiProfile",
    "ObservationPdf",
    "OokLink",
    "PbsConfig",
    "Poiseuille",
    "ReceiverModel",
    "SphereProbe",
    "Uniform",
    "analytic_ber",
    "cgf",
    "find_eigenvalues",
    "find_modes",
    "map_threshold",
    "monte_carlo_ber",
    "p_obs",
    "run",
    "unbounded_cgf",
]

__version__ = "0.1.0"
