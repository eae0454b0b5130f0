"""Cavity cooling model of a levitated nanoparticle's librational mode."""

from .params import (
    CONSTANTS,
    DerivedQuantities,
    ExperimentParams,
    derive,
    load_preset,
    moment_of_inertia_from_rotation,
    purity,
)
from .rates import OperatingPoint, RateSet, steady_state_occupation

__version__ = "0.1.0"
