"""Partially hyperbolic Anosov maps f = A + p of the 3-torus.

Submodules: torus_core (maps, spectra, cone certificates), splitting (invariant
bundles and exponents), foliation (leaves and growth), leaf_entropy (separated
sets along leaves), measures (leaf densities, invariant measures, conditional
entropy), conjugacy (the conjugacy to A and its leafwise regularity),
families (test maps) and cli.
"""

from . import errors
from .families import generic, generic_family, linear, single_mode, smooth_conjugate, \
    translation_conjugate, volume_preserving
from .torus_core import AnosovMap, InverseMap, PerturbationField, spectrum, verify_cone_condition

__version__ = "0.1.0"

__all__ = [
    "AnosovMap", "InverseMap", "PerturbationField", "spectrum", "verify_cone_condition",
    "errors", "linear", "single_mode", "generic", "generic_family", "smooth_conjugate",
    "translation_conjugate", "volume_preserving",
]
