"""Numerical lab for harmonic lattices with bounded pair interactions.

Truncated Fock spaces per site, exact and Dyson-series dynamics, Gibbs/KMS and
ground states with their bounds, and single-particle grid checks for singular
potentials and a relativistic dispersion.
"""

__version__ = "0.1.0"

from .lattice import LatticeRegion, NeighborBond, chain, enumerate_bonds, inflate_region, make_box_region
from .potential import Potential
from .fockspace import LocalizedOperator, TruncationConfig, embed, operator_norm, resolvent
from .dynamics import BoundCertificate, DysonExpansion, HamiltonianSpec

__all__ = [
    "BoundCertificate",
    "DysonExpansion",
    "HamiltonianSpec",
    "LatticeRegion",
    "LocalizedOperator",
    "NeighborBond",
    "Potential",
    "TruncationConfig",
    "chain",
    "embed",
    "enumerate_bonds",
    "inflate_region",
    "make_box_region",
    "operator_norm",
    "resolvent",
]
