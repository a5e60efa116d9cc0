"""Finite-volume random lattice operators and Monte Carlo checks of their eigenvalue statistics."""

from .model_builder import DisorderSpec, LatticeBox, ModelSpec, build_hamiltonian
from .spectral import EnergyWindow, Spectrum, eigendecompose

__all__ = [
    "DisorderSpec",
    "EnergyWindow",
    "LatticeBox",
    "ModelSpec",
    "Spectrum",
    "build_hamiltonian",
    "eigendecompose",
]
