"""Quantum Monte Carlo and gauge-theory diagnostics for triangular Rydberg arrays."""
from .lattice import Lattice, build_lattice
from .model import CouplingTable, ModelParams, classical_energy, coupling_table

__all__ = ["Lattice", "build_lattice", "CouplingTable", "ModelParams",
           "classical_energy", "coupling_table"]
__version__ = "0.1.0"
