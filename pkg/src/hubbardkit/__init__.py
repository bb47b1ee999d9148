"""Trotterized 1D Fermi-Hubbard dynamics: circuits, compilation, simulation, mitigation and analysis."""

__version__ = "0.1.0"

from .model import FockState, HubbardParams, build_hamiltonian, neel_state  # noqa: E402

__all__ = ["FockState", "HubbardParams", "build_hamiltonian", "neel_state", "__version__"]
