"""Label (Hamilton-Jacobi) and density (Godunov) schemes for traffic on a single junction."""
from .hamiltonian import BranchHamiltonian, FundamentalDiagram, Orientation
from .junction import Branch, DensityPiece, GridSpec, InitialData, JunctionSpec
from .scenario import Scenario, load_scenario

__all__ = [
    "Branch", "BranchHamiltonian", "DensityPiece", "FundamentalDiagram", "GridSpec",
    "InitialData", "JunctionSpec", "Orientation", "Scenario", "load_scenario",
]
