"""Electron-spin Hamiltonian modelling and spectroscopy analysis of strained SnV centers."""

from .constants import DEFAULT_CONSTANTS, PhysicalConstants
from .hamiltonian import (
    FieldSnV,
    LevelEnergies,
    ManifoldParams,
    SnVModel,
    build_component_matrices,
    build_full_hamiltonian,
    manifold_energies,
)
from .transitions import (
    LabFrameCalibration,
    RotationMapPoint,
    TransitionObservables,
    closed_form,
    field_in_snv_frame,
    ground_splitting,
    observables,
    rotation_map,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_CONSTANTS",
    "FieldSnV",
    "LabFrameCalibration",
    "LevelEnergies",
    "ManifoldParams",
    "PhysicalConstants",
    "RotationMapPoint",
    "SnVModel",
    "TransitionObservables",
    "build_component_matrices",
    "build_full_hamiltonian",
    "closed_form",
    "field_in_snv_frame",
    "ground_splitting",
    "manifold_energies",
    "observables",
    "rotation_map",
]
