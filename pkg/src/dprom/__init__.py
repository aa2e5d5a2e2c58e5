"""Defect-parametric reduced order models for geometrically nonlinear structures."""
from .exceptions import (
    ConfigurationError,
    ConvergenceError,
    DefectTooLargeError,
    DpromError,
    GeometryError,
    MeshQualityError,
)
from .kinematics import ModelVariant, StrainVariant
from .mesh import ALUMINIUM, MaterialParams, NominalMesh, build_rect_beam_mesh

__version__ = "0.1.0"

__all__ = [
    "ALUMINIUM",
    "ConfigurationError",
    "ConvergenceError",
    "DefectTooLargeError",
    "DpromError",
    "GeometryError",
    "MaterialParams",
    "MeshQualityError",
    "ModelVariant",
    "NominalMesh",
    "StrainVariant",
    "build_rect_beam_mesh",
]
