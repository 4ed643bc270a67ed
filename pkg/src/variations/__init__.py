from .base_variation import BaseVariation
from .geometric_variation import GeometricVariation
from .material_variation import MaterialVariation

__all__ = [
    "BaseVariation",
    "GeometricVariation",
    "MaterialVariation",
]
