"""Numerical laboratory for the planar four-body problem near triple collision."""

__version__ = "0.1.0"

from .model import MassConfig
from .charts import (BlowupState, CartesianJacobiState, DelaunayElements,
                     TangentFrame)
from .flows import VectorFieldId, get_field
from .integrate import IntegratorConfig, SectionSpec

__all__ = [
    "MassConfig", "BlowupState", "CartesianJacobiState", "DelaunayElements",
    "TangentFrame", "VectorFieldId", "get_field", "IntegratorConfig",
    "SectionSpec", "__version__",
]
