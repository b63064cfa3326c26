"""Event-driven multimodal forecasting with utility-supervised gated fusion."""

from .tensor import (
    NumericsError,
    ShapeError,
    Tape,
    Tensor,
)

__version__ = "0.1.0"

__all__ = ["Tensor", "Tape", "ShapeError", "NumericsError", "__version__"]
