"""Desk-scale toolkit for perceptive humanoid locomotion.

Submodules: ``terrain`` (heightfields), ``render`` (depth raycasting),
``foothold`` (placement reward), ``rewards`` (training reward terms),
``policy`` (network with analytic gradients), ``harness`` (scripted
rollouts), ``config`` and ``cli``.
"""

from .errors import (
    EmptyWindowError,
    FormatError,
    PercepLocoError,
    PhaseError,
    RangeError,
    ShapeError,
    SpecificationError,
    StateError,
    StatisticError,
)

__version__ = "0.1.0"

__all__ = [
    "EmptyWindowError", "FormatError", "PercepLocoError", "PhaseError", "RangeError", "ShapeError",
    "SpecificationError", "StateError", "StatisticError", "__version__",
]
