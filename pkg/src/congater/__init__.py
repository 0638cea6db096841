"""Desk-scale lab for controllable attribute removal in neural encoders.

The package trains small encoders with gated adapter modules whose
attribute-removal strength is a continuous inference-time knob, and ships
the measurement, serving and CLI plumbing around them.
"""

from congater.tensor import Tensor
from congater.gates import ConGaterLayer, GateSensitivity, t_sigmoid

__all__ = ["Tensor", "ConGaterLayer", "GateSensitivity", "t_sigmoid"]

__version__ = "0.1.0"

FORMAT_VERSION = 1
