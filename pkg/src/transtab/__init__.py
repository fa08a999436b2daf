"""Finite-time hyperbolicity tools for transient stability analysis.

Flow-map gradients of power-system swing models, normal repulsion rate and
ratio fields, ridge extraction, and online stability certificates.
"""
__version__ = "0.1.0"

from .dynamics import (IntegratorConfig, Trajectory, VectorField, flow_gradients,
                       flow_with_gradient, integrate)
from .errors import TranstabError
from .hyperbolic import (CauchyGreenTensor, alignment_angle, cauchy_green, classify_surface_point,
                         ftle, max_stretch_certificate, repulsion_rate, repulsion_ratio)
from .models import (NetworkSwingParams, SwingParams, build_field, classical_swing_field,
                     find_equilibrium, network_swing_field)

__all__ = [
    "IntegratorConfig", "Trajectory", "VectorField", "flow_gradients", "flow_with_gradient",
    "integrate", "TranstabError", "CauchyGreenTensor", "alignment_angle", "cauchy_green",
    "classify_surface_point", "ftle", "max_stretch_certificate", "repulsion_rate",
    "repulsion_ratio", "NetworkSwingParams", "SwingParams", "build_field",
    "classical_swing_field", "find_equilibrium", "network_swing_field",
]
