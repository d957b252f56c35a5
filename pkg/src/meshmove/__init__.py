"""Mesh movement for FEM: Monge-Ampere r-adaptation and learned deformers."""

from .errors import (ConfigError, InvalidArgument, InvalidDomain, InvalidMesh, MeshMoveError, NumericFailure,
                     ShapeError, StateError)
from .mesh import DomainSpec, Mesh, build_polygon_mesh, build_unit_square_mesh, inversion_fraction
from .monitor import evaluate_monitor
from .mover import MAOptions, MAResult, ma_adapt

__version__ = "0.1.0"

__all__ = ["DomainSpec", "Mesh", "build_unit_square_mesh", "build_polygon_mesh", "inversion_fraction",
           "evaluate_monitor", "MAOptions", "MAResult", "ma_adapt", "MeshMoveError", "InvalidArgument",
           "InvalidDomain", "InvalidMesh", "ShapeError", "ConfigError", "StateError", "NumericFailure"]
