"""Parametrized random projection layers: a fixed random matrix with learnable element-wise scaling."""
from .layers import DenseLayer, PRPLayer, param_count
from .linalg import SeededRng
from .models import Sequential, build_architecture, build_tied_autoencoder
from .projections import InitScheme, ProjectionMatrix, make_projection, regenerate

__all__ = [
    "DenseLayer",
    "InitScheme",
    "PRPLayer",
    "ProjectionMatrix",
    "SeededRng",
    "Sequential",
    "build_architecture",
    "build_tied_autoencoder",
    "make_projection",
    "param_count",
    "regenerate",
]
__version__ = "0.1.0"
