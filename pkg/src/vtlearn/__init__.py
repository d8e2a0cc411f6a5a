"""Deep visuo-tactile learning: predict tactile force series from surface
images and read material properties out of the learned latent space."""

__version__ = "0.1.0"

from .engine import FLOAT, Graph, GraphError, Parameter, ShapeError  # noqa: F401
