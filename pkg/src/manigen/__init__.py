"""manigen: classical manifold-learning embeddings, neural decoders back to
image space, and diffusion-based generation in embedding coordinates."""

__version__ = "0.1.0"

from . import diffusion, graph, nldr, nn, recon, spectral, tensor
from . import cli
from .errors import ManigenError

__all__ = [
    "ManigenError",
    "cli",
    "diffusion",
    "graph",
    "nldr",
    "nn",
    "recon",
    "spectral",
    "tensor",
    "__version__",
]
