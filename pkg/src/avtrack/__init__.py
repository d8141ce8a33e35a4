"""avtrack: a single-branch adaptive-ViT discriminative tracker, built on a
minimal taped-autodiff tensor core and verified on a synthetic world."""

from ._kernels import backend_name as kernel_backend

__version__ = "0.1.0"

__all__ = ["kernel_backend", "__version__"]
