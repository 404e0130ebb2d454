"""Function-space priors, exact GP / NNGP inference and HMC for studying OOD detection with BNNs."""

from ._backend import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
