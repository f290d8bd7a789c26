"""GradNorm: gradient-norm based loss balancing for multitask networks."""

from gradnorm._backend import kernels

__version__ = "0.1.0"
BACKEND = kernels.NAME
