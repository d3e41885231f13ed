"""Inverse source reconstruction for bioluminescence tomography.

Recovers the support and intensity of an internal light source from
boundary Cauchy data on the square (-1,1)^2: a coupled complex boundary
method supplies the state and adjoint systems, distributed shape
gradients drive a level-set evolution of the support, and a final
linear solve refines the intensity on the recovered region.
"""

from . import fem, levelset, mesh, vtkio  # noqa: F401

__version__ = "0.1.0"
