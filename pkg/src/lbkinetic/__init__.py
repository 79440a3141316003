"""Lenard-Balescu collisions near a global Maxwellian on a periodic box.

Submodules
----------
potential    radial Fourier profiles V̂ and hyperplane integrals
grid         torus and velocity grids, fields, moments, derivatives
dispersion   line marginals, principal values, dielectric tables
kernel       collision matrix, pair assembly, A and B₀
linop        linearized operator, projection, norms, spectral gap
nonlin       nonlinear collision terms and the full operator Q
solver       Strang/Lie splitting with exact transport
diagnostics  entropy, decay fits, Poisson solves, macro identities
io           configuration, snapshots, CSV series
cli          command-line entry point
"""

from .errors import LBError
from .grid import PhaseSpaceField, TorusGrid, VelocityGrid, kernel_basis, maxwellian
from .potential import InteractionPotential, landau_constant, vhat

__version__ = "0.1.0"

__all__ = [
    "InteractionPotential",
    "LBError",
    "PhaseSpaceField",
    "TorusGrid",
    "VelocityGrid",
    "kernel_basis",
    "landau_constant",
    "maxwellian",
    "vhat",
]
