"""Local spectral deformation toolkit for dispersive two-body fiber Hamiltonians."""

__version__ = "0.1.0"
