"""Catenoid-type solutions of the fractional Allen-Cahn equation in R^3.

Modules: ``constants_kernels`` (normalization constants, principal-value
quadrature), ``layer1d`` (the 1D layer and its curvature weight),
``fermi_geometry`` (surfaces of revolution and the approximate solution),
``reduced_profile`` (the reduced interface equation), ``verification``
(error audit, energy, stability probe) and ``cli``.
"""
__version__ = "0.1.0"
