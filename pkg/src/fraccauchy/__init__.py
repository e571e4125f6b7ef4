"""Regularized continuation for the Cauchy problem of Laplace's equation.

Core pieces: Mittag-Leffler special functions, lateral eigenbases, the
fractional quasi-reversibility continuation schemes, a finite-difference
solver on curved strip domains, and Newton-type reconstruction of free
boundaries and impedance coefficients from Cauchy data.
"""

__version__ = "0.1.0"
