"""Heston model calibration toolkit: FEM pricing, reduced-basis surrogates,
de-Americanization and box-constrained least-squares fitting."""

__version__ = "0.1.0"
