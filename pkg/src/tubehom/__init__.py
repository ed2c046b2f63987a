"""Numerical toolkit for heat semigroups on shrinking tubes around closed curves."""

__version__ = "0.1.0"
