"""Heterogeneous ubiquitous systems: measures, point-scale systems, spectra and limsup-set tools."""

__version__ = "0.1.0"
