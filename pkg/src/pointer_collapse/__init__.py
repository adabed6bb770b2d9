"""Lattice simulator for a relativistic collapse model mediated by a pointer field."""

__version__ = "0.1.0"
