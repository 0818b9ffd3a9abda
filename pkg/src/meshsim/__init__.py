"""Simulator and compiler for programmable photonic unitary meshes."""

__version__ = "0.1.0"
