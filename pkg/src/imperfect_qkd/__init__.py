"""Finite-key security analysis of decoy-state BB84 with device imperfections."""

__version__ = "0.1.0"
