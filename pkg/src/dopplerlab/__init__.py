"""Multistatic CSI-phase Doppler estimation with unsynchronized receivers."""

__version__ = "0.1.0"
