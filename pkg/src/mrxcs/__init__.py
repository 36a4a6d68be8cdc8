"""Compressed-sensing multiple-excitation magnetorelaxometry (ME-MRX) toolkit."""

__version__ = "0.1.0"
