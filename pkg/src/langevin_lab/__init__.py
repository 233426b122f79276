"""Annealed Langevin samplers for log-concave targets, with diagnostics."""
__version__ = "0.1.0"
