"""Complexity-aware trajectory pretraining and recovery on road networks."""

__version__ = "0.1.0"
