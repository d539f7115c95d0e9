"""Adaptive punishment for cooperation in mixed-motive multi-agent games."""

from apc._accel import USE_NUMBA

__version__ = "0.1.0"

__all__ = ["USE_NUMBA", "__version__"]
