"""Dynamic rescaling simulator for the semilinear heat equation a_t = Lap a + a^2."""
from __future__ import annotations

__version__ = "0.1.0"
