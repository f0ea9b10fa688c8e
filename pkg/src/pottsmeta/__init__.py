"""Metastability toolkit for the q-state Potts model with a negative field on a torus."""

from .lattice import (
    ConfigurationError,
    Energy,
    ModelParams,
    SpinConfig,
    critical_length,
    dumps,
    energy,
    energy_delta,
    flip,
    loads,
)

__all__ = [
    "ConfigurationError",
    "Energy",
    "ModelParams",
    "SpinConfig",
    "critical_length",
    "dumps",
    "energy",
    "energy_delta",
    "flip",
    "loads",
]
__version__ = "0.1.0"
