"""Lyapunov-based switching control of a totem-pole bridgeless PFC rectifier."""

__version__ = "0.1.0"
