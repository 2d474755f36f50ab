"""Sit-to-stand exoskeleton simulation and control-design toolkit."""

__version__ = "0.1.0"
