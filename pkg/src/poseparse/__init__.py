"""Pose-guided human parsing with an And-Or graph over segment proposals."""

__version__ = "0.1.0"
