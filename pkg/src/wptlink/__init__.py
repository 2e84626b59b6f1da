"""Resonant inductive power link: coupling, closed-loop circuit simulation,
calibration against bench data, and tissue exposure estimates."""

__version__ = "0.1.0"
