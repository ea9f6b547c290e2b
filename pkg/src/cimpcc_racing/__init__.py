"""CiMPCC Racing - curvature-integrated model predictive contouring control for autonomous racing."""

__version__ = "0.1.0"
