"""Masked GPS-trajectory recovery over OpenStreetMap road networks."""

from .geo import GeoPoint

__version__ = "0.1.0"
__all__ = ["GeoPoint", "__version__"]
