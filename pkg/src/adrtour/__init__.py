"""Active debris removal tour planning on circular coplanar orbits."""

__version__ = "0.1.0"
