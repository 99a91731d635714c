"""Ricci-Yang-Mills flow on torus bundles over surfaces, in the scalar (u, f) reduction."""

__version__ = "0.1.0"
