"""Numerical laboratory for building degree-(k+1) pseudoholomorphic spheres in
CP^2 out of degree-1 pieces: Fubini-Study geometry, exact rational-map
combinatorics, little-disks actions, discretized Cauchy-Riemann operators,
transversality counts, and the explicit gluing and comparison homotopies."""

__version__ = "0.1.0"

__all__ = [
    "projective",
    "rational",
    "operad",
    "field",
    "bundle",
    "glue",
    "homotopy",
    "cli",
]
