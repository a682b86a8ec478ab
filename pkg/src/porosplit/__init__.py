"""Iteratively decoupled (fixed-stress) BDF time integration for coupled
elliptic-parabolic systems, with a monolithic implicit reference solver
and an experiment harness."""

__version__ = "0.1.0"

from . import bdf, fem2d, linalg, splitsolve, stability, studies, system

__all__ = ["bdf", "fem2d", "linalg", "splitsolve", "stability", "studies",
           "system", "__version__"]
