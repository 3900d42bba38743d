"""Inhomogeneous TASEP and last-passage percolation with discontinuous speeds.

Microscopic simulators (``lpp_micro``, ``tasep_sim``), the macroscopic
variational solvers (``macro_shape``, ``hydro_limit``), PDE-side checks
(``pde_check``) and the experiment harness (``harness``, ``cli``).
"""
from importlib import metadata as _md

try:
    __version__ = _md.version("dtasep")
except _md.PackageNotFoundError:  # pragma: no cover
    __version__ = "0+unknown"
