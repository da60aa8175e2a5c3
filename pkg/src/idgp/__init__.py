"""Interval distance geometry: instances, formulations, solvers and measures."""

from .core import IdgpInstance, compute_Z, load_instance, save_instance
from .errors import IdgpError
from .measures import crmsd, demi_alg1, demi_exhaustive, phi, psi
from .solvers import Budget, SolveReport, mwu, multistart, solve, vns

__all__ = [
    "Budget",
    "IdgpError",
    "IdgpInstance",
    "SolveReport",
    "compute_Z",
    "crmsd",
    "demi_alg1",
    "demi_exhaustive",
    "load_instance",
    "multistart",
    "mwu",
    "phi",
    "psi",
    "save_instance",
    "solve",
    "vns",
]

__version__ = "0.1.0"
