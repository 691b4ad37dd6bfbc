"""Parabolic complex Monge-Ampere type flows on flat complex tori.

Submodules: ``grid`` (periodic grids, spectral calculus), ``io`` (snapshots),
``hermitian`` (pointwise form algebra), ``operator`` (the flow operator),
``flow`` (time integration), ``functionals`` (J, decay, Harnack),
``continuity`` (method of continuity), ``scenario`` and ``cli``.
"""
from .grid import PeriodicGrid, complex_hessian, integrate, spectral_derivative
from .operator import ProblemData, chi_u, invariant_c, operator_value
from .flow import FlowConfig, run, step, extract_b

__all__ = [
    "PeriodicGrid", "complex_hessian", "integrate", "spectral_derivative",
    "ProblemData", "chi_u", "invariant_c", "operator_value",
    "FlowConfig", "run", "step", "extract_b",
]
