"""Quadratic BSDEs driven by rough paths.

Submodules: ``rough_path`` (signatures, Brownian and fractional lifts),
``flows`` (backward flows and their derivatives), ``transforms``
(Doss-Sussmann and Zvonkin maps), ``bsde`` (least-squares Monte Carlo),
``pde`` (finite differences and flow composition) and ``cli``.
"""
from .bsde import BsdeProblem, BsdeSolution, Discretization, ForwardModel, RoughPart
from .flows import FlowSpec, FlowTable, VectorField
from .rough_path import GroupIncrement, RoughPath, SmoothPath
from .transforms import DossSussmann, Generator, IntegrableFunction, ZvonkinMap

__version__ = "0.1.0"

__all__ = ["BsdeProblem", "BsdeSolution", "Discretization", "DossSussmann", "FlowSpec", "FlowTable",
           "ForwardModel", "Generator", "GroupIncrement", "IntegrableFunction", "RoughPart", "RoughPath",
           "SmoothPath", "VectorField", "ZvonkinMap"]
