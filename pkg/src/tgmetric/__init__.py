"""Transverse generalized metrics on exact Courant algebroids, checked numerically."""
from .courant import (
    CourantData,
    GeneralizedSection,
    b_transform,
    decompose,
    dorfman,
    minus_embed,
    pairing,
    plus_embed,
    reflect_V,
)
from .dirac import DiracFrame, dirac_checks, point_frame
from .fields import Chart, ScalarField, TensorField, parse_scalar
from .scenario import Scenario, ScenarioError, bundled, load_scenario
from .transverse import BasicnessError, build_VD, quotient_extract, transverse_check

__all__ = [
    "BasicnessError", "Chart", "CourantData", "DiracFrame", "GeneralizedSection", "ScalarField",
    "Scenario", "ScenarioError", "TensorField", "b_transform", "build_VD", "bundled", "decompose",
    "dirac_checks", "dorfman", "load_scenario", "minus_embed", "pairing", "parse_scalar",
    "plus_embed", "point_frame", "quotient_extract", "reflect_V", "transverse_check",
]
