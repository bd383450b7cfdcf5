"""Second-order error calculus: jets, Dirichlet structures, approximation schemes and bias-operator estimation."""

from .error_core import (
    DirichletStructure,
    ErrorQuantity,
    image_structure,
    propagate_strong,
    propagate_weak,
    scheme_operators,
    square_field_from_generator,
)
from .estimation import BiasEstimate, Kind, check_relations, estimate_bias, estimate_kinds, locality_test
from .jet2 import Jet2, TestFunction, compose, evaluate, jet_add, jet_mul
from .laws import NormalLaw, UniformLaw
from .schemes import (
    binary_digit_scheme,
    gaussian_perturbation,
    graduation_scheme,
    polya_scheme,
    scheme_from_config,
)

__version__ = "0.1.0"

__all__ = [
    "BiasEstimate",
    "DirichletStructure",
    "ErrorQuantity",
    "Jet2",
    "Kind",
    "NormalLaw",
    "TestFunction",
    "UniformLaw",
    "binary_digit_scheme",
    "check_relations",
    "compose",
    "estimate_bias",
    "estimate_kinds",
    "evaluate",
    "gaussian_perturbation",
    "graduation_scheme",
    "image_structure",
    "jet_add",
    "jet_mul",
    "locality_test",
    "polya_scheme",
    "propagate_strong",
    "propagate_weak",
    "scheme_from_config",
    "scheme_operators",
    "square_field_from_generator",
]
