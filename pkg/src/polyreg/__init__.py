"""Polynomial regularity over prime fields: factors, refinements and their applications."""

from .algebra import Polynomial, PrimeField
from .estimators import EstimatorPlan
from .factor import Factor, GammaSchedule

__version__ = "0.1.0"

__all__ = ["Polynomial", "PrimeField", "EstimatorPlan", "Factor", "GammaSchedule", "__version__"]
