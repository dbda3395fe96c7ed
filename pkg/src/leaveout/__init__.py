"""Leave-out estimation of variance components in linear models with many
fixed effects, with weak-identification-robust inference."""

__version__ = "0.1.0"

from .design import (DesignMatrix, EstimandSpec, Panel, QuadraticForm, akm_forms, build_design,
                     build_quadratic_form, group_design)
from .errors import LeaveOutError, NumericalError, ValidationError
from .estimators import (VarianceComponentEstimate, decompose_akm, sigma2_leave_out, theta_homosc,
                         theta_leave_out, theta_plugin)
from .network import MobilityGraph, build_split_plan, group_split_plan, prune
from .solver import NormalEquations, exact_leverages, fit
from .sketch import SketchConfig, sketched_leverages

__all__ = [
    "DesignMatrix", "EstimandSpec", "Panel", "QuadraticForm", "akm_forms", "build_design",
    "build_quadratic_form", "group_design", "LeaveOutError", "NumericalError", "ValidationError",
    "VarianceComponentEstimate", "decompose_akm", "sigma2_leave_out", "theta_homosc",
    "theta_leave_out", "theta_plugin", "MobilityGraph", "build_split_plan", "group_split_plan",
    "prune", "NormalEquations", "exact_leverages", "fit", "SketchConfig", "sketched_leverages",
]
