"""Optimal subdata selection through bounded approximate designs."""

from .baselines import exhaustive_oracle, leverage_sample, srs
from .criterion import Criterion, CriterionKind, MomentMatrix, dir_derivative, phi, phi_display, sensitivities
from .design import (
    BoundedDesign,
    Subdata,
    moment_matrix,
    round_to_subdata,
    subdata_as_design,
)
from .efficiency import EfficiencyReport, efficiency_bounds
from .errors import (
    DegenerateData,
    IngestError,
    InvalidDesign,
    InvalidInput,
    NoFeasibleSubset,
    SingularInformation,
    SubdataError,
    TooLarge,
)
from .model import ModelKind, ModelSpec, expand_features, glm_weight, information_basis, point_information
from .select import (
    Certificate,
    ObdConfig,
    SelectionTrace,
    certificate,
    iboss_init,
    iboss_plus,
    iboss_plus_plus,
    newton_weights,
    obd_iterate,
    select_obd,
)

__version__ = "0.1.0"

__all__ = [
    "BoundedDesign",
    "Certificate",
    "Criterion",
    "CriterionKind",
    "DegenerateData",
    "EfficiencyReport",
    "IngestError",
    "InvalidDesign",
    "InvalidInput",
    "ModelKind",
    "ModelSpec",
    "MomentMatrix",
    "NoFeasibleSubset",
    "ObdConfig",
    "SelectionTrace",
    "SingularInformation",
    "Subdata",
    "SubdataError",
    "TooLarge",
    "certificate",
    "dir_derivative",
    "efficiency_bounds",
    "exhaustive_oracle",
    "expand_features",
    "glm_weight",
    "iboss_init",
    "iboss_plus",
    "iboss_plus_plus",
    "information_basis",
    "leverage_sample",
    "moment_matrix",
    "newton_weights",
    "obd_iterate",
    "phi",
    "phi_display",
    "point_information",
    "round_to_subdata",
    "select_obd",
    "sensitivities",
    "srs",
    "subdata_as_design",
]
