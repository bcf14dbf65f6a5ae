"""Efficiency bounds for subdata relative to an optimal bounded design.

With ``xi*`` the optimal bounded design and ``S*`` its rounding,

    phi(xi*) / phi(S)  <=  Eff(S)  <=  phi(S*) / phi(S),

using the display form of the criterion (``det(.)^(1/k)`` for D).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from .criterion import Criterion, phi_display
from .design import BoundedDesign, Subdata, moment_matrix, subdata_moment
from .errors import InvalidDesign
from .model import InfoBasis, ModelSpec, information_basis

__all__ = ["EfficiencyReport", "display_value", "efficiency_bounds"]


@dataclass
class EfficiencyReport:
    phi_xi_star: float
    phi_S_star: float
    phi_S: float
    eff_lower: float
    eff_upper: float
    criterion: str
    model: dict
    n: int
    N: int
    wall_time_seconds: dict = field(default_factory=dict)
    stages: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EfficiencyReport":
        return cls(**d)


def display_value(design: BoundedDesign | Subdata, basis: InfoBasis, crit: Criterion) -> float:
    """Display-form criterion value of a design or of subdata taken as a design."""
    if isinstance(design, Subdata):
        M = subdata_moment(design, basis)
    else:
        M = moment_matrix(design, None, None, basis=basis)
    return phi_display(M, crit)


def efficiency_bounds(S: Subdata, xi_star: BoundedDesign, S_star: Subdata, data, spec: ModelSpec,
                      crit: Criterion, basis: InfoBasis | None = None) -> EfficiencyReport:
    """Lower and upper efficiency bounds of ``S``.

    Raises
    ------
    SingularInformation
        If any of the three designs has singular information.
    InvalidDesign
        If ``phi(xi*)`` exceeds ``phi(S*)``, i.e. ``xi*`` cannot be optimal.
    """
    basis = basis if basis is not None else information_basis(data, spec)
    p_xi = display_value(xi_star, basis, crit)
    p_star = display_value(S_star, basis, crit)
    p_S = p_star if S == S_star else display_value(S, basis, crit)
    if p_xi > p_star + 1e-10 * max(1.0, abs(p_star)):
        raise InvalidDesign(f"phi(xi*)={p_xi!r} exceeds phi(S*)={p_star!r}")
    return EfficiencyReport(
        phi_xi_star=p_xi,
        phi_S_star=p_star,
        phi_S=p_S,
        eff_lower=p_xi / p_S,
        eff_upper=p_star / p_S,
        criterion=crit.label(),
        model=spec.to_dict() if spec is not None else {},
        n=S.n,
        N=S.N,
    )


def stage_entry(S: Subdata, p_xi: float, p_star: float, basis: InfoBasis, crit: Criterion) -> dict:
    p_S = display_value(S, basis, crit)
    if not math.isfinite(p_S):
        return {"phi": p_S, "eff_lower": 0.0, "eff_upper": 0.0}
    return {"phi": p_S, "eff_lower": p_xi / p_S, "eff_upper": p_star / p_S}
