"""Statistical models as feature expansions plus per-point information.

Every supported model has per-point information that is either a rank-one
matrix ``psi * f f^T`` or a block-diagonal stack of scaled copies
``c_g * f f^T`` (clusterwise linear regression).  Both cases are handled by
one factored representation: a vector ``u`` per point and a vector of block
scales ``c``, with

    I(x) = blockdiag(c_1 u u^T, ..., c_G u u^T).

For rank-one models ``G = 1``, ``c = (1,)`` and ``u = sqrt(psi) f``.  Moment
matrices therefore only ever need the small base matrix ``sum w_i u_i u_i^T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import InvalidInput

__all__ = [
    "ModelKind",
    "ModelSpec",
    "PointInfo",
    "InfoBasis",
    "feature_dim",
    "expand_features",
    "feature_matrix",
    "glm_weight",
    "point_information",
    "information_basis",
]


class ModelKind(str, Enum):
    LINEAR_FIRST_ORDER = "linear1"
    LINEAR_FULL_SECOND_ORDER = "linear2"
    LOGISTIC_FULL_SECOND_ORDER = "logistic2"
    CLUSTERWISE_LINEAR = "clr"

    @property
    def second_order(self) -> bool:
        return self in (ModelKind.LINEAR_FULL_SECOND_ORDER, ModelKind.LOGISTIC_FULL_SECOND_ORDER)


def feature_dim(kind: ModelKind, p: int) -> int:
    """Length of the regression feature vector for ``p`` covariates."""
    kind = ModelKind(kind)
    if kind.second_order:
        return 1 + p + p * (p + 1) // 2
    return 1 + p


@dataclass(frozen=True)
class ModelSpec:
    """Model definition.

    Parameters
    ----------
    kind : ModelKind
        Feature expansion and information structure.
    p : int
        Covariate dimension.
    theta : sequence of float, optional
        Plug-in parameter vector; required for the logistic model and must
        have length ``feature_dim(kind, p)``.
    cluster_probs, cluster_vars : sequence of float, optional
        Cluster probabilities and error variances; required for the
        clusterwise linear model.
    """

    kind: ModelKind
    p: int
    theta: tuple[float, ...] | None = None
    cluster_probs: tuple[float, ...] | None = None
    cluster_vars: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if int(self.p) != self.p or self.p < 1:
            raise InvalidInput(f"p must be a positive integer, got {self.p!r}")
        object.__setattr__(self, "p", int(self.p))
        for name in ("theta", "cluster_probs", "cluster_vars"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(float(v) for v in np.ravel(value)))

        if self.kind is ModelKind.LOGISTIC_FULL_SECOND_ORDER:
            if self.theta is None:
                raise InvalidInput("logistic model requires theta")
            if len(self.theta) != self.n_features:
                raise InvalidInput(
                    f"theta has length {len(self.theta)}, expected {self.n_features}"
                )
            if not all(math.isfinite(t) for t in self.theta):
                raise InvalidInput("theta must be finite")
        if self.kind is ModelKind.CLUSTERWISE_LINEAR:
            if self.cluster_probs is None or self.cluster_vars is None:
                raise InvalidInput("clusterwise model requires cluster_probs and cluster_vars")
            if len(self.cluster_probs) != len(self.cluster_vars) or not self.cluster_probs:
                raise InvalidInput("cluster_probs and cluster_vars must have equal, nonzero length")
            if abs(sum(self.cluster_probs) - 1.0) > 1e-12:
                raise InvalidInput("cluster_probs must sum to 1")
            if min(self.cluster_probs) <= 0:
                raise InvalidInput("cluster_probs must be positive")
            if min(self.cluster_vars) <= 0:
                raise InvalidInput("cluster_vars must be positive")

    @property
    def n_features(self) -> int:
        """Length ``q`` of the per-point vector ``u``."""
        return feature_dim(self.kind, self.p)

    @property
    def n_blocks(self) -> int:
        if self.kind is ModelKind.CLUSTERWISE_LINEAR:
            return len(self.cluster_probs)
        return 1

    @property
    def p1(self) -> int:
        """Dimension of the full information matrix."""
        return self.n_blocks * self.n_features

    @property
    def block_scales(self) -> np.ndarray:
        if self.kind is ModelKind.CLUSTERWISE_LINEAR:
            return np.asarray(self.cluster_probs) / np.asarray(self.cluster_vars)
        return np.ones(1)

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value, "p": self.p}
        for name in ("theta", "cluster_probs", "cluster_vars"):
            value = getattr(self, name)
            if value is not None:
                out[name] = list(value)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            kind=ModelKind(d["kind"]),
            p=d["p"],
            theta=d.get("theta"),
            cluster_probs=d.get("cluster_probs"),
            cluster_vars=d.get("cluster_vars"),
        )


def _check_covariates(X: np.ndarray, spec: ModelSpec) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != spec.p:
        raise InvalidInput(f"expected covariates with {spec.p} columns, got shape {X.shape}")
    return X


def feature_matrix(X: np.ndarray, spec: ModelSpec) -> np.ndarray:
    """Row-wise feature expansion of an ``(N, p)`` covariate matrix.

    Column order: intercept, linear terms, then (second-order models only)
    the products ``x_i x_j`` for ``i <= j`` in lexicographic order.
    """
    X = _check_covariates(X, spec)
    N, p = X.shape
    cols = [np.ones((N, 1)), X]
    if spec.kind.second_order:
        iu, ju = np.triu_indices(p)
        cols.append(X[:, iu] * X[:, ju])
    return np.hstack(cols)


def expand_features(x: Sequence[float], spec: ModelSpec) -> np.ndarray:
    """Feature vector ``f(x)`` of a single covariate vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != spec.p:
        raise InvalidInput(f"expected a covariate vector of length {spec.p}, got shape {x.shape}")
    return feature_matrix(x[None, :], spec)[0]


def _glm_weights(eta: np.ndarray) -> np.ndarray:
    # exp(eta)/(1+exp(eta))^2 == exp(-|eta|)/(1+exp(-|eta|))^2
    e = np.exp(-np.abs(eta))
    return e / (1.0 + e) ** 2


def glm_weight(eta: float) -> float:
    """Logistic information weight ``exp(eta) / (1 + exp(eta))**2``."""
    eta = float(eta)
    if not math.isfinite(eta):
        raise InvalidInput(f"linear predictor must be finite, got {eta}")
    return float(_glm_weights(np.asarray(eta)))


@dataclass(frozen=True, eq=False)
class PointInfo:
    """Factored information of one data point.

    ``block_scales`` is ``None`` for a rank-one matrix ``psi f f^T``;
    otherwise the matrix is ``blockdiag(c_g f f^T)``.
    """

    f: np.ndarray
    psi: float = 1.0
    block_scales: tuple[float, ...] | None = None

    @property
    def rank_one(self) -> bool:
        return self.block_scales is None

    @property
    def u(self) -> np.ndarray:
        """The vector ``u`` with per-block information ``c_g u u^T``."""
        if self.rank_one:
            return math.sqrt(self.psi) * self.f
        return self.f

    @property
    def dim(self) -> int:
        if self.rank_one:
            return self.f.shape[0]
        return self.f.shape[0] * len(self.block_scales)

    def materialize(self) -> np.ndarray:
        outer = np.outer(self.f, self.f)
        if self.rank_one:
            return self.psi * outer
        q = self.f.shape[0]
        G = len(self.block_scales)
        out = np.zeros((G * q, G * q))
        for g, c in enumerate(self.block_scales):
            out[g * q:(g + 1) * q, g * q:(g + 1) * q] = c * outer
        return out


def point_information(x: Sequence[float], spec: ModelSpec) -> PointInfo:
    f = expand_features(x, spec)
    if spec.kind is ModelKind.LOGISTIC_FULL_SECOND_ORDER:
        return PointInfo(f, glm_weight(float(np.dot(spec.theta, f))))
    if spec.kind is ModelKind.CLUSTERWISE_LINEAR:
        return PointInfo(f, 1.0, tuple(float(c) for c in spec.block_scales))
    return PointInfo(f, 1.0)


@dataclass(frozen=True, eq=False)
class InfoBasis:
    """Information vectors for a whole dataset.

    Attributes
    ----------
    U : ndarray (N, q)
        Row ``i`` is ``u_i``.
    scales : ndarray (G,)
        Block scales shared by every point.
    """

    U: np.ndarray
    scales: np.ndarray

    @property
    def N(self) -> int:
        return self.U.shape[0]

    @property
    def q(self) -> int:
        return self.U.shape[1]

    @property
    def G(self) -> int:
        return self.scales.shape[0]

    @property
    def p1(self) -> int:
        return self.q * self.G

    def point(self, i: int) -> PointInfo:
        if self.G == 1 and self.scales[0] == 1.0:
            return PointInfo(self.U[i], 1.0)
        return PointInfo(self.U[i], 1.0, tuple(float(c) for c in self.scales))


def information_basis(data: np.ndarray, spec: ModelSpec) -> InfoBasis:
    """Compute the factored information of every row of ``data``."""
    F = feature_matrix(data, spec)
    if not np.all(np.isfinite(F)):
        raise InvalidInput("data contain non-finite values")
    if spec.kind is ModelKind.LOGISTIC_FULL_SECOND_ORDER:
        psi = _glm_weights(F @ np.asarray(spec.theta))
        F = F * np.sqrt(psi)[:, None]
    return InfoBasis(np.ascontiguousarray(F), spec.block_scales)
