"""Bounded approximate designs, subdata, and conversions between them."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .criterion import MomentMatrix, _point_u
from .errors import InvalidDesign, InvalidInput
from .model import InfoBasis, ModelSpec, PointInfo, information_basis

__all__ = [
    "BOUNDARY_TOL",
    "BoundedDesign",
    "Subdata",
    "moment_matrix",
    "subdata_moment",
    "apply_weight_delta",
    "round_to_subdata",
    "subdata_as_design",
    "write_subdata_csv",
    "read_subdata_csv",
    "write_design_csv",
    "read_design_csv",
]

#: Absolute tolerance for classifying a weight as 0 or 1/n.
BOUNDARY_TOL = 1e-12
#: Allowed drift of the total mass from 1.
MASS_TOL = 1e-10


@dataclass(frozen=True)
class Subdata:
    """Sorted distinct row indices of a selected subset of ``N`` rows."""

    indices: tuple[int, ...]
    N: int

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.int64))
        if idx.size != len(self.indices):
            raise InvalidInput("subdata indices must be distinct")
        if idx.size and (idx[0] < 0 or idx[-1] >= self.N):
            raise InvalidInput(f"subdata indices out of range [0, {self.N})")
        object.__setattr__(self, "indices", tuple(int(i) for i in idx))

    @classmethod
    def of(cls, indices: Iterable[int], N: int) -> "Subdata":
        return cls(tuple(int(i) for i in indices), int(N))

    @property
    def n(self) -> int:
        return len(self.indices)

    def array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.int64)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.N, dtype=bool)
        m[self.array()] = True
        return m


@dataclass(frozen=True, eq=False)
class BoundedDesign:
    """Weights ``w`` over ``N`` points with ``0 <= w_i <= 1/n`` and ``sum w = 1``."""

    weights: np.ndarray
    n: int

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if w.ndim != 1:
            raise InvalidDesign("weights must be a vector")
        if self.n < 1 or self.n > w.size:
            raise InvalidDesign(f"n={self.n} incompatible with N={w.size}")
        if abs(w.sum() - 1.0) > MASS_TOL:
            raise InvalidDesign(f"weights sum to {w.sum()!r}, not 1")
        if w.min() < -BOUNDARY_TOL or w.max() > 1.0 / self.n + BOUNDARY_TOL:
            raise InvalidDesign("weights outside [0, 1/n]")

    @property
    def N(self) -> int:
        return self.weights.size

    def labels(self) -> np.ndarray:
        """Partition label per point: 1 (w=0), 2 (interior), 3 (w=1/n)."""
        w = self.weights
        lab = np.full(w.size, 2, dtype=np.int8)
        lab[w <= BOUNDARY_TOL] = 1
        lab[1.0 / self.n - w <= BOUNDARY_TOL] = 3
        return lab

    def partition(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        lab = self.labels()
        return tuple(np.flatnonzero(lab == k) for k in (1, 2, 3))

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > BOUNDARY_TOL)


def _basis(data, spec: ModelSpec, basis: InfoBasis | None) -> InfoBasis:
    return basis if basis is not None else information_basis(data, spec)


def moment_matrix(design: BoundedDesign, data, spec: ModelSpec, basis: InfoBasis | None = None) -> MomentMatrix:
    """``M = sum_i w_i I(x_i)`` with cached factorization (or a singular flag)."""
    b = _basis(data, spec, basis)
    sup = np.flatnonzero(design.weights > 0)
    return MomentMatrix.from_weights(b.U[sup], design.weights[sup], b.scales)


def subdata_moment(S: Subdata, basis: InfoBasis) -> MomentMatrix:
    """Moment matrix of the design that puts ``1/n`` on every point of ``S``."""
    U = basis.U[S.array()]
    return MomentMatrix.from_base(U.T @ U / S.n, basis.scales)


def apply_weight_delta(M: MomentMatrix, info: PointInfo, delta: float) -> MomentMatrix:
    """Moment matrix after adding ``delta`` to one point's weight.

    The inverse is refreshed by a Sherman-Morrison update; a full
    refactorization happens every 64 updates or when the update is
    ill-conditioned.  Raises :class:`SingularInformation` if the result is
    singular.
    """
    return M.updated(_point_u(M, info), float(delta))


def _order_desc(values: np.ndarray, idx: np.ndarray) -> np.ndarray:
    # descending by value, ties by smallest index
    return idx[np.lexsort((idx, -values[idx]))]


def round_to_subdata(design: BoundedDesign) -> Subdata:
    """The ``n`` points with the largest weights (all of ``X_3`` first; ties by index)."""
    x1, x2, x3 = design.partition()
    n = design.n
    if x3.size + x2.size < n:
        raise InvalidDesign(f"only {x3.size + x2.size} positive weights, need {n}")
    if x3.size > n:
        raise InvalidDesign(f"{x3.size} points at the upper bound exceed n={n}")
    fill = _order_desc(design.weights, x2)[: n - x3.size]
    return Subdata.of(np.concatenate([x3, fill]), design.N)


def subdata_as_design(S: Subdata, n: int | None = None) -> BoundedDesign:
    n = S.n if n is None else n
    if S.n != n:
        raise InvalidInput(f"subdata has {S.n} points, expected {n}")
    w = np.zeros(S.N)
    w[S.array()] = 1.0 / n
    return BoundedDesign(w, n)


def write_subdata_csv(S: Subdata, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("index\n")
        for i in S.indices:
            fh.write(f"{i}\n")


def read_subdata_csv(path: str | Path, N: int) -> Subdata:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows and rows[0] and not rows[0][0].strip().lstrip("-").isdigit():
        rows = rows[1:]
    try:
        idx = [int(r[0]) for r in rows if r]
    except ValueError as exc:
        raise InvalidInput(f"{path}: subdata file must hold integer indices") from exc
    return Subdata.of(idx, N)


def write_design_csv(design: BoundedDesign, path: str | Path, header: dict | None = None) -> None:
    """Write ``# {json header}`` then ``index,weight`` rows for the support.

    Weights use ``repr`` so that reading the file back is exact.
    """
    meta = {"n": design.n, "N": design.N}
    meta.update(header or {})
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        fh.write("index,weight\n")
        for i in design.support:
            fh.write(f"{int(i)},{float(design.weights[i])!r}\n")


def read_design_csv(path: str | Path) -> tuple[BoundedDesign, dict]:
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise InvalidInput(f"{path}: missing JSON header line")
        meta = json.loads(first[1:])
        reader = csv.reader(fh)
        next(reader, None)
        w = np.zeros(int(meta["N"]))
        for row in reader:
            if row:
                w[int(row[0])] = float(row[1])
    return BoundedDesign(w, int(meta["n"])), meta
