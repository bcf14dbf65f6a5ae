"""Optimality criteria, their directional derivatives, and weight calculus.

All quantities are computed from the base matrix ``B = sum_i w_i u_i u_i^T``
and its inverse ``A``; the full information matrix is
``blockdiag(c_1 B, ..., c_G B)`` and is only materialized on request.

For every supported criterion the sensitivity of a point has the form

    F(xi; x) = C - u^T Q u

with a scalar ``C`` and a PSD ``q x q`` matrix ``Q`` that depend on the
design only.  Sweeps over ``N`` points thus cost ``O(N q^2)``.
"""

from __future__ import annotations

import functools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy import linalg

from .errors import InvalidInput, SingularInformation
from .model import PointInfo

__all__ = [
    "CriterionKind",
    "Criterion",
    "MomentMatrix",
    "Calculus",
    "calculus",
    "phi",
    "phi_display",
    "dir_derivative",
    "sensitivities",
    "weight_grad_hessian",
    "SINGULAR_RTOL",
]

#: Matrices whose smallest eigenvalue is below this fraction of the largest are singular.
SINGULAR_RTOL = 1e-12
#: Rank-one inverse updates between full refactorizations.
REFRESH_EVERY = 64
#: Sherman-Morrison denominators below this trigger a full refactorization.
SM_DENOM_TOL = 1e-10
#: Row block used by sensitivity sweeps; fixed so results never depend on worker count.
SWEEP_CHUNK = 16384


class CriterionKind(str, Enum):
    D = "D"
    A = "A"
    D_SUBSET = "DSubset"
    A_SUBSET = "ASubset"


@dataclass(frozen=True)
class Criterion:
    """Optimality criterion; smaller values are better.

    ``indices`` lists the zero-based coordinates of interest for subset
    kinds (intercept is 0) and is ``None`` for ``D`` and ``A``.
    """

    kind: CriterionKind
    indices: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", CriterionKind(self.kind))
        if self.kind in (CriterionKind.D, CriterionKind.A):
            if self.indices is not None:
                raise InvalidInput(f"{self.kind.value} takes no indices")
            return
        if not self.indices:
            raise InvalidInput("subset criteria need at least one index")
        idx = tuple(int(i) for i in self.indices)
        if len(set(idx)) != len(idx):
            raise InvalidInput(f"duplicate subset indices: {idx}")
        if min(idx) < 0:
            raise InvalidInput(f"negative subset index: {idx}")
        object.__setattr__(self, "indices", tuple(sorted(idx)))

    @classmethod
    def D_opt(cls) -> "Criterion":
        return cls(CriterionKind.D)

    @classmethod
    def A_opt(cls) -> "Criterion":
        return cls(CriterionKind.A)

    @classmethod
    def d_subset(cls, indices: Sequence[int]) -> "Criterion":
        return cls(CriterionKind.D_SUBSET, tuple(indices))

    @classmethod
    def a_subset(cls, indices: Sequence[int]) -> "Criterion":
        return cls(CriterionKind.A_SUBSET, tuple(indices))

    @classmethod
    def parse(cls, text: str) -> "Criterion":
        """Parse ``D``, ``A``, ``A:1-5`` or ``D:1,3,4`` (ranges inclusive)."""
        text = text.strip()
        head, _, tail = text.partition(":")
        head = head.strip().upper()
        if head not in ("D", "A"):
            raise InvalidInput(f"unknown criterion {text!r}")
        if not tail:
            return cls(CriterionKind(head))
        idx: list[int] = []
        try:
            for part in tail.split(","):
                part = part.strip()
                if "-" in part:
                    lo, hi = part.split("-")
                    idx.extend(range(int(lo), int(hi) + 1))
                else:
                    idx.append(int(part))
        except ValueError as exc:
            raise InvalidInput(f"bad subset spec in criterion {text!r}") from exc
        kind = CriterionKind.D_SUBSET if head == "D" else CriterionKind.A_SUBSET
        return cls(kind, tuple(idx))

    @property
    def is_d(self) -> bool:
        return self.kind in (CriterionKind.D, CriterionKind.D_SUBSET)

    def label(self) -> str:
        head = "D" if self.is_d else "A"
        if self.indices is None:
            return head
        return head + ":" + ",".join(str(i) for i in self.indices)

    def interest(self, p1: int) -> np.ndarray:
        """Coordinates of interest inside a ``p1``-dimensional parameter."""
        if self.indices is None:
            return np.arange(p1)
        if max(self.indices) >= p1:
            raise InvalidInput(f"subset index {max(self.indices)} out of range for p1={p1}")
        return np.asarray(self.indices)


@dataclass(frozen=True, eq=False)
class _Layout:
    d: bool
    # D: (local indices or None for all, multiplicity)
    groups: tuple[tuple[np.ndarray | None, int], ...]
    logc: float
    k: int
    # A: per-coordinate weights of diag(A)
    weights: np.ndarray | None


@functools.lru_cache(maxsize=256)
def _layout_cached(crit: Criterion, q: int, scales: tuple[float, ...]) -> _Layout:
    G = len(scales)
    idx = crit.interest(q * G)
    by_block: dict[int, list[int]] = {}
    for i in idx:
        by_block.setdefault(int(i) // q, []).append(int(i) % q)
    logc = sum(len(js) * math.log(scales[g]) for g, js in by_block.items())
    if crit.is_d:
        counts: dict[tuple[int, ...], int] = {}
        for js in by_block.values():
            counts[tuple(js)] = counts.get(tuple(js), 0) + 1
        groups = tuple(
            (None if len(js) == q else np.asarray(js), m) for js, m in sorted(counts.items())
        )
        return _Layout(True, groups, logc, len(idx), None)
    weights = np.zeros(q)
    for g, js in by_block.items():
        weights[js] += 1.0 / scales[g]
    return _Layout(False, (), logc, len(idx), weights)


def _layout(crit: Criterion, q: int, scales: np.ndarray) -> _Layout:
    return _layout_cached(crit, q, tuple(float(s) for s in scales))


@dataclass(frozen=True, eq=False)
class MomentMatrix:
    """Information matrix ``blockdiag(c_g B)`` with a cached factorization of ``B``.

    Instances are immutable; :meth:`updated` returns a new matrix.
    """

    base: np.ndarray
    scales: np.ndarray
    inv: np.ndarray | None
    logdet_base: float
    min_eig: float
    n_updates: int = 0

    @classmethod
    def from_base(cls, base: np.ndarray, scales: np.ndarray | None = None) -> "MomentMatrix":
        base = np.asarray(base, dtype=float)
        base = 0.5 * (base + base.T)
        scales = np.ones(1) if scales is None else np.asarray(scales, dtype=float)
        eig = np.linalg.eigvalsh(base)
        lo, hi = float(eig[0]), float(eig[-1])
        if not np.all(np.isfinite(eig)) or hi <= 0 or lo < SINGULAR_RTOL * hi:
            return cls(base, scales, None, -math.inf, lo)
        try:
            c, low = linalg.cho_factor(base, lower=True, check_finite=False)
        except linalg.LinAlgError:
            return cls(base, scales, None, -math.inf, lo)
        inv = linalg.cho_solve((c, low), np.eye(base.shape[0]), check_finite=False)
        inv = 0.5 * (inv + inv.T)
        return cls(base, scales, inv, 2.0 * float(np.sum(np.log(np.diag(c)))), lo)

    @classmethod
    def from_weights(cls, U: np.ndarray, w: np.ndarray, scales: np.ndarray | None = None) -> "MomentMatrix":
        """Build from rows ``U`` (only those with nonzero weight matter) and weights ``w``."""
        return cls.from_base((U * w[:, None]).T @ U, scales)

    @property
    def nonsingular(self) -> bool:
        return self.inv is not None

    @property
    def q(self) -> int:
        return self.base.shape[0]

    @property
    def G(self) -> int:
        return self.scales.shape[0]

    @property
    def p1(self) -> int:
        return self.q * self.G

    def require(self) -> "MomentMatrix":
        if self.inv is None:
            raise SingularInformation(min_eigenvalue=self.min_eig)
        return self

    @property
    def M(self) -> np.ndarray:
        return linalg.block_diag(*[c * self.base for c in self.scales])

    @property
    def M_inv(self) -> np.ndarray:
        A = self.require().inv
        return linalg.block_diag(*[A / c for c in self.scales])

    @property
    def logdet(self) -> float:
        """Log-determinant of the full matrix (``-inf`` when singular)."""
        if self.inv is None:
            return -math.inf
        return self.G * self.logdet_base + self.q * float(np.sum(np.log(self.scales)))

    def updated(self, u: np.ndarray, delta: float) -> "MomentMatrix":
        """Matrix for ``B + delta u u^T`` with a rank-one inverse update."""
        if delta == 0:
            return self
        A = self.require().inv
        base = self.base + delta * np.outer(u, u)
        a = A @ u
        denom = 1.0 + delta * float(u @ a)
        if denom < SM_DENOM_TOL or self.n_updates + 1 >= REFRESH_EVERY:
            fresh = MomentMatrix.from_base(base, self.scales)
            if fresh.inv is None:
                raise SingularInformation("update makes the information matrix singular", fresh.min_eig)
            return fresh
        inv = A - (delta / denom) * np.outer(a, a)
        return MomentMatrix(
            base, self.scales, inv, self.logdet_base + math.log(denom), math.nan, self.n_updates + 1
        )


@dataclass(frozen=True, eq=False)
class Calculus:
    """Design-dependent pieces of the criterion's first and second derivatives.

    ``F(x) = const - u^T Q u``; ``parts`` holds ``(multiplicity, Q_g)`` for
    the Hessian (``full`` groups use ``Q_g = A``).
    """

    phi: float
    const: float
    Q: np.ndarray
    parts: tuple[tuple[int, np.ndarray, bool], ...]
    d: bool
    A: np.ndarray = field(repr=False)
    k: int = 0


def calculus(M: MomentMatrix, crit: Criterion) -> Calculus:
    A = M.require().inv
    lay = _layout(crit, M.q, M.scales)
    if not lay.d:
        w = lay.weights
        Q = (A * w[None, :]) @ A
        return Calculus(float(np.dot(w, np.diag(A))), float(np.dot(w, np.diag(A))), Q, ((1, Q, False),), False, A, lay.k)
    phi_val = -lay.logc
    const = 0.0
    Q = np.zeros_like(A)
    parts = []
    for js, mult in lay.groups:
        if js is None:
            phi_val -= mult * M.logdet_base
            const += mult * M.q
            Q += mult * A
            parts.append((mult, A, True))
            continue
        S = A[np.ix_(js, js)]
        try:
            c, low = linalg.cho_factor(S, lower=True, check_finite=False)
        except linalg.LinAlgError as exc:
            raise SingularInformation("subset information is singular") from exc
        phi_val += mult * 2.0 * float(np.sum(np.log(np.diag(c))))
        const += mult * len(js)
        Aj = A[js, :]
        Qg = Aj.T @ linalg.cho_solve((c, low), Aj, check_finite=False)
        Qg = 0.5 * (Qg + Qg.T)
        Q += mult * Qg
        parts.append((mult, Qg, False))
    return Calculus(phi_val, const, Q, tuple(parts), True, A, lay.k)


def phi(M: MomentMatrix, crit: Criterion) -> float:
    """Criterion value in optimization form.

    ``-log det M`` for D, ``tr M^-1`` for A, and ``log det`` / ``tr`` of the
    inverse restricted to the coordinates of interest for subset kinds.
    """
    return calculus(M, crit).phi


def phi_display(M: MomentMatrix, crit: Criterion) -> float:
    """Criterion value in reporting form: ``det(.)^(1/k)`` for D kinds, unchanged for A."""
    c = calculus(M, crit)
    if c.d:
        return math.exp(c.phi / c.k)
    return c.phi


def _quad(U: np.ndarray, Q: np.ndarray, workers: int = 1) -> np.ndarray:
    """Row-wise ``u^T Q u`` in fixed-size chunks."""
    N = U.shape[0]
    if N <= SWEEP_CHUNK:
        return np.einsum("ij,ij->i", U @ Q, U)
    out = np.empty(N)
    starts = range(0, N, SWEEP_CHUNK)

    def run(s):
        blk = U[s:s + SWEEP_CHUNK]
        out[s:s + SWEEP_CHUNK] = np.einsum("ij,ij->i", blk @ Q, blk)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    else:
        for s in starts:
            run(s)
    return out


def sensitivities(M: MomentMatrix, U: np.ndarray, crit: Criterion, workers: int = 1,
                  calc: Calculus | None = None) -> np.ndarray:
    """Directional derivatives ``F(xi; x_i)`` for every row of ``U``."""
    calc = calc or calculus(M, crit)
    return calc.const - _quad(U, calc.Q, workers)


def _point_u(M: MomentMatrix, info: PointInfo) -> np.ndarray:
    if info.rank_one:
        if M.G != 1 or M.scales[0] != 1.0:
            raise InvalidInput("rank-one point information used with a block moment matrix")
        return info.u
    if len(info.block_scales) != M.G or not np.allclose(info.block_scales, M.scales, rtol=1e-12, atol=0):
        raise InvalidInput("point block scales do not match the moment matrix")
    return info.f


def dir_derivative(M: MomentMatrix, info: PointInfo, crit: Criterion) -> float:
    """``lim_{a->0+} [phi((1-a) M + a I(x)) - phi(M)] / a``.  Negative values mark useful points."""
    u = _point_u(M, info)
    return float(sensitivities(M, u[None, :], crit)[0])


def weight_grad_hessian(M: MomentMatrix, U2: np.ndarray, crit: Criterion,
                        calc: Calculus | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and Hessian of phi over the free weights of ``X_2``.

    The rows of ``U2`` are the points of ``X_2``; the last row's weight is
    the dependent one (total ``X_2`` mass is fixed).  ``M`` must be the
    moment matrix at the current weights.
    """
    n2 = U2.shape[0]
    if n2 < 2:
        raise InvalidInput("need at least two points in X_2")
    calc = calc or calculus(M, crit)
    AU = U2 @ calc.A
    H = AU @ U2.T
    R_total = U2 @ calc.Q @ U2.T
    dw = -np.diag(R_total)
    if calc.d:
        Hw = np.zeros((n2, n2))
        for mult, Qg, full in calc.parts:
            if full:
                Hw += mult * (H * H)
            else:
                R = U2 @ Qg @ U2.T
                Hw += mult * (2.0 * H * R - R * R)
    else:
        Hw = 2.0 * H * R_total
    grad = dw[:-1] - dw[-1]
    hess = Hw[:-1, :-1] - Hw[:-1, -1][:, None] - Hw[-1, :-1][None, :] + Hw[-1, -1]
    return grad, 0.5 * (hess + hess.T)
