"""Reference selectors: simple random sampling, leverage sampling, and exhaustive search."""

from __future__ import annotations

import itertools
import math
from enum import Enum

import numpy as np

from .criterion import Criterion, MomentMatrix, phi
from .design import Subdata
from .errors import DegenerateData, InvalidInput, NoFeasibleSubset, TooLarge
from .model import InfoBasis, ModelKind, ModelSpec, feature_matrix, information_basis

__all__ = ["BaselineKind", "EXHAUSTIVE_LIMIT", "srs", "leverage_scores", "leverage_sample", "exhaustive_oracle"]

#: Largest number of subsets the exhaustive oracle will enumerate.
EXHAUSTIVE_LIMIT = 10**6


class BaselineKind(str, Enum):
    SRS = "srs"
    LEVERAGE = "lev"
    EXHAUSTIVE = "exhaustive"


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _check_n(N: int, n: int) -> None:
    if not 1 <= n <= N:
        raise InvalidInput(f"need 1 <= n <= N, got n={n}, N={N}")


def srs(N: int, n: int, seed: int = 0) -> Subdata:
    """``n`` distinct indices drawn uniformly from ``range(N)``."""
    _check_n(N, n)
    return Subdata.of(_rng(seed).choice(N, size=n, replace=False), N)


def leverage_scores(data, spec: ModelSpec) -> np.ndarray:
    """Hat-matrix diagonal of the first-order design ``(1, x)``."""
    first = ModelSpec(ModelKind.LINEAR_FIRST_ORDER, spec.p)
    F = feature_matrix(data, first)
    G = F.T @ F
    M = MomentMatrix.from_base(G)
    if not M.nonsingular:
        raise DegenerateData("first-order feature matrix is rank deficient")
    return np.einsum("ij,ij->i", F @ M.inv, F)


def leverage_sample(data, spec: ModelSpec, n: int, seed: int = 0) -> Subdata:
    """Draw ``n`` rows without replacement with probability proportional to leverage.

    Sequential weighted sampling with renormalization after each draw is
    equivalent to keeping the ``n`` largest keys ``log(u_i) / h_i`` with
    ``u_i`` uniform on (0, 1).
    """
    h = leverage_scores(data, spec)
    N = h.size
    _check_n(N, n)
    u = _rng(seed).random(N)
    with np.errstate(divide="ignore"):
        keys = np.where(h > 0, np.log(u) / np.where(h > 0, h, 1.0), -np.inf)
    top = np.argpartition(-keys, n - 1)[:n] if n < N else np.arange(N)
    return Subdata.of(top, N)


def exhaustive_oracle(data, spec: ModelSpec, crit: Criterion, n: int,
                      basis: InfoBasis | None = None) -> tuple[Subdata, float]:
    """Best subdata of size ``n`` by enumerating every subset.

    Subsets with singular information are skipped; ties keep the subset that
    comes first in lexicographic order.  Returns the subdata and its
    criterion value in optimization form.
    """
    b = basis if basis is not None else information_basis(data, spec)
    N = b.N
    _check_n(N, n)
    total = math.comb(N, n)
    if total > EXHAUSTIVE_LIMIT:
        raise TooLarge(f"C({N},{n}) = {total} subsets exceeds the limit of {EXHAUSTIVE_LIMIT}")
    outer = np.einsum("ij,ik->ijk", b.U, b.U)
    best, best_val = None, math.inf
    for comb in itertools.combinations(range(N), n):
        M = MomentMatrix.from_base(outer[list(comb)].sum(axis=0) / n, b.scales)
        if not M.nonsingular:
            continue
        val = phi(M, crit)
        if best is None or val < best_val - 1e-12 * max(1.0, abs(best_val)):
            best, best_val = comb, val
    if best is None:
        raise NoFeasibleSubset(f"every subset of size {n} has singular information")
    return Subdata.of(best, N), best_val
