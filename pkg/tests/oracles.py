"""Independent dense-matrix oracles shared by the unit and acceptance tests."""

from __future__ import annotations

import itertools

import mpmath
import numpy as np

from obdsub import Criterion, ModelKind, ModelSpec, point_information

KINDS = (
    ModelKind.LINEAR_FIRST_ORDER,
    ModelKind.LINEAR_FULL_SECOND_ORDER,
    ModelKind.LOGISTIC_FULL_SECOND_ORDER,
    ModelKind.CLUSTERWISE_LINEAR,
)


def random_model(rng, kind: ModelKind, p: int, G: int = 2) -> ModelSpec:
    if kind is ModelKind.LOGISTIC_FULL_SECOND_ORDER:
        q = 1 + p + p * (p + 1) // 2
        return ModelSpec(kind, p, theta=rng.normal(scale=0.5, size=q))
    if kind is ModelKind.CLUSTERWISE_LINEAR:
        pi = rng.random(G) + 0.1
        return ModelSpec(kind, p, cluster_probs=pi / pi.sum(), cluster_vars=rng.random(G) + 0.5)
    return ModelSpec(kind, p)


def random_criterion(rng, p1: int) -> Criterion:
    k = int(rng.integers(4))
    if k == 0:
        return Criterion.D_opt()
    if k == 1:
        return Criterion.A_opt()
    m = int(rng.integers(1, p1 + 1))
    idx = tuple(int(i) for i in rng.choice(p1, size=m, replace=False))
    return Criterion.d_subset(idx) if k == 2 else Criterion.a_subset(idx)


def dense_infos(X: np.ndarray, spec: ModelSpec) -> list[np.ndarray]:
    return [point_information(x, spec).materialize() for x in X]


def dense_phi(M: np.ndarray, crit: Criterion) -> float:
    """Criterion value from a dense information matrix via plain numpy."""
    Minv = np.linalg.inv(M)
    idx = np.arange(M.shape[0]) if crit.indices is None else np.asarray(crit.indices)
    S = Minv[np.ix_(idx, idx)]
    if crit.is_d:
        return float(np.linalg.slogdet(S)[1])
    return float(np.trace(S))


def dense_moment(infos, w) -> np.ndarray:
    return sum(wi * I for wi, I in zip(w, infos))


def fd_dir_derivative(infos, w, i, crit, h=1e-6) -> float:
    """Central difference of ``a -> phi((1 - a) M + a I_i)`` at ``a = 0``."""
    M = dense_moment(infos, w)
    D = infos[i] - M
    return (dense_phi(M + h * D, crit) - dense_phi(M - h * D, crit)) / (2 * h)


def fd_weight_gradient(infos, w, x2, crit, h=1e-6) -> np.ndarray:
    """Central differences over the free weights of ``x2`` (last weight dependent)."""
    out = np.empty(len(x2) - 1)
    last = x2[-1]
    for j, i in enumerate(x2[:-1]):
        wp, wm = w.copy(), w.copy()
        wp[i] += h
        wp[last] -= h
        wm[i] -= h
        wm[last] += h
        out[j] = (dense_phi(dense_moment(infos, wp), crit) - dense_phi(dense_moment(infos, wm), crit)) / (2 * h)
    return out


def mp_weight_hessian(infos, w, x2, crit, h=1e-6, dps=40) -> np.ndarray:
    """Central second differences of phi over the free weights of ``x2``.

    Evaluated in ``dps``-digit arithmetic so that the differences carry only
    truncation error; a double-precision version loses about ``1e-16 / h**2``
    relative to the scale of ``phi`` to cancellation.
    """
    with mpmath.workdps(dps):
        mats = [mpmath.matrix(I.tolist()) for I in infos]
        idx = list(range(infos[0].shape[0])) if crit.indices is None else list(crit.indices)
        wm = [mpmath.mpf(float(x)) for x in w]
        hm = mpmath.mpf(h)
        last = x2[-1]

        def phi_at(shift):
            M = mpmath.zeros(*infos[0].shape)
            for i, wi in enumerate(wm):
                wi = wi + shift.get(i, 0)
                if wi != 0:
                    M += wi * mats[i]
            Minv = mpmath.inverse(M)
            S = mpmath.matrix([[Minv[a, b] for b in idx] for a in idx])
            return mpmath.log(mpmath.det(S)) if crit.is_d else sum(S[a, a] for a in range(len(idx)))

        def shifted(terms):
            out: dict[int, object] = {}
            for i, c in terms:
                out[i] = out.get(i, 0) + c * hm
                out[last] = out.get(last, 0) - c * hm
            return out

        free = list(x2[:-1])
        H = np.empty((len(free), len(free)))
        for a, i in enumerate(free):
            for b in range(a, len(free)):
                j = free[b]
                v = (phi_at(shifted([(i, 1), (j, 1)])) - phi_at(shifted([(i, 1), (j, -1)]))
                     - phi_at(shifted([(i, -1), (j, 1)])) + phi_at(shifted([(i, -1), (j, -1)]))) / (4 * hm * hm)
                H[a, b] = H[b, a] = float(v)
    return H


def exhaustive_phi(infos, n, crit) -> tuple[tuple[int, ...], float]:
    best, best_S = np.inf, None
    for S in itertools.combinations(range(len(infos)), n):
        M = sum(infos[i] for i in S) / n
        if np.linalg.matrix_rank(M, tol=1e-10 * np.abs(M).max()) < M.shape[0]:
            continue
        v = dense_phi(M, crit)
        if v < best:
            best, best_S = v, S
    return best_S, best


#: One summary line per acceptance criterion, printed at the end of the session.
ACCEPTANCE_LINES: list[str] = []


def grid_array(N: int, n: int, steps_per_bound: int = 20) -> np.ndarray:
    """Every feasible weight vector on the grid ``k / (steps_per_bound * n)``, one per row."""
    total, cap = steps_per_bound * n, steps_per_bound
    parts = np.zeros((1, 0), dtype=np.int64)
    left = np.array([total])
    for i in range(N - 1):
        room = cap * (N - 1 - i)
        ks = np.arange(cap + 1)
        ok = (ks[None, :] <= left[:, None]) & (left[:, None] - ks[None, :] <= room)
        rows, cols = np.nonzero(ok)
        parts = np.hstack([parts[rows], ks[cols][:, None]])
        left = left[rows] - ks[cols]
    parts = np.hstack([parts, left[:, None]])
    return parts[parts[:, -1] <= cap] / float(total)


def batch_phi(W: np.ndarray, infos, crit: Criterion) -> np.ndarray:
    """Dense criterion values for many weight vectors; ``inf`` where singular."""
    stack = np.stack(infos)
    p1 = stack.shape[1]
    M = np.einsum("gi,ijk->gjk", W, stack)
    scale = np.abs(M).reshape(len(M), -1).max(axis=1)
    eig = np.linalg.eigvalsh(M)
    ok = eig[:, 0] > 1e-10 * np.maximum(scale, 1e-300)
    out = np.full(len(M), np.inf)
    Minv = np.linalg.inv(M[ok])
    idx = np.arange(p1) if crit.indices is None else np.asarray(crit.indices)
    S = Minv[:, idx][:, :, idx]
    out[ok] = np.linalg.slogdet(S)[1] if crit.is_d else np.trace(S, axis1=1, axis2=2)
    return out
