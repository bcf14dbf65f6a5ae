"""Subdata selection: IBOSS initialization, exchange refinements, and the
partition-exchange search for an optimal bounded design.

The search keeps a partition ``(X1, X2, X3)`` of the data with weights
``0``, free and ``1/n`` respectively.  Each outer iteration optimizes the
free weights by damped Newton steps, checks an epsilon-equivalence
certificate, and, if that fails, moves the most promising point of ``X1``
and the least useful point of ``X3`` into ``X2``.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg, optimize

from .criterion import Criterion, MomentMatrix, _quad, calculus, phi, sensitivities, weight_grad_hessian
from .design import (
    BOUNDARY_TOL,
    BoundedDesign,
    Subdata,
    moment_matrix,
    round_to_subdata,
    subdata_as_design,
    subdata_moment,
)
from .efficiency import EfficiencyReport, display_value, stage_entry
from .errors import DegenerateData, InvalidDesign, InvalidInput, SingularInformation, SubdataError
from .model import InfoBasis, ModelSpec, information_basis

__all__ = [
    "ObdConfig",
    "Certificate",
    "IterationRecord",
    "SelectionTrace",
    "NewtonResult",
    "PipelineResult",
    "iboss_init",
    "iboss_plus",
    "iboss_plus_plus",
    "newton_weights",
    "obd_iterate",
    "certificate",
    "run_pipeline",
    "select_obd",
]

#: Relative band within which sensitivity values count as tied.
TIE_RTOL = 1e-10


@dataclass(frozen=True)
class ObdConfig:
    """Tuning knobs of the selection pipeline.

    ``outer_max_iter=None`` means ``n`` outer iterations.  When
    ``adaptive_epsilon_alpha`` is set, epsilon is recomputed every iteration
    as ``alpha * |phi| / (alpha + 1)``.
    """

    epsilon: float = 1e-5
    newton_tol: float = 1e-6
    newton_max_iter: int = 40
    outer_max_iter: int | None = None
    alpha_floor: float = 1e-10
    adaptive_epsilon_alpha: float | None = None
    seed: int = 0
    workers: int = 1
    tabu: int = 2
    newton_init: str = "warm"

    def __post_init__(self):
        if self.newton_init not in ("warm", "uniform"):
            raise InvalidInput(f"newton_init must be 'warm' or 'uniform', got {self.newton_init!r}")
        for name in ("epsilon", "newton_tol", "alpha_floor"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise InvalidInput(f"{name} must be a positive finite number, got {v!r}")
        if self.adaptive_epsilon_alpha is not None and not self.adaptive_epsilon_alpha > 0:
            raise InvalidInput("adaptive_epsilon_alpha must be positive")
        if self.newton_max_iter < 1:
            raise InvalidInput("newton_max_iter must be >= 1")
        if self.outer_max_iter is not None and self.outer_max_iter < 1:
            raise InvalidInput("outer_max_iter must be >= 1")
        if self.workers < 1:
            raise InvalidInput("workers must be >= 1")
        if self.tabu < 0:
            raise InvalidInput("tabu must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ObdConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidInput(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def _finite_or_none(x: float):
    return x if math.isfinite(x) else None


@dataclass(frozen=True)
class Certificate:
    """Outcome of the epsilon-equivalence check.

    ``gap`` is the largest violation of the inequalities (``<= 0`` when
    every one holds).  ``s`` and ``s_closed_form`` are ``nan`` when ``X2``
    is empty.
    """

    satisfied: bool
    s: float
    s_closed_form: float
    max_F_X3: float
    min_F_X1: float
    max_dev_X2: float
    epsilon_used: float
    gap: float

    def to_dict(self) -> dict:
        return {k: (_finite_or_none(v) if isinstance(v, float) else v) for k, v in asdict(self).items()}


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    phi: float
    n1: int
    n2: int
    n3: int
    certificate: Certificate

    def to_dict(self) -> dict:
        d = asdict(self)
        d["certificate"] = self.certificate.to_dict()
        return d


@dataclass
class SelectionTrace:
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    events: list[dict] = field(default_factory=list)

    @property
    def total_iterations(self) -> int:
        return len(self.records)

    def to_jsonl(self) -> str:
        lines = [json.dumps(r.to_dict(), sort_keys=True) for r in self.records]
        return "\n".join(lines) + ("\n" if lines else "")


def _event(events: list | None, kind: str, **info) -> None:
    if events is not None:
        events.append({"event": kind, **info})


def _select_k(values: np.ndarray, candidates: np.ndarray, k: int, largest: bool) -> np.ndarray:
    """``k`` candidates with the smallest (or largest) values; near-ties go to the smallest index."""
    if k <= 0 or candidates.size == 0:
        return candidates[:0]
    v = values[candidates]
    if largest:
        v = -v
    if k >= candidates.size:
        return candidates[np.lexsort((candidates, v))]
    kth = v[np.argpartition(v, k - 1)[k - 1]]
    tol = TIE_RTOL * max(1.0, float(np.max(np.abs(v))))
    strict = candidates[v < kth - tol]
    band = np.sort(candidates[np.abs(v - kth) <= tol])
    return np.concatenate([strict, band[: k - strict.size]])


def _argbest(values: np.ndarray, candidates: np.ndarray, largest: bool) -> int:
    """Single best candidate; same tie rule as :func:`_select_k`."""
    v = values[candidates]
    if largest:
        v = -v
    best = float(v.min())
    tol = TIE_RTOL * max(1.0, abs(best))
    return int(candidates[np.argmax(v <= best + tol)])


def _basis(data, spec, basis):
    return basis if basis is not None else information_basis(data, spec)


# ---------------------------------------------------------------------------
# IBOSS family
# ---------------------------------------------------------------------------

def iboss_init(data, spec: ModelSpec, n: int, seed: int = 0, basis: InfoBasis | None = None) -> Subdata:
    """Information-based optimal subdata selection extended to general features.

    For every non-constant feature column of the information vectors take
    the ``n // (2 p2)`` largest and smallest values among the points not yet
    chosen, then fill up to ``n`` uniformly at random.
    """
    b = _basis(data, spec, basis)
    N = b.N
    if not 1 <= n <= N:
        raise InvalidInput(f"need 1 <= n <= N, got n={n}, N={N}")
    U = b.U
    cols = np.flatnonzero(np.ptp(U, axis=0) > 0)
    if cols.size == 0:
        raise DegenerateData("every feature is constant")
    k = n // (2 * cols.size)
    chosen = np.zeros(N, dtype=bool)
    if k > 0:
        for j in cols:
            col = U[:, j]
            hi = _select_k(col, np.flatnonzero(~chosen), k, largest=True)
            chosen[hi] = True
            lo = _select_k(col, np.flatnonzero(~chosen), k, largest=False)
            chosen[lo] = True
    short = n - int(chosen.sum())
    if short > 0:
        rng = np.random.Generator(np.random.Philox(seed))
        chosen[rng.choice(np.flatnonzero(~chosen), size=short, replace=False)] = True
    return Subdata.of(np.flatnonzero(chosen), N)


def repair_singular(S: Subdata, basis: InfoBasis, events: list | None = None) -> Subdata:
    """Swap high-leverage points into ``S`` until its information is nonsingular."""
    if subdata_moment(S, basis).nonsingular:
        return S
    U = basis.U
    full = MomentMatrix.from_base(U.T @ U / basis.N, basis.scales)
    if not full.nonsingular:
        raise DegenerateData("the full data have singular information")
    lev = np.einsum("ij,ij->i", U @ full.inv, U)
    m = max(1, math.ceil(basis.p1 / 2))
    mask = S.mask()
    for _ in range(max(1, S.n // m)):
        add = _select_k(lev, np.flatnonzero(~mask), m, largest=True)
        drop = _select_k(lev, np.flatnonzero(mask), add.size, largest=False)
        mask[drop] = False
        mask[add] = True
        cand = Subdata.of(np.flatnonzero(mask), S.N)
        if subdata_moment(cand, basis).nonsingular:
            _event(events, "singular_start_repaired", swapped=int(add.size))
            return cand
    raise SingularInformation("could not repair a singular starting subdata")


def iboss_plus(S: Subdata, data, spec: ModelSpec, crit: Criterion, basis: InfoBasis | None = None,
               workers: int = 1, events: list | None = None) -> Subdata:
    """``p1`` rounds of block swaps of size ``n // p1`` guided by the sensitivity."""
    b = _basis(data, spec, basis)
    n, p1 = S.n, b.p1
    M = subdata_moment(S, b).require()
    block = n // p1
    if block == 0:
        _event(events, "iboss_plus_skipped", reason="n < p1", n=n, p1=p1)
        return S
    if S.n == S.N:
        return S
    mask = S.mask()
    for r in range(p1):
        F = sensitivities(M, b.U, crit, workers)
        while True:
            E1 = _select_k(F, np.flatnonzero(~mask), block, largest=False)
            E3 = _select_k(F, np.flatnonzero(mask), block, largest=True)
            trial = mask.copy()
            trial[E3] = False
            trial[E1] = True
            M_new = subdata_moment(Subdata.of(np.flatnonzero(trial), S.N), b)
            if M_new.nonsingular:
                break
            block //= 2
            _event(events, "iboss_plus_singular_swap", round=r, new_block=block)
            if block == 0:
                _event(events, "SingularEncountered", stage="iboss_plus")
                return Subdata.of(np.flatnonzero(mask), S.N)
        mask, M = trial, M_new
    return Subdata.of(np.flatnonzero(mask), S.N)


def iboss_plus_plus(S: Subdata, data, spec: ModelSpec, crit: Criterion, basis: InfoBasis | None = None,
                    workers: int = 1, events: list | None = None) -> Subdata:
    """``n`` single-point exchanges, each via two rank-one updates.

    Exchanges are applied even when they worsen the criterion; the best
    subdata visited is returned.  The state sequence is deterministic, so
    once a subdata repeats the remaining exchanges can only revisit the same
    states and the loop stops early with the same result.
    """
    b = _basis(data, spec, basis)
    n, N = S.n, S.N
    if n == N:
        return S
    U, inv_n = b.U, 1.0 / n
    mask = S.mask()
    M = subdata_moment(S, b).require()
    calc = calculus(M, crit)
    best_phi, best_mask = calc.phi, mask.copy()
    seen = {np.flatnonzero(mask).tobytes()}
    sweep = _ScreenedSweep(U, workers)
    for t in range(n):
        inside = np.flatnonzero(mask)
        i1 = sweep.minimum(calc, ~mask)[1]
        i3 = int(inside[_argbest(sweep.exact(inside, calc), np.arange(n), largest=True)])
        try:
            M_new = M.updated(U[i1], inv_n).updated(U[i3], -inv_n)
            calc_new = calculus(M_new, crit)
        except SingularInformation:
            # the state is unchanged, so every later exchange would be skipped too
            _event(events, "exchange_skipped", step=t, add=i1, remove=i3)
            break
        if calc_new.phi > calc.phi + 1e-12 * max(1.0, abs(calc.phi)):
            _event(events, "exchange_worsened", step=t, add=i1, remove=i3,
                   phi_before=calc.phi, phi_after=calc_new.phi)
        mask[i1], mask[i3] = True, False
        M, calc = M_new, calc_new
        if calc.phi < best_phi:
            best_phi, best_mask = calc.phi, mask.copy()
        key = np.flatnonzero(mask).tobytes()
        if key in seen:
            _event(events, "exchange_cycle", step=t)
            break
        seen.add(key)
    return Subdata.of(np.flatnonzero(best_mask), N)


# ---------------------------------------------------------------------------
# Newton weight optimization
# ---------------------------------------------------------------------------

@dataclass
class NewtonResult:
    """State after optimizing the weights of ``X2``.

    ``weights`` is the full updated weight vector; ``x2`` the points still
    interior; ``to_x1`` / ``to_x3`` the points ejected to each bound.
    """

    weights: np.ndarray
    x2: np.ndarray
    to_x1: list[int]
    to_x3: list[int]
    iterations: int
    converged: bool
    grad_norm: float
    notes: list[str] = field(default_factory=list)


def _newton_step(grad: np.ndarray, hess: np.ndarray, notes: list[str]) -> tuple[np.ndarray, bool]:
    """Newton direction, with one ridge retry; ``(direction, is_newton)``."""
    try:
        return linalg.cho_solve(linalg.cho_factor(hess, check_finite=False), grad, check_finite=False), True
    except linalg.LinAlgError:
        pass
    dim = hess.shape[0]
    ridge = 1e-10 * max(float(np.trace(hess)), 0.0) / dim
    if ridge > 0:
        try:
            H = hess + ridge * np.eye(dim)
            notes.append("hessian_regularized")
            return linalg.cho_solve(linalg.cho_factor(H, check_finite=False), grad, check_finite=False), True
        except linalg.LinAlgError:
            pass
    notes.append("gradient_step")
    scale = float(np.trace(hess)) / dim
    return grad / scale if scale > 0 else grad, False


def _max_step(w2: np.ndarray, d2: np.ndarray, upper: float) -> tuple[float, int]:
    """Largest ``a`` with ``0 <= w2 - a d2 <= upper`` and the coordinate that blocks it."""
    with np.errstate(divide="ignore", invalid="ignore"):
        lim = np.where(d2 > 0, w2 / d2, np.where(d2 < 0, (w2 - upper) / d2, np.inf))
    k = int(np.argmin(lim))
    return max(float(lim[k]), 0.0), k


def _projected_direction(w2: np.ndarray, gw: np.ndarray, upper: float) -> tuple[np.ndarray, np.ndarray]:
    """Projection of the gradient onto the directions that keep the weights feasible.

    The update is ``w2 - a * d`` with ``d_i = gw_i - lam``, except that
    coordinates at a bound which would be pushed past it are held at zero;
    ``lam`` makes ``sum d = 0``.  Returns ``d`` and the mask of held
    coordinates.
    """
    at_lo = w2 <= BOUNDARY_TOL
    at_hi = w2 >= upper - BOUNDARY_TOL

    def direction(lam):
        d = gw - lam
        return np.where(at_lo, np.minimum(d, 0.0), np.where(at_hi, np.maximum(d, 0.0), d))

    lo, hi = float(gw.min()) - 1.0, float(gw.max()) + 1.0
    lam = optimize.brentq(lambda x: float(direction(x).sum()), lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    d = direction(lam)
    held = (at_lo & (gw - lam > 0)) | (at_hi & (gw - lam < 0))
    d[held] = 0.0
    # remove the residual of the root search from the free coordinates
    free = ~(at_lo | at_hi) | (d != 0)
    if free.any():
        d[free] -= d.sum() / free.sum()
    return d, held


def _restore_mass(w2: np.ndarray, mass: float, upper: float) -> np.ndarray | None:
    """Shift ``w2`` to total ``mass`` in proportion to each weight's room; ``None`` if impossible."""
    delta = mass - float(w2.sum())
    room = upper - w2 if delta > 0 else w2.copy()
    total = float(room.sum())
    if total < abs(delta):
        return None
    if total > 0:
        w2 = np.clip(w2 + delta * room / total, 0.0, upper)
    return w2


def _pick_ejection(trial: np.ndarray, upper: float) -> tuple[int, bool]:
    """The largest weight goes to ``X3`` if it exceeds ``upper``, else the smallest goes to ``X1``."""
    top = int(np.argmax(trial))
    if trial[top] > upper:
        return top, True
    return int(np.argmin(trial)), False


def newton_weights(weights: np.ndarray, x2, n: int, data, spec: ModelSpec, crit: Criterion,
                   cfg: ObdConfig = ObdConfig(), basis: InfoBasis | None = None) -> NewtonResult:
    """Optimize the weights of ``X2`` with ``X1`` (weight 0) and ``X3`` (weight ``1/n``) fixed.

    ``X3`` is every point outside ``x2`` whose weight is at the upper bound.
    The free variables ``nu`` are the weights of all but the last point of
    ``X2``, whose weight keeps the total mass at one.  Newton steps are
    halved until feasible; when the step length falls to ``alpha_floor`` the
    point that blocks it is moved to ``X1`` or ``X3``.

    With ``cfg.newton_init == "uniform"`` every (re)start uses equal weights
    and steps are accepted on feasibility alone.  The default ``"warm"``
    starts from the current weights, continues from them after an ejection,
    accepts only steps that do not increase the criterion, and moves a
    coordinate straight to its bound once it blocks two consecutive steps.
    The result is then never worse than the input.
    """
    b = _basis(data, spec, basis)
    U, inv_n = b.U, 1.0 / n
    literal = cfg.newton_init == "uniform"
    w = np.array(weights, dtype=float)
    x2 = np.sort(np.asarray(x2, dtype=np.int64))
    out3 = np.ones(w.size, dtype=bool)
    out3[x2] = False
    x3 = np.flatnonzero(out3 & (w >= inv_n - BOUNDARY_TOL))
    base3 = U[x3].T @ U[x3] * inv_n
    n3 = x3.size
    to1: list[int] = []
    to3: list[int] = []
    notes: list[str] = []
    iters, converged, gnorm = 0, False, math.nan
    w2 = np.clip(w[x2], 0.0, inv_n)

    def moment(w2):
        U2 = U[x2]
        return MomentMatrix.from_base(base3 + (U2 * w2[:, None]).T @ U2, b.scales)

    while True:
        n2 = x2.size
        mass = 1.0 - n3 * inv_n
        if n2 == 0:
            converged = True
            break
        if mass <= BOUNDARY_TOL:
            w[x2] = 0.0
            to1.extend(int(i) for i in x2)
            x2 = x2[:0]
            continue
        if n2 == 1:
            w2 = np.array([mass])
            converged, gnorm = True, 0.0
            break
        if mass >= n2 * inv_n - BOUNDARY_TOL:
            # no room below the upper bound: everything in X2 sits at 1/n
            w[x2] = inv_n
            to3.extend(int(i) for i in x2)
            x2 = x2[:0]
            continue
        if literal:
            w2 = np.full(n2, mass / n2)
        else:
            w2 = _restore_mass(w2, mass, inv_n)
            if w2 is None:
                notes.append("uniform_restart")
                w2 = np.full(n2, mass / n2)
        w2[-1] = mass - w2[:-1].sum()
        M = moment(w2).require()
        calc = calculus(M, crit)
        eject = None
        prev_block = -1
        for j in range(cfg.newton_max_iter):
            grad, hess = weight_grad_hessian(M, U[x2], crit, calc)
            gnorm = float(np.linalg.norm(grad))
            if gnorm < cfg.newton_tol:
                converged = True
                break
            step, is_newton = _newton_step(grad, hess, notes)
            d2 = np.append(step, -step.sum())
            amax, block = _max_step(w2, d2, inv_n)
            if amax >= 1.0:
                alpha, block = 1.0, -1
            elif not literal and (block == prev_block or amax < 2.0 * cfg.alpha_floor):
                # a blocker hit twice, or a bound closer than the step floor: jump onto it
                alpha = amax
            else:
                # the largest power of two that is feasible, as repeated halving finds
                alpha = 2.0 ** -math.ceil(-math.log2(amax)) if amax > 0 else 0.0
            prev_block = block
            accepted = False
            while alpha > cfg.alpha_floor or (alpha == amax and alpha > 0):
                w2_new = w2 - alpha * d2
                if alpha == amax:
                    w2_new[block] = 0.0 if d2[block] > 0 else inv_n
                    w2_new[-1 if block != n2 - 1 else 0] += mass - w2_new.sum()
                w2_new = np.clip(w2_new, 0.0, inv_n)
                M_new = moment(w2_new)
                if M_new.nonsingular:
                    calc_new = calculus(M_new, crit)
                    if (literal and is_newton) or calc_new.phi <= calc.phi:
                        accepted = True
                        break
                alpha *= 0.5
            if not accepted and not literal:
                # fall back on the projected gradient, which also tells whether the
                # coordinates pinned at a bound really want to leave X2
                gw = np.append(grad, 0.0)
                pd, pinned = _projected_direction(w2, gw, inv_n)
                if pinned.any() and (block < 0 or pinned[block] or not pd.any()):
                    k = block if block >= 0 and pinned[block] else int(np.flatnonzero(pinned)[0])
                    eject = (k, w2[k] >= 0.5 * inv_n)
                    break
                if pd.any():
                    pmax, pblock = _max_step(w2, pd, inv_n)
                    dnu = pd[:-1]
                    curv, slope = float(dnu @ hess @ dnu), float(grad @ dnu)
                    alpha = min(slope / curv if curv > 0 else pmax, pmax)
                    while alpha > cfg.alpha_floor:
                        w2_new = w2 - alpha * pd
                        if alpha == pmax:
                            w2_new[pblock] = 0.0 if pd[pblock] > 0 else inv_n
                        w2_new = np.clip(w2_new, 0.0, inv_n)
                        M_new = moment(w2_new)
                        if M_new.nonsingular:
                            calc_new = calculus(M_new, crit)
                            if calc_new.phi <= calc.phi:
                                accepted = True
                                break
                        alpha *= 0.5
                if accepted:
                    notes.append("projected_step")
                    w2, M, calc = w2_new, M_new, calc_new
                    iters += 1
                    prev_block = -1
                    continue
                if pinned.any():
                    k = int(np.flatnonzero(pinned)[0])
                    eject = (k, w2[k] >= 0.5 * inv_n)
                    break
                notes.append("stalled")
                converged = True
                break
            if not accepted:
                if amax < 2.0 * cfg.alpha_floor or literal:
                    # collapsed against a bound
                    eject = _pick_ejection(w2 - cfg.alpha_floor * d2, inv_n)
                else:
                    notes.append("stalled")
                    converged = True
                break
            w2, M, calc = w2_new, M_new, calc_new
            iters += 1
            if alpha == amax and not literal:
                eject = (block, bool(d2[block] < 0))
                break
        if eject is None:
            break
        # the step collapsed against a bound: move one point out of X2
        k, upper = eject
        if upper:
            i = int(x2[k])
            w[i] = inv_n
            to3.append(i)
            n3 += 1
            base3 = base3 + inv_n * np.outer(U[i], U[i])
        else:
            i = int(x2[k])
            w[i] = 0.0
            to1.append(i)
        keep = np.arange(x2.size) != k
        x2, w2 = x2[keep], np.clip(w2[keep], 0.0, inv_n)
        notes.append(f"ejected {i}")

    if x2.size:
        w[x2] = w2
    # boundary snapping keeps the labels consistent with the weights
    lo = x2[w[x2] <= BOUNDARY_TOL]
    hi = x2[inv_n - w[x2] <= BOUNDARY_TOL]
    to1.extend(int(i) for i in lo)
    to3.extend(int(i) for i in hi)
    w[lo], w[hi] = 0.0, inv_n
    x2 = x2[(w[x2] > BOUNDARY_TOL) & (inv_n - w[x2] > BOUNDARY_TOL)]
    return NewtonResult(w, x2, to1, to3, iters, converged, gnorm, notes)


# ---------------------------------------------------------------------------
# Certificate and outer iteration
# ---------------------------------------------------------------------------

def _certificate_parts(min1: float, F2: np.ndarray, F3: np.ndarray, n: int, epsilon: float) -> Certificate:
    max3 = float(F3.max()) if F3.size else -math.inf
    if F2.size == 0:
        gap = max3 - min1 - epsilon
        return Certificate(bool(max3 <= min1 + epsilon), math.nan, math.nan, max3, min1, 0.0, epsilon,
                           float(gap) if math.isfinite(gap) else -math.inf)
    s = float(F2.mean())
    n3 = F3.size
    s_closed = -(float(F3.sum()) / n) / (1.0 - n3 / n) if n3 < n else math.nan
    dev = float(np.max(np.abs(F2 - s)))
    half = 0.5 * epsilon
    ok = dev < half and max3 <= s + half and s - half <= min1
    gap = max(dev - half, max3 - s - half, s - half - min1)
    return Certificate(bool(ok), s, s_closed, max3, min1, dev, epsilon, float(gap))


def _certificate_from(F: np.ndarray, labels: np.ndarray, n: int, epsilon: float) -> Certificate:
    F1 = F[labels == 1]
    min1 = float(F1.min()) if F1.size else math.inf
    return _certificate_parts(min1, F[labels == 2], F[labels == 3], n, epsilon)


class _ScreenedSweep:
    """Sensitivities of the weight-0 points, evaluated exactly only where the minimum can be.

    A reference sweep ``F_ref`` at ``(const_ref, Q_ref)``, together with
    ``r_i = u_i^T P u_i`` for the reference inverse ``P = L L^T``, bounds the
    current values through
    ``|F_i - F_ref_i - dc| <= ||L^-1 (Q - Q_ref) L^-T||_2 r_i``.
    Points whose lower bound cannot beat the best upper bound are skipped,
    and the reference is refreshed by a full sweep once too many survive.
    """

    def __init__(self, U: np.ndarray, workers: int):
        self.U, self.workers = U, workers
        self.limit = max(256, U.shape[0] // 8)
        self.F_ref = self.Q_ref = None
        self.sweeps = 0

    def _refresh(self, calc):
        self.F_ref = calc.const - _quad(self.U, calc.Q, self.workers)
        self.Q_ref, self.c_ref = calc.Q, calc.const
        self.round_off = 1e-11 * (1.0 + float(np.max(np.abs(self.F_ref))) + abs(self.c_ref))
        if self.sweeps % 8 == 0:
            # the bound holds for any fixed metric, so it is renewed only now and then
            P = calc.A if calc.A.shape == calc.Q.shape else np.eye(calc.Q.shape[0])
            self.L_inv = linalg.solve_triangular(np.linalg.cholesky(P), np.eye(P.shape[0]), lower=True)
            self.r = _quad(self.U, P, self.workers)
        self.sweeps += 1

    def exact(self, idx: np.ndarray, calc) -> np.ndarray:
        return calc.const - _quad(self.U[idx], calc.Q)

    def minima(self, calc, sets: np.ndarray, subset: np.ndarray) -> tuple[tuple[float, int], tuple[float, int]]:
        """Minimum of ``F`` over the mask ``sets`` and over ``sets & subset``.

        Each result is ``(value, smallest index within the tie band)``, or
        ``(inf, -1)`` for an empty set.
        """
        first = self.minimum(calc, sets)
        if first[1] < 0 or subset[first[1]]:
            # no index below first[1] lies in the tie band, so the subset agrees
            return first, first if first[1] >= 0 else (math.inf, -1)
        return first, self.minimum(calc, sets & subset)

    def minimum(self, calc, mask: np.ndarray) -> tuple[float, int]:
        if self.F_ref is None:
            self._refresh(calc)
        while True:
            if self.Q_ref is calc.Q:
                v = np.where(mask, self.F_ref, np.inf)
                best = float(v.min())
                if not math.isfinite(best):
                    return math.inf, -1
                return best, int(np.argmax(v <= best + TIE_RTOL * max(1.0, abs(best))))
            dQ = self.L_inv @ (calc.Q - self.Q_ref) @ self.L_inv.T
            delta = float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (dQ + dQ.T)))))
            dc = calc.const - self.c_ref
            slack = delta * self.r
            slack += self.round_off
            upper = np.where(mask, self.F_ref + slack, np.inf)
            thr = float(upper.min()) + dc
            if not math.isfinite(thr):
                return math.inf, -1
            np.subtract(self.F_ref, slack, out=slack)
            cand = np.flatnonzero(mask & (slack <= thr - dc + TIE_RTOL * max(1.0, abs(thr))))
            if cand.size <= self.limit:
                v = self.exact(cand, calc)
                best = float(v.min())
                return best, int(cand[np.argmax(v <= best + TIE_RTOL * max(1.0, abs(best)))])
            self._refresh(calc)


def certificate(design: BoundedDesign, data, spec: ModelSpec, crit: Criterion, epsilon: float,
                basis: InfoBasis | None = None, workers: int = 1) -> Certificate:
    """Check whether ``design`` is an epsilon-approximation of the optimal bounded design."""
    b = _basis(data, spec, basis)
    M = moment_matrix(design, None, None, basis=b).require()
    F = sensitivities(M, b.U, crit, workers)
    return _certificate_from(F, design.labels(), design.n, epsilon)


def _epsilon(cfg: ObdConfig, phi_val: float) -> float:
    if cfg.adaptive_epsilon_alpha is None:
        return cfg.epsilon
    a = cfg.adaptive_epsilon_alpha
    eps = a * abs(phi_val) / (a + 1.0)
    return eps if eps > 0 else cfg.epsilon


def _candidates(sweep, calc, labels, x3, F3, free, below: float, above: float) -> list[int]:
    """Best free point of ``X1`` with ``F < below`` and of ``X3`` with ``F > above``."""
    _, (v1, i1) = sweep.minima(calc, labels == 1, free)
    moving = [i1] if i1 >= 0 and v1 < below else []
    c3 = np.flatnonzero(free[x3])
    if c3.size:
        k = _argbest(F3, c3, largest=True)
        if F3[k] > above:
            moving.append(int(x3[k]))
    return moving


def obd_iterate(S0: Subdata, data, spec: ModelSpec, crit: Criterion, cfg: ObdConfig = ObdConfig(),
                basis: InfoBasis | None = None, events: list | None = None
                ) -> tuple[BoundedDesign, SelectionTrace, Certificate]:
    """Search for an optimal bounded design starting from the subdata ``S0``."""
    b = _basis(data, spec, basis)
    N, n = S0.N, S0.n
    U, inv_n = b.U, 1.0 / n
    trace = SelectionTrace(events=events if events is not None else [])
    w = np.zeros(N)
    w[S0.array()] = inv_n
    labels = np.ones(N, dtype=np.int8)
    labels[S0.array()] = 3
    x2 = np.zeros(0, dtype=np.int64)
    blocked_until = np.full(N, -1, dtype=np.int64)
    max_outer = cfg.outer_max_iter if cfg.outer_max_iter is not None else n

    M = MomentMatrix.from_weights(U[S0.array()], w[S0.array()], b.scales).require()
    calc = calculus(M, crit)
    sweep = _ScreenedSweep(U, cfg.workers)
    best_phi, best_w = math.inf, w.copy()
    cert = None
    for t in range(max_outer + 1):
        if x2.size:
            phi_before = calc.phi
            res = newton_weights(w, x2, n, None, spec, crit, cfg, basis=b)
            moved = res.to_x1 + res.to_x3
            blocked_until[moved] = t + cfg.tabu - 1
            labels[res.to_x1] = 1
            labels[res.to_x3] = 3
            w, x2 = res.weights, res.x2
            if res.notes:
                _event(trace.events, "newton", iteration=t, notes=res.notes)
            sup = np.flatnonzero(w > 0)
            M = MomentMatrix.from_weights(U[sup], w[sup], b.scales).require()
            calc = calculus(M, crit)
            if calc.phi > phi_before + 1e-12 * max(1.0, abs(phi_before)):
                _event(trace.events, "newton_increase", iteration=t, before=phi_before, after=calc.phi)
        x3 = np.flatnonzero(labels == 3)
        F3 = sweep.exact(x3, calc)
        F2 = sweep.exact(x2, calc)
        free = blocked_until < t
        (min1, _), (_, i1) = sweep.minima(calc, labels == 1, free)
        eps = _epsilon(cfg, calc.phi)
        cert = _certificate_parts(min1, F2, F3, n, eps)
        trace.records.append(IterationRecord(t, calc.phi, N - x2.size - x3.size, int(x2.size), int(x3.size), cert))
        if calc.phi < best_phi:
            best_phi, best_w = calc.phi, w.copy()
        if cert.satisfied:
            trace.converged = True
            break
        if t == max_outer:
            break
        # only points that violate the certificate are worth moving
        if x2.size:
            below, above = cert.s - 0.5 * eps, cert.s + 0.5 * eps
        else:
            below, above = cert.max_F_X3 - eps, cert.min_F_X1 + eps
        moving = _candidates(sweep, calc, labels, x3, F3, free, below, above)
        # with X2 empty only a pair can shift mass
        needed = 1 if x2.size else 2
        if len(moving) < needed and (blocked_until >= t).any():
            # the violators are tabu; lifting the tabu beats stalling
            blocked_until[:] = -1
            _event(trace.events, "tabu_lifted", iteration=t)
            moving = _candidates(sweep, calc, labels, x3, F3, np.ones(N, dtype=bool), below, above)
        if not moving and not x2.size:
            _event(trace.events, "no_candidates", iteration=t)
            break
        if moving:
            labels[moving] = 2
            x2 = np.sort(np.concatenate([x2, np.asarray(moving, dtype=np.int64)]))

    if not trace.converged:
        w = best_w
    design = BoundedDesign(w, n)
    if not trace.converged:
        cert = certificate(design, None, spec, crit, cert.epsilon_used, basis=b, workers=cfg.workers)
    return design, trace, cert


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

STAGES = ("iboss", "iboss+", "iboss++", "obd")


@dataclass
class PipelineResult:
    """Everything the pipeline produced, including intermediate subdata."""

    subdata: Subdata
    design: BoundedDesign
    report: EfficiencyReport
    trace: SelectionTrace
    certificate: Certificate
    stage_subdata: dict[str, Subdata]
    stage_seconds: dict[str, float]


def run_pipeline(data, spec: ModelSpec, crit: Criterion, n: int, cfg: ObdConfig = ObdConfig(),
                 basis: InfoBasis | None = None) -> PipelineResult:
    """IBOSS, IBOSS+, IBOSS++, the bounded-design search, then rounding.

    ``stage_seconds`` holds cumulative wall time at the end of each stage.
    """
    b = _basis(data, spec, basis)
    N = b.N
    if not 1 <= n <= N:
        raise InvalidInput(f"need 1 <= n <= N, got n={n}, N={N}")
    crit.interest(b.p1)
    events: list[dict] = []
    t0 = time.perf_counter()
    stage_S: dict[str, Subdata] = {}
    secs: dict[str, float] = {}

    def mark(name, S):
        stage_S[name] = S
        secs[name] = time.perf_counter() - t0

    if n == N:
        S = Subdata.of(range(N), N)
        for name in STAGES:
            mark(name, S)
        xi = subdata_as_design(S)
        trace = SelectionTrace(events=events)
        cert = certificate(xi, None, spec, crit, cfg.epsilon, basis=b)
        trace.records.append(IterationRecord(0, phi(subdata_moment(S, b).require(), crit), 0, 0, N, cert))
        trace.converged = cert.satisfied
    else:
        S = iboss_init(None, spec, n, seed=cfg.seed, basis=b)
        S = repair_singular(S, b, events)
        mark("iboss", S)
        try:
            S = iboss_plus(S, None, spec, crit, basis=b, workers=cfg.workers, events=events)
        except SubdataError as exc:
            _event(events, "stage_failed", stage="iboss+", error=repr(exc))
        mark("iboss+", S)
        try:
            S = iboss_plus_plus(S, None, spec, crit, basis=b, workers=cfg.workers, events=events)
        except SubdataError as exc:
            _event(events, "stage_failed", stage="iboss++", error=repr(exc))
        mark("iboss++", S)
        xi, trace, cert = obd_iterate(S, None, spec, crit, cfg, basis=b, events=events)
        try:
            rounded = round_to_subdata(xi)
            M_r = subdata_moment(rounded, b)
            # rounding can lose a little; never return worse subdata than the exchange stage
            if M_r.nonsingular and phi(M_r, crit) <= phi(subdata_moment(S, b), crit):
                S = rounded
            else:
                _event(events, "rounding_kept_previous", stage="iboss++")
        except InvalidDesign as exc:
            _event(events, "stage_failed", stage="rounding", error=repr(exc))
        mark("obd", S)

    p_xi = display_value(xi, b, crit)
    p_star = display_value(S, b, crit)
    stages = {name: stage_entry(stage_S[name], p_xi, p_star, b, crit) for name in STAGES}
    if p_xi > p_star + 1e-10 * max(1.0, abs(p_star)):
        raise InvalidDesign(f"phi(xi*)={p_xi!r} exceeds phi(S*)={p_star!r}")
    report = EfficiencyReport(
        phi_xi_star=p_xi,
        phi_S_star=p_star,
        phi_S=p_star,
        eff_lower=p_xi / p_star,
        eff_upper=1.0,
        criterion=crit.label(),
        model=spec.to_dict(),
        n=n,
        N=N,
        wall_time_seconds=dict(secs),
        stages=stages,
    )
    return PipelineResult(S, xi, report, trace, cert, stage_S, secs)


def select_obd(data, spec: ModelSpec, crit: Criterion, n: int, cfg: ObdConfig = ObdConfig(),
               basis: InfoBasis | None = None
               ) -> tuple[Subdata, BoundedDesign, EfficiencyReport, SelectionTrace]:
    """Select ``n`` of the rows of ``data`` and bound their efficiency.

    Returns the rounded subdata ``S*``, the bounded design ``xi*`` it came
    from, an efficiency report (with bounds for every intermediate stage)
    and the iteration trace.
    """
    r = run_pipeline(data, spec, crit, n, cfg, basis)
    return r.subdata, r.design, r.report, r.trace
