"""Efficiency scoring and cross-method comparisons.

Every replication runs the full selection pipeline once; its optimal
bounded design ``xi*`` and rounded subdata ``S*`` then score the subdata of
every other method through the efficiency sandwich.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import EXHAUSTIVE_LIMIT, exhaustive_oracle, leverage_sample, srs
from .criterion import Criterion
from .datasets import Scenario
from .design import Subdata
from .efficiency import EfficiencyReport, display_value, efficiency_bounds
from .errors import InvalidInput, SubdataError
from .model import ModelSpec, information_basis
from .select import ObdConfig, run_pipeline

__all__ = [
    "METHODS",
    "METHOD_LABELS",
    "EfficiencyReport",
    "efficiency_bounds",
    "MethodSummary",
    "ComparisonResult",
    "replication_seed",
    "compare_methods",
]

METHODS = ("srs", "lev", "iboss", "iboss+", "iboss++", "obd", "exhaustive")
METHOD_LABELS = {"srs": "SRS", "lev": "LEV", "iboss": "IBOSS", "iboss+": "IBOSS+",
                 "iboss++": "IBOSS++", "obd": "IBOSS OBD", "exhaustive": "Exhaustive"}


def replication_seed(master: int, rep: int) -> int:
    """Seed of replication ``rep``, independent of the order replications run in."""
    return int(np.random.SeedSequence([int(master), int(rep)]).generate_state(1, dtype=np.uint32)[0])


def parse_methods(methods: str | Sequence[str]) -> tuple[str, ...]:
    if isinstance(methods, str):
        methods = [m for m in methods.split(",") if m.strip()]
    out = tuple(m.strip().lower() for m in methods)
    bad = [m for m in out if m not in METHODS]
    if bad or not out:
        raise InvalidInput(f"unknown methods {bad}; choose from {list(METHODS)}")
    return out


@dataclass
class MethodSummary:
    method: str
    mean_eff: float
    std_eff: float
    mean_time: float
    std_time: float
    reps: int


def _std(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1)) if x.size > 1 else 0.0


@dataclass
class ComparisonResult:
    """Per-method summaries plus the full per-replication detail.

    Efficiencies are the lower bounds ``phi(xi*) / phi(S)``; each
    replication also stores the upper bound ``phi(S*) / phi(S)``.
    """

    criterion: str
    n: int
    methods: tuple[str, ...]
    summaries: list[MethodSummary]
    replications: list[dict]
    failures: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def convergence_rate(self) -> float:
        if not self.replications:
            return math.nan
        return float(np.mean([r["converged"] for r in self.replications]))

    def summary(self, method: str) -> MethodSummary:
        for s in self.summaries:
            if s.method == method:
                return s
        raise KeyError(method)

    def to_csv(self) -> str:
        """The table with rows Mean Eff, Std Eff, Mean Time, Std Time and one column per method."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["Algorithm"] + [METHOD_LABELS[s.method] for s in self.summaries])
        w.writerow(["Mean Eff (%)"] + [repr(100 * s.mean_eff) for s in self.summaries])
        w.writerow(["Std Eff (%)"] + [repr(100 * s.std_eff) for s in self.summaries])
        w.writerow(["Mean Time (s)"] + [repr(s.mean_time) for s in self.summaries])
        w.writerow(["Std Time (s)"] + [repr(s.std_time) for s in self.summaries])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "criterion": self.criterion,
            "n": self.n,
            "methods": list(self.methods),
            "summaries": [asdict(s) for s in self.summaries],
            "convergence_rate": self.convergence_rate,
            "replications": self.replications,
            "failures": self.failures,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ComparisonResult":
        return cls(d["criterion"], d["n"], tuple(d["methods"]), [MethodSummary(**s) for s in d["summaries"]],
                   d["replications"], d.get("failures", []), d.get("config", {}))


def _one_replication(rep: int, source, spec: ModelSpec | None, crit: Criterion, n: int,
                     methods: tuple[str, ...], seed: int, cfg: ObdConfig) -> dict:
    rseed = replication_seed(seed, rep)
    if isinstance(source, Scenario):
        X, spec = source.generate(rseed)
    else:
        X = source
    b = information_basis(X, spec)
    N = b.N
    res = run_pipeline(None, spec, crit, n, replace(cfg, seed=rseed), basis=b)
    xi, S_star = res.design, res.subdata
    p_xi = display_value(xi, b, crit)
    p_star = display_value(S_star, b, crit)

    chosen: dict[str, tuple[Subdata, float]] = {}
    for m in methods:
        if m == "srs":
            t0 = time.perf_counter()
            S = srs(N, n, rseed)
            chosen[m] = (S, time.perf_counter() - t0)
        elif m == "lev":
            t0 = time.perf_counter()
            S = leverage_sample(X, spec, n, rseed)
            chosen[m] = (S, time.perf_counter() - t0)
        elif m == "exhaustive":
            if math.comb(N, n) > EXHAUSTIVE_LIMIT:
                continue
            t0 = time.perf_counter()
            S, _ = exhaustive_oracle(None, spec, crit, n, basis=b)
            chosen[m] = (S, time.perf_counter() - t0)
        else:
            chosen[m] = (res.stage_subdata[m], res.stage_seconds[m])

    ph = np.array([r.phi for r in res.trace.records])
    per = {}
    for m, (S, secs) in chosen.items():
        p_S = display_value(S, b, crit)
        per[m] = {"eff_lower": p_xi / p_S, "eff_upper": p_star / p_S, "phi": p_S, "seconds": secs}
    return {
        "rep": rep,
        "seed": rseed,
        "N": N,
        "phi_xi_star": p_xi,
        "phi_S_star": p_star,
        "converged": bool(res.trace.converged),
        "iterations": res.trace.total_iterations,
        # largest rise of phi between recorded outer iterations (<= 0 when monotone)
        "max_phi_increase": float(np.max(np.diff(ph))) if ph.size > 1 else 0.0,
        "methods": per,
    }


def _guarded(args) -> dict:
    rep = args[0]
    try:
        return _one_replication(*args)
    except SubdataError as exc:
        return {"rep": rep, "failed": True, "error": f"{type(exc).__name__}: {exc}"}


def compare_methods(source, spec: ModelSpec | None, crit: Criterion, n: int,
                    methods: str | Sequence[str] = ("srs", "lev", "iboss", "iboss+", "iboss++", "obd"),
                    reps: int = 1, seed: int = 0, cfg: ObdConfig = ObdConfig(),
                    workers: int = 1) -> ComparisonResult:
    """Compare selection methods over ``reps`` replications.

    Parameters
    ----------
    source : Scenario or array_like
        A scenario draws a fresh dataset per replication; a fixed ``N x p``
        matrix is reused and only the selectors are reseeded.
    spec : ModelSpec or None
        Model for a fixed matrix; ignored for a scenario.
    methods : str or sequence of str
        Any of ``srs, lev, iboss, iboss+, iboss++, obd, exhaustive``.  The
        exhaustive oracle is skipped when the instance is too large.
    workers : int
        Number of processes running replications in parallel.

    Failed replications are dropped and listed in ``failures``.
    """
    methods = parse_methods(methods)
    if reps < 1:
        raise InvalidInput("reps must be >= 1")
    if not isinstance(source, Scenario):
        source = np.asarray(source, dtype=float)
        if spec is None:
            raise InvalidInput("a model spec is required with a fixed data matrix")
    jobs = [(r, source, spec, crit, n, methods, seed, cfg) for r in range(reps)]
    if workers > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_guarded, jobs))
    else:
        results = [_guarded(j) for j in jobs]
    results.sort(key=lambda r: r["rep"])
    ok = [r for r in results if not r.get("failed")]
    failures = [r for r in results if r.get("failed")]

    summaries = []
    for m in methods:
        rows = [r["methods"][m] for r in ok if m in r["methods"]]
        if not rows:
            continue
        eff = np.array([x["eff_lower"] for x in rows])
        secs = np.array([x["seconds"] for x in rows])
        summaries.append(MethodSummary(m, float(eff.mean()), _std(eff), float(secs.mean()), _std(secs), len(rows)))
    config = {"reps": reps, "seed": seed, "obd": cfg.to_dict(), "workers": workers,
              "source": source.to_dict() if isinstance(source, Scenario) else {"N": int(source.shape[0])}}
    return ComparisonResult(crit.label(), n, methods, summaries, ok, failures, config)


def write_comparison(result: ComparisonResult, out_dir: str | Path, stem: str = "comparison") -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / f"{stem}.csv", "json": out / f"{stem}.json"}
    paths["csv"].write_text(result.to_csv())
    paths["json"].write_text(result.to_json())
    return paths
