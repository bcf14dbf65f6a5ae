"""Synthetic covariates, the simulation scenarios, and CSV ingestion.

Random numbers come from numpy's ``Philox`` counter-based bit generator,
so a seed fully determines every draw.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import IngestError, InvalidInput
from .model import ModelKind, ModelSpec, feature_dim

__all__ = ["SimSpec", "Scenario", "SCENARIOS", "simulate", "scenario", "ingest_csv", "write_data_csv", "rng"]


def rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def equicorrelated(p: int, rho: float = 0.5) -> np.ndarray:
    return np.full((p, p), rho) + (1.0 - rho) * np.eye(p)


@dataclass(frozen=True)
class SimSpec:
    """Multivariate normal covariates.

    ``mean`` defaults to all ones and ``cov`` to unit variances with
    correlation ``rho`` between every pair.
    """

    N: int
    p: int
    mean: tuple[float, ...] | None = None
    cov: tuple[tuple[float, ...], ...] | None = None
    rho: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.N < 1 or self.p < 1:
            raise InvalidInput(f"N and p must be positive, got N={self.N}, p={self.p}")
        if self.mean is not None:
            object.__setattr__(self, "mean", tuple(float(m) for m in self.mean))
            if len(self.mean) != self.p:
                raise InvalidInput(f"mean has length {len(self.mean)}, expected {self.p}")
        if self.cov is not None:
            c = np.asarray(self.cov, dtype=float)
            if c.shape != (self.p, self.p):
                raise InvalidInput(f"cov has shape {c.shape}, expected {(self.p, self.p)}")
            object.__setattr__(self, "cov", tuple(tuple(float(v) for v in row) for row in c))

    def mean_vector(self) -> np.ndarray:
        return np.ones(self.p) if self.mean is None else np.asarray(self.mean)

    def cov_matrix(self) -> np.ndarray:
        return equicorrelated(self.p, self.rho) if self.cov is None else np.asarray(self.cov)


def simulate(sim: SimSpec) -> np.ndarray:
    """Draw ``N`` covariate vectors as ``mean + L z`` with ``L`` the Cholesky factor of ``cov``."""
    cov = sim.cov_matrix()
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
        raise InvalidInput("covariance must be symmetric")
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise InvalidInput("covariance must be positive definite") from exc
    Z = rng(sim.seed).standard_normal((sim.N, sim.p))
    return sim.mean_vector() + Z @ L.T


@dataclass(frozen=True)
class Scenario:
    """A simulation setting that yields a dataset and a matching model per seed.

    Clusterwise models draw cluster probabilities as i.i.d. uniform(0, 1)
    values normalized to sum to one, with the same seed as the covariates.
    """

    name: str
    kind: ModelKind
    N: int
    p: int
    G: int = 1
    sigma2: float = 1.0
    theta_value: float = 1.0
    rho: float = 0.5

    def model(self, seed: int = 0) -> ModelSpec:
        if self.kind is ModelKind.LOGISTIC_FULL_SECOND_ORDER:
            return ModelSpec(self.kind, self.p, theta=[self.theta_value] * feature_dim(self.kind, self.p))
        if self.kind is ModelKind.CLUSTERWISE_LINEAR:
            # separate stream from the covariates
            pi = rng(seed).spawn(1)[0].random(self.G)
            pi = pi / pi.sum()
            return ModelSpec(self.kind, self.p, cluster_probs=pi, cluster_vars=[self.sigma2] * self.G)
        return ModelSpec(self.kind, self.p)

    def generate(self, seed: int) -> tuple[np.ndarray, ModelSpec]:
        X = simulate(SimSpec(self.N, self.p, rho=self.rho, seed=seed))
        return X, self.model(seed)

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind.value, "N": self.N, "p": self.p, "G": self.G,
                "sigma2": self.sigma2, "theta_value": self.theta_value, "rho": self.rho}


SCENARIOS = {
    "scenario1": Scenario("scenario1", ModelKind.LINEAR_FIRST_ORDER, 100_000, 10),
    "scenario2": Scenario("scenario2", ModelKind.LOGISTIC_FULL_SECOND_ORDER, 100_000, 3),
    "scenario3": Scenario("scenario3", ModelKind.CLUSTERWISE_LINEAR, 100_000, 10, G=10),
}


def scenario(name: str, **overrides) -> Scenario:
    """A named scenario, optionally with fields such as ``N`` or ``p`` overridden."""
    try:
        base = SCENARIOS[name]
    except KeyError:
        raise InvalidInput(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
    fields = base.__dict__ | {k: v for k, v in overrides.items() if v is not None}
    return Scenario(**fields)


def ingest_csv(path: str | Path, columns: Sequence[str] | None = None,
               label: str | None = None) -> tuple[np.ndarray, list[str]]:
    """Load an ``N x p`` covariate matrix from a CSV file with a header row.

    Parameters
    ----------
    columns : sequence of str, optional
        Feature columns to load; by default every column except ``label``.
    label : str, optional
        A response column to ignore.

    Returns
    -------
    data, names
        The matrix and the names of its columns.

    Raises
    ------
    IngestError
        On a missing file, empty file, missing columns or non-numeric cells.
        Row numbers are one-based file lines (the header is line 1).
    """
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    if not rows or not any(c.strip() for c in rows[0]):
        raise IngestError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if columns is None:
        names = [h for h in header if h != label]
    else:
        names = list(columns)
        missing = [c for c in names if c not in header]
        if missing:
            raise IngestError(f"{path}: missing columns {missing}")
    if label is not None and label not in header:
        raise IngestError(f"{path}: missing label column {label!r}")
    if not names:
        raise IngestError(f"{path}: no feature columns")
    pos = [header.index(c) for c in names]
    body = [(i + 2, r) for i, r in enumerate(rows[1:]) if any(c.strip() for c in r)]
    if not body:
        raise IngestError(f"{path}: no data rows")
    out = np.empty((len(body), len(pos)))
    bad = []
    for k, (line, r) in enumerate(body):
        try:
            if len(r) != len(header):
                raise ValueError
            out[k] = [float(r[j]) for j in pos]
            if not all(math.isfinite(v) for v in out[k]):
                raise ValueError
        except ValueError:
            bad.append(line)
    if bad:
        shown = ", ".join(str(b) for b in bad[:10]) + (" ..." if len(bad) > 10 else "")
        raise IngestError(f"{path}: non-numeric or malformed values in row(s) {shown}", bad)
    return out, names


def write_data_csv(X: np.ndarray, path: str | Path, names: Sequence[str] | None = None) -> None:
    X = np.asarray(X, dtype=float)
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(X.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in X:
            w.writerow([repr(float(v)) for v in row])
