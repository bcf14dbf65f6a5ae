"""Command-line interface.

Subcommands ``select``, ``certify``, ``compare`` and ``simulate``.  Options
can come from a JSON file (``--config``); flags given on the command line
override it.  Diagnostics go to standard error as JSON lines.  Exit codes:
0 on success, 2 for invalid input or configuration, 3 for numerical
failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .criterion import Criterion
from .datasets import SCENARIOS, SimSpec, ingest_csv, scenario, simulate, write_data_csv
from .design import (
    BoundedDesign,
    read_design_csv,
    read_subdata_csv,
    subdata_as_design,
    write_design_csv,
    write_subdata_csv,
)
from .errors import (
    DegenerateData,
    IngestError,
    InvalidDesign,
    InvalidInput,
    NoFeasibleSubset,
    SingularInformation,
    TooLarge,
)
from .model import ModelKind, ModelSpec, feature_dim, information_basis
from .select import ObdConfig, certificate, run_pipeline

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
WORKERS_ENV = "OBDSUB_WORKERS"
OBD_FLAGS = ("epsilon", "newton_tol", "newton_max_iter", "outer_max_iter", "alpha_floor",
             "adaptive_epsilon_alpha", "tabu", "newton_init")


def diag(event: str, level: str = "info", **info) -> None:
    """One JSON object per line on standard error."""
    sys.stderr.write(json.dumps({"level": level, "event": event, **info}, default=str) + "\n")
    sys.stderr.flush()


def _default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return 1
    try:
        w = int(raw)
    except ValueError:
        raise InvalidInput(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if w < 1:
        raise InvalidInput(f"{WORKERS_ENV} must be >= 1")
    return w


@dataclass
class RunConfig:
    """Everything a run needs; echoed into every report.

    Exactly one of ``input`` (a CSV path) and ``simulate`` (a scenario
    name) names the data.
    """

    input: str | None = None
    columns: list[str] | None = None
    label: str | None = None
    simulate: str | None = None
    N: int | None = None
    p: int | None = None
    rho: float | None = None
    model: str | None = None
    theta: list[float] | None = None
    cluster_probs: list[float] | None = None
    cluster_vars: list[float] | None = None
    criterion: str = "D"
    n: int | None = None
    seed: int = 0
    obd: dict = field(default_factory=dict)
    out: str = "."
    reps: int = 1
    workers: int = 1
    methods: str = "srs,lev,iboss,iboss+,iboss++,obd"
    figures: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInput(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def check_source(self) -> None:
        if (self.input is None) == (self.simulate is None):
            raise InvalidInput("give exactly one of --input and --simulate")
        if self.simulate is not None and self.simulate not in SCENARIOS:
            raise InvalidInput(f"unknown scenario {self.simulate!r}; choose from {sorted(SCENARIOS)}")

    def obd_config(self) -> ObdConfig:
        return ObdConfig.from_dict({**self.obd, "seed": self.seed, "workers": self.workers})

    def crit(self) -> Criterion:
        return Criterion.parse(self.criterion)

    def scenario(self):
        return scenario(self.simulate, N=self.N, p=self.p, rho=self.rho)

    def model_spec(self, p: int, default: ModelSpec | None = None) -> ModelSpec:
        if self.model is None:
            if default is None:
                raise InvalidInput("--model is required with --input")
            kind = default.kind
        else:
            try:
                kind = ModelKind(self.model)
            except ValueError:
                raise InvalidInput(f"unknown model {self.model!r}; choose from {[k.value for k in ModelKind]}") from None
        if default is not None and kind is default.kind and self.theta is None and self.cluster_probs is None:
            return default
        theta = self.theta
        if kind is ModelKind.LOGISTIC_FULL_SECOND_ORDER:
            if theta is None and default is not None:
                theta = default.theta
            if theta is not None and len(theta) == 1:
                theta = list(theta) * feature_dim(kind, p)
        probs, var = self.cluster_probs, self.cluster_vars
        if kind is ModelKind.CLUSTERWISE_LINEAR:
            if probs is None and default is not None:
                probs = default.cluster_probs
            if probs is not None:
                total = float(sum(probs))
                probs = [v / total for v in probs]
                if var is None:
                    var = [1.0] * len(probs)
                elif len(var) == 1:
                    var = list(var) * len(probs)
        return ModelSpec(kind, p, theta=theta if kind is ModelKind.LOGISTIC_FULL_SECOND_ORDER else None,
                         cluster_probs=probs if kind is ModelKind.CLUSTERWISE_LINEAR else None,
                         cluster_vars=var if kind is ModelKind.CLUSTERWISE_LINEAR else None)

    def load(self) -> tuple[np.ndarray, ModelSpec]:
        self.check_source()
        if self.input is not None:
            X, _ = ingest_csv(self.input, self.columns, self.label)
            return X, self.model_spec(X.shape[1])
        sc = self.scenario()
        X, spec = sc.generate(self.seed)
        return X, self.model_spec(X.shape[1], spec)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        diag("usage_error", "error", message=message)
        self.exit(EXIT_CONFIG)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _names(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _add_source(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--input", help="CSV file with a header row")
    g.add_argument("--columns", type=_names, help="comma-separated feature columns (default: all but --label)")
    g.add_argument("--label", help="response column to ignore")
    g.add_argument("--simulate", help=f"scenario name: {', '.join(sorted(SCENARIOS))}")
    g.add_argument("--N", type=int, help="override the scenario's number of rows")
    g.add_argument("--p", type=int, help="override the scenario's number of covariates")
    g.add_argument("--rho", type=float, help="override the covariate correlation")
    m = p.add_argument_group("model")
    m.add_argument("--model", help="linear1, linear2, logistic2 or clr")
    m.add_argument("--theta", type=_floats, help="logistic parameters (one value is repeated)")
    m.add_argument("--cluster-probs", dest="cluster_probs", type=_floats, help="clusterwise probabilities")
    m.add_argument("--cluster-vars", dest="cluster_vars", type=_floats, help="clusterwise error variances")
    p.add_argument("--criterion", help="D, A, D:1-3, A:1-5 (zero-based coefficient indices)")


def _add_obd(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("search")
    g.add_argument("--epsilon", type=float, help="certificate tolerance (default 1e-5)")
    g.add_argument("--newton-tol", dest="newton_tol", type=float)
    g.add_argument("--newton-max-iter", dest="newton_max_iter", type=int)
    g.add_argument("--outer-max-iter", dest="outer_max_iter", type=int, help="default: n")
    g.add_argument("--alpha-floor", dest="alpha_floor", type=float)
    g.add_argument("--adaptive-epsilon-alpha", dest="adaptive_epsilon_alpha", type=float)
    g.add_argument("--tabu", type=int)
    g.add_argument("--newton-init", dest="newton_init", choices=("warm", "uniform"))


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with options; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help=f"default: ${WORKERS_ENV} or 1")
    p.add_argument("--out", help="output directory (a file for simulate)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="obdsub", description="Optimal subdata selection through bounded designs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("select", help="select subdata and bound its efficiency")
    _add_common(s)
    _add_source(s)
    _add_obd(s)
    s.add_argument("--n", type=int, help="subdata size")
    s.add_argument("--no-figures", dest="figures", action="store_const", const=False)

    c = sub.add_parser("certify", help="check the equivalence certificate of a design")
    _add_common(c)
    _add_source(c)
    c.add_argument("--design", help="design CSV written by select")
    c.add_argument("--subdata", help="subdata CSV, checked as an equal-weight design")
    c.add_argument("--n", type=int, help="subdata size (default: from the design file)")
    c.add_argument("--epsilon", type=float)

    m = sub.add_parser("compare", help="compare selection methods over replications")
    _add_common(m)
    _add_source(m)
    _add_obd(m)
    m.add_argument("--n", type=int)
    m.add_argument("--reps", type=int)
    m.add_argument("--methods", help="comma-separated: srs,lev,iboss,iboss+,iboss++,obd,exhaustive")
    m.add_argument("--no-figures", dest="figures", action="store_const", const=False)

    g = sub.add_parser("simulate", help="write simulated covariates to CSV")
    _add_common(g)
    g.add_argument("--scenario", dest="simulate", help="scenario name (default: scenario1)")
    g.add_argument("--N", type=int)
    g.add_argument("--p", type=int)
    g.add_argument("--rho", type=float)
    g.add_argument("--mean", type=_floats, help="mean vector (one value is repeated)")
    return parser


def _merge(args: argparse.Namespace) -> RunConfig:
    base: dict = {}
    if getattr(args, "config", None):
        try:
            base = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidInput(f"cannot read config {args.config}: {exc}") from exc
        if "config" in base and isinstance(base["config"], dict):
            base = base["config"]
    base = dict(base)
    obd = dict(base.pop("obd", {}) or {})
    known = {f.name for f in fields(RunConfig)}
    for k, v in vars(args).items():
        if v is None or k in ("config", "command", "design", "subdata", "mean"):
            continue
        if k in OBD_FLAGS:
            obd[k] = v
        elif k in known:
            base[k] = v
    base["obd"] = obd
    if "workers" not in base:
        base["workers"] = _default_workers()
    cfg = RunConfig.from_dict(base)
    cfg.obd_config()
    return cfg


def _need_n(cfg: RunConfig) -> int:
    if cfg.n is None:
        raise InvalidInput("--n is required")
    return cfg.n


def cmd_select(cfg: RunConfig) -> int:
    X, spec = cfg.load()
    crit, obd, n = cfg.crit(), cfg.obd_config(), _need_n(cfg)
    diag("data_loaded", N=int(X.shape[0]), p=int(X.shape[1]), model=spec.kind.value)
    b = information_basis(X, spec)
    res = run_pipeline(None, spec, crit, n, obd, basis=b)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    echo = cfg.to_dict()
    write_subdata_csv(res.subdata, out / "subdata.csv")
    write_design_csv(res.design, out / "design.csv", {"config": echo})
    (out / "trace.jsonl").write_text(res.trace.to_jsonl())
    report = {
        "config": echo,
        "efficiency": res.report.to_dict(),
        "certificate": res.certificate.to_dict(),
        "converged": res.trace.converged,
        "iterations": res.trace.total_iterations,
        "events": res.trace.events,
        "version": __version__,
    }
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True, default=str))
    files = ["subdata.csv", "design.csv", "report.json", "trace.jsonl"]
    if cfg.figures:
        from .plotting import plot_trace, plot_weights

        plot_trace(res.trace, out / "trace.png")
        plot_weights(res.design, out / "weights.png")
        files += ["trace.png", "weights.png"]
    if not res.trace.converged:
        diag("not_converged", "warning", iterations=res.trace.total_iterations, gap=res.certificate.gap)
    diag("select_done", out=str(out), files=files, eff_lower=res.report.eff_lower,
         converged=res.trace.converged)
    return EXIT_OK


def cmd_certify(cfg: RunConfig, design_path: str | None, subdata_path: str | None) -> int:
    if (design_path is None) == (subdata_path is None):
        raise InvalidInput("give exactly one of --design and --subdata")
    design: BoundedDesign | None = None
    if design_path is not None:
        design, meta = read_design_csv(design_path)
        saved = meta.get("config")
        if saved:
            # the design remembers its data, model and criterion; flags still win
            merged = RunConfig.from_dict(saved).to_dict()
            defaults = RunConfig().to_dict()
            for k, v in cfg.to_dict().items():
                if k == "obd":
                    merged["obd"] = {**merged["obd"], **v}
                elif v != defaults[k]:
                    merged[k] = v
            cfg = RunConfig.from_dict(merged)
    X, spec = cfg.load()
    crit = cfg.crit()
    if design is None:
        S = read_subdata_csv(subdata_path, X.shape[0])
        design = subdata_as_design(S, cfg.n)
    if design.N != X.shape[0]:
        raise InvalidInput(f"design has N={design.N} but the data have {X.shape[0]} rows")
    eps = cfg.obd.get("epsilon", ObdConfig().epsilon)
    cert = certificate(design, X, spec, crit, eps, workers=cfg.workers)
    text = json.dumps(cert.to_dict(), indent=1, sort_keys=True)
    if cfg.out not in (None, "."):
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "certificate.json").write_text(text)
    sys.stdout.write(text + "\n")
    diag("certify_done", satisfied=cert.satisfied, gap=cert.gap, epsilon=eps)
    return EXIT_OK


def cmd_compare(cfg: RunConfig) -> int:
    from .evalx import compare_methods, write_comparison

    cfg.check_source()
    crit, obd, n = cfg.crit(), cfg.obd_config(), _need_n(cfg)
    if cfg.simulate is not None:
        source, spec = cfg.scenario(), None
        if cfg.model is not None or cfg.theta is not None or cfg.cluster_probs is not None:
            raise InvalidInput("model flags cannot be combined with --simulate in compare")
    else:
        source, spec = cfg.load()
    # replications run in processes; each one sweeps serially
    serial = ObdConfig.from_dict({**obd.to_dict(), "workers": 1})
    result = compare_methods(source, spec, crit, n, cfg.methods, cfg.reps, cfg.seed, serial, workers=cfg.workers)
    result.config = {**result.config, "run": cfg.to_dict()}
    paths = write_comparison(result, cfg.out)
    if cfg.figures and result.summaries:
        from .plotting import plot_comparison

        paths["png"] = plot_comparison(result, Path(cfg.out) / "comparison.png")
    for f in result.failures:
        diag("replication_failed", "warning", **f)
    sys.stdout.write(result.to_csv())
    diag("compare_done", reps=len(result.replications), failed=len(result.failures),
         convergence_rate=result.convergence_rate, files={k: str(v) for k, v in paths.items()})
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, mean: list[float] | None) -> int:
    if cfg.simulate is not None:
        sc = cfg.scenario()
        N, p, rho = sc.N, sc.p, sc.rho
    else:
        if cfg.N is None or cfg.p is None:
            raise InvalidInput("simulate needs --scenario or both --N and --p")
        N, p, rho = cfg.N, cfg.p, cfg.rho if cfg.rho is not None else 0.5
    if mean is not None and len(mean) == 1:
        mean = mean * p
    X = simulate(SimSpec(N, p, mean=mean, rho=rho, seed=cfg.seed))
    out = Path(cfg.out if cfg.out != "." else "data.csv")
    if out.is_dir():
        out = out / "data.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_data_csv(X, out)
    diag("simulate_done", out=str(out), N=N, p=p, seed=cfg.seed)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _merge(args)
        if args.command == "select":
            return cmd_select(cfg)
        if args.command == "certify":
            return cmd_certify(cfg, args.design, args.subdata)
        if args.command == "compare":
            return cmd_compare(cfg)
        return cmd_simulate(cfg, args.mean)
    except (InvalidInput, IngestError, TooLarge, OSError) as exc:
        info = {"rows": exc.rows} if isinstance(exc, IngestError) and exc.rows else {}
        diag("invalid_input", "error", error=type(exc).__name__, message=str(exc), **info)
        return EXIT_CONFIG
    except (SingularInformation, DegenerateData, NoFeasibleSubset, InvalidDesign, np.linalg.LinAlgError) as exc:
        diag("numerical_failure", "error", error=type(exc).__name__, message=str(exc))
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
