"""Command-line interface: simulate, fit, tune, bench, invariance and ingest.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 solver
non-convergence under ``--strict``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import __version__
from .exceptions import (
    ArgumentError,
    ConfigError,
    DataError,
    DimensionError,
    NotSPDError,
    NumericalError,
    TagMismatchError,
)
from .fileio import atomic_write, csv_float, ingest_counts, read_dataset, to_json, write_dataset
from .harness import ExperimentSpec, frequency_csv, invariance_csv, run_experiment, run_invariance
from .kernels import KernelSpec, build_stack
from .lla import FoldedPenalty, LLAConfig, lla_fit
from .simgen import SimModelSpec, gen_model
from .solver import ADMMConfig, PenaltyParams, admm_solve, kkt_check, lambda_max, ridge_solve
from .transform import ReferencePolicy, resolve_reference, transform_response
from .tuning import SplitSpec, TuneGrid, default_lambda2, tune

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NONCONVERGED = 0, 2, 3, 4
COMMANDS = ("simulate", "fit", "tune", "bench", "invariance", "ingest")
log = logging.getLogger("fresel")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SimConfig(_Strict):
    model_id: int = 1
    n: int = 200
    p: Optional[int] = None
    rho: float = 0.5
    params: dict = Field(default_factory=dict)
    m_grid: int = 100
    d_spd: int = 3


class KernelConfig(_Strict):
    kind: Literal["linear", "gaussian", "laplacian"] = "linear"
    bandwidth: Optional[float] = None


class GridConfig(_Strict):
    lambda1_values: Optional[List[float]] = None
    n_lambda: int = 50
    min_ratio: float = 1e-3
    lambda2_values: Optional[List[float]] = None


class SplitConfig(_Strict):
    mode: Literal["holdout", "kfold"] = "kfold"
    train_fraction: float = 0.75
    k: int = 10


class PolicyConfig(_Strict):
    y0: Union[Literal["frechet_mean"], int] = "frechet_mean"
    y: Union[Literal["principal", "random_sample", "perturbed_mean"], int] = "principal"
    scale: float = 0.5
    seed: int = 0


class ADMMSettings(_Strict):
    rho: float = 1.0
    max_iter: int = 5000
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    over_relaxation: float = 1.5
    adaptive_rho: bool = True


class LLASettings(_Strict):
    max_outer: int = 3
    penalty: Literal["scad", "mcp"] = "scad"
    a: Optional[float] = None


class FitConfig(_Strict):
    lambda1: Optional[float] = None
    lambda1_ratio: Optional[float] = None
    lambda2: Optional[float] = None
    lambda1_init_ratio: float = 0.1
    path: bool = False

    @model_validator(mode="after")
    def _one_lambda(self):
        if self.lambda1 is not None and self.lambda1_ratio is not None:
            raise ValueError("give lambda1 or lambda1_ratio, not both")
        return self


class BenchConfig(_Strict):
    replicates: int = 50
    methods: Optional[List[Literal["elastic_net", "rscad_l2", "escad_l2"]]] = None


class InvarianceConfig(_Strict):
    policies: Optional[List[PolicyConfig]] = None
    n_perturbed: int = 4


class IngestConfig(_Strict):
    counts_csv: str
    group_column: str
    value_column: str
    m: int = 24
    standardize: bool = True
    noise_covariates: int = 0
    covariate_columns: Optional[List[str]] = None
    kernel: KernelConfig = Field(default_factory=KernelConfig)


class RunConfig(_Strict):
    """Declarative job description; unknown keys are rejected."""

    command: Optional[Literal["simulate", "fit", "tune", "bench", "invariance", "ingest"]] = None
    seed: int = 0
    dataset: Optional[str] = None
    sim: Optional[SimConfig] = None
    kernel: KernelConfig = Field(default_factory=KernelConfig)
    kernels: Optional[List[KernelConfig]] = None
    method: Literal["elastic_net", "rscad_l2", "escad_l2"] = "rscad_l2"
    grid: GridConfig = Field(default_factory=GridConfig)
    split: SplitConfig = Field(default_factory=SplitConfig)
    policy: PolicyConfig = Field(default_factory=PolicyConfig)
    admm: ADMMSettings = Field(default_factory=ADMMSettings)
    lla: LLASettings = Field(default_factory=LLASettings)
    fit: FitConfig = Field(default_factory=FitConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)
    invariance: InvarianceConfig = Field(default_factory=InvarianceConfig)
    ingest: Optional[IngestConfig] = None
    out_dir: str = "."
    format: Literal["json", "csv"] = "json"
    name: Optional[str] = None

    @model_validator(mode="after")
    def _data_source(self):
        if self.dataset is not None and self.sim is not None:
            raise ValueError("give either dataset or sim, not both")
        return self


# --- config assembly -------------------------------------------------------

def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.endswith(".toml"):
            import tomllib

            data = tomllib.loads(raw.decode("utf-8"))
        else:
            data = json.loads(raw)
    except (ValueError, ImportError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return data


def resolve_config(args: argparse.Namespace) -> RunConfig:
    data = load_config(args.config)
    if data.get("command") not in (None, args.command):
        raise ConfigError(f"config is for {data['command']!r}, invoked as {args.command!r}")
    data["command"] = args.command
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out_dir is not None:
        data["out_dir"] = args.out_dir
    if args.format is not None:
        data["format"] = args.format
    for key in ("dataset", "method"):
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    if getattr(args, "model", None) is not None:
        data.setdefault("sim", {})["model_id"] = args.model
    if getattr(args, "replicates", None) is not None:
        data.setdefault("bench", {})["replicates"] = args.replicates
    if getattr(args, "kernel", None) is not None:
        data["kernel"] = {**data.get("kernel", {}), "kind": args.kernel}
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def thread_count(args: argparse.Namespace) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get("FRESEL_THREADS")
        try:
            n = int(env) if env else 1
        except ValueError as exc:
            raise ConfigError(f"FRESEL_THREADS must be an integer, got {env!r}") from exc
    if n < 1:
        raise ConfigError("thread count must be at least 1")
    return n


def _sim_spec(cfg: RunConfig) -> SimModelSpec:
    sim = cfg.sim or SimConfig()
    try:
        return SimModelSpec(model_id=sim.model_id, n=sim.n, p=sim.p, rho=sim.rho,
                            params=sim.params, m_grid=sim.m_grid, d_spd=sim.d_spd, seed=cfg.seed)
    except ArgumentError as exc:
        raise ConfigError(str(exc)) from exc


def _kernel(k: KernelConfig) -> KernelSpec:
    return KernelSpec(k.kind, k.bandwidth)


def _policy(p: PolicyConfig, seed: int) -> ReferencePolicy:
    return ReferencePolicy(y0=p.y0, y=p.y, scale=p.scale, seed=seed + p.seed)


def _grid(cfg: RunConfig) -> TuneGrid:
    g = cfg.grid
    return TuneGrid(None if g.lambda1_values is None else tuple(g.lambda1_values), g.n_lambda,
                    g.min_ratio, None if g.lambda2_values is None else tuple(g.lambda2_values))


def _admm(cfg: RunConfig) -> ADMMConfig:
    return ADMMConfig(**cfg.admm.model_dump())


def _lla(cfg: RunConfig) -> LLAConfig:
    return LLAConfig(max_outer=cfg.lla.max_outer, inner=_admm(cfg))


def _penalty(cfg: RunConfig, lam: float) -> FoldedPenalty:
    a = cfg.lla.a if cfg.lla.a is not None else (3.7 if cfg.lla.penalty == "scad" else 3.0)
    return FoldedPenalty(cfg.lla.penalty, lam, a)


def load_data(cfg: RunConfig):
    """``(X, responses, names, kernels, source)`` from a dataset or a simulation."""
    if cfg.dataset is not None:
        X, responses, names, kernels, manifest = read_dataset(cfg.dataset)
        if cfg.kernels is not None:
            if len(cfg.kernels) != X.shape[1]:
                raise ConfigError("kernels list must have one entry per covariate")
            kernels = [_kernel(k) for k in cfg.kernels]
        elif "kernel" in cfg.model_fields_set:
            kernels = [_kernel(cfg.kernel)] * X.shape[1]
        return X, responses, names, kernels, {"dataset": os.path.abspath(cfg.dataset)}
    spec = _sim_spec(cfg)
    data = gen_model(spec)
    names = [f"X{j + 1}" for j in range(data.p)]
    if cfg.kernels is not None:
        if len(cfg.kernels) != data.p:
            raise ConfigError("kernels list must have one entry per covariate")
        kernels = [_kernel(k) for k in cfg.kernels]
    else:
        kernels = [_kernel(cfg.kernel)] * data.p
    return data.X, data.responses, names, kernels, {"sim": spec.to_dict(),
                                                    "truth": list(data.truth)}


def _out(cfg: RunConfig, stem: str, ext: str) -> str:
    return os.path.join(cfg.out_dir, f"{cfg.name or stem}.{ext}")


def _envelope(cfg: RunConfig, kind: str, body: dict) -> dict:
    return {"format": f"fresel-{kind}/1", "version": __version__,
            "config": cfg.model_dump(mode="json"), **body}


def _config_sidecar(cfg: RunConfig, path: str) -> None:
    atomic_write(path + ".config.json", to_json(_envelope(cfg, "config", {})))


# --- commands --------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, threads: int) -> int:
    spec = _sim_spec(cfg)
    data = gen_model(spec)
    kernels = [_kernel(k) for k in cfg.kernels] if cfg.kernels else [_kernel(cfg.kernel)] * data.p
    out_dir = os.path.join(cfg.out_dir, cfg.name or f"model{spec.model_id}_seed{spec.seed}")
    files = write_dataset(out_dir, data.X, data.responses, kernels=kernels,
                          extra={"truth": list(data.truth), "sim": spec.to_dict(),
                                 "version": __version__, "config": cfg.model_dump(mode="json")})
    print(files.manifest)
    return EXIT_OK


def cmd_ingest(cfg: RunConfig, threads: int) -> int:
    if cfg.ingest is None:
        raise ConfigError("ingest needs an 'ingest' section")
    ing = cfg.ingest
    X, names, responses, groups = ingest_counts(
        ing.counts_csv, ing.group_column, ing.value_column, ing.m, ing.standardize,
        ing.noise_covariates, cfg.seed, ing.covariate_columns)
    out_dir = os.path.join(cfg.out_dir, cfg.name or "ingested")
    files = write_dataset(out_dir, X, responses, names=names,
                          kernels=[_kernel(ing.kernel)] * len(names),
                          extra={"groups": [str(g) for g in groups], "version": __version__,
                                 "config": cfg.model_dump(mode="json")})
    print(files.manifest)
    return EXIT_OK


def _single_fit(cfg, u, grams, lam1, lam2):
    admm = _admm(cfg)
    if cfg.method == "elastic_net":
        params = PenaltyParams(lam1, lam2)
        return admm_solve(u, grams, params, admm), params
    if cfg.method == "rscad_l2":
        init = ridge_solve(u, grams, lam2)
    else:
        lam_init = cfg.fit.lambda1_init_ratio * lambda_max(u, grams)
        init = admm_solve(u, grams, PenaltyParams(lam_init, lam2), admm)
    pen = _penalty(cfg, lam1)
    fit = lla_fit(u, grams, pen, lam2, _lla(cfg), init=init)
    return fit, PenaltyParams(1.0, lam2, fit.weights)


def cmd_fit(cfg: RunConfig, threads: int) -> tuple:
    X, responses, names, kernels, source = load_data(cfg)
    grams = build_stack(kernels, X)
    y, y0 = resolve_reference(_policy(cfg.policy, cfg.seed), responses)
    u = transform_response(responses, y, y0)
    lam_max = lambda_max(u, grams)
    lam2 = cfg.fit.lambda2 if cfg.fit.lambda2 is not None else default_lambda2(grams)
    if cfg.fit.lambda1 is not None:
        lam1 = cfg.fit.lambda1
    else:
        lam1 = (cfg.fit.lambda1_ratio if cfg.fit.lambda1_ratio is not None else 0.1) * lam_max
    fit, params = _single_fit(cfg, u, grams, lam1, lam2)
    body = {"source": source, "covariates": names, "lambda_max": lam_max,
            "lambda1": lam1, "lambda2": lam2, "fit": fit.to_dict(),
            "kkt": kkt_check(fit, u, grams, params)}
    path = _out(cfg, f"fit_{cfg.method}", "json")
    atomic_write(path, to_json(_envelope(cfg, "fit", body)))
    print(path)
    if cfg.fit.path:
        lams = _grid(cfg).lambda1_for(lam_max)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda1"] + list(names))
        converged = fit.converged
        for lam in lams:
            f, _ = _single_fit(cfg, u, grams, float(lam), lam2)
            converged = converged and f.converged
            w.writerow([csv_float(lam)] + [csv_float(v) for v in f.norms])
        ppath = _out(cfg, f"path_{cfg.method}", "csv")
        atomic_write(ppath, buf.getvalue())
        _config_sidecar(cfg, ppath)
        print(ppath)
        return EXIT_OK, converged
    return EXIT_OK, fit.converged


def cmd_tune(cfg: RunConfig, threads: int) -> tuple:
    X, responses, names, kernels, source = load_data(cfg)
    split = SplitSpec(mode=cfg.split.mode, train_fraction=cfg.split.train_fraction,
                      k=cfg.split.k, seed=cfg.seed)
    rep = tune(X, responses, kernels, _policy(cfg.policy, cfg.seed), _grid(cfg), split,
               cfg.method, admm=_admm(cfg), lla=_lla(cfg))
    body = {"source": source, "covariates": names, "report": rep.to_dict(),
            "active_covariates": [names[j] for j in rep.active_set]}
    path = _out(cfg, f"tune_{cfg.method}", "json")
    atomic_write(path, to_json(_envelope(cfg, "tune", body)))
    print(path)
    return EXIT_OK, rep.fit.converged


def _experiment(cfg: RunConfig, method: str) -> ExperimentSpec:
    if cfg.dataset is not None:
        raise ConfigError("bench and invariance run on simulated data; drop 'dataset'")
    split = SplitSpec(mode=cfg.split.mode, train_fraction=cfg.split.train_fraction, k=cfg.split.k)
    return ExperimentSpec(sim=_sim_spec(cfg), method=method, kernel=_kernel(cfg.kernel),
                          grid=_grid(cfg), split=split, replicates=cfg.bench.replicates,
                          base_seed=cfg.seed, policy=_policy(cfg.policy, 0),
                          admm=_admm(cfg), lla=_lla(cfg))


def cmd_bench(cfg: RunConfig, threads: int) -> tuple:
    methods = cfg.bench.methods or [cfg.method]
    reports = [run_experiment(_experiment(cfg, m), workers=threads) for m in methods]
    stem = reports[0].name if len(reports) == 1 else reports[0].name.replace(
        f"_{methods[0]}_", "_" + "+".join(methods) + "_")
    path = _out(cfg, stem, cfg.format)
    if cfg.format == "csv":
        atomic_write(path, frequency_csv(reports))
        _config_sidecar(cfg, path)
    else:
        body = {"reports": [r.to_dict() for r in reports]}
        atomic_write(path, to_json(_envelope(cfg, "bench", body)))
    print(path)
    return EXIT_OK, all(r.n_nonconverged == 0 and r.n_failed == 0 for r in reports)


def default_invariance_policies(n_perturbed: int = 4, scale: float = 0.5) -> list:
    """A random-sample policy followed by ``n_perturbed`` perturbed means."""
    out = [ReferencePolicy(y="random_sample", seed=0)]
    out += [ReferencePolicy(y="perturbed_mean", scale=scale, seed=k + 1) for k in range(n_perturbed)]
    return out


def cmd_invariance(cfg: RunConfig, threads: int) -> tuple:
    if cfg.invariance.policies:
        policies = [_policy(p, 0) for p in cfg.invariance.policies]
    else:
        policies = default_invariance_policies(cfg.invariance.n_perturbed, cfg.policy.scale)
    rep = run_invariance(_experiment(cfg, cfg.method), policies, workers=threads)
    path = _out(cfg, rep.name, cfg.format)
    if cfg.format == "csv":
        atomic_write(path, invariance_csv(rep))
        _config_sidecar(cfg, path)
    else:
        atomic_write(path, to_json(_envelope(cfg, "invariance", {"report": rep.to_dict()})))
    print(path)
    return EXIT_OK, rep.n_failed == 0


HANDLERS = {"simulate": cmd_simulate, "fit": cmd_fit, "tune": cmd_tune, "bench": cmd_bench,
            "invariance": cmd_invariance, "ingest": cmd_ingest}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON (or .toml) run configuration")
    common.add_argument("--seed", type=int, help="master seed; overrides the config")
    common.add_argument("--threads", type=int, help="worker processes (default: $FRESEL_THREADS or 1)")
    common.add_argument("--strict", action="store_true", help="exit 4 if any fit fails to converge")
    common.add_argument("--out-dir", help="output directory")
    common.add_argument("--format", choices=("json", "csv"), help="report format")
    parser = argparse.ArgumentParser(prog="fresel", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fresel {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name in ("simulate", "fit", "tune", "bench", "invariance"):
            p.add_argument("--model", type=int, help="simulation model 1-5")
            p.add_argument("--kernel", choices=("linear", "gaussian", "laplacian"))
        if name in ("fit", "tune"):
            p.add_argument("--dataset", help="manifest.json of a dataset")
        if name in ("fit", "tune", "bench", "invariance"):
            p.add_argument("--method", choices=("elastic_net", "rscad_l2", "escad_l2"))
        if name in ("bench", "invariance"):
            p.add_argument("--replicates", type=int)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        threads = thread_count(args)
        cfg = resolve_config(args)
        result = HANDLERS[cfg.command](cfg, threads)
    except (ConfigError, ArgumentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DimensionError, NotSPDError, TagMismatchError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    code, converged = result if isinstance(result, tuple) else (result, True)
    if args.strict and not converged:
        print("solver did not converge (strict mode)", file=sys.stderr)
        return EXIT_NONCONVERGED
    return code


if __name__ == "__main__":
    sys.exit(main())
