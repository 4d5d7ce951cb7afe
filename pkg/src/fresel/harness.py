"""Replicated selection-frequency experiments and reference-invariance studies."""
from __future__ import annotations

import csv
import io
import itertools
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import __version__
from .exceptions import ArgumentError, FreselError
from .fileio import atomic_write, read_json, to_json
from .kernels import KernelSpec
from .lla import LLAConfig
from .simgen import SimModelSpec, gen_model
from .solver import ADMMConfig
from .transform import ReferencePolicy
from .tuning import METHODS, SplitSpec, TuneGrid, tune

REPORT_FORMAT = "fresel-report/1"


@dataclass(frozen=True)
class ExperimentSpec:
    """Replicated tuning runs on one simulation model.

    Replicate ``r`` (1-based) uses data seed ``base_seed + r``; the split
    seed and the reference-policy seed are derived from that data seed, so
    every replicate is reproducible on its own.
    """

    sim: SimModelSpec
    method: str = "rscad_l2"
    kernel: KernelSpec = field(default_factory=KernelSpec)
    grid: TuneGrid = field(default_factory=TuneGrid)
    split: SplitSpec = field(default_factory=SplitSpec)
    replicates: int = 50
    base_seed: int = 0
    policy: ReferencePolicy = field(default_factory=ReferencePolicy)
    admm: ADMMConfig = field(default_factory=ADMMConfig)
    lla: LLAConfig = field(default_factory=LLAConfig)

    def __post_init__(self):
        if self.replicates < 1:
            raise ArgumentError("need at least one replicate")
        if self.method not in METHODS:
            raise ArgumentError(f"unknown method {self.method!r}")

    @property
    def name(self) -> str:
        return f"model{self.sim.model_id}_{self.method}_{self.kernel.kind}_R{self.replicates}"

    def to_dict(self) -> dict:
        return {
            "sim": self.sim.to_dict(), "method": self.method, "kernel": self.kernel.to_dict(),
            "grid": self.grid.to_dict(), "split": self.split.to_dict(),
            "replicates": self.replicates, "base_seed": self.base_seed,
            "policy": self.policy.to_dict(),
            "admm": _plain(self.admm.__dict__), "lla": _lla_dict(self.lla),
        }


def _plain(d: dict) -> dict:
    return {k: (v.item() if isinstance(v, np.generic) else v) for k, v in d.items()}


def _lla_dict(cfg: LLAConfig) -> dict:
    out = dict(cfg.__dict__)
    out["inner"] = _plain(cfg.inner.__dict__)
    return _plain(out)


def replicate_seed(spec: ExperimentSpec, r: int) -> int:
    return spec.base_seed + r


def _derived(seed: int, salt: int) -> int:
    return int(np.random.SeedSequence([seed, salt]).generate_state(1)[0])


def _replicate_policy(policy: ReferencePolicy, seed: int) -> ReferencePolicy:
    return replace(policy, seed=_derived(seed, policy.seed))


def _run_one(spec: ExperimentSpec, r: int, policies: Sequence[ReferencePolicy]) -> dict:
    seed = replicate_seed(spec, r)
    t0 = time.perf_counter()
    try:
        data = gen_model(replace(spec.sim, seed=seed))
        split = replace(spec.split, seed=_derived(seed, 7919))
        sets, mses, converged = [], [], True
        for pol in policies:
            rep = tune(data.X, data.responses, spec.kernel, _replicate_policy(pol, seed),
                       spec.grid, split, spec.method, admm=spec.admm, lla=spec.lla)
            sets.append(sorted(int(j) for j in rep.active_set))
            mses.append(rep.test_mse)
            converged = converged and bool(rep.fit.converged)
        return {"replicate": r, "seed": seed, "ok": True, "active_sets": sets,
                "test_mse": mses, "converged": converged,
                "wall_time": time.perf_counter() - t0}
    except (FreselError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return {"replicate": r, "seed": seed, "ok": False, "error": f"{type(exc).__name__}: {exc}",
                "wall_time": time.perf_counter() - t0}


def _run_all(spec: ExperimentSpec, policies, workers: int) -> list:
    reps = range(1, spec.replicates + 1)
    if workers <= 1:
        return [_run_one(spec, r, policies) for r in reps]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_one, spec, r, policies) for r in reps]
        # ordered reduce keyed by replicate index
        return [f.result() for f in futures]


@dataclass
class FrequencyReport:
    spec: dict
    p: int
    truth: list
    counts: list
    frequencies: list
    active_sets: list
    replicates: int
    n_effective: int
    n_failed: int
    n_nonconverged: int
    failures: list
    mse_mean: float
    mse_sd: float
    wall_times: list
    name: str = ""

    def to_dict(self) -> dict:
        return {"format": REPORT_FORMAT, "version": __version__, "kind": "frequency",
                **{k: getattr(self, k) for k in self.__dataclass_fields__}}


@dataclass
class InvarianceReport:
    spec: dict
    policies: list
    active_sets: list
    jaccard: list
    mean_jaccard: list
    identical_fraction: float
    replicates: int
    n_effective: int
    n_failed: int
    failures: list
    name: str = ""

    def to_dict(self) -> dict:
        return {"format": REPORT_FORMAT, "version": __version__, "kind": "invariance",
                **{k: getattr(self, k) for k in self.__dataclass_fields__}}


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> FrequencyReport:
    """Selection frequencies over ``spec.replicates`` seeded datasets.

    Failed replicates are excluded from the denominator and counted.
    """
    results = _run_all(spec, [spec.policy], workers)
    ok = [res for res in results if res["ok"]]
    p = spec.sim.p
    counts = np.zeros(p, dtype=int)
    for res in ok:
        counts[res["active_sets"][0]] += 1
    denom = len(ok)
    mses = np.array([res["test_mse"][0] for res in ok])
    return FrequencyReport(
        spec=spec.to_dict(), p=p, truth=list(spec.sim.truth), counts=counts.tolist(),
        frequencies=[(int(c) / denom) if denom else float("nan") for c in counts],
        active_sets=[res["active_sets"][0] if res["ok"] else None for res in results],
        replicates=spec.replicates, n_effective=denom, n_failed=spec.replicates - denom,
        n_nonconverged=sum(1 for res in ok if not res["converged"]),
        failures=[{"replicate": res["replicate"], "error": res["error"]}
                  for res in results if not res["ok"]],
        mse_mean=float(mses.mean()) if denom else float("nan"),
        mse_sd=float(mses.std(ddof=1)) if denom > 1 else 0.0,
        wall_times=[res["wall_time"] for res in results], name=spec.name,
    )


def jaccard(a, b) -> float:
    """Jaccard similarity of two index sets; two empty sets count as identical."""
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def run_invariance(spec: ExperimentSpec, policies: Sequence[ReferencePolicy],
                   workers: int = 1) -> InvarianceReport:
    """Selection on the same datasets under several reference policies."""
    if len(policies) < 2:
        raise ArgumentError("invariance needs at least two policies")
    results = _run_all(spec, list(policies), workers)
    ok = [res for res in results if res["ok"]]
    k = len(policies)
    pairs = list(itertools.combinations(range(k), 2))
    jac, identical = [], 0
    for res in ok:
        sets = res["active_sets"]
        jac.append([jaccard(sets[i], sets[j]) for i, j in pairs])
        identical += all(s == sets[0] for s in sets)
    mean_jac = np.zeros((k, k))
    np.fill_diagonal(mean_jac, 1.0)
    if ok:
        avg = np.mean(jac, axis=0)
        for (i, j), v in zip(pairs, avg):
            mean_jac[i, j] = mean_jac[j, i] = v
    return InvarianceReport(
        spec=spec.to_dict(), policies=[p.to_dict() for p in policies],
        active_sets=[res["active_sets"] if res["ok"] else None for res in results],
        jaccard=jac, mean_jaccard=mean_jac.tolist(),
        identical_fraction=identical / len(ok) if ok else float("nan"),
        replicates=spec.replicates, n_effective=len(ok), n_failed=spec.replicates - len(ok),
        failures=[{"replicate": res["replicate"], "error": res["error"]}
                  for res in results if not res["ok"]],
        name=f"{spec.name}_invariance",
    )


def frequency_csv(reports: Sequence[FrequencyReport]) -> str:
    """One row per covariate, one frequency column per report."""
    if not reports:
        raise ArgumentError("no reports to tabulate")
    p = reports[0].p
    if any(r.p != p for r in reports):
        raise ArgumentError("reports differ in covariate count")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["covariate", "truth"] + [r.spec["method"] for r in reports])
    truth = set(reports[0].truth)
    for j in range(p):
        w.writerow([f"X{j + 1}", int(j in truth)] + [f"{r.frequencies[j]:.4f}" for r in reports])
    return buf.getvalue()


def invariance_csv(report: InvarianceReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    k = len(report.policies)
    w.writerow(["replicate"] + [f"policy{i + 1}" for i in range(k)] + ["identical"])
    for r, sets in enumerate(report.active_sets, start=1):
        if sets is None:
            continue
        cells = [" ".join(f"X{j + 1}" for j in s) for s in sets]
        w.writerow([r] + cells + [int(all(s == sets[0] for s in sets))])
    return buf.getvalue()


def write_report(report, path: str, fmt: str = "json") -> str:
    """Serialize a frequency or invariance report; returns the written path."""
    if fmt == "json":
        text = to_json(report.to_dict())
    elif fmt == "csv":
        if isinstance(report, FrequencyReport):
            text = frequency_csv([report])
        elif isinstance(report, InvarianceReport):
            text = invariance_csv(report)
        else:
            raise ArgumentError("csv output supports frequency and invariance reports")
    else:
        raise ArgumentError(f"unknown report format {fmt!r}")
    atomic_write(path, text)
    return path


def read_report(path: str) -> dict:
    return read_json(path)


__all__ = [
    "ExperimentSpec", "FrequencyReport", "InvarianceReport", "run_experiment", "run_invariance",
    "jaccard", "write_report", "read_report", "frequency_csv", "REPORT_FORMAT",
]
