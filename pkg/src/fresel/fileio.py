"""Dataset files, count ingestion and locale-independent serialization."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .exceptions import DataError, FreselError
from .kernels import KernelSpec
from .objects import MetricResponse, QuantileObject, check_homogeneous, default_levels

log = logging.getLogger(__name__)

DATASET_FORMAT = "fresel-dataset/1"


# --- serialization ---------------------------------------------------------

def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def _emit(obj, indent: int, level: int, out: list) -> None:
    pad = "\n" + " " * (indent * (level + 1))
    end = "\n" + " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            out.append(("," if i else "") + pad + json.dumps(str(k)) + ": ")
            _emit(v, indent, level + 1, out)
        out.append(end + "}")
    elif isinstance(obj, (list, tuple)):
        if not obj:
            out.append("[]")
            return
        out.append("[")
        for i, v in enumerate(obj):
            out.append(("," if i else "") + pad)
            _emit(v, indent, level + 1, out)
        out.append(end + "]")
    elif isinstance(obj, np.ndarray):
        _emit(obj.tolist(), indent, level, out)
    elif obj is None or isinstance(obj, (bool, np.bool_)):
        out.append(json.dumps(None if obj is None else bool(obj)))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_fmt_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def to_json(payload) -> str:
    """JSON text with every float written to 17 significant digits."""
    out: list = []
    _emit(payload, 2, 0, out)
    return "".join(out) + "\n"


def csv_float(x: float) -> str:
    return _fmt_float(float(x)) if not math.isfinite(x) else format(float(x), ".6g")


def atomic_write(path: str, text: str) -> None:
    """Write ``text`` to ``path`` through a temp file in the same directory."""
    directory = os.path.dirname(os.path.abspath(path))
    tmp = None
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        if tmp and os.path.exists(tmp):
            os.unlink(tmp)
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_json(path: str):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# --- dataset files ---------------------------------------------------------

@dataclass(frozen=True)
class DatasetFiles:
    covariates: str
    responses: str
    manifest: str


def _covariates_csv(X: np.ndarray, names: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for row in X:
        w.writerow([format(float(v), ".17g") for v in row])
    return buf.getvalue()


def write_dataset(out_dir: str, X, responses: Sequence[MetricResponse],
                  names: Optional[Sequence[str]] = None,
                  kernels: Optional[Sequence[KernelSpec]] = None,
                  extra: Optional[dict] = None) -> DatasetFiles:
    """Write covariates CSV, responses (CSV or matrix directory) and a manifest."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != len(responses):
        raise DataError("covariate rows and responses differ in count")
    tag = check_homogeneous(responses)
    names = list(names) if names is not None else [f"X{j + 1}" for j in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise DataError("one covariate name per column required")
    kernels = list(kernels) if kernels is not None else [KernelSpec()] * X.shape[1]
    cov_path = os.path.join(out_dir, "covariates.csv")
    atomic_write(cov_path, _covariates_csv(X, names))

    manifest = {"format": DATASET_FORMAT, "tag": tag, "n": len(responses), "p": X.shape[1],
                "covariates": "covariates.csv"}
    if tag == "quantile_w2":
        levels = responses[0].payload.levels
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([format(float(t), ".17g") for t in levels])
        for r in responses:
            w.writerow([format(float(v), ".17g") for v in r.payload.values])
        resp_path = os.path.join(out_dir, "responses.csv")
        atomic_write(resp_path, buf.getvalue())
        manifest.update({"m": len(levels), "responses": "responses.csv"})
    else:
        resp_path = os.path.join(out_dir, "responses")
        d = responses[0].payload.matrix.shape[0]
        width = max(4, len(str(len(responses))))
        for i, r in enumerate(responses, start=1):
            lines = [" ".join(format(float(v), ".17g") for v in row) for row in r.payload.matrix]
            atomic_write(os.path.join(resp_path, f"{i:0{width}d}.mat.txt"), "\n".join(lines) + "\n")
        manifest.update({"d": d, "responses": "responses"})
    manifest["kernels"] = [{"column": nm, **k.to_dict()} for nm, k in zip(names, kernels)]
    if extra:
        manifest.update(extra)
    man_path = os.path.join(out_dir, "manifest.json")
    atomic_write(man_path, to_json(manifest))
    return DatasetFiles(cov_path, resp_path, man_path)


def _read_csv_floats(path: str) -> tuple[list, np.ndarray]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path} is empty")
    header, body = rows[0], [r for r in rows[1:] if r]
    try:
        values = np.array([[float(v) for v in r] for r in body], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric entry ({exc})") from exc
    if body and any(len(r) != len(header) for r in body):
        raise DataError(f"{path}: ragged rows")
    return header, values.reshape(len(body), len(header))


def read_dataset(manifest_path: str):
    """Load a dataset written by :func:`write_dataset` (or by hand).

    Returns ``(X, responses, names, kernels, manifest)``.
    """
    try:
        manifest = read_json(manifest_path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from exc
    base = os.path.dirname(os.path.abspath(manifest_path))
    for key in ("tag", "covariates", "responses"):
        if key not in manifest:
            raise DataError(f"manifest lacks {key!r}")
    names, X = _read_csv_floats(os.path.join(base, manifest["covariates"]))
    tag = manifest["tag"]
    resp = os.path.join(base, manifest["responses"])
    try:
        if tag == "quantile_w2":
            header, Q = _read_csv_floats(resp)
            levels = np.array([float(t) for t in header])
            if "m" in manifest and manifest["m"] != len(levels):
                raise DataError("manifest m disagrees with the response file")
            responses = [MetricResponse("quantile_w2", QuantileObject(levels, q)) for q in Q]
        elif tag == "spd_cholesky":
            files = sorted(f for f in os.listdir(resp) if f.endswith(".mat.txt"))
            responses = []
            for f in files:
                M = np.loadtxt(os.path.join(resp, f), ndmin=2)
                if "d" in manifest and M.shape != (manifest["d"], manifest["d"]):
                    raise DataError(f"{f}: expected a {manifest['d']}x{manifest['d']} matrix")
                responses.append(MetricResponse.spd(M))
        else:
            raise DataError(f"unknown response tag {tag!r}")
    except FreselError as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"invalid response data: {exc}") from exc
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read responses at {resp}: {exc}") from exc
    if len(responses) != X.shape[0]:
        raise DataError(f"{X.shape[0]} covariate rows but {len(responses)} responses")
    if "n" in manifest and manifest["n"] != len(responses):
        raise DataError("manifest n disagrees with the data files")
    kernels = [KernelSpec()] * X.shape[1]
    if manifest.get("kernels"):
        by_name = {k.get("column"): k for k in manifest["kernels"]}
        kernels = []
        for nm in names:
            k = by_name.get(nm, {})
            kernels.append(KernelSpec(k.get("kind", "linear"), k.get("bandwidth")))
    return X, responses, names, kernels, manifest


# --- ingestion -------------------------------------------------------------

def empirical_quantiles(values, m: int) -> np.ndarray:
    """Quantiles at levels ``k/(m+1)`` by linear interpolation of order statistics."""
    return np.quantile(np.asarray(values, dtype=float), default_levels(m), method="linear")


def ingest_counts(counts_csv: str, group_column: str, value_column: str, m: int = 24,
                  standardize: bool = True, noise_covariates: int = 0, seed: int = 0,
                  covariate_columns: Optional[Sequence[str]] = None):
    """Group raw records into quantile responses with per-group covariates.

    Covariates are the per-group means of ``covariate_columns`` (default:
    every numeric column other than the group and value columns).  Returns
    ``(X, names, responses, groups)``.
    """
    try:
        with open(counts_csv, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {counts_csv}: {exc}") from exc
    if not rows:
        raise DataError(f"{counts_csv} has no records")
    fields = list(rows[0].keys())
    for col in (group_column, value_column):
        if col not in fields:
            raise DataError(f"column {col!r} not found in {counts_csv}")

    def numeric(col):
        try:
            [float(r[col]) for r in rows]
            return True
        except (TypeError, ValueError):
            return False

    if covariate_columns is None:
        covariate_columns = [c for c in fields if c not in (group_column, value_column) and numeric(c)]
    else:
        missing = [c for c in covariate_columns if c not in fields]
        if missing:
            raise DataError(f"covariate columns not found: {missing}")

    groups: dict = {}
    for r in rows:
        groups.setdefault(r[group_column], []).append(r)
    keys, Q, X = [], [], []
    for key, recs in groups.items():
        try:
            vals = [float(r[value_column]) for r in recs]
            covs = [[float(r[c]) for c in covariate_columns] for r in recs]
        except ValueError as exc:
            raise DataError(f"group {key!r}: non-numeric entry ({exc})") from exc
        if len(vals) < 2:
            log.warning("skipping group %r with fewer than two values", key)
            continue
        keys.append(key)
        Q.append(empirical_quantiles(vals, m))
        X.append(np.mean(covs, axis=0) if covariate_columns else np.zeros(0))
    if not keys:
        raise DataError("no group has two or more values")
    X = np.array(X, dtype=float).reshape(len(keys), len(covariate_columns))
    names = list(covariate_columns)
    if noise_covariates:
        clash = [f"X{j + 1}" for j in range(noise_covariates) if f"X{j + 1}" in names]
        if clash:
            raise DataError(f"noise column names collide with data columns: {clash}")
        rng = np.random.default_rng(seed)
        X = np.hstack([X, rng.standard_normal((len(keys), noise_covariates))])
        names += [f"X{j + 1}" for j in range(noise_covariates)]
    if standardize and X.size:
        sd = X.std(axis=0, ddof=1) if len(keys) > 1 else np.zeros(X.shape[1])
        flat = ~(sd > 0)
        if flat.any():
            log.warning("constant covariates left unscaled: %s", [names[j] for j in np.flatnonzero(flat)])
        X = (X - X.mean(axis=0)) / np.where(flat, 1.0, sd)
    levels = default_levels(m)
    responses = [MetricResponse("quantile_w2", QuantileObject(levels, q)) for q in Q]
    return X, names, responses, keys


__all__ = [
    "DatasetFiles", "write_dataset", "read_dataset", "ingest_counts", "empirical_quantiles",
    "atomic_write", "to_json", "read_json", "csv_float", "DATASET_FORMAT",
]
