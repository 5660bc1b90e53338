"""Synthetic data, preprocessing and file formats."""

from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Union

import numpy as np

from restab.model import (
    Array,
    BadShape,
    ConvergenceTrace,
    Dataset,
    DegenerateColumn,
    ParseError,
    RaggedRows,
    ResamplingStatistics,
    ShapeMismatch,
    validate_dataset,
)

PathLike = Union[str, os.PathLike]


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def gen_bernoulli_gauss(n: int, rho: float, seed: int) -> Array:
    """Each entry is standard normal with probability rho and zero otherwise."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    support = rng.random(n) < rho
    values = rng.standard_normal(n)
    return np.where(support, values, 0.0)


def dct_matrix(n: int) -> Array:
    """Orthonormal type-II DCT matrix, rows indexed by frequency."""
    k = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    C = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * j + 1) * k / (2 * n))
    C[0, :] = np.sqrt(1.0 / n)
    return C


def gen_dct_design(n: int, m: int, seed: int) -> Array:
    """M rows drawn without replacement from the N x N orthonormal DCT matrix."""
    if not (n >= 2 and 1 <= m <= n):
        raise BadShape(f"need N >= 2 and 1 <= M <= N, got N={n}, M={m}")
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(n, size=m, replace=False))
    return dct_matrix(n)[rows]


def gen_correlated_design(n: int, m: int, corr: float, seed: int) -> Array:
    """Gaussian design whose columns share pairwise correlation ``corr``."""
    if not 0.0 <= corr < 1.0:
        raise ValueError("corr must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    common = rng.standard_normal((m, 1))
    return np.sqrt(corr) * common + np.sqrt(1.0 - corr) * rng.standard_normal((m, n))


def gen_linear_data(A: Array, x0: Array, sigma: float, seed: int) -> Array:
    """y = A x0 + w with w ~ N(0, sigma^2) i.i.d."""
    A = np.asarray(A, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if A.ndim != 2 or x0.shape != (A.shape[1],):
        raise ShapeMismatch(f"design {A.shape} incompatible with signal {x0.shape}")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    rng = np.random.default_rng(seed)
    return A @ x0 + sigma * rng.standard_normal(A.shape[0])


def preprocess(dataset: Dataset) -> Dataset:
    """Center every column and scale it to unit Euclidean norm; center y."""
    A = dataset.features - dataset.features.mean(axis=0)
    norms = np.linalg.norm(A, axis=0)
    scale = np.abs(dataset.features).max(axis=0)
    bad = np.flatnonzero(norms <= 1e-12 * np.maximum(scale, 1.0) * np.sqrt(A.shape[0]))
    if bad.size:
        raise DegenerateColumn(f"column {int(bad[0])} is constant")
    A = A / norms
    y = dataset.outputs - dataset.outputs.mean()
    out = Dataset(A, y, preprocessed=True, provenance=dataset.provenance)
    validate_dataset(out)
    return out


def make_synthetic(n: int, alpha: float, rho: float, sigma: float, seed: int,
                   design: str = "dct", corr: float = 0.3) -> tuple[Dataset, Array]:
    """Raw (unpreprocessed) synthetic dataset and its true signal."""
    m = int(round(alpha * n))
    ss = np.random.SeedSequence(seed)
    s_design, s_signal, s_noise = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    if design == "dct":
        A = gen_dct_design(n, m, s_design)
    elif design == "correlated":
        A = gen_correlated_design(n, m, corr, s_design)
    else:
        raise ValueError(f"unknown design {design!r}")
    x0 = gen_bernoulli_gauss(n, rho, s_signal)
    y = gen_linear_data(A, x0, sigma, s_noise)
    return Dataset(A, y, preprocessed=False, provenance="synthetic"), x0


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def _atomic_write_text(path: PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(dataset: Dataset, path: PathLike) -> None:
    """First column y, then the N feature columns, with a header row."""
    header = ["y"] + [f"x{i}" for i in range(dataset.n)]
    lines = [",".join(header)]
    for yv, row in zip(dataset.outputs, dataset.features):
        lines.append(",".join([_fmt(yv)] + [_fmt(v) for v in row]))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def read_csv(path: PathLike, provenance: str = "csv") -> Dataset:
    rows: list[list[float]] = []
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, cells in enumerate(csv.reader(fh), start=1):
            if not cells or all(c.strip() == "" for c in cells):
                continue
            if lineno == 1 and not _is_number(cells[0].strip()):
                width = len(cells)
                continue
            if width is None:
                width = len(cells)
            if len(cells) != width:
                raise RaggedRows(f"expected {width} fields, found {len(cells)}", lineno)
            vals = []
            for col, cell in enumerate(cells, start=1):
                try:
                    vals.append(float(cell.strip()))
                except ValueError:
                    raise ParseError(f"cannot parse {cell!r} as a number", lineno, col) from None
            rows.append(vals)
    if not rows:
        raise ParseError("no data rows", 1, 1)
    if width is not None and width < 2:
        raise ShapeMismatch("need an output column and at least one feature column")
    data = np.array(rows)
    return Dataset(data[:, 1:], data[:, 0], preprocessed=False, provenance=provenance)


def write_vector_csv(values: Array, path: PathLike, name: str = "value") -> None:
    _atomic_write_text(path, name + "\n" + "".join(_fmt(v) + "\n" for v in values))


def write_columns_csv(columns: dict[str, Array], path: PathLike) -> None:
    """Equal-length named columns, one row per index."""
    names = list(columns)
    n = len(next(iter(columns.values()))) if columns else 0
    lines = ["i," + ",".join(names)]
    for i in range(n):
        lines.append(f"{i}," + ",".join(_fmt(columns[k][i]) for k in names))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def stats_to_dict(stats: ResamplingStatistics) -> dict[str, Any]:
    out: dict[str, Any] = {
        "method": stats.method,
        "n": int(stats.n),
        "m": int(stats.meta.get("m", 0)),
        "mean": [float(v) for v in stats.mean],
        "variance": [float(v) for v in stats.variance],
        "pi": [float(v) for v in stats.pi],
    }
    if stats.mc_std_err is not None:
        out["mc_std_err"] = {k: [float(v) for v in arr] for k, arr in stats.mc_std_err.items()}
    out["meta"] = stats.meta
    return out


def stats_from_dict(d: dict[str, Any]) -> ResamplingStatistics:
    mc = d.get("mc_std_err")
    meta = dict(d.get("meta", {}))
    meta.setdefault("m", d.get("m"))
    return ResamplingStatistics(
        mean=np.array(d["mean"], dtype=np.float64),
        variance=np.array(d["variance"], dtype=np.float64),
        pi=np.array(d["pi"], dtype=np.float64),
        method=d["method"],
        mc_std_err=None if mc is None else {k: np.array(v) for k, v in mc.items()},
        meta=meta,
    )


def write_json(obj: Any, path: PathLike) -> None:
    _atomic_write_text(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def write_stats_json(stats: ResamplingStatistics, path: PathLike) -> None:
    write_json(stats_to_dict(stats), path)


def read_stats_json(path: PathLike) -> ResamplingStatistics:
    with open(path, encoding="utf-8") as fh:
        return stats_from_dict(json.load(fh))


def write_trace_jsonl(trace: Union[ConvergenceTrace, Iterable], path: PathLike) -> None:
    records = trace.records if isinstance(trace, ConvergenceTrace) else trace
    lines = [json.dumps({"t": r.t, "delta": r.delta, "elapsed_s": r.elapsed}) for r in records]
    _atomic_write_text(path, "".join(line + "\n" for line in lines))
