"""CSV/JSON persistence for ensembles, ranked ensembles, local times and reports.

An ensemble stored under stem ``out/ens`` is three files:

* ``out/ens.csv``        header ``time,<label_0>,...``, one row per grid point
* ``out/ens.jumps.csv``  same shape, jump sizes
* ``out/ens.json``       ``{model, params, seed, T, n_steps, labels}``

Floats are written with ``repr`` (shortest round-trip form), so reading back
reproduces every value bit for bit.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .grid_paths import Ensemble, TimeGrid


class ParseError(ValueError):
    """Malformed persisted file; the message names the file, line and field."""


def _fmt(x) -> str:
    return repr(float(x))


def _stem_paths(stem) -> tuple[Path, Path, Path]:
    stem = Path(stem)
    return (
        stem.with_name(stem.name + ".csv"),
        stem.with_name(stem.name + ".jumps.csv"),
        stem.with_name(stem.name + ".json"),
    )


def write_table(path, header, columns) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_fmt(v) for v in row])
    return path


def write_ensemble(e: Ensemble, stem) -> tuple[Path, Path, Path]:
    if e.batch_shape:
        raise ValueError("write one replication at a time")
    values_path, jumps_path, meta_path = _stem_paths(stem)
    header = ["time", *e.labels]
    times = e.grid.times
    write_table(values_path, header, [times, *e.values])
    write_table(jumps_path, header, [times, *e.jumps])
    meta = {
        "model": e.meta.get("model"),
        "params": e.meta.get("params", {}),
        "seed": e.meta.get("seed"),
        "T": e.grid.T,
        "n_steps": e.grid.n_steps,
        "labels": list(e.labels),
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return values_path, jumps_path, meta_path


def _read_table(path: Path, expected_header: list[str], n_rows: int) -> np.ndarray:
    if not path.exists():
        raise ParseError(f"{path}: file not found")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file")
    if rows[0] != expected_header:
        raise ParseError(f"{path}:1: header {rows[0]} does not match labels {expected_header}")
    body = rows[1:]
    if len(body) != n_rows:
        raise ParseError(f"{path}: expected {n_rows} data rows, found {len(body)}")
    out = np.empty((len(expected_header), n_rows))
    for r, row in enumerate(body):
        if len(row) != len(expected_header):
            raise ParseError(f"{path}:{r + 2}: expected {len(expected_header)} fields, found {len(row)}")
        for c, text in enumerate(row):
            try:
                out[c, r] = float(text)
            except ValueError:
                raise ParseError(f"{path}:{r + 2}: field {expected_header[c]!r} is not a number: {text!r}") from None
    return out


def read_ensemble(stem) -> Ensemble:
    values_path, jumps_path, meta_path = _stem_paths(stem)
    if not meta_path.exists():
        raise ParseError(f"sidecar {meta_path} not found")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{meta_path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    for key in ("T", "n_steps", "labels"):
        if key not in meta:
            raise ParseError(f"{meta_path}: missing key {key!r}")
    try:
        grid = TimeGrid(meta["T"], meta["n_steps"])
    except ValueError as exc:
        raise ParseError(f"{meta_path}: {exc}") from None
    header = ["time", *meta["labels"]]
    values = _read_table(values_path, header, len(grid))
    jumps = _read_table(jumps_path, header, len(grid))
    if not np.array_equal(values[0], jumps[0]):
        raise ParseError(f"{jumps_path}: time column differs from {values_path}")
    if not np.allclose(values[0], grid.times, rtol=0, atol=1e-12 * grid.T):
        raise ParseError(f"{values_path}: time column does not match T={grid.T}, n_steps={grid.n_steps}")
    info = {k: meta.get(k) for k in ("model", "params", "seed")}
    try:
        return Ensemble(grid, values[1:], jumps[1:], meta["labels"], info)
    except ValueError as exc:
        raise ParseError(f"{values_path}: {exc}") from None


def write_ranked(ranked, occupancy, stem) -> Path:
    """Ranked paths in ensemble layout plus ``<stem>.occupancy.csv``."""
    write_ensemble(ranked.ranked, stem)
    stem = Path(stem)
    occ_path = stem.with_name(stem.name + ".occupancy.csv")
    n = occupancy.N.shape[-2]
    write_table(
        occ_path,
        ["time", *(f"N_{k + 1}" for k in range(n))],
        [ranked.ranked.grid.times, *occupancy.N],
    )
    return occ_path


def write_local_time(lt, path, label: str | None = None) -> Path:
    """``time,L,scriptL`` CSV with a JSON sidecar naming estimator and policy."""
    path = Path(path)
    write_table(path, ["time", "L", "scriptL"], [lt.grid.times, lt.L, lt.scriptL])
    sidecar = {"estimator": lt.estimator, "policy": str(lt.policy), "label": label}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def write_report(report, stem, times, extra: dict | None = None) -> tuple[Path, Path]:
    """Scalars as ``<stem>.json`` and the residual path as ``<stem>.csv``.

    ``report`` must be a single replication.
    """
    stem = Path(stem)
    scalars = {
        k: v for k, v in report.channels.items() if np.ndim(v) == 0
    }
    doc = {
        "identity": report.identity,
        "sup_residual": float(report.sup_residual),
        "terminal_residual": float(report.terminal_residual),
        "normalizer": float(report.normalizer),
        "meta": report.meta,
        "channels": scalars,
        "terms_terminal": {k: float(v[-1]) for k, v in report.terms.items()},
    }
    if extra:
        doc.update(extra)
    json_path = write_json(doc, stem.with_name(stem.name + ".json"))
    header = ["time", "lhs", "rhs", "residual", *report.terms]
    cols = [times, report.lhs, report.rhs, report.residual, *report.terms.values()]
    csv_path = write_table(stem.with_name(stem.name + ".csv"), header, cols)
    return json_path, csv_path
