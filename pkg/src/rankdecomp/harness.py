"""Experiment orchestration: config, Monte Carlo verification runs, sweeps.

A run simulates replications in fixed-size chunks, evaluates every requested
identity on each chunk and reduces per-replication scalars with a pairwise
tree of fixed shape.  Chunks depend only on their replication indices, so the
worker count changes wall time but not a single output bit.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .grid_paths import Ensemble, TimeGrid
from .identities import REGISTRY, UnsupportedInputError, run_identity
from .persistence import read_ensemble, write_ensemble, write_json, write_report
from .rank import EpsilonPolicy
from .simulate import ModelSpec, SeedPolicy, SpecError, simulate

SUMMARY_COLUMNS = ("identity", "dt", "mean_sup_residual", "std_err", "mean_normalizer", "rel_residual")
ESTIMATORS = ("tanaka", "occupation")
TRANSFORMS = (None, "pos_part", "neg_part", "abs")
THRESHOLD_KEYS = ("max_rel_residual", "max_mean_sup_residual", "nonincreasing")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    model: ModelSpec
    T: float = 1.0
    n_steps: int = 1024
    n_paths: int = 2
    replications: int = 1
    seed: int = 0
    policy: EpsilonPolicy | None = None
    estimator: str = "tanaka"
    identities: tuple = tuple(REGISTRY)
    k: int = 1
    transform: str | None = None
    out: str = "results"
    sweep: tuple | None = None
    acceptance: dict = field(default_factory=dict)
    chunk: int = 64
    workers: int = 1
    save_paths: bool = False
    lattice_h: str | None = None  # "sqrt_dt": lattice step follows the grid

    def __post_init__(self):
        if self.policy is None:
            # exact ties for lattice and fixture inputs, a sqrt(dt) band otherwise
            exact = self.model.kind in ("lattice_walk", "fixture")
            self.policy = EpsilonPolicy("exact") if exact else EpsilonPolicy("band", 0.5)
        unknown = [i for i in self.identities if i not in REGISTRY]
        if unknown:
            raise ConfigError(f"unknown identities {unknown}; known: {sorted(REGISTRY)}")
        if not self.identities:
            raise ConfigError("identity list is empty")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if self.transform not in TRANSFORMS:
            raise ConfigError(f"transform must be one of {TRANSFORMS}, got {self.transform!r}")
        for name in ("n_paths", "replications", "chunk", "workers", "n_steps"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.sweep is not None:
            s = [int(v) for v in self.sweep]
            if any(b <= a for a, b in zip(s, s[1:])) or not s:
                raise ConfigError(f"sweep values must be strictly increasing, got {s}")
            self.sweep = tuple(s)
        if self.lattice_h not in (None, "sqrt_dt"):
            raise ConfigError(f"lattice_h must be 'sqrt_dt' or absent, got {self.lattice_h!r}")
        for ident, rule in self.acceptance.items():
            if ident not in self.identities:
                raise ConfigError(f"acceptance rule for {ident!r}, which is not in the identity list")
            bad = set(rule) - set(THRESHOLD_KEYS)
            if bad:
                raise ConfigError(f"unknown acceptance keys for {ident}: {sorted(bad)}")
        try:
            TimeGrid(self.T, self.n_steps)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def levels(self) -> tuple:
        return self.sweep if self.sweep else (self.n_steps,)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {
            "model", "grid", "n_paths", "replications", "seed", "policy", "estimator",
            "identities", "k", "transform", "out", "sweep", "acceptance", "chunk",
            "workers", "save_paths",
        }
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "model" not in d:
            raise ConfigError("config needs a 'model' section")
        model = dict(d.pop("model"))
        lattice_h = None
        if model.get("h") == "sqrt_dt":
            lattice_h = model.pop("h")
        try:
            spec = ModelSpec.from_dict(model)
        except (SpecError, TypeError) as exc:
            raise ConfigError(f"model: {exc}") from None
        grid = d.pop("grid", {})
        bad = set(grid) - {"T", "n_steps"}
        if bad:
            raise ConfigError(f"unknown grid keys: {sorted(bad)}")
        kw = {"T": float(grid.get("T", 1.0)), "n_steps": int(grid.get("n_steps", 1024))}
        if "policy" in d:
            try:
                kw["policy"] = EpsilonPolicy.parse(str(d.pop("policy")))
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if "identities" in d:
            kw["identities"] = tuple(d.pop("identities"))
        if d.get("sweep") is not None:
            kw["sweep"] = tuple(d.pop("sweep"))
        kw.update(d)
        return cls(model=spec, lattice_h=lattice_h, **kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        model = self.model.to_dict()
        if self.lattice_h:
            model["h"] = self.lattice_h
        # workers is left out on purpose: outputs must not depend on it
        return {
            "model": model,
            "grid": {"T": self.T, "n_steps": self.n_steps},
            "n_paths": self.n_paths,
            "replications": self.replications,
            "seed": self.seed,
            "policy": str(self.policy),
            "estimator": self.estimator,
            "identities": list(self.identities),
            "k": self.k,
            "transform": self.transform,
            "sweep": list(self.sweep) if self.sweep else None,
            "acceptance": self.acceptance,
            "chunk": self.chunk,
        }

    def spec_for(self, grid: TimeGrid) -> ModelSpec:
        if self.lattice_h == "sqrt_dt":
            return replace(self.model, h=math.sqrt(grid.dt))
        return self.model


def tree_sum(x: np.ndarray) -> float:
    """Pairwise sum with a topology fixed by ``len(x)`` alone."""
    a = np.asarray(x, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    while a.size > 1:
        if a.size % 2:
            a = np.append(a, 0.0)
        a = a[0::2] + a[1::2]
    return float(a[0])


def tree_mean(x) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    return tree_sum(x) / x.size


def _std_err(x: np.ndarray) -> float:
    if x.size < 2:
        return 0.0
    mu = tree_mean(x)
    var = tree_sum((x - mu) ** 2) / (x.size - 1)
    return math.sqrt(var / x.size)


def _ratio(num: float, den: float) -> float:
    if num == 0.0:
        return 0.0
    return num / den if den > 0 else math.inf


@dataclass
class LevelResult:
    identity: str
    grid: TimeGrid
    sup: np.ndarray
    normalizer: np.ndarray
    channels: dict
    first: object  # ResidualReport of replication 0

    @property
    def row(self) -> dict:
        mean_sup = tree_mean(self.sup)
        mean_norm = tree_mean(self.normalizer)
        return {
            "identity": self.identity,
            "dt": self.grid.dt,
            "mean_sup_residual": mean_sup,
            "std_err": _std_err(self.sup),
            "mean_normalizer": mean_norm,
            "rel_residual": _ratio(mean_sup, mean_norm),
        }


def _chunks(n: int, size: int):
    return [range(a, min(a + size, n)) for a in range(0, n, size)]


def _evaluate(cfg: ExperimentConfig, e: Ensemble) -> dict:
    if cfg.transform:
        e = e.map(cfg.transform)
    out = {}
    for ident in cfg.identities:
        try:
            rep = run_identity(ident, e, cfg.k, cfg.policy, cfg.estimator)
        except UnsupportedInputError as exc:
            raise ConfigError(f"{ident}: {exc}") from None
        scalars = {k: np.atleast_1d(v) for k, v in rep.channels.items() if np.ndim(v) == 1}
        out[ident] = (rep.sup_residual, rep.normalizer, scalars, rep.replication(0))
    return out


def _reduce(cfg, grid, parts) -> dict:
    results = {}
    for ident in cfg.identities:
        pieces = [p[ident] for p in parts]
        channels = {
            k: np.concatenate([pc[2][k] for pc in pieces]) for k in pieces[0][2]
        }
        results[ident] = LevelResult(
            ident,
            grid,
            np.concatenate([pc[0] for pc in pieces]),
            np.concatenate([pc[1] for pc in pieces]),
            channels,
            pieces[0][3],
        )
    return results


def run_level(cfg: ExperimentConfig, n_steps: int, workers: int | None = None, save_dir=None) -> dict:
    """Simulate and check one grid level.  Returns ``{identity: LevelResult}``."""
    grid = TimeGrid(cfg.T, n_steps)
    spec = cfg.spec_for(grid)
    seeds = SeedPolicy(cfg.seed)
    if cfg.k > cfg.n_paths and any(i.startswith(("thm22", "cor31")) for i in cfg.identities):
        raise ConfigError(f"k={cfg.k} exceeds n_paths={cfg.n_paths}")

    def work(reps):
        try:
            e = simulate(spec, grid, cfg.n_paths, seeds, replications=reps)
        except SpecError as exc:
            raise ConfigError(f"model: {exc}") from None
        return e, _evaluate(cfg, e)

    chunks = _chunks(cfg.replications, cfg.chunk)
    with ThreadPoolExecutor(max_workers=workers or cfg.workers) as pool:
        done = list(pool.map(work, chunks))
    if save_dir is not None:
        # serialized writes, in replication order
        for reps, (e, _) in zip(chunks, done):
            for local, r in enumerate(reps):
                write_ensemble(e.replication(local), Path(save_dir) / f"rep_{r:05d}")
    return _reduce(cfg, grid, [d[1] for d in done])


def run_level_from_paths(cfg: ExperimentConfig, paths_dir) -> dict:
    """Recompute a level from persisted ensembles, chunked exactly as in a run."""
    paths_dir = Path(paths_dir)
    stems = sorted(p.with_name(p.name[: -len(".json")]) for p in paths_dir.glob("rep_*.json"))
    if not stems:
        raise ConfigError(f"no saved ensembles in {paths_dir}")
    loaded = [read_ensemble(s) for s in stems]
    grid = loaded[0].grid
    parts = []
    for reps in _chunks(len(loaded), cfg.chunk):
        group = [loaded[r] for r in reps]
        e = Ensemble(
            grid,
            np.stack([g.values for g in group]),
            np.stack([g.jumps for g in group]),
            group[0].labels,
            group[0].meta,
        )
        parts.append(_evaluate(cfg, e))
    return _reduce(cfg, grid, parts)


def sweep_rate(rows) -> float:
    """Least-squares slope of log(mean_sup_residual) against log(dt)."""
    rows = list(rows)
    if len(rows) < 3:
        raise ValueError(f"need at least 3 refinement levels, got {len(rows)}")
    dt = np.array([float(r["dt"]) for r in rows])
    sup = np.array([float(r["mean_sup_residual"]) for r in rows])
    if np.any(sup <= 0):
        return math.nan
    slope, _ = np.polyfit(np.log(dt), np.log(sup), 1)
    return float(slope)


def check_thresholds(rule: dict, rows: list[dict]) -> dict:
    """Evaluate one identity's acceptance rule against its rows (coarse to fine)."""
    finest = rows[-1]
    outcome = {}
    if "max_rel_residual" in rule:
        outcome["max_rel_residual"] = finest["rel_residual"] <= rule["max_rel_residual"]
    if "max_mean_sup_residual" in rule:
        outcome["max_mean_sup_residual"] = finest["mean_sup_residual"] <= rule["max_mean_sup_residual"]
    if rule.get("nonincreasing"):
        outcome["nonincreasing"] = nonincreasing_within(rows, 2.0)
    return outcome


def nonincreasing_within(rows, n_se: float) -> bool:
    """Each level's mean is at most the previous one plus ``n_se`` combined SEs."""
    for a, b in zip(rows, rows[1:]):
        se = math.hypot(a["std_err"], b["std_err"])
        if b["mean_sup_residual"] > a["mean_sup_residual"] + n_se * se:
            return False
    return True


def _write_summary(path: Path, rows) -> Path:
    import csv

    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([r["identity"]] + [repr(float(r[c])) for c in SUMMARY_COLUMNS[1:]])
    return path


def _level_doc(cfg, res: LevelResult) -> dict:
    row = res.row
    means = {}
    for k, v in res.channels.items():
        finite = v[np.isfinite(v)]
        means[k] = tree_mean(finite) if finite.size else None
    return {
        "n_steps": res.grid.n_steps,
        "dt": res.grid.dt,
        "policy": str(cfg.policy),
        "estimator": cfg.estimator,
        "replications": int(res.sup.size),
        "summary": row,
        "channel_means": means,
    }


@dataclass
class RunOutcome:
    rows: list
    results: dict  # n_steps -> {identity: LevelResult}
    acceptance: dict
    rates: dict
    out: Path

    @property
    def passed(self) -> bool:
        return all(all(v.values()) for v in self.acceptance.values())

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1


def run(cfg: ExperimentConfig, workers: int | None = None, from_paths=None) -> RunOutcome:
    """Run every level, write reports and the summary, evaluate thresholds."""
    out = Path(cfg.out)
    results = {}
    for n_steps in cfg.levels:
        if from_paths is not None:
            level_dir = Path(from_paths)
            if len(cfg.levels) > 1:
                level_dir = level_dir / f"n{n_steps}"
            results[n_steps] = run_level_from_paths(cfg, level_dir)
        else:
            save = out / "paths" / f"n{n_steps}" if cfg.save_paths else None
            if save is not None and len(cfg.levels) == 1:
                save = out / "paths"
            results[n_steps] = run_level(cfg, n_steps, workers, save)

    rows = []
    for ident in cfg.identities:
        for n_steps in cfg.levels:
            res = results[n_steps][ident]
            rows.append(res.row)
            write_report(
                res.first,
                out / "reports" / f"{ident}_n{n_steps}",
                res.grid.times,
                extra={"aggregate": _level_doc(cfg, res)},
            )
    _write_summary(out / "summary.csv", rows)

    rates = {}
    if len(cfg.levels) >= 3:
        for ident in cfg.identities:
            rates[ident] = sweep_rate([r for r in rows if r["identity"] == ident])
        write_json(rates, out / "rates.json")

    acceptance = {}
    for ident, rule in cfg.acceptance.items():
        acceptance[ident] = check_thresholds(rule, [r for r in rows if r["identity"] == ident])
    write_json({"passed": all(all(v.values()) for v in acceptance.values()), "checks": acceptance},
               out / "acceptance.json")
    write_json(cfg.to_dict(), out / "config.json")
    return RunOutcome(rows, results, acceptance, rates, out)
