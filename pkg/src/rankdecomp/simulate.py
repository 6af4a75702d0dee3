"""Seeded generators for path ensembles and deterministic fixtures."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .grid_paths import CadlagPath, Ensemble, TimeGrid

KINDS = ("brownian", "affine_diffusion", "jump_diffusion", "lattice_walk", "fixture")
FIXTURES = ("sawtooth_cross", "triple_point", "pinned_zero", "separated_cross", "jump_from_zero")


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class JumpLaw:
    kind: str = "fixed"
    size: float = 1.0
    mean: float = 0.0
    sd: float = 1.0

    def __post_init__(self):
        if self.kind not in ("fixed", "normal"):
            raise SpecError(f"unknown jump law {self.kind!r}")
        if self.kind == "normal" and self.sd < 0:
            raise SpecError("jump sd must be nonnegative")


@dataclass(frozen=True)
class ModelSpec:
    """Model parameters.  Unused fields are ignored by the chosen kind.

    Drift is ``a + b*x`` and volatility ``c + d*x``; ``lam`` is the jump
    intensity per unit time; ``h`` the lattice step.
    """

    kind: str = "brownian"
    x0: float | tuple = 0.0
    a: float = 0.0
    b: float = 0.0
    c: float = 1.0
    d: float = 0.0
    rho: float = 0.0
    lam: float = 0.0
    jump_law: JumpLaw = field(default_factory=JumpLaw)
    h: float = 1.0
    fixture: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if not -1.0 <= self.rho <= 1.0:
            raise SpecError(f"rho must lie in [-1, 1], got {self.rho}")
        if self.lam < 0:
            raise SpecError(f"jump intensity must be >= 0, got {self.lam}")
        if self.h <= 0:
            raise SpecError(f"lattice step must be > 0, got {self.h}")
        if self.kind == "fixture" and self.fixture not in FIXTURES:
            raise SpecError(f"unknown fixture {self.fixture!r}; expected one of {FIXTURES}")
        if isinstance(self.jump_law, dict):
            object.__setattr__(self, "jump_law", JumpLaw(**self.jump_law))
        if isinstance(self.x0, list):
            object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))

    def initial_values(self, n_paths: int) -> np.ndarray:
        x0 = np.asarray(self.x0, dtype=np.float64)
        if x0.ndim == 0:
            return np.full(n_paths, float(x0))
        if x0.shape != (n_paths,):
            raise SpecError(f"x0 has {x0.size} entries for {n_paths} paths")
        return x0

    def to_dict(self) -> dict:
        out = asdict(self)
        if isinstance(self.x0, tuple):
            out["x0"] = list(self.x0)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise SpecError(f"unknown model keys: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True)
class SeedPolicy:
    """Independent RNG streams keyed by (replication, path)."""

    master_seed: int = 0

    def stream(self, path: int, replication: int = 0) -> np.random.Generator:
        # key slot 0 is reserved for the common factor of a replication
        return self._gen(replication, path + 1)

    def common(self, replication: int = 0) -> np.random.Generator:
        return self._gen(replication, 0)

    def jump_stream(self, path: int, replication: int = 0) -> np.random.Generator:
        return self._gen(replication, path + 1, 1)

    def _gen(self, replication: int, slot: int, *sub: int) -> np.random.Generator:
        key = (int(replication), int(slot)) + tuple(sub)
        ss = np.random.SeedSequence(int(self.master_seed) % 2**64, spawn_key=key)
        return np.random.Generator(np.random.PCG64(ss))


def _normals(spec: ModelSpec, n_paths: int, m: int, seeds: SeedPolicy, rep: int) -> np.ndarray:
    xi = np.empty((n_paths, m))
    for i in range(n_paths):
        xi[i] = seeds.stream(i, rep).standard_normal(m)
    if spec.rho == 0.0:
        return xi
    w = seeds.common(rep).standard_normal(m)
    if spec.rho > 0:
        return np.sqrt(spec.rho) * w + np.sqrt(1.0 - spec.rho) * xi
    # negative rho: alternate the sign of the common factor's loading
    sign = np.where(np.arange(n_paths) % 2 == 0, 1.0, -1.0)[:, None]
    return sign * np.sqrt(-spec.rho) * w + np.sqrt(1.0 + spec.rho) * xi


def _jumps(spec: ModelSpec, n_paths: int, m: int, dt: float, seeds: SeedPolicy, rep: int) -> np.ndarray:
    out = np.zeros((n_paths, m))
    if spec.lam == 0.0:
        return out
    law = spec.jump_law
    for i in range(n_paths):
        # separate stream: diffusion draws do not depend on the jump settings
        g = seeds.jump_stream(i, rep)
        counts = g.poisson(spec.lam * dt, m)
        if law.kind == "fixed":
            out[i] = counts * law.size
        else:
            z = g.standard_normal(m)
            out[i] = counts * law.mean + np.sqrt(counts) * law.sd * z
    return out


def _one_replication(spec: ModelSpec, grid: TimeGrid, n_paths: int, seeds: SeedPolicy, rep: int):
    m, dt = grid.n_steps, grid.dt
    sq = np.sqrt(dt)
    values = np.empty((n_paths, m + 1))
    values[:, 0] = spec.initial_values(n_paths)
    jumps = np.zeros_like(values)

    if spec.kind == "lattice_walk":
        z = _normals(spec, n_paths, m, seeds, rep)
        k = np.cumsum(np.where(z > 0, 1.0, -1.0), axis=1)
        k0 = np.rint(values[:, 0] / spec.h)
        if np.array_equal(k0 * spec.h, values[:, 0]):
            # on-lattice start: integer bookkeeping keeps values exact multiples of h
            values[:, 1:] = (k0[:, None] + k) * spec.h
        else:
            values[:, 1:] = values[:, :1] + k * spec.h
        return values, jumps

    z = _normals(spec, n_paths, m, seeds, rep)
    if spec.kind == "brownian":
        values[:, 1:] = values[:, :1] + np.cumsum(spec.c * sq * z, axis=1)
        return values, jumps

    J = _jumps(spec, n_paths, m, dt, seeds, rep) if spec.kind == "jump_diffusion" else None
    v = values[:, 0].copy()
    for j in range(m):
        v = v + (spec.a + spec.b * v) * dt + (spec.c + spec.d * v) * sq * z[:, j]
        if J is not None:
            v = v + J[:, j]
            jumps[:, j + 1] = J[:, j]
        values[:, j + 1] = v
    return values, jumps


def simulate(
    spec: ModelSpec,
    grid: TimeGrid,
    n_paths: int,
    seeds: SeedPolicy,
    replications: Iterable[int] | None = None,
) -> Ensemble:
    """Generate ``n_paths`` paths on ``grid``.

    With ``replications`` (an iterable of replication indices) the result is a
    stacked ensemble of shape ``(R, n_paths, n_steps + 1)``; each replication
    depends only on its own index, so any chunking gives identical numbers.
    """
    if spec.kind == "fixture":
        e = fixture(spec.fixture, grid)
        if replications is None:
            return e
        reps = list(replications)
        return Ensemble(
            grid,
            np.broadcast_to(e.values, (len(reps),) + e.values.shape).copy(),
            np.broadcast_to(e.jumps, (len(reps),) + e.jumps.shape).copy(),
            e.labels,
            e.meta,
        )
    if n_paths < 1:
        raise SpecError("n_paths must be >= 1")
    meta = {"model": spec.kind, "params": spec.to_dict(), "seed": int(seeds.master_seed)}
    labels = [f"X{i}" for i in range(n_paths)]
    if replications is None:
        values, jumps = _one_replication(spec, grid, n_paths, seeds, 0)
        return Ensemble(grid, values, jumps, labels, meta)
    parts = [_one_replication(spec, grid, n_paths, seeds, r) for r in replications]
    if not parts:
        raise SpecError("no replications requested")
    return Ensemble(
        grid,
        np.stack([p[0] for p in parts]),
        np.stack([p[1] for p in parts]),
        labels,
        meta,
    )


def _need_divisible(grid: TimeGrid, q: int, name: str):
    if grid.n_steps % q:
        raise SpecError(f"fixture {name} needs n_steps divisible by {q}, got {grid.n_steps}")


def _piecewise_linear(grid: TimeGrid, knots: Sequence[tuple[float, float]]) -> np.ndarray:
    # knots in units of T; grid positions computed from integer indices
    tau = np.arange(grid.n_steps + 1) / grid.n_steps
    xs, ys = zip(*knots)
    return np.interp(tau, xs, ys)


def fixture(name: str, grid: TimeGrid) -> Ensemble:
    """Deterministic ensembles whose crossings and ties sit on grid points.

    ``sawtooth_cross``  one path 1 -> -1 -> 1, zero at T/4 and 3T/4.
    ``triple_point``    t - 1/2, 1/2 - t and (t - 1/2)/2 (time in units of T),
                        all three zero at T/2.
    ``pinned_zero``     one path identically 0.
    ``separated_cross`` three paths; the middle one comes down to 0, sits
                        there on [T/4, 3T/4] and continues to -1/2; the outer
                        ones are constant at +-2.
    ``jump_from_zero``  0 on [0, T/2), jumps to 1 at T/2.
    """
    m = grid.n_steps
    meta = {"model": "fixture", "params": {"fixture": name}, "seed": None}
    if name == "sawtooth_cross":
        _need_divisible(grid, 4, name)
        v = np.abs(np.arange(m + 1) - m // 2) * (4.0 / m) - 1.0
        return Ensemble(grid, v[None, :], labels=["X0"], meta=meta)
    if name == "triple_point":
        _need_divisible(grid, 2, name)
        s = (np.arange(m + 1) - m // 2) / m
        v = np.stack([s, -s, 0.5 * s])
        return Ensemble(grid, v, labels=["X0", "X1", "X2"], meta=meta)
    if name == "pinned_zero":
        return Ensemble(grid, np.zeros((1, m + 1)), labels=["X0"], meta=meta)
    if name == "separated_cross":
        _need_divisible(grid, 4, name)
        mid = _piecewise_linear(grid, [(0.0, 0.5), (0.25, 0.0), (0.75, 0.0), (1.0, -0.5)])
        v = np.stack([np.full(m + 1, 2.0), mid, np.full(m + 1, -2.0)])
        return Ensemble(grid, v, labels=["X0", "X1", "X2"], meta=meta)
    if name == "jump_from_zero":
        _need_divisible(grid, 2, name)
        v = np.zeros(m + 1)
        v[m // 2:] = 1.0
        J = np.zeros(m + 1)
        J[m // 2] = 1.0
        return Ensemble(grid, v[None, :], J[None, :], labels=["X0"], meta=meta)
    raise SpecError(f"unknown fixture {name!r}; expected one of {FIXTURES}")
