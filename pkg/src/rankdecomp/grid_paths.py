"""Discrete cadlag paths on a uniform time grid.

Jumps live on grid points and are stored explicitly, so the left limit
``X(t_j-) = values[j] - jumps[j]`` is exact.  Arrays carry time on the last
axis; any leading axes are treated as a batch (paths, replications, ...).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class GridMismatchError(ValueError):
    """Raised when paths that must share a grid do not."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition ``0 = t_0 < ... < t_n = T``."""

    T: float
    n_steps: int

    def __post_init__(self):
        if not (isinstance(self.n_steps, (int, np.integer)) and self.n_steps >= 1):
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps!r}")
        if not (np.isfinite(self.T) and self.T > 0):
            raise ValueError(f"T must be positive, got {self.T!r}")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1) * self.dt
        t[-1] = self.T
        return t

    def __len__(self):
        return self.n_steps + 1


def make_grid(T: float, n_steps: int) -> TimeGrid:
    return TimeGrid(T, n_steps)


@dataclass(frozen=True, eq=False)
class CadlagPath:
    """Post-jump values and jump sizes at the grid points.

    ``values`` and ``jumps`` have shape ``(..., n_steps + 1)``; ``jumps[..., 0]``
    must be zero.  Paths derived by pointwise maps or ranking keep their
    left limits as computed (``left``) so that ties at left limits stay exact;
    otherwise the left limit is ``values - jumps``.
    """

    grid: TimeGrid
    values: np.ndarray
    jumps: np.ndarray = None
    left: np.ndarray = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 0 or values.shape[-1] != len(self.grid):
            raise GridMismatchError(
                f"values have shape {values.shape}, grid has {len(self.grid)} points"
            )
        jumps, left = self.jumps, self.left
        if left is not None:
            left = np.array(left, dtype=np.float64)
            if left.shape != values.shape:
                raise ValueError(f"left shape {left.shape} != values shape {values.shape}")
            left[..., 0] = values[..., 0]
            if jumps is None:
                jumps = values - left
        if jumps is None:
            jumps = np.zeros_like(values)
        jumps = np.asarray(jumps, dtype=np.float64)
        if jumps.shape != values.shape:
            raise ValueError(f"jumps shape {jumps.shape} != values shape {values.shape}")
        if np.any(jumps[..., 0] != 0):
            raise ValueError("jumps[0] must be 0")
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(jumps))):
            raise ValueError("path entries must be finite")
        if left is None:
            if np.any(jumps):
                left = values - jumps
                left[..., 0] = values[..., 0]
            else:
                left = values
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "left", left)

    @property
    def shape(self):
        return self.values.shape[:-1]

    @property
    def cont_increments(self) -> np.ndarray:
        """Continuous increments ``left[j] - values[j-1]`` for j = 1..n_steps."""
        return self.left[..., 1:] - self.values[..., :-1]

    @property
    def has_jumps(self) -> bool:
        return bool(np.any(self.jumps != 0))

    def __getitem__(self, idx) -> "CadlagPath":
        if not isinstance(idx, tuple):
            idx = (idx,)
        if Ellipsis not in idx:
            idx = idx + (Ellipsis, slice(None))
        return CadlagPath(self.grid, self.values[idx], self.jumps[idx], self.left[idx])

    def scaled(self, c: float) -> "CadlagPath":
        return CadlagPath(self.grid, c * self.values, c * self.jumps, c * self.left)


def left_limit(path: CadlagPath, j: int):
    """``X(t_j-)``; equals ``values[0]`` at j = 0."""
    n = path.grid.n_steps
    if not 0 <= j <= n:
        raise IndexError(f"grid index {j} out of range 0..{n}")
    return path.left[..., j]


def _check_same_grid(*paths: CadlagPath) -> TimeGrid:
    grid = paths[0].grid
    for p in paths[1:]:
        if p.grid != grid:
            raise GridMismatchError(f"grid {p.grid} differs from {grid}")
    return grid


def ito_increments(H, X: CadlagPath, H_left=None):
    """Per-step pieces of the predictable sum, as ``(continuous, jump)``.

    ``H`` is sampled at the grid values and multiplies the continuous increment
    of the following step; ``H_left`` is sampled at the left limits and
    multiplies the jump at the same index.  Both outputs have shape
    ``(..., n_steps)`` and index steps 1..n_steps.
    """
    H = np.asarray(H, dtype=np.float64)
    if H.shape[-1] != len(X.grid):
        raise GridMismatchError("integrand and integrator are on different grids")
    H_left = H if H_left is None else np.asarray(H_left, dtype=np.float64)
    if H_left is H:
        # plain sampled integrand: the pre-jump state is the previous grid value
        h_jump = H[..., :-1]
    else:
        if H_left.shape[-1] != len(X.grid):
            raise GridMismatchError("left-limit integrand is on a different grid")
        h_jump = H_left[..., 1:]
    return H[..., :-1] * X.cont_increments, h_jump * X.jumps[..., 1:]


def cumulate(*increments) -> np.ndarray:
    """Cumulative sum of per-step increments with a leading zero.

    Several increment arrays are added left to right before accumulating.
    """
    step = increments[0]
    for inc in increments[1:]:
        step = step + inc
    out = np.zeros(step.shape[:-1] + (step.shape[-1] + 1,))
    np.cumsum(step, axis=-1, out=out[..., 1:])
    return out


def ito_sum(H, X: CadlagPath, H_left=None) -> np.ndarray:
    """Cumulative ``int H_{s-} dX_s`` on the grid, starting at 0."""
    return cumulate(*ito_increments(H, X, H_left))


def quadratic_variation(X: CadlagPath) -> np.ndarray:
    """Cumulative sum of squared grid increments (jumps included)."""
    d = np.diff(X.values, axis=-1)
    return cumulate(d * d)


def _lattice_functions(tag: str, c: float | None) -> Callable:
    if tag == "max":
        return lambda *xs: _fold(np.maximum, xs)
    if tag == "min":
        return lambda *xs: _fold(np.minimum, xs)
    if tag == "sum":
        return lambda *xs: _fold(np.add, xs)
    if tag == "pos_part":
        return lambda x: np.maximum(x, 0.0)
    if tag == "neg_part":
        return lambda x: np.maximum(-x, 0.0)
    if tag == "abs":
        return np.abs
    if tag == "diff":
        return lambda x, y: x - y
    if tag == "scale":
        if c is None:
            raise ValueError("scale needs a constant")
        return lambda x: c * x
    raise ValueError(f"unknown pointwise operation {tag!r}")


def _fold(op, xs):
    out = xs[0]
    for x in xs[1:]:
        out = op(out, x)
    return out


_ARITY = {"pos_part": 1, "neg_part": 1, "abs": 1, "scale": 1, "diff": 2}


def pointwise(tag: str, *inputs: CadlagPath, c: float | None = None) -> CadlagPath:
    """Apply a lattice/linear map to values and left limits separately.

    The jump of the output is recomputed as value minus left limit, which is
    the only rule consistent with a nonlinear map.
    """
    f = _lattice_functions(tag, c)
    if not inputs:
        raise ValueError("pointwise needs at least one path")
    if tag in _ARITY and len(inputs) != _ARITY[tag]:
        raise ValueError(f"{tag} takes {_ARITY[tag]} path(s), got {len(inputs)}")
    grid = _check_same_grid(*inputs)
    values = f(*(p.values for p in inputs))
    left = f(*(p.left for p in inputs))
    if all(p.left is p.values for p in inputs):
        # continuous inputs give continuous outputs
        return CadlagPath(grid, values)
    return CadlagPath(grid, values, left=left)


@dataclass(frozen=True, eq=False)
class Ensemble:
    """``n`` paths on a shared grid plus generation metadata.

    ``values``/``jumps`` have shape ``(n, n_steps + 1)``, or
    ``(R, n, n_steps + 1)`` for a stack of ``R`` independent replications
    (used by the Monte Carlo harness).
    """

    grid: TimeGrid
    values: np.ndarray
    jumps: np.ndarray = None
    labels: tuple = None
    meta: dict = field(default_factory=dict)
    left: np.ndarray = None

    def __post_init__(self):
        path = CadlagPath(self.grid, self.values, self.jumps, self.left)
        if path.values.ndim < 2:
            raise ValueError("ensemble values need a path axis")
        n = path.values.shape[-2]
        if n < 1:
            raise ValueError("ensemble needs at least one path")
        if self.labels is None:
            labels = tuple(f"X{i}" for i in range(n))
        else:
            labels = tuple(str(x) for x in self.labels)
        if len(labels) != n:
            raise ValueError(f"{len(labels)} labels for {n} paths")
        if len(set(labels)) != n:
            raise ValueError("labels must be unique")
        object.__setattr__(self, "values", path.values)
        object.__setattr__(self, "jumps", path.jumps)
        object.__setattr__(self, "left", path.left)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_path", path)

    @property
    def n(self) -> int:
        return self.values.shape[-2]

    @property
    def batch_shape(self):
        return self.values.shape[:-2]

    @property
    def stacked(self) -> CadlagPath:
        """All paths as one batched CadlagPath (path axis second to last)."""
        return self._path

    @property
    def paths(self) -> list[CadlagPath]:
        return [self.path(i) for i in range(self.n)]

    def path(self, i: int) -> CadlagPath:
        return self._path[..., i, :]

    @property
    def is_continuous(self) -> bool:
        return not self._path.has_jumps

    def map(self, tag: str, c: float | None = None) -> "Ensemble":
        """Apply a one-argument pointwise operation to every path."""
        return Ensemble.from_path(pointwise(tag, self._path, c=c), self.labels, dict(self.meta))

    def replication(self, r) -> "Ensemble":
        return Ensemble.from_path(self._path[r], self.labels, dict(self.meta))

    @classmethod
    def from_path(cls, path: CadlagPath, labels=None, meta=None) -> "Ensemble":
        return cls(path.grid, path.values, path.jumps, labels, meta or {}, path.left)

    @classmethod
    def from_paths(cls, paths, labels=None, meta=None) -> "Ensemble":
        grid = _check_same_grid(*paths)
        return cls(
            grid,
            np.stack([p.values for p in paths], axis=-2),
            np.stack([p.jumps for p in paths], axis=-2),
            labels,
            meta or {},
            np.stack([p.left for p in paths], axis=-2),
        )
