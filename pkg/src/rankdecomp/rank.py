"""Ranked (reverse order-statistic) processes and rank occupancy counts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid_paths import CadlagPath, Ensemble


@dataclass(frozen=True)
class EpsilonPolicy:
    """Tie threshold for events like ``X^(k)(t-) = X_i(t-)``.

    ``exact`` compares with floating-point equality; ``band`` treats values
    within ``c * sqrt(dt)`` as equal.
    """

    mode: str = "exact"
    c: float = 0.5

    def __post_init__(self):
        if self.mode not in ("exact", "band"):
            raise ValueError(f"unknown policy mode {self.mode!r}")
        if self.mode == "band" and not self.c > 0:
            raise ValueError(f"band coefficient must be > 0, got {self.c}")

    def eps(self, dt: float) -> float:
        return 0.0 if self.mode == "exact" else self.c * np.sqrt(dt)

    @classmethod
    def parse(cls, text: str) -> "EpsilonPolicy":
        """Parse ``exact`` or ``band:<c>``."""
        if text == "exact":
            return cls("exact")
        if text.startswith("band"):
            _, _, c = text.partition(":")
            return cls("band", float(c) if c else 0.5)
        raise ValueError(f"cannot parse policy {text!r}; use 'exact' or 'band:<c>'")

    def __str__(self):
        return "exact" if self.mode == "exact" else f"band:{self.c!r}"

    def scaled(self, factor: float) -> "EpsilonPolicy":
        return self if self.mode == "exact" else EpsilonPolicy("band", self.c * factor)


EXACT = EpsilonPolicy("exact")


@dataclass(frozen=True, eq=False)
class RankedEnsemble:
    """``ranked`` holds X^(1) >= ... >= X^(n) on the path axis.

    ``perm[..., k, j]`` is the original index holding rank ``k`` (0-based) at
    ``t_j``; ``left_perm`` is the same for left limits.
    """

    ranked: Ensemble
    perm: np.ndarray
    left_perm: np.ndarray

    @property
    def paths(self):
        return self.ranked.paths


def _descending(x: np.ndarray):
    # stable sort on -x: descending values, ties keep ascending index
    order = np.argsort(-x, axis=-2, kind="stable")
    return np.take_along_axis(x, order, axis=-2), order


def rank_ensemble(e: Ensemble) -> RankedEnsemble:
    """Sort values and left limits separately; jumps are value minus left limit."""
    values, perm = _descending(e.values)
    if e.is_continuous:
        ranked = Ensemble(e.grid, values, None, [f"rank_{k + 1}" for k in range(e.n)], dict(e.meta))
        return RankedEnsemble(ranked, perm, perm)
    left, left_perm = _descending(e.left)
    # same occupant before and after the step: reuse its stored jump, since
    # v - (v - J) need not reproduce J bit for bit
    jumps = np.where(perm == left_perm, np.take_along_axis(e.jumps, perm, axis=-2), values - left)
    path = CadlagPath(e.grid, values, jumps, left)
    ranked = Ensemble.from_path(path, [f"rank_{k + 1}" for k in range(e.n)], dict(e.meta))
    return RankedEnsemble(ranked, perm, left_perm)


def tie_matrix(x: np.ndarray, ranked: np.ndarray, eps: float) -> np.ndarray:
    """Boolean ``out[..., k, i, j] = |x_i(t_j) - x^(k)(t_j)| <= eps``."""
    n = x.shape[-2]
    out = np.empty(x.shape[:-2] + (n, n, x.shape[-1]), dtype=bool)
    for k in range(n):
        out[..., k, :, :] = np.abs(ranked[..., k : k + 1, :] - x) <= eps
    return out


@dataclass(frozen=True, eq=False)
class RankOccupancy:
    """``N[..., k, j]`` counts indices tied with rank ``k`` at ``t_j-``.

    ``S[..., k, i, j]`` is the membership indicator behind the count.  ``N_val``
    is the same count taken at the grid values, used as the integrand of the
    continuous increment of the following step.
    """

    N: np.ndarray
    S: np.ndarray
    N_val: np.ndarray
    eps: float

    def members(self, k: int, j: int) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.S[..., k, :, j])]


def occupancy(e: Ensemble, policy: EpsilonPolicy = EXACT) -> RankOccupancy:
    eps = policy.eps(e.grid.dt)
    left_ranked, _ = _descending(e.left)
    S = tie_matrix(e.left, left_ranked, eps)
    N = S.sum(axis=-2)
    if e.is_continuous:
        N_val = N
    else:
        val_ranked, _ = _descending(e.values)
        N_val = tie_matrix(e.values, val_ranked, eps).sum(axis=-2)
    return RankOccupancy(N, S, N_val, eps)
