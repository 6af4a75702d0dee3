"""Local-time estimators at level 0 on the grid.

Every estimator returns a :class:`LocalTimePath` carrying both the local time
``L`` and the jump-adjusted half local time
``scriptL = L/2 + sum of jumps taken from a zero left limit``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid_paths import CadlagPath, cumulate, pointwise
from .rank import EXACT, EpsilonPolicy


class PreconditionError(ValueError):
    """Input violates an estimator's precondition (sign, lattice, ...)."""


def sgn(x):
    """Sign with ``sgn(0) = -1``."""
    return np.where(x > 0, 1.0, -1.0)


@dataclass(frozen=True, eq=False)
class LocalTimePath:
    """Cumulative local-time estimates on the grid.

    ``half_steps`` and ``jump_steps`` are the per-step pieces of ``scriptL``
    (continuous half local time and jump correction, steps 1..n_steps); the
    decomposition checkers weight them separately.
    """

    grid: object
    L: np.ndarray
    scriptL: np.ndarray
    estimator: str
    policy: EpsilonPolicy
    half_steps: np.ndarray
    jump_steps: np.ndarray

    @property
    def terminal(self):
        return self.L[..., -1]


def _jump_correction(X: CadlagPath, eps: float, absolute: bool = True) -> np.ndarray:
    left = X.left[..., 1:]
    near = np.abs(left) <= eps if absolute else left <= eps
    return np.where(near, X.jumps[..., 1:], 0.0)


def _from_L_steps(X, dL, estimator, policy, absolute=True) -> LocalTimePath:
    half = 0.5 * dL
    jumps = _jump_correction(X, policy.eps(X.grid.dt), absolute)
    return LocalTimePath(X.grid, cumulate(dL), cumulate(half, jumps), estimator, policy, half, jumps)


def tanaka_local_time(X: CadlagPath, policy: EpsilonPolicy = EXACT) -> LocalTimePath:
    """Local time read off the discrete Tanaka identity for ``|X|``.

    Per step, ``dL = |X(t_j-)| - |X(t_{j-1})| - sgn(X(t_{j-1})) * dC_j``; the
    jump terms cancel, so ``L`` has no jumps.  ``policy`` only affects the
    jump correction of ``scriptL``.
    """
    v_prev = X.values[..., :-1]
    dL = np.abs(X.left[..., 1:]) - np.abs(v_prev) - sgn(v_prev) * X.cont_increments
    return _from_L_steps(X, dL, "tanaka", policy)


def _check_nonnegative(Z: CadlagPath, eps: float):
    for name, arr in (("value", Z.values), ("left limit", Z.left)):
        bad = arr < -eps
        if np.any(bad):
            idx = np.unravel_index(np.argmax(bad), arr.shape)
            raise PreconditionError(
                f"path is negative beyond tolerance {eps}: {name} {arr[idx]!r} at index {tuple(int(i) for i in idx)}"
            )


def indicator_local_time(Z: CadlagPath, policy: EpsilonPolicy = EXACT) -> LocalTimePath:
    """``int 1{Z(s-) = 0} dZ(s)`` for a nonnegative path.

    The indicator uses the previous grid value for the continuous increment
    and the left limit for the jump, with ``Z <= eps`` standing in for
    ``Z = 0``.  ``L`` is reported as twice the continuous part.
    """
    eps = policy.eps(Z.grid.dt)
    _check_nonnegative(Z, eps)
    half = np.where(Z.values[..., :-1] <= eps, Z.cont_increments, 0.0)
    jumps = _jump_correction(Z, eps, absolute=False)
    return LocalTimePath(Z.grid, cumulate(2.0 * half), cumulate(half, jumps), "indicator", policy, half, jumps)


def occupation_local_time(X: CadlagPath, eps: float) -> LocalTimePath:
    """Occupation-density estimate ``(1/2eps) * sum 1{|X(t_{i-1})| <= eps} dC_i^2``.

    Jumps are left out of the quadratic term.  ``scriptL`` adds the exact-zero
    jump correction.
    """
    if not eps > 0:
        raise ValueError(f"occupation window must be > 0, got {eps}")
    dC = X.cont_increments
    dL = np.where(np.abs(X.values[..., :-1]) <= eps, dC * dC, 0.0) / (2.0 * eps)
    return _from_L_steps(X, dL, "occupation", EXACT)


def _lattice_step(X: CadlagPath, h: float | None) -> float:
    steps = np.abs(np.diff(X.values, axis=-1))
    if h is None:
        nz = steps[steps > 0]
        if nz.size == 0:
            raise PreconditionError("cannot infer lattice step from a constant path; pass h")
        h = float(nz.flat[0])
    if not h > 0:
        raise PreconditionError(f"lattice step must be > 0, got {h}")
    tol = 1e-9 * h
    k = X.values / h
    if np.any(np.abs(k - np.rint(k)) * h > tol):
        raise PreconditionError(f"values are not multiples of h={h}")
    if np.any((np.abs(steps - h) > tol) & (steps > tol)):
        raise PreconditionError(f"steps are not in {{0, h}} for h={h}")
    if X.has_jumps:
        raise PreconditionError("lattice walks carry no jumps")
    return h


def crossing_local_time(X: CadlagPath, h: float | None = None) -> LocalTimePath:
    """Visit-count local time of a lattice walk: ``h * #{i <= j : X(t_{i-1}) = 0}``."""
    h = _lattice_step(X, h)
    at_zero = np.abs(X.values[..., :-1]) <= 1e-9 * h
    dL = np.where(at_zero, h, 0.0)
    return _from_L_steps(X, dL, "crossing", EXACT)


def difference_local_time(
    X: CadlagPath, Y: CadlagPath, which: str = "plain", policy: EpsilonPolicy = EXACT
) -> LocalTimePath:
    """Local time at 0 of ``X - Y`` (``plain``) or of its positive/negative part.

    ``plain`` goes through the Tanaka estimator; ``pos`` and ``neg`` are
    nonnegative and go through the indicator estimator.
    """
    D = pointwise("diff", X, Y)
    if which == "plain":
        return tanaka_local_time(D, policy)
    if which == "pos":
        return indicator_local_time(pointwise("pos_part", D), policy)
    if which == "neg":
        return indicator_local_time(pointwise("neg_part", D), policy)
    raise ValueError(f"which must be plain, pos or neg, got {which!r}")
