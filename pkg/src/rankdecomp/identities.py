"""Residual checks for the rank decomposition and local-time identities.

Each checker evaluates both sides of an identity in integrated form on the
grid and returns a :class:`ResidualReport` with ``residual = lhs - rhs``.
``rhs`` is the left-to-right sum of the entries of ``terms``.  All checkers
accept stacked ensembles (leading replication axis); scalar summaries then
come back per replication.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid_paths import CadlagPath, Ensemble, cumulate, ito_increments, ito_sum, pointwise
from .localtime import (
    LocalTimePath,
    difference_local_time,
    indicator_local_time,
    occupation_local_time,
    tanaka_local_time,
)
from .rank import EXACT, EpsilonPolicy, rank_ensemble


class UnsupportedInputError(ValueError):
    """The identity is not stated for this kind of input (e.g. jumps present)."""


@dataclass(eq=False)
class ResidualReport:
    identity: str
    lhs: np.ndarray
    rhs: np.ndarray
    terms: dict
    channels: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def residual(self) -> np.ndarray:
        return self.lhs - self.rhs

    @property
    def sup_residual(self):
        return np.max(np.abs(self.residual), axis=-1)

    @property
    def terminal_residual(self):
        return np.abs(self.residual[..., -1])

    @property
    def normalizer(self):
        return np.mean(np.abs(self.lhs), axis=-1)

    def replication(self, r) -> "ResidualReport":
        pick = lambda a: a[r] if isinstance(a, np.ndarray) and a.ndim >= 1 else a
        return ResidualReport(
            self.identity,
            self.lhs[r],
            self.rhs[r],
            {k: v[r] for k, v in self.terms.items()},
            {k: pick(v) for k, v in self.channels.items()},
            dict(self.meta),
        )


def _fold(arrays):
    arrays = list(arrays)
    out = arrays[0]
    for a in arrays[1:]:
        out = out + a
    return out


def _canonical_sum(arrays):
    # sort across the summands at each point so equal multisets give equal sums
    return _fold(np.sort(np.stack(arrays), axis=0))


def _report(identity, lhs, terms, channels=None, **meta) -> ResidualReport:
    return ResidualReport(identity, lhs, _fold(terms.values()), terms, channels or {}, meta)


def _check_rank(k: int, n: int):
    if not 1 <= k <= n:
        raise ValueError(f"rank k={k} out of range 1..{n}")


def _require_continuous(e: Ensemble, what: str):
    if not e.is_continuous:
        raise UnsupportedInputError(f"{what} is stated for continuous paths; ensemble has jumps")


def _local_time(X: CadlagPath, estimator: str) -> LocalTimePath:
    if estimator == "tanaka":
        return tanaka_local_time(X)
    if estimator == "occupation":
        return occupation_local_time(X, np.sqrt(X.grid.dt))
    raise ValueError(f"unknown estimator {estimator!r}")


def _tie_indicators(paths, ref: CadlagPath, eps: float):
    """Per path: ``|X_i - ref| <= eps`` at grid values and at left limits."""
    at_val = [(np.abs(p.values - ref.values) <= eps).astype(np.float64) for p in paths]
    at_left = [(np.abs(p.left - ref.left) <= eps).astype(np.float64) for p in paths]
    return at_val, at_left


def _decomposition(identity, paths, Xk, lt_terms, policy):
    """Shared engine for both forms of the rank decomposition.

    ``lt_terms`` is a list of ``(name, sign, LocalTimePath)``.
    """
    eps = policy.eps(Xk.grid.dt)
    H, H_left = _tie_indicators(paths, Xk, eps)
    N_val, N_left = _fold(H), _fold(H_left)

    lhs = cumulate(*ito_increments(N_val, Xk, N_left))
    terms = {}
    w_c, w_j = 1.0 / N_val[..., :-1], 1.0 / N_left[..., 1:]
    div_steps = []
    for i, (p, h, hl) in enumerate(zip(paths, H, H_left)):
        inc_c, inc_j = ito_increments(h, p, hl)
        terms[f"ito_{i + 1}"] = cumulate(inc_c, inc_j)
        div_steps.append(inc_c * w_c + inc_j * w_j)
    for name, sign, lt in lt_terms:
        terms[name] = sign * lt.scriptL
        div_steps.append(sign * (lt.half_steps * w_c + lt.jump_steps * w_j))

    # divided form: reconstruct X^(k) from the 1/N-weighted right-hand side
    recon = Xk.values[..., :1] + cumulate(_fold(div_steps))
    recon_err = Xk.values - recon
    channels = {
        "N_val": N_val,
        "N_left": N_left,
        "reconstruction": recon,
        "divided_sup_residual": np.max(np.abs(recon_err), axis=-1),
        "sup_abs_rank": np.max(np.abs(Xk.values), axis=-1),
    }
    return _report(identity, lhs, terms, channels, policy=str(policy))


def check_decomposition_ranked(e: Ensemble, k: int, policy: EpsilonPolicy = EXACT) -> ResidualReport:
    """Rank decomposition written with ranked processes and their gaps.

    ``N dX^(k) = sum_i 1{X^(k)- = X^(i)-} dX^(i) + sum_{i>k} dcalL(X^(k) - X^(i))
    - sum_{i<k} dcalL(X^(i) - X^(k))``; the gap terms use the Tanaka estimator.
    """
    _check_rank(k, e.n)
    ranked = rank_ensemble(e).ranked.paths
    Xk = ranked[k - 1]
    lt = []
    for i, p in enumerate(ranked, start=1):
        if i > k:
            lt.append((f"gap_below_{i}", 1.0, difference_local_time(Xk, p, "plain", policy)))
        elif i < k:
            lt.append((f"gap_above_{i}", -1.0, difference_local_time(p, Xk, "plain", policy)))
    rep = _decomposition("thm22_ranked", ranked, Xk, lt, policy)
    rep.meta["k"] = k
    return rep


def check_decomposition_original(e: Ensemble, k: int, policy: EpsilonPolicy = EXACT) -> ResidualReport:
    """Rank decomposition written with the original processes.

    Gap terms are ``calL((X^(k) - X_i)^+)`` minus ``calL((X^(k) - X_i)^-)``,
    both through the indicator estimator.
    """
    _check_rank(k, e.n)
    Xk = rank_ensemble(e).ranked.path(k - 1)
    paths = e.paths
    lt = []
    for i, p in enumerate(paths, start=1):
        lt.append((f"pos_{i}", 1.0, difference_local_time(Xk, p, "pos", policy)))
        lt.append((f"neg_{i}", -1.0, difference_local_time(Xk, p, "neg", policy)))
    rep = _decomposition("thm22_original", paths, Xk, lt, policy)
    rep.meta["k"] = k
    return rep


def _zero_indicator_sum(paths, eps: float):
    out = {}
    for i, p in enumerate(paths, start=1):
        h = (np.abs(p.values) <= eps).astype(np.float64)
        hl = (np.abs(p.left) <= eps).astype(np.float64)
        out[i] = ito_sum(h, pointwise("pos_part", p), hl)
    return out


def check_indicator_sum(e: Ensemble, policy: EpsilonPolicy = EXACT) -> ResidualReport:
    """``sum_i 1{X^(i)- = 0} d(X^(i))^+`` against the same sum over originals."""
    eps = policy.eps(e.grid.dt)
    ranked = _zero_indicator_sum(rank_ensemble(e).ranked.paths, eps)
    original = _zero_indicator_sum(e.paths, eps)
    lhs = _fold(ranked.values())
    terms = {f"orig_{i}": v for i, v in original.items()}
    return _report("thm31_indicator", lhs, terms, policy=str(policy))


def check_local_time_sum(e: Ensemble, estimator: str = "tanaka") -> ResidualReport:
    """Sum of local times of ranked processes against that of the originals.

    Both sums are taken in sorted order at each grid point, so an ensemble
    whose ranks never change gives a residual of exactly zero.
    """
    ranked = [_local_time(p, estimator).L for p in rank_ensemble(e).ranked.paths]
    original = [_local_time(p, estimator).L for p in e.paths]
    lhs = _canonical_sum(ranked)
    terms = {f"L_{i + 1}": v for i, v in enumerate(original)}
    rep = ResidualReport("thm32_ltsum", lhs, _canonical_sum(original), terms, {}, {"estimator": estimator})
    return rep


def check_yan_ouknine(X: CadlagPath, Y: CadlagPath, estimator: str = "tanaka") -> ResidualReport:
    """``L(X v Y) + L(X ^ Y)`` against ``L(X) + L(Y)``."""
    hi = _local_time(pointwise("max", X, Y), estimator).L
    lo = _local_time(pointwise("min", X, Y), estimator).L
    terms = {"L_X": _local_time(X, estimator).L, "L_Y": _local_time(Y, estimator).L}
    return _report("cor33_yan_ouknine", hi + lo, terms, {"L_max": hi, "L_min": lo}, estimator=estimator)


def check_yan_ouknine_ensemble(e: Ensemble, estimator: str = "tanaka") -> ResidualReport:
    """Yan-Ouknine check on the first two paths (the path with itself if n = 1)."""
    X = e.path(0)
    Y = e.path(1) if e.n > 1 else X
    return check_yan_ouknine(X, Y, estimator)


def _gap_indicator_sum(gaps, eps):
    total = None
    for g in gaps:
        h = (np.abs(g.values) <= eps).astype(np.float64)
        s = ito_sum(h, pointwise("pos_part", g))
        total = s if total is None else total + s
    return total


def check_corollary_ranked_diff(e: Ensemble, k: int, policy: EpsilonPolicy = EXACT) -> ResidualReport:
    """``sum_i 1{X^(k) = X^(i)} d(X^(k) - X^(i))^+`` against the same with ``X_i``."""
    _require_continuous(e, "the ranked-difference corollary")
    _check_rank(k, e.n)
    eps = policy.eps(e.grid.dt)
    ranked = rank_ensemble(e).ranked.paths
    Xk = ranked[k - 1]
    lhs = _gap_indicator_sum([pointwise("diff", Xk, p) for p in ranked], eps)
    rhs = _gap_indicator_sum([pointwise("diff", Xk, p) for p in e.paths], eps)
    return _report("cor31_ranked_diff", lhs, {"original_gaps": rhs}, policy=str(policy), k=k)


def check_max_identity(e: Ensemble, policy: EpsilonPolicy = EXACT) -> ResidualReport:
    """``sum_i 1{X^(1) = X^(i)} dX^(i)`` against ``sum_i 1{X^(1) = X_i} dX_i``."""
    _require_continuous(e, "the maximum-process identity")
    eps = policy.eps(e.grid.dt)
    ranked = rank_ensemble(e).ranked.paths
    top = ranked[0]

    def side(paths):
        return {
            i: ito_sum((np.abs(p.values - top.values) <= eps).astype(np.float64), p)
            for i, p in enumerate(paths, start=1)
        }

    lhs = _fold(side(ranked).values())
    terms = {f"orig_{i}": v for i, v in side(e.paths).items()}
    return _report("rem21_max", lhs, terms, policy=str(policy))


def check_norm_bounds(e: Ensemble, estimator: str = "tanaka") -> ResidualReport:
    """Local times of the max and sum norms of the vector ``(X_1, ..., X_n)``.

    ``residual = L(sum|X_i|) - L(max|X_i|)``.  Channels carry the terminal
    slacks of ``L(max) <= L(sum) <= n L(max)``, the ratio ``L(sum)/L(max)``
    and, for nonnegative continuous ensembles, the slack of
    ``L(sum X_i) <= n sum L(X_i)`` (NaN otherwise).
    """
    n = e.n
    absolute = [pointwise("abs", p) for p in e.paths]
    L_max = _local_time(pointwise("max", *absolute), estimator).L
    L_sum = _local_time(pointwise("sum", *absolute), estimator).L
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(L_max[..., -1] > 0, L_sum[..., -1] / L_max[..., -1], np.nan)
    channels = {
        "L_max_abs": L_max[..., -1],
        "L_sum_abs": L_sum[..., -1],
        "slack_lower": L_sum[..., -1] - L_max[..., -1],
        "slack_upper": n * L_max[..., -1] - L_sum[..., -1],
        "ratio": ratio,
    }
    meta = {"estimator": estimator}
    nonneg = bool(np.all(e.values >= 0) and np.all(e.left >= 0))
    if nonneg and e.is_continuous:
        L_plain_sum = _local_time(pointwise("sum", *e.paths), estimator).L[..., -1]
        L_each = _fold(_local_time(p, estimator).L[..., -1] for p in e.paths)
        channels["L_sum"] = L_plain_sum
        channels["n_sum_L"] = n * L_each
        channels["slack_positive_sum"] = n * L_each - L_plain_sum
    else:
        channels["slack_positive_sum"] = np.full(e.batch_shape, np.nan)
        meta["positive_sum_precondition"] = "skipped: paths must be nonnegative and continuous"
    return ResidualReport("norm_bounds", L_sum, L_max, {"L_max_abs": L_max}, channels, meta)


REGISTRY = {
    "thm22_ranked": lambda e, k, policy, estimator: check_decomposition_ranked(e, k, policy),
    "thm22_original": lambda e, k, policy, estimator: check_decomposition_original(e, k, policy),
    "thm31_indicator": lambda e, k, policy, estimator: check_indicator_sum(e, policy),
    "thm32_ltsum": lambda e, k, policy, estimator: check_local_time_sum(e, estimator),
    "cor33_yan_ouknine": lambda e, k, policy, estimator: check_yan_ouknine_ensemble(e, estimator),
    "cor31_ranked_diff": lambda e, k, policy, estimator: check_corollary_ranked_diff(e, k, policy),
    "rem21_max": lambda e, k, policy, estimator: check_max_identity(e, policy),
    "norm_bounds": lambda e, k, policy, estimator: check_norm_bounds(e, estimator),
}


def run_identity(
    identity: str,
    e: Ensemble,
    k: int = 1,
    policy: EpsilonPolicy = EXACT,
    estimator: str = "tanaka",
) -> ResidualReport:
    try:
        fn = REGISTRY[identity]
    except KeyError:
        raise ValueError(f"unknown identity {identity!r}; known: {sorted(REGISTRY)}") from None
    return fn(e, k, policy, estimator)
