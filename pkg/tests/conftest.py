import numpy as np
import pytest

from rankdecomp import CadlagPath, Ensemble, TimeGrid


@pytest.fixture
def grid16():
    return TimeGrid(1.0, 16)


def brownian_values(rng, n, m, T=1.0, x0=0.0):
    dt = T / m
    out = np.empty((n, m + 1))
    out[:, 0] = x0
    out[:, 1:] = x0 + np.cumsum(np.sqrt(dt) * rng.standard_normal((n, m)), axis=1)
    return out


def jump_ensemble(rng, n, m, p=0.05):
    """Random ensemble with sparse normal jumps."""
    grid = TimeGrid(1.0, m)
    v = brownian_values(rng, n, m)
    J = np.zeros_like(v)
    mask = rng.random((n, m)) < p
    J[:, 1:] = np.where(mask, rng.normal(0, 0.5, (n, m)), 0.0)
    v = v + np.cumsum(J, axis=1)
    return Ensemble(grid, v, J)


def path(values, jumps=None, T=1.0):
    values = np.asarray(values, dtype=float)
    return CadlagPath(TimeGrid(T, values.shape[-1] - 1), values, None if jumps is None else np.asarray(jumps, float))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])
