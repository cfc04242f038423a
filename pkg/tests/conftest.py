# tests/conftest.py
from __future__ import annotations

import numpy as np
import pytest

from cimo.core.graph import DirectedGraph, ExposureSpec
from cimo.core.response import ResponseCurve, ResponseModel, StratumResponse


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-size runs (deselect with -m 'not slow')")


def single_stratum(n: int, alpha: float, f_pos, f_neg=(0.0,)) -> ResponseModel:
    return ResponseModel(
        np.zeros(n, dtype=np.int64),
        {0: StratumResponse(alpha, ResponseCurve(f_pos), ResponseCurve(f_neg))},
    )


@pytest.fixture
def chain() -> DirectedGraph:
    """0 -> 1 -> 2 with p = 0.5 on both edges."""
    return DirectedGraph.from_edges(3, [(0, 1, 0.5), (1, 2, 0.5)])


@pytest.fixture
def star() -> DirectedGraph:
    """Centre 0 pointing at leaves 1..4."""
    return DirectedGraph.from_edges(5, [(0, v, 0.3) for v in range(1, 5)])


@pytest.fixture
def fork() -> DirectedGraph:
    """0 -> 1, 0 -> 2, 1 -> 3, 2 -> 3: node 3 has two in-neighbours fed by 0."""
    return DirectedGraph.from_edges(4, [(0, 1, 0.4), (0, 2, 0.3), (1, 3, 0.5), (2, 3, 0.2)])


@pytest.fixture
def fork_spec(fork) -> ExposureSpec:
    return ExposureSpec.from_in_neighbors(fork)


@pytest.fixture
def concave_model(fork) -> ResponseModel:
    return single_stratum(fork.n, 0.1, [0.0, 0.5, 0.7])
