"""Seeded random factor graphs and labelings for the verification suites and tests."""

import numpy as np

from src.factor_graph import FactorGraph, Labeling, PairwiseFactor
from src.models import PairwiseKind


def _random_edges(rng: np.random.Generator, n: int, edge_prob: float) -> list[tuple[int, int]]:
    edges = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < edge_prob]
    if not edges and n > 1:
        u = int(rng.integers(0, n - 1))
        edges.append((u, u + 1))
    return edges


def random_potts_graph(
    rng: np.random.Generator,
    n: int,
    L: int,
    edge_prob: float = 0.5,
    unary_scale: float = 1.0,
    max_weight: float = 1.0,
) -> FactorGraph:
    unaries = rng.normal(0.0, unary_scale, size=(n, L))
    factors = [
        PairwiseFactor(u, v, PairwiseKind.POTTS, weight=float(rng.uniform(0.0, max_weight)))
        for u, v in _random_edges(rng, n, edge_prob)
    ]
    return FactorGraph(n, L, unaries, tuple(factors))


def random_grid_potts(
    rng: np.random.Generator, height: int, width: int, L: int, max_weight: float = 1.0
) -> FactorGraph:
    n = height * width
    unaries = rng.normal(0.0, 1.0, size=(n, L))
    factors = []
    for r in range(height):
        for c in range(width):
            i = r * width + c
            if c + 1 < width:
                factors.append(PairwiseFactor(i, i + 1, weight=float(rng.uniform(0.0, max_weight))))
            if r + 1 < height:
                factors.append(PairwiseFactor(i, i + width, weight=float(rng.uniform(0.0, max_weight))))
    return FactorGraph(n, L, unaries, tuple(factors))


def random_submodular_binary(
    rng: np.random.Generator, n: int, edge_prob: float = 0.5
) -> FactorGraph:
    """Binary graph whose tables satisfy θ00 + θ11 >= θ01 + θ10."""
    unaries = rng.normal(0.0, 1.0, size=(n, 2))
    factors = []
    for u, v in _random_edges(rng, n, edge_prob):
        table = rng.normal(0.0, 1.0, size=(2, 2))
        deficit = table[0, 1] + table[1, 0] - table[0, 0] - table[1, 1]
        if deficit > 0:
            table[1, 1] += deficit + float(rng.uniform(0.0, 0.5))
        factors.append(PairwiseFactor(u, v, PairwiseKind.TABLE, scores=table))
    return FactorGraph(n, 2, unaries, tuple(factors))


def random_table_graph(
    rng: np.random.Generator, n: int, L: int, edge_prob: float = 0.5
) -> FactorGraph:
    unaries = rng.normal(0.0, 1.0, size=(n, L))
    factors = [
        PairwiseFactor(u, v, PairwiseKind.TABLE, scores=rng.normal(0.0, 0.5, size=(L, L)))
        for u, v in _random_edges(rng, n, edge_prob)
    ]
    return FactorGraph(n, L, unaries, tuple(factors))


def random_labeling(rng: np.random.Generator, n: int, L: int) -> Labeling:
    return tuple(int(v) for v in rng.integers(0, L, size=n))


def random_labelings(rng: np.random.Generator, count: int, n: int, L: int) -> list[Labeling]:
    return [tuple(int(v) for v in row) for row in rng.integers(0, L, size=(count, n))]
