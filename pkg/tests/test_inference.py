import time

import numpy as np
import pytest

from src.errors import InvalidFactor, NotSubmodular, TooLarge, UnsupportedFactor, WrongArity
from src.factor_graph import FactorGraph, PairwiseFactor, all_labelings, shift_nonnegative
from src.inference import (
    CardinalityFactor,
    FlowNetwork,
    HopAugmentation,
    augmented_score,
    cardinality_messages,
    local_search,
    map_alpha_expansion,
    map_exact,
    map_graphcut_binary,
    map_with_cardinality,
    max_flow,
)
from src.models import PairwiseKind
from src.random_instances import random_potts_graph, random_submodular_binary, random_table_graph
from src.verification import brute_force_max_marginals


def _chain_potts(rng: np.random.Generator, n: int, L: int) -> FactorGraph:
    factors = tuple(PairwiseFactor(i, i + 1, weight=float(rng.uniform(0, 1))) for i in range(n - 1))
    return FactorGraph(n, L, rng.normal(size=(n, L)), factors)


def test_map_exact_breaks_ties_lexicographically() -> None:
    graph = FactorGraph(3, 2, np.zeros((3, 2)))
    labels, score = map_exact(graph)
    assert labels == (0, 0, 0)
    assert score == 0.0


def test_map_exact_matches_enumeration() -> None:
    rng = np.random.default_rng(0)
    for _ in range(10):
        graph = random_table_graph(rng, 5, 3)
        labels, score = map_exact(graph)
        values = graph.score_batch(all_labelings(5, 3))
        assert score == pytest.approx(values.max())
        assert augmented_score(graph, None, labels) == pytest.approx(score)


def test_map_exact_respects_enumeration_cap() -> None:
    graph = FactorGraph(10, 3, np.zeros((10, 3)))
    with pytest.raises(TooLarge):
        map_exact(graph, enum_cap=1000)


def test_max_flow_small_network() -> None:
    source, a, b, sink = 0, 1, 2, 3
    arcs = ((source, a, 3.0), (a, sink, 2.0), (source, b, 2.0), (b, sink, 3.0), (a, b, 1.0))
    value, source_side = max_flow(FlowNetwork(4, source, sink, arcs))
    assert value == pytest.approx(5.0)
    assert source in source_side and sink not in source_side


def _brute_force_min_cut(net: FlowNetwork) -> float:
    inner = [i for i in range(net.num_nodes) if i not in (net.source, net.sink)]
    sides = np.zeros((2 ** len(inner), net.num_nodes), dtype=bool)
    sides[:, net.source] = True
    for bit, node in enumerate(inner):
        sides[:, node] = (np.arange(2 ** len(inner)) >> bit) & 1
    cuts = np.zeros(sides.shape[0])
    for u, v, capacity in net.arcs:
        cuts += capacity * (sides[:, u] & ~sides[:, v])
    return float(cuts.min())


def test_max_flow_matches_brute_force_min_cut() -> None:
    rng = np.random.default_rng(12)
    for _ in range(60):
        inner = int(rng.integers(1, 13))
        num = inner + 2
        source, sink = inner, inner + 1
        arcs = []
        for u in range(num):
            for v in range(num):
                if u != v and v != source and u != sink and rng.random() < 0.3:
                    arcs.append((u, v, float(rng.uniform(0.0, 3.0) * 10.0 ** rng.integers(-2, 3))))
        net = FlowNetwork(num, source, sink, tuple(arcs))
        value, source_side = max_flow(net)
        assert source in source_side and sink not in source_side
        cut = sum(c for u, v, c in arcs if u in source_side and v not in source_side)
        assert cut == pytest.approx(value, rel=1e-9, abs=1e-9)
        assert value == pytest.approx(_brute_force_min_cut(net), rel=1e-9, abs=1e-9)


def test_max_flow_source_side_survives_float_rounding() -> None:
    graph = random_submodular_binary(np.random.default_rng([0, 4, 0, 20]), 11)
    _, cut_value = map_graphcut_binary(graph)
    _, exact_value = map_exact(graph)
    assert cut_value == pytest.approx(exact_value, abs=1e-6)


def test_flow_network_rejects_negative_capacity() -> None:
    with pytest.raises(InvalidFactor):
        FlowNetwork(2, 0, 1, ((0, 1, -1.0),))


def test_graphcut_matches_exact_on_submodular_graphs() -> None:
    rng = np.random.default_rng(1)
    for _ in range(40):
        graph = random_submodular_binary(rng, int(rng.integers(2, 11)))
        _, cut_value = map_graphcut_binary(graph)
        _, exact_value = map_exact(graph)
        assert cut_value == pytest.approx(exact_value, abs=1e-6)


def test_graphcut_matches_exact_at_full_scale() -> None:
    rng = np.random.default_rng(13)
    for _ in range(200):
        graph = random_submodular_binary(rng, int(rng.integers(2, 17)))
        _, cut_value = map_graphcut_binary(graph)
        _, exact_value = map_exact(graph)
        assert cut_value == pytest.approx(exact_value, abs=1e-6)


def test_graphcut_with_node_additive_matches_exact() -> None:
    rng = np.random.default_rng(2)
    for _ in range(20):
        graph = random_submodular_binary(rng, 6)
        additive = rng.normal(size=(6, 2))
        _, cut_value = map_graphcut_binary(graph, additive)
        _, exact_value = map_exact(graph, HopAugmentation(node_additive=additive))
        assert cut_value == pytest.approx(exact_value, abs=1e-6)


def test_graphcut_preconditions() -> None:
    bad = np.array([[0.0, 1.0], [1.0, 0.0]])
    graph = FactorGraph(2, 2, np.zeros((2, 2)), (PairwiseFactor(0, 1, PairwiseKind.TABLE, scores=bad),))
    with pytest.raises(NotSubmodular):
        map_graphcut_binary(graph)
    with pytest.raises(WrongArity):
        map_graphcut_binary(FactorGraph(2, 3, np.zeros((2, 3))))


def test_alpha_expansion_never_loses_to_its_start_and_never_beats_exact() -> None:
    rng = np.random.default_rng(4)
    matches = 0
    for _ in range(30):
        graph = random_potts_graph(rng, 4, 3)
        reward = rng.normal(0.0, 0.5, size=3)
        aug = HopAugmentation(label_reward=reward)
        labels, value = map_alpha_expansion(graph, label_reward=reward)
        start = tuple(int(v) for v in graph.unaries.argmax(axis=1))
        _, exact_value = map_exact(graph, aug)
        assert value == pytest.approx(augmented_score(graph, aug, labels))
        assert value >= augmented_score(graph, aug, start) - 1e-9
        assert value <= exact_value + 1e-9
        matches += value >= exact_value - 1e-9
    assert matches >= 20


def test_alpha_expansion_handles_label_costs_exactly_on_one_variable() -> None:
    graph = FactorGraph(1, 3, np.array([[3.0, 2.0, 1.0]]))
    labels, value = map_alpha_expansion(graph, label_reward=np.array([-5.0, 0.0, 0.0]))
    assert labels == (1,)
    assert value == pytest.approx(2.0)


def test_alpha_expansion_needs_potts() -> None:
    graph = random_table_graph(np.random.default_rng(0), 3, 3)
    with pytest.raises(UnsupportedFactor):
        map_alpha_expansion(graph)


def test_cardinality_messages_match_brute_force() -> None:
    rng = np.random.default_rng(5)
    for _ in range(50):
        n, L = int(rng.integers(1, 8)), int(rng.integers(2, 4))
        factor = CardinalityFactor(rng.integers(0, L, size=n), rng.normal(size=n + 1), 0.7)
        incoming = rng.normal(size=(n, L))
        assert cardinality_messages(factor, incoming) == pytest.approx(
            brute_force_max_marginals(factor, incoming), abs=1e-9
        )


def test_cardinality_messages_scale_near_linearly() -> None:
    rng = np.random.default_rng(14)

    def _best_time(n: int) -> float:
        factor = CardinalityFactor(rng.integers(0, 3, size=n), rng.normal(size=n + 1))
        incoming = rng.normal(size=(n, 3))
        times = []
        for _ in range(5):
            start = time.perf_counter()
            cardinality_messages(factor, incoming)
            times.append(time.perf_counter() - start)
        return min(times)

    _best_time(1_000)
    assert _best_time(10_000) / _best_time(1_000) < 15


def test_cardinality_factor_validation() -> None:
    with pytest.raises(InvalidFactor):
        CardinalityFactor(np.zeros(3, dtype=int), np.zeros(3))
    factor = CardinalityFactor(np.zeros(2, dtype=int), np.zeros(3))
    with pytest.raises(InvalidFactor):
        cardinality_messages(factor, np.zeros((2, 1)))


def test_message_passing_is_exact_on_chains() -> None:
    rng = np.random.default_rng(6)
    for _ in range(10):
        graph = _chain_potts(rng, 5, 3)
        _, value = map_with_cardinality(graph)
        _, exact_value = map_exact(graph)
        assert value == pytest.approx(exact_value, abs=1e-9)


def test_message_passing_with_two_cardinality_factors_is_near_exact() -> None:
    for seed in range(50):
        rng = np.random.default_rng(seed)
        graph, _ = shift_nonnegative(_chain_potts(rng, 6, 3))
        factors = [
            CardinalityFactor(rng.integers(0, 3, size=6), np.sort(rng.uniform(0.0, 2.0, size=7)))
            for _ in range(2)
        ]
        _, value = map_with_cardinality(graph, factors)
        _, exact_value = map_exact(graph, HopAugmentation(cardinality_factors=tuple(factors)))
        assert value >= 0.95 * exact_value - 1e-9, f"seed {seed}"


def test_message_passing_reports_true_augmented_score() -> None:
    rng = np.random.default_rng(7)
    graph = random_potts_graph(rng, 5, 2)
    factor = CardinalityFactor(np.zeros(5, dtype=int), np.linspace(0.0, 2.0, 6))
    labels, value = map_with_cardinality(graph, [factor])
    aug = HopAugmentation(cardinality_factors=(factor,))
    assert value == pytest.approx(augmented_score(graph, aug, labels))
    _, exact_value = map_exact(graph, aug)
    assert value <= exact_value + 1e-9


def test_local_search_ends_in_a_local_optimum() -> None:
    rng = np.random.default_rng(8)
    graph = random_table_graph(rng, 5, 3)
    reward = np.triu(rng.normal(size=(3, 3)), k=1)
    aug = HopAugmentation(transition_reward=reward)
    init = (0, 0, 0, 0, 0)
    labels, value = local_search(graph, aug.gain_fn(graph), init)
    assert value >= augmented_score(graph, aug, init) - 1e-12
    for i in range(5):
        for label in range(3):
            neighbor = list(labels)
            neighbor[i] = label
            assert augmented_score(graph, aug, neighbor) <= value + 1e-9


def test_local_search_merges_away_a_scattered_label() -> None:
    unaries = np.array([[1.0, 0.0, 0.0], [0.9, 0.0, 1.0]] * 2 + [[1.0, 0.0, 0.0]])
    graph = FactorGraph(5, 3, unaries, tuple(PairwiseFactor(i, i + 1) for i in range(4)))
    reward = np.zeros((3, 3))
    reward[0, 2] = -2.0
    aug = HopAugmentation(transition_reward=reward)
    labels, value = local_search(graph, aug.gain_fn(graph), (0, 2, 0, 2, 0))
    assert labels == (0, 0, 0, 0, 0)
    assert value == pytest.approx(4.8)


def test_transition_reward_counts_each_pair_once() -> None:
    factors = (PairwiseFactor(0, 1), PairwiseFactor(1, 2), PairwiseFactor(2, 3))
    graph = FactorGraph(4, 3, np.zeros((4, 3)), factors)
    reward = np.zeros((3, 3))
    reward[0, 1] = 2.0
    reward[1, 2] = 0.5
    aug = HopAugmentation(transition_reward=reward)
    assert aug.evaluate(graph, (0, 1, 0, 1)) == pytest.approx(2.0)
    assert aug.evaluate(graph, (2, 1, 0, 0)) == pytest.approx(2.5)
    assert aug.evaluate(graph, (1, 1, 1, 1)) == 0.0
