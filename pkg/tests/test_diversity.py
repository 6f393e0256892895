import math

import numpy as np
import pytest

from src.diversity import (
    ConcaveH,
    GroupState,
    ball_intersection_size,
    compile_gain,
    compile_hamming_factors,
    compile_label_cost,
    compile_upper_envelope,
    coverage_gain,
    coverage_value,
    divmbest_augment,
    exact_union_size,
    hamming_ball_size,
    hamming_lb_gain,
    label_cost_gain,
    marginal_gain,
    membership_matrix,
    parsimony_value,
    region_consistency_gain,
    transition_gain,
)
from src.errors import EmptyList, InvalidRegions
from src.factor_graph import FactorGraph, PairwiseFactor, all_labelings
from src.inference import augmented_score, map_exact
from src.models import ConcaveKind, DiversityFamily, DiversityModel
from src.random_instances import random_labelings, random_potts_graph
from src.verification import brute_force_ball_intersection

COUNT, SQRT, LOG1P = ConcaveH(ConcaveKind.COUNT), ConcaveH(ConcaveKind.SQRT), ConcaveH(ConcaveKind.LOG1P)


def _line(n: int, L: int) -> FactorGraph:
    factors = tuple(PairwiseFactor(i, i + 1, weight=0.5) for i in range(n - 1))
    return FactorGraph(n, L, np.zeros((n, L)), factors)


def _models(n: int) -> list[DiversityModel]:
    return [
        DiversityModel(family="label_cost", h="sqrt", lam=0.7),
        DiversityModel(family="label_transition", h="log1p", lam=1.3),
        DiversityModel(family="hamming_ball_set", lam=0.4, k=1),
        DiversityModel(family="hamming_ball_set", h="sqrt", lam=0.4, k=1, exact_union=True),
        DiversityModel(family="hamming_ball_smooth", lam=0.9, gamma=0.5),
        DiversityModel(family="divmbest", lam=0.2),
        DiversityModel(family="region_consistency", lam=1.1, regions=[[0, 1], list(range(2, n))]),
    ]


def test_concave_functions_are_normalized_monotone_and_concave() -> None:
    x = np.arange(65)
    for h in (COUNT, SQRT, LOG1P):
        assert h(0) == 0.0
        values = h(x)
        assert np.all(np.diff(values) >= 0)
        assert np.all(np.diff(h.marginal(x)) <= 1e-15)


def test_coverage_value_examples() -> None:
    assert coverage_value([1, 1], COUNT) == 2.0
    assert coverage_value([2, 1], SQRT) == pytest.approx(2.41421, abs=1e-5)
    assert coverage_value([1], LOG1P) == pytest.approx(0.69315, abs=1e-5)


def test_coverage_gain_examples() -> None:
    assert coverage_gain({0}, [0], COUNT) == 1.0
    assert coverage_gain({0}, [3], SQRT) == pytest.approx(0.26795, abs=1e-5)


def test_coverage_gain_telescopes_on_random_group_systems() -> None:
    rng = np.random.default_rng(0)
    for _ in range(50):
        num_groups = int(rng.integers(1, 8))
        counts = rng.integers(0, 4, size=num_groups).astype(float)
        member = {int(g) for g in np.flatnonzero(rng.random(num_groups) < 0.5)}
        for h in (COUNT, SQRT, LOG1P):
            after = counts.copy()
            after[sorted(member)] += 1
            assert coverage_gain(member, counts, h) == pytest.approx(
                coverage_value(after, h) - coverage_value(counts, h)
            )


def test_count_gain_is_the_number_of_new_groups() -> None:
    rng = np.random.default_rng(1)
    graph = _line(4, 4)
    model = DiversityModel(family="label_cost", lam=1.0)
    for _ in range(30):
        S = random_labelings(rng, int(rng.integers(0, 4)), 4, 4)
        y = random_labelings(rng, 1, 4, 4)[0]
        covered = {label for z in S for label in z}
        state = GroupState.from_items(model, graph, S)
        assert label_cost_gain(y, state, COUNT) == len(set(y) - covered)


def test_label_cost_gain_examples() -> None:
    graph = FactorGraph(2, 2, np.zeros((2, 2)))
    model = DiversityModel(family="label_cost", lam=1.0)
    state = GroupState.from_items(model, graph, [(1, 1)] * 3)
    assert label_cost_gain((0, 1), state, COUNT) == 1.0
    assert label_cost_gain((0, 1), state, SQRT) == pytest.approx(1.26795, abs=1e-5)
    fresh = GroupState.empty(model, FactorGraph(3, 3, np.zeros((3, 3))))
    assert label_cost_gain((0, 1, 2), fresh, COUNT) == 3.0


def test_compile_label_cost_examples() -> None:
    graph = FactorGraph(2, 2, np.zeros((2, 2)))
    model = DiversityModel(family="label_cost", lam=1.0)
    empty = GroupState.empty(model, graph)
    assert compile_label_cost(empty, COUNT, 1.0, np.zeros(2)).label_reward == pytest.approx([1.0, 1.0])
    state = GroupState.from_items(model, graph, [(0, 0), (0, 0)])
    rewards = compile_label_cost(state, COUNT, 0.5, np.full(2, -1.0)).label_reward
    assert rewards == pytest.approx([-0.5, 0.0])


def test_compiled_label_cost_map_matches_enumeration() -> None:
    rng = np.random.default_rng(2)
    for _ in range(10):
        graph = random_potts_graph(rng, 5, 3)
        model = DiversityModel(family="label_cost", lam=float(rng.uniform(0.2, 2.0)))
        state = GroupState.from_items(model, graph, random_labelings(rng, 2, 5, 3))
        aug, constant = compile_gain(model, graph, state)
        _, value = map_exact(graph, aug)
        Y = all_labelings(5, 3)
        direct = graph.score_batch(Y) + model.lam * np.array(
            [label_cost_gain(y, state, COUNT) + parsimony_value(model, graph, y) for y in Y.tolist()]
        )
        assert constant == 0.0
        assert value == pytest.approx(direct.max())


def test_transition_gain_examples() -> None:
    graph = _line(3, 3)
    model = DiversityModel(family="label_transition", lam=1.0)
    empty = GroupState.empty(model, graph)
    assert transition_gain((1, 1, 1), graph.edges, empty, COUNT) == 0.0
    assert transition_gain((0, 1, 1), graph.edges, empty, COUNT) == 1.0
    state = GroupState.from_items(model, graph, [(1, 0, 0), (0, 0, 1)])
    assert transition_gain((0, 1, 0), graph.edges, state, SQRT) == pytest.approx(
        math.sqrt(3) - math.sqrt(2)
    )


def test_hamming_ball_size_examples() -> None:
    assert hamming_ball_size(3, 2, 1) == 4
    assert hamming_ball_size(4, 3, 1) == 9
    assert hamming_ball_size(2, 3, 2) == 9


def test_ball_intersection_examples() -> None:
    assert ball_intersection_size((0, 0, 0), (0, 0, 0), 2, 1) == 4
    assert ball_intersection_size((0, 0, 0), (1, 1, 1), 2, 1) == 0
    assert ball_intersection_size((0, 0, 0), (1, 0, 0), 2, 1) == 2


def test_ball_intersection_matches_enumeration() -> None:
    rng = np.random.default_rng(3)
    for L in (2, 3, 4):
        for n in range(1, 6):
            for k in range(n + 1):
                y, z = random_labelings(rng, 2, n, L)
                assert ball_intersection_size(y, z, L, k) == brute_force_ball_intersection(y, z, L, k)


def test_hamming_lb_gain_examples() -> None:
    smooth = DiversityModel(family="hamming_ball_smooth", lam=1.0, gamma=0.5, ball_constant_b=1.0)
    assert hamming_lb_gain((1, 1, 0), [(0, 0, 0)], smooth, 2) == pytest.approx(0.63212, abs=1e-5)
    assert hamming_lb_gain((0, 0, 0), [(0, 0, 0)], smooth, 2) == 0.0
    ball = DiversityModel(family="hamming_ball_set", lam=1.0, k=1)
    assert hamming_lb_gain((1, 1, 1), [(0, 0, 0)], ball, 2) == 4.0


def test_compile_hamming_factors() -> None:
    smooth = DiversityModel(family="hamming_ball_smooth", lam=1.0, gamma=0.5)
    aug = compile_hamming_factors([(0, 0, 0, 0)], smooth, 4, 2)
    (factor,) = aug.cardinality_factors
    assert factor.value_table == pytest.approx([1 - math.exp(-0.5 * m) for m in range(5)])
    ball = DiversityModel(family="hamming_ball_set", lam=2.0, k=1)
    (factor,) = compile_hamming_factors([(0, 0, 0)], ball, 3, 2).cardinality_factors
    assert factor.value_table[0] == pytest.approx(2.0 * (4 - 4))
    with pytest.raises(EmptyList):
        compile_hamming_factors([], smooth, 4, 2)


def test_compiled_hamming_factors_reproduce_the_gain() -> None:
    rng = np.random.default_rng(4)
    for _ in range(100):
        n, L = int(rng.integers(1, 6)), int(rng.integers(2, 4))
        if rng.random() < 0.5:
            model = DiversityModel(family="hamming_ball_smooth", lam=0.8, gamma=float(rng.uniform(0.1, 1)))
        else:
            model = DiversityModel(family="hamming_ball_set", lam=0.8, k=int(rng.integers(0, n + 1)))
        S = random_labelings(rng, int(rng.integers(1, 4)), n, L)
        y = random_labelings(rng, 1, n, L)[0]
        graph = FactorGraph(n, L, np.zeros((n, L)))
        aug = compile_hamming_factors(S, model, n, L)
        assert aug.evaluate(graph, y) == pytest.approx(model.lam * hamming_lb_gain(y, S, model, L))


def test_lower_bound_never_exceeds_the_exact_union_increment() -> None:
    rng = np.random.default_rng(5)
    for n, L in ((3, 2), (4, 3), (6, 2), (5, 4)):
        for _ in range(50):
            k = int(rng.integers(0, n + 1))
            model = DiversityModel(family="hamming_ball_set", lam=1.0, k=k)
            S = random_labelings(rng, int(rng.integers(0, 4)), n, L)
            y = random_labelings(rng, 1, n, L)[0]
            exact = exact_union_size(S + [y], n, L, k) - exact_union_size(S, n, L, k)
            assert hamming_lb_gain(y, S, model, L) <= exact


def test_smooth_gain_is_zero_only_for_repeats() -> None:
    model = DiversityModel(family="hamming_ball_smooth", lam=1.0, gamma=0.3)
    S = [(0, 1, 0), (0, 1, 0)]
    assert hamming_lb_gain((0, 1, 0), S, model, 2) == 0.0
    assert hamming_lb_gain((0, 1, 1), S, model, 2) > 0.0
    assert hamming_lb_gain((0, 1, 1), [(0, 1, 0), (0, 1, 1)], model, 2) > 0.0


def test_divmbest_augment_examples() -> None:
    graph = FactorGraph(2, 2, np.zeros((2, 2)))
    assert divmbest_augment(graph, [], 0.2).node_additive == pytest.approx(np.zeros((2, 2)))
    additive = divmbest_augment(graph, [(0, 1), (0, 0)], 0.2).node_additive
    assert additive[0, 0] == 0.0
    assert additive[0, 1] == pytest.approx(0.4)


def test_region_consistency_gain_examples() -> None:
    graph = _line(4, 2)
    model = DiversityModel(family="region_consistency", lam=1.0, regions=[[0, 1], [2, 3]])
    state = GroupState.from_items(model, graph, [(0, 0, 0, 1)])
    assert region_consistency_gain((1, 1, 0, 1), model, state) == 1.0
    assert region_consistency_gain((0, 1, 0, 1), model, state) == 0.0
    assert region_consistency_gain((0, 0, 1, 1), model, state) == 1.0


def test_overlapping_regions_are_rejected() -> None:
    graph = _line(4, 2)
    model = DiversityModel(family="region_consistency", lam=1.0, regions=[[0, 1], [1, 2]])
    with pytest.raises(InvalidRegions):
        GroupState.empty(model, graph)


def test_upper_envelope_matches_direct_maximization() -> None:
    rng = np.random.default_rng(6)
    for _ in range(15):
        n = int(rng.integers(2, 5))
        graph = random_potts_graph(rng, n, 2)
        cut = int(rng.integers(1, n))
        model = DiversityModel(
            family="region_consistency", h="sqrt", lam=float(rng.uniform(0.5, 3.0)),
            regions=[list(range(cut)), list(range(cut, n))],
        )
        state = GroupState.from_items(model, graph, random_labelings(rng, int(rng.integers(0, 3)), n, 2))
        aug, _ = compile_gain(model, graph, state)
        _, direct_value = map_exact(graph, aug)
        reduction = compile_upper_envelope(graph, model, state)
        ext_y, ext_value = map_exact(reduction.graph)
        assert augmented_score(graph, aug, reduction.decode(ext_y)) == pytest.approx(direct_value)
        assert ext_value == pytest.approx(direct_value)


def test_incremental_state_equals_batch_state() -> None:
    rng = np.random.default_rng(7)
    graph = _line(5, 3)
    for model in _models(5):
        items = random_labelings(rng, 4, 5, 3)
        incremental = GroupState.empty(model, graph)
        for y in items:
            incremental = incremental.add(y)
        batch = GroupState.from_items(model, graph, items)
        assert np.array_equal(incremental.label_counts, batch.label_counts)
        assert np.array_equal(incremental.transition_counts, batch.transition_counts)
        assert np.array_equal(incremental.region_counts, batch.region_counts)
        assert incremental.history == batch.history


def test_gains_shrink_as_the_list_grows() -> None:
    rng = np.random.default_rng(8)
    graph = _line(4, 3)
    monotone = {
        DiversityFamily.LABEL_COST,
        DiversityFamily.LABEL_TRANSITION,
        DiversityFamily.REGION_CONSISTENCY,
        DiversityFamily.HAMMING_BALL_SET,
    }
    for model in _models(4):
        if model.family not in monotone:
            continue
        for _ in range(30):
            S = random_labelings(rng, int(rng.integers(0, 3)), 4, 3)
            y, z = random_labelings(rng, 2, 4, 3)
            before = GroupState.from_items(model, graph, S)
            after = before.add(z)
            assert marginal_gain(model, graph, before, y) >= marginal_gain(model, graph, after, y) - 1e-12
            if model.family != DiversityFamily.HAMMING_BALL_SET or model.exact_union:
                assert marginal_gain(model, graph, after, y) >= 0.0


def test_compiled_gain_equals_lambda_times_gain_plus_parsimony() -> None:
    rng = np.random.default_rng(9)
    graph = random_potts_graph(rng, 5, 3)
    for model in _models(5):
        for size in (0, 1, 3):
            state = GroupState.from_items(model, graph, random_labelings(rng, size, 5, 3))
            aug, constant = compile_gain(model, graph, state)
            for y in random_labelings(rng, 200, 5, 3):
                direct = model.lam * (
                    marginal_gain(model, graph, state, y) + parsimony_value(model, graph, y)
                )
                assert aug.evaluate(graph, y) + constant == pytest.approx(direct, abs=1e-9)


def test_membership_matrix_for_labels_and_regions() -> None:
    graph = _line(4, 2)
    labels = membership_matrix(graph, DiversityModel(family="label_cost", lam=1.0), np.array([(0, 0, 0, 0), (0, 1, 1, 1)]))
    assert labels.tolist() == [[True, False], [True, True]]
    model = DiversityModel(family="region_consistency", lam=1.0, regions=[[0, 1], [2, 3]])
    regions = membership_matrix(graph, model, np.array([(1, 1, 0, 1)]))
    assert regions.tolist() == [[False, True, False, False]]
