import json

import numpy as np
import pytest

from src.errors import InvalidInstance, InvalidLabeling
from src.factor_graph import (
    FactorGraph,
    PairwiseFactor,
    all_labelings,
    decode_codes,
    encode_labelings,
    evaluate_score,
    graph_from_dict,
    graph_to_dict,
    load_instance,
    shift_nonnegative,
    validate,
)
from src.inference import map_exact
from src.models import PairwiseKind
from src.random_instances import random_table_graph


def _chain() -> FactorGraph:
    unaries = np.array([[1.0, 0.0], [0.0, 2.0], [0.5, 0.5]])
    factors = (
        PairwiseFactor(0, 1, PairwiseKind.POTTS, weight=1.5),
        PairwiseFactor(1, 2, PairwiseKind.TABLE, scores=np.array([[0.0, -1.0], [3.0, 0.25]])),
    )
    return FactorGraph(3, 2, unaries, factors)


def test_evaluate_score_sums_unaries_and_pairwise() -> None:
    graph = _chain()
    assert evaluate_score(graph, (0, 0, 0)) == pytest.approx(1.0 + 0.0 + 0.5 + 1.5 + 0.0)
    assert evaluate_score(graph, (0, 1, 0)) == pytest.approx(1.0 + 2.0 + 0.5 + 0.0 + 3.0)


def test_score_batch_matches_single_evaluation() -> None:
    graph = _chain()
    Y = all_labelings(3, 2)
    batch = graph.score_batch(Y)
    assert batch == pytest.approx([evaluate_score(graph, y) for y in Y.tolist()])


def test_check_labeling_rejects_bad_input() -> None:
    graph = _chain()
    with pytest.raises(InvalidLabeling):
        graph.check_labeling((0, 1))
    with pytest.raises(InvalidLabeling):
        graph.check_labeling((0, 2, 0))


def test_shift_nonnegative_makes_every_score_nonnegative() -> None:
    rng = np.random.default_rng(3)
    for _ in range(10):
        graph = random_table_graph(rng, 4, 3)
        shifted, offset = shift_nonnegative(graph)
        Y = all_labelings(4, 3)
        assert shifted.score_batch(Y).min() >= -1e-12
        assert shifted.score_batch(Y) == pytest.approx(graph.score_batch(Y) + offset)


def test_shift_nonnegative_keeps_the_argmax() -> None:
    rng = np.random.default_rng(11)
    for _ in range(200):
        n, L = int(rng.integers(1, 9)), int(rng.integers(2, 4))
        graph = random_table_graph(rng, n, L)
        shifted, _ = shift_nonnegative(graph)
        assert map_exact(shifted)[0] == map_exact(graph)[0]


def test_validate_reports_each_violation() -> None:
    factors = (
        PairwiseFactor(0, 0, weight=1.0),
        PairwiseFactor(0, 5, weight=1.0),
        PairwiseFactor(0, 1, weight=-1.0),
        PairwiseFactor(1, 0, weight=1.0),
        PairwiseFactor(1, 2, PairwiseKind.TABLE, scores=np.zeros((3, 3))),
    )
    graph = FactorGraph(3, 2, np.zeros((3, 2)), factors)
    messages = [str(v) for v in validate(graph)]
    assert any("endpoints must be distinct" in m for m in messages)
    assert any("endpoint out of range" in m for m in messages)
    assert any("negative potts weight" in m for m in messages)
    assert any("duplicate pair" in m for m in messages)
    assert any("expected (2, 2) table" in m for m in messages)
    assert validate(_chain()) == []


def test_graph_dict_round_trip() -> None:
    graph = _chain()
    again = graph_from_dict(graph_to_dict(graph))
    Y = all_labelings(3, 2)
    assert again.score_batch(Y) == pytest.approx(graph.score_batch(Y))


def test_graph_from_dict_rejects_schema_errors() -> None:
    payload = {
        "num_vars": 2,
        "num_labels": 2,
        "unaries": [[0, 0], [0, 0]],
        "pairwise": [{"u": 0, "v": 1, "type": "potts"}],
    }
    with pytest.raises(InvalidInstance):
        graph_from_dict(payload)


def test_graph_from_dict_rejects_wrong_unary_shape() -> None:
    payload = {"num_vars": 2, "num_labels": 3, "unaries": [[0, 0, 0]], "pairwise": []}
    with pytest.raises(InvalidInstance) as excinfo:
        graph_from_dict(payload)
    assert excinfo.value.violations


def test_load_instance_reports_malformed_json(tmp_path) -> None:
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(InvalidInstance):
        load_instance(path)


def test_load_instance_reads_file(tmp_path) -> None:
    path = tmp_path / "chain.json"
    path.write_text(json.dumps(graph_to_dict(_chain())), encoding="utf-8")
    graph = load_instance(path)
    assert (graph.num_vars, graph.num_labels, len(graph.pairwise)) == (3, 2, 2)


def test_codes_follow_lexicographic_order() -> None:
    Y = decode_codes(np.arange(9), 2, 3)
    assert Y.tolist() == [[a, b] for a in range(3) for b in range(3)]
    assert encode_labelings(Y, 3).tolist() == list(range(9))
