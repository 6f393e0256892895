"""Factor graphs over base variables and their score r(y).

Scores are maximized everywhere in the package; solvers that minimize energy
negate internally.
"""

import json
import logging
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np
from pydantic import ValidationError

from src.errors import InvalidInstance, InvalidLabeling
from src.models import InstanceSpec, PairwiseKind

logger = logging.getLogger(__name__)

Labeling = tuple[int, ...]


@dataclass(frozen=True, eq=False)
class PairwiseFactor:
    u: int
    v: int
    kind: PairwiseKind = PairwiseKind.POTTS
    weight: float = 0.0
    scores: np.ndarray | None = None  # indexed [y_u, y_v]

    @property
    def is_potts(self) -> bool:
        return self.kind == PairwiseKind.POTTS

    def table(self, num_labels: int) -> np.ndarray:
        if self.is_potts:
            return self.weight * np.eye(num_labels)
        return np.asarray(self.scores, dtype=float)


@dataclass(frozen=True)
class Violation:
    location: str
    message: str

    def __str__(self) -> str:
        return f"{self.location}: {self.message}"


@dataclass(frozen=True, eq=False)
class FactorGraph:
    num_vars: int
    num_labels: int
    unaries: np.ndarray
    pairwise: tuple[PairwiseFactor, ...] = ()

    def __post_init__(self) -> None:
        unaries = np.array(self.unaries, dtype=float)
        unaries.setflags(write=False)
        object.__setattr__(self, "unaries", unaries)
        object.__setattr__(self, "pairwise", tuple(self.pairwise))

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(f.u, f.v) for f in self.pairwise]

    @property
    def is_potts(self) -> bool:
        return all(f.is_potts for f in self.pairwise)

    @property
    def num_labelings(self) -> int:
        return self.num_labels**self.num_vars

    @cached_property
    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Endpoints and stacked E×L×L score tables of all pairwise factors."""
        L = self.num_labels
        us = np.array([f.u for f in self.pairwise], dtype=np.intp)
        vs = np.array([f.v for f in self.pairwise], dtype=np.intp)
        if self.pairwise:
            tables = np.stack([f.table(L) for f in self.pairwise])
        else:
            tables = np.zeros((0, L, L))
        return us, vs, tables

    def check_labeling(self, y: Sequence[int]) -> Labeling:
        labels = tuple(int(v) for v in y)
        if len(labels) != self.num_vars:
            raise InvalidLabeling(
                f"labeling has {len(labels)} entries, graph has {self.num_vars} variables"
            )
        for i, label in enumerate(labels):
            if not 0 <= label < self.num_labels:
                raise InvalidLabeling(
                    f"label {label} at variable {i} outside [0, {self.num_labels})"
                )
        return labels

    def score_batch(self, Y: np.ndarray) -> np.ndarray:
        """Scores of each row of a k×n integer array of labelings."""
        Y = np.asarray(Y, dtype=np.intp)
        total = self.unaries[np.arange(self.num_vars), Y].sum(axis=1)
        if self.pairwise:
            us, vs, tables = self.edge_arrays
            picked = tables[np.arange(len(us)), Y[:, us], Y[:, vs]]
            total = total + picked.sum(axis=1)
        return total


def evaluate_score(graph: FactorGraph, y: Sequence[int]) -> float:
    labels = graph.check_labeling(y)
    return float(graph.score_batch(np.array([labels]))[0])


def shift_nonnegative(graph: FactorGraph) -> tuple[FactorGraph, float]:
    """Adds -Σ(per-factor minimum) to variable 0 so every score is >= 0."""
    L = graph.num_labels
    floor = float(graph.unaries.min(axis=1).sum())
    floor += sum(float(f.table(L).min()) for f in graph.pairwise)
    offset = -floor
    unaries = np.array(graph.unaries, dtype=float)
    unaries[0] += offset
    return replace(graph, unaries=unaries), offset


def validate(graph: FactorGraph) -> list[Violation]:
    """Checks every FactorGraph invariant; an empty list means the graph is valid."""
    violations: list[Violation] = []
    n, L = graph.num_vars, graph.num_labels
    if n < 1:
        violations.append(Violation("num_vars", "must be positive"))
    if L < 1:
        violations.append(Violation("num_labels", "must be positive"))
    if graph.unaries.shape != (n, L):
        violations.append(
            Violation("unaries", f"expected shape ({n}, {L}), got {graph.unaries.shape}")
        )
    elif not np.all(np.isfinite(graph.unaries)):
        violations.append(Violation("unaries", "non-finite entry"))

    seen: dict[tuple[int, int], int] = {}
    for idx, f in enumerate(graph.pairwise):
        where = f"pairwise[{idx}]"
        if not (0 <= f.u < n and 0 <= f.v < n):
            violations.append(Violation(where, "endpoint out of range"))
            continue
        if f.u == f.v:
            violations.append(Violation(where, "endpoints must be distinct"))
            continue
        key = (min(f.u, f.v), max(f.u, f.v))
        if key in seen:
            violations.append(
                Violation(where, f"duplicate pair {key} (first at pairwise[{seen[key]}])")
            )
        else:
            seen[key] = idx
        if f.is_potts:
            if not np.isfinite(f.weight):
                violations.append(Violation(where, "non-finite potts weight"))
            elif f.weight < 0:
                violations.append(Violation(where, "negative potts weight"))
        else:
            table = np.asarray(f.scores, dtype=float) if f.scores is not None else None
            if table is None or table.shape != (L, L):
                shape = None if table is None else table.shape
                violations.append(Violation(where, f"expected ({L}, {L}) table, got {shape}"))
            elif not np.all(np.isfinite(table)):
                violations.append(Violation(where, "non-finite table entry"))
    return violations


def graph_from_spec(spec: InstanceSpec) -> FactorGraph:
    factors = []
    try:
        unaries = np.array(spec.unaries, dtype=float)
        for p in spec.pairwise:
            if p.type == PairwiseKind.POTTS:
                factors.append(PairwiseFactor(p.u, p.v, PairwiseKind.POTTS, float(p.w)))
            else:
                scores = np.array(p.scores, dtype=float)
                factors.append(PairwiseFactor(p.u, p.v, PairwiseKind.TABLE, scores=scores))
    except ValueError as e:
        raise InvalidInstance(f"ragged table in instance: {e}") from e

    graph = FactorGraph(spec.num_vars, spec.num_labels, unaries, tuple(factors))
    violations = validate(graph)
    if violations:
        detail = "; ".join(str(v) for v in violations)
        raise InvalidInstance(f"invalid instance: {detail}", violations)
    return graph


def graph_from_dict(payload: dict[str, Any]) -> FactorGraph:
    try:
        spec = InstanceSpec.model_validate(payload)
    except ValidationError as e:
        raise InvalidInstance(f"instance does not match the schema: {e}") from e
    return graph_from_spec(spec)


def load_instance(path: str | Path) -> FactorGraph:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise InvalidInstance(f"{path} is not valid JSON: {e}") from e
    if not isinstance(payload, dict):
        raise InvalidInstance(f"{path} must hold a JSON object")
    graph = graph_from_dict(payload)
    logger.debug("loaded %s: n=%d L=%d edges=%d", path, graph.num_vars, graph.num_labels, len(graph.pairwise))
    return graph


def graph_to_dict(graph: FactorGraph) -> dict[str, Any]:
    pairwise = []
    for f in graph.pairwise:
        if f.is_potts:
            pairwise.append({"u": f.u, "v": f.v, "type": "potts", "w": float(f.weight)})
        else:
            pairwise.append(
                {"u": f.u, "v": f.v, "type": "table", "scores": np.asarray(f.scores).tolist()}
            )
    return {
        "num_vars": graph.num_vars,
        "num_labels": graph.num_labels,
        "unaries": graph.unaries.tolist(),
        "pairwise": pairwise,
    }


def decode_codes(codes: np.ndarray, num_vars: int, num_labels: int) -> np.ndarray:
    """Maps integer codes to labelings; variable 0 is the most significant digit,
    so ascending codes are lexicographic order."""
    powers = num_labels ** np.arange(num_vars - 1, -1, -1, dtype=np.int64)
    return (np.asarray(codes, dtype=np.int64)[:, None] // powers[None, :]) % num_labels


def encode_labelings(Y: np.ndarray, num_labels: int) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.int64)
    powers = num_labels ** np.arange(Y.shape[1] - 1, -1, -1, dtype=np.int64)
    return Y @ powers


def iter_labeling_blocks(
    num_vars: int, num_labels: int, block_size: int = 1 << 16
) -> Iterator[tuple[int, np.ndarray]]:
    """Yields (first code, labelings) blocks covering [L]^n in lexicographic order."""
    total = num_labels**num_vars
    for start in range(0, total, block_size):
        codes = np.arange(start, min(start + block_size, total), dtype=np.int64)
        yield start, decode_codes(codes, num_vars, num_labels)


def all_labelings(num_vars: int, num_labels: int) -> np.ndarray:
    codes = np.arange(num_labels**num_vars, dtype=np.int64)
    return decode_codes(codes, num_vars, num_labels)
