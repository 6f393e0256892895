"""Group-coverage diversity functions, their marginal gains, and the
compilation of each gain into a HopAugmentation.

D(S) = Σ_i h(|G_i ∩ S|) with groups defined per family. A list may hold the
same labeling twice; every copy counts as a member of its groups.
"""

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from src.errors import EmptyList, InvalidConfig, InvalidRegions, TooLarge
from src.factor_graph import FactorGraph, Labeling, PairwiseFactor, all_labelings
from src.inference import NO_AUGMENTATION, CardinalityFactor, HopAugmentation
from src.models import ConcaveKind, DiversityFamily, DiversityModel, PairwiseKind

# Exact union-of-balls work materializes every labeling.
EXACT_UNION_CAP = 2**12

COVERAGE_FAMILIES = frozenset(
    {
        DiversityFamily.LABEL_COST,
        DiversityFamily.LABEL_TRANSITION,
        DiversityFamily.REGION_CONSISTENCY,
    }
)


@dataclass(frozen=True)
class ConcaveH:
    kind: ConcaveKind = ConcaveKind.COUNT

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == ConcaveKind.COUNT:
            return np.minimum(1.0, x)
        if self.kind == ConcaveKind.SQRT:
            return np.sqrt(x)
        return np.log1p(x)

    def marginal(self, count):
        """h(count + 1) - h(count)."""
        count = np.asarray(count, dtype=float)
        return self(count + 1.0) - self(count)


def is_coverage_model(model: DiversityModel) -> bool:
    """True when D(S) is an explicit group coverage whose gains telescope to it."""
    return model.family in COVERAGE_FAMILIES or (
        model.family == DiversityFamily.HAMMING_BALL_SET and model.exact_union
    )


@dataclass(frozen=True, eq=False)
class GroupState:
    """Coverage counters for the items chosen so far.

    Every counter is kept regardless of family so that states built
    incrementally and from scratch can be compared field by field.
    """

    family: DiversityFamily
    num_vars: int
    num_labels: int
    label_counts: np.ndarray
    transition_counts: np.ndarray
    region_counts: np.ndarray
    regions: tuple[tuple[int, ...], ...] = ()
    edges: tuple[tuple[int, int], ...] = ()
    radius: int | None = None
    history: tuple[Labeling, ...] = field(default_factory=tuple)

    @classmethod
    def empty(cls, model: DiversityModel, graph: FactorGraph) -> "GroupState":
        regions = check_regions(model.regions, graph.num_vars) if model.regions else ()
        L = graph.num_labels
        return cls(
            family=model.family,
            num_vars=graph.num_vars,
            num_labels=L,
            label_counts=np.zeros(L, dtype=np.int64),
            transition_counts=np.zeros((L, L), dtype=np.int64),
            region_counts=np.zeros((len(regions), L), dtype=np.int64),
            regions=regions,
            edges=tuple(graph.edges),
            radius=model.k,
        )

    @classmethod
    def from_items(
        cls, model: DiversityModel, graph: FactorGraph, items: Iterable[Sequence[int]]
    ) -> "GroupState":
        items = [graph.check_labeling(y) for y in items]
        state = cls.empty(model, graph)
        if not items:
            return state
        Y = np.array(items, dtype=np.intp)
        L = state.num_labels
        label_counts = (Y[:, :, None] == np.arange(L)).any(axis=1).sum(axis=0)
        transition_counts = np.zeros((L, L), dtype=np.int64)
        for y in items:
            for a, b in transitions_of(y, state.edges):
                transition_counts[a, b] += 1
        region_counts = np.zeros_like(state.region_counts)
        for r, region in enumerate(state.regions):
            block = Y[:, list(region)]
            uniform = (block == block[:, :1]).all(axis=1)
            np.add.at(region_counts[r], block[uniform, 0], 1)
        return replace(
            state,
            label_counts=label_counts.astype(np.int64),
            transition_counts=transition_counts,
            region_counts=region_counts,
            history=tuple(items),
        )

    @property
    def size(self) -> int:
        return len(self.history)

    def add(self, y: Sequence[int]) -> "GroupState":
        y = tuple(int(v) for v in y)
        label_counts = self.label_counts.copy()
        label_counts[sorted(set(y))] += 1
        transition_counts = self.transition_counts.copy()
        for a, b in transitions_of(y, self.edges):
            transition_counts[a, b] += 1
        region_counts = self.region_counts.copy()
        for r, label in enumerate(uniform_labels(y, self.regions)):
            if label is not None:
                region_counts[r, label] += 1
        return replace(
            self,
            label_counts=label_counts,
            transition_counts=transition_counts,
            region_counts=region_counts,
            history=self.history + (y,),
        )

    def group_counts(self) -> np.ndarray:
        """Flat per-group counts for the state's family."""
        if self.family == DiversityFamily.LABEL_COST:
            return self.label_counts.astype(float)
        if self.family == DiversityFamily.LABEL_TRANSITION:
            upper = np.triu_indices(self.num_labels, k=1)
            return self.transition_counts[upper].astype(float)
        if self.family == DiversityFamily.REGION_CONSISTENCY:
            return self.region_counts.ravel().astype(float)
        if self.family == DiversityFamily.HAMMING_BALL_SET:
            return ball_counts(self.history, self.num_vars, self.num_labels, int(self.radius))
        raise InvalidConfig(f"family '{self.family.value}' has no explicit group coverage")


def coverage_value(state: GroupState | Sequence[float], h: ConcaveH) -> float:
    counts = state.group_counts() if isinstance(state, GroupState) else np.asarray(state, dtype=float)
    return float(np.sum(h(counts)))


def coverage_gain(
    member_groups: Iterable[int], state: GroupState | Sequence[float], h: ConcaveH
) -> float:
    counts = state.group_counts() if isinstance(state, GroupState) else np.asarray(state, dtype=float)
    groups = sorted(set(member_groups))
    if not groups:
        return 0.0
    return float(np.sum(h.marginal(counts[groups])))


# -- label cost ---------------------------------------------------------------


def labels_of(y: Sequence[int]) -> list[int]:
    return sorted(set(int(v) for v in y))


def label_cost_gain(y: Sequence[int], state: GroupState, h: ConcaveH) -> float:
    return coverage_gain(labels_of(y), state.label_counts, h)


def label_parsimony(model: DiversityModel, num_labels: int) -> np.ndarray:
    if model.family != DiversityFamily.LABEL_COST:
        return np.zeros(num_labels)
    value = model.parsimony.label if model.parsimony is not None else -1.0
    if np.ndim(value) == 0:
        return np.full(num_labels, float(value))
    costs = np.asarray(value, dtype=float)
    if costs.shape != (num_labels,):
        raise InvalidConfig(f"label parsimony needs {num_labels} entries, got {costs.shape}")
    return costs


def compile_label_cost(
    state: GroupState, h: ConcaveH, lam: float, parsimony: np.ndarray
) -> HopAugmentation:
    reward = lam * (h.marginal(state.label_counts) + np.asarray(parsimony, dtype=float))
    return HopAugmentation(label_reward=reward)


# -- label transitions --------------------------------------------------------


def transitions_of(y: Sequence[int], edges: Iterable[tuple[int, int]]) -> set[tuple[int, int]]:
    """Unordered label pairs (a < b) realized on at least one edge."""
    pairs = set()
    for u, v in edges:
        a, b = y[u], y[v]
        if a != b:
            pairs.add((min(a, b), max(a, b)))
    return pairs


def transition_gain(
    y: Sequence[int], edges: Iterable[tuple[int, int]], state: GroupState, h: ConcaveH
) -> float:
    total = 0.0
    for a, b in transitions_of(y, edges):
        total += float(h.marginal(state.transition_counts[a, b]))
    return total


def transition_parsimony(model: DiversityModel, num_labels: int) -> np.ndarray:
    if model.family != DiversityFamily.LABEL_TRANSITION:
        return np.zeros((num_labels, num_labels))
    value = model.parsimony.transition if model.parsimony is not None else -1.0
    if np.ndim(value) == 0:
        return np.full((num_labels, num_labels), float(value))
    costs = np.asarray(value, dtype=float)
    if costs.shape != (num_labels, num_labels):
        raise InvalidConfig(f"transition parsimony needs {num_labels}x{num_labels} entries")
    return costs


def compile_transition(
    state: GroupState, h: ConcaveH, lam: float, parsimony: np.ndarray
) -> HopAugmentation:
    reward = lam * (h.marginal(state.transition_counts) + np.asarray(parsimony, dtype=float))
    return HopAugmentation(transition_reward=np.triu(reward, k=1))


# -- Hamming balls ------------------------------------------------------------


@lru_cache(maxsize=None)
def hamming_ball_size(n: int, L: int, k: int) -> int:
    return sum(math.comb(n, j) * (L - 1) ** j for j in range(min(k, n) + 1))


@lru_cache(maxsize=None)
def ball_intersection_by_distance(m: int, n: int, L: int, k: int) -> int:
    """|B_k(y) ∩ B_k(y')| for ham(y, y') = m.

    On the n - m agreeing coordinates a point either keeps the shared value or
    takes one of L - 1 others (j such flips, adding j to both distances). On
    the m disagreeing coordinates it takes y's value (a of them), y''s value
    (b) or one of the L - 2 remaining values (c).
    """
    total = 0
    for j in range(min(k, n - m) + 1):
        agree = math.comb(n - m, j) * (L - 1) ** j
        for c in range(m + 1):
            other = math.comb(m, c) * (L - 2) ** c
            if other == 0:
                continue
            for a in range(m - c + 1):
                b = m - c - a
                if j + b + c <= k and j + a + c <= k:
                    total += agree * other * math.comb(m - c, a)
    return total


def hamming_distance(y: Sequence[int], z: Sequence[int]) -> int:
    return int(np.sum(np.asarray(y) != np.asarray(z)))


def ball_intersection_size(y: Sequence[int], y_prime: Sequence[int], L: int, k: int) -> int:
    return ball_intersection_by_distance(hamming_distance(y, y_prime), len(y), L, k)


def ball_constant(model: DiversityModel, n: int, L: int, list_size: int) -> float:
    if model.ball_constant_b is not None:
        return float(model.ball_constant_b)
    if model.family == DiversityFamily.HAMMING_BALL_SET:
        return float(hamming_ball_size(n, L, int(model.k)))
    return float(list_size)


def _intersection_curve(model: DiversityModel, n: int, L: int) -> np.ndarray:
    """I(m) for m = 0..n."""
    m = np.arange(n + 1)
    if model.family == DiversityFamily.HAMMING_BALL_SMOOTH:
        return np.exp(-float(model.gamma) * m)
    return np.array([ball_intersection_by_distance(int(d), n, L, int(model.k)) for d in m], dtype=float)


def hamming_lb_gain(
    y: Sequence[int], S: Sequence[Sequence[int]], model: DiversityModel, L: int
) -> float:
    n = len(y)
    curve = _intersection_curve(model, n, L)
    b = ball_constant(model, n, L, len(S))
    return float(b - sum(curve[hamming_distance(y, z)] for z in S))


def compile_hamming_factors(
    S: Sequence[Sequence[int]], model: DiversityModel, n: int, L: int
) -> HopAugmentation:
    if not S:
        raise EmptyList("Hamming factors need at least one previous solution")
    curve = _intersection_curve(model, n, L)
    b = ball_constant(model, n, L, len(S))
    table = model.lam * (b / len(S) - curve)
    factors = tuple(CardinalityFactor(np.asarray(z), table, 1.0) for z in S)
    return HopAugmentation(cardinality_factors=factors)


def _hamming_block(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    D = np.zeros((A.shape[0], B.shape[0]), dtype=np.int16)
    for i in range(A.shape[1]):
        D += A[:, i][:, None] != B[:, i][None, :]
    return D


def _check_exact_union(n: int, L: int) -> None:
    if L**n > EXACT_UNION_CAP:
        raise TooLarge(f"exact ball unions need L^n <= {EXACT_UNION_CAP}, got {L}^{n}")


def ball_counts(S: Sequence[Sequence[int]], n: int, L: int, k: int) -> np.ndarray:
    """Per configuration c, the number of list items within radius k of c."""
    _check_exact_union(n, L)
    space = all_labelings(n, L)
    if not S:
        return np.zeros(space.shape[0])
    return (_hamming_block(np.asarray(S), space) <= k).sum(axis=0).astype(float)


def exact_union_size(S: Sequence[Sequence[int]], n: int, L: int, k: int) -> int:
    return int(np.count_nonzero(ball_counts(S, n, L, k)))


def exact_union_gain_table(
    S: Sequence[Sequence[int]], n: int, L: int, k: int, h: ConcaveH
) -> np.ndarray:
    """Exact coverage gain of every labeling (indexed by code) given S."""
    space = all_labelings(n, L)
    marginal = h.marginal(ball_counts(S, n, L, k))
    gains = np.empty(space.shape[0])
    for start in range(0, space.shape[0], 512):
        block = _hamming_block(space[start : start + 512], space) <= k
        gains[start : start + 512] = block.astype(float) @ marginal
    return gains


# -- DivMBest -----------------------------------------------------------------


def divmbest_augment(graph: FactorGraph, S: Sequence[Sequence[int]], lam: float) -> HopAugmentation:
    n, L = graph.num_vars, graph.num_labels
    additive = np.zeros((n, L))
    if S:
        Y = np.array([graph.check_labeling(z) for z in S], dtype=np.intp)
        agree = (Y[:, :, None] == np.arange(L)[None, None, :]).sum(axis=0)
        additive = lam * (len(S) - agree)
    return HopAugmentation(node_additive=additive)


def divmbest_gain(y: Sequence[int], S: Sequence[Sequence[int]]) -> float:
    return float(sum(hamming_distance(y, z) for z in S))


# -- region consistency -------------------------------------------------------


def check_regions(regions: Sequence[Sequence[int]] | None, n: int) -> tuple[tuple[int, ...], ...]:
    seen: set[int] = set()
    checked = []
    for r, region in enumerate(regions or ()):
        members = tuple(int(i) for i in region)
        if not members:
            raise InvalidRegions(f"region {r} is empty")
        for i in members:
            if not 0 <= i < n:
                raise InvalidRegions(f"region {r} references variable {i} outside [0, {n})")
            if i in seen:
                raise InvalidRegions(f"variable {i} appears in more than one region")
            seen.add(i)
        checked.append(members)
    return tuple(checked)


def uniform_labels(
    y: Sequence[int], regions: Sequence[Sequence[int]]
) -> list[int | None]:
    labels = []
    for region in regions:
        values = {int(y[i]) for i in region}
        labels.append(values.pop() if len(values) == 1 else None)
    return labels


def region_consistency_gain(y: Sequence[int], model: DiversityModel, state: GroupState) -> float:
    h = ConcaveH(model.h)
    total = 0.0
    for r, label in enumerate(uniform_labels(y, state.regions)):
        if label is not None:
            total += float(h.marginal(state.region_counts[r, label]))
    return total


def compile_region_rewards(model: DiversityModel, state: GroupState) -> HopAugmentation:
    h = ConcaveH(model.h)
    return HopAugmentation(
        regions=state.regions,
        region_reward=model.lam * h.marginal(state.region_counts),
    )


@dataclass(frozen=True, eq=False)
class UpperEnvelopeReduction:
    """Pairwise graph with one switching variable per region.

    The switching variable has L + 1 states: claim label q for the region or
    stay off. Claiming q while some member differs costs `penalty`; base
    variables may not take the off state.
    """

    graph: FactorGraph
    num_base_vars: int
    penalty: float

    def decode(self, labeling: Sequence[int]) -> Labeling:
        return tuple(int(v) for v in labeling[: self.num_base_vars])


def compile_upper_envelope(
    graph: FactorGraph, model: DiversityModel, state: GroupState
) -> UpperEnvelopeReduction:
    n, L = graph.num_vars, graph.num_labels
    regions = state.regions
    off = L
    mu = model.lam * ConcaveH(model.h).marginal(state.region_counts)

    scale = float(np.abs(graph.unaries).max(axis=1).sum())
    scale += sum(float(np.abs(f.table(L)).max()) for f in graph.pairwise)
    scale += float(np.abs(mu).sum())
    penalty = 1.0 + 2.0 * scale

    unaries = np.zeros((n + len(regions), L + 1))
    unaries[:n, :L] = graph.unaries
    unaries[:n, off] = -penalty
    unaries[n:, :L] = mu

    factors: list[PairwiseFactor] = []
    for f in graph.pairwise:
        padded = np.zeros((L + 1, L + 1))
        padded[:L, :L] = f.table(L)
        factors.append(PairwiseFactor(f.u, f.v, PairwiseKind.TABLE, scores=padded))
    coupling = np.zeros((L + 1, L + 1))
    for q in range(L):
        coupling[:, q] = -penalty
        coupling[q, q] = 0.0
    for r, region in enumerate(regions):
        for i in region:
            factors.append(PairwiseFactor(i, n + r, PairwiseKind.TABLE, scores=coupling))

    extended = FactorGraph(n + len(regions), L + 1, unaries, tuple(factors))
    return UpperEnvelopeReduction(extended, n, penalty)


# -- family dispatch ----------------------------------------------------------


def marginal_gain(
    model: DiversityModel, graph: FactorGraph, state: GroupState, y: Sequence[int]
) -> float:
    """d(y | S) for the model's family, without λ and without parsimony."""
    h = ConcaveH(model.h)
    family = model.family
    if family == DiversityFamily.LABEL_COST:
        return label_cost_gain(y, state, h)
    if family == DiversityFamily.LABEL_TRANSITION:
        return transition_gain(y, state.edges, state, h)
    if family == DiversityFamily.REGION_CONSISTENCY:
        return region_consistency_gain(y, model, state)
    if family == DiversityFamily.DIVMBEST:
        return divmbest_gain(y, state.history)
    if family == DiversityFamily.HAMMING_BALL_SET and model.exact_union:
        counts = ball_counts(state.history, graph.num_vars, graph.num_labels, int(model.k))
        near = _hamming_block(np.array([y]), all_labelings(graph.num_vars, graph.num_labels))[0]
        return float(np.sum(h.marginal(counts[near <= int(model.k)])))
    return hamming_lb_gain(y, state.history, model, graph.num_labels)


def parsimony_value(model: DiversityModel, graph: FactorGraph, y: Sequence[int]) -> float:
    if model.family == DiversityFamily.LABEL_COST:
        costs = label_parsimony(model, graph.num_labels)
        return float(sum(costs[label] for label in labels_of(y)))
    if model.family == DiversityFamily.LABEL_TRANSITION:
        costs = transition_parsimony(model, graph.num_labels)
        return float(sum(costs[a, b] for a, b in transitions_of(y, graph.edges)))
    return 0.0


def compile_gain(
    model: DiversityModel, graph: FactorGraph, state: GroupState
) -> tuple[HopAugmentation, float]:
    """Returns (aug, constant) with aug(y) + constant = λ(d(y|S) + p(y)) for every y."""
    h = ConcaveH(model.h)
    n, L = graph.num_vars, graph.num_labels
    family = model.family
    if family == DiversityFamily.LABEL_COST:
        return compile_label_cost(state, h, model.lam, label_parsimony(model, L)), 0.0
    if family == DiversityFamily.LABEL_TRANSITION:
        return compile_transition(state, h, model.lam, transition_parsimony(model, L)), 0.0
    if family == DiversityFamily.REGION_CONSISTENCY:
        return compile_region_rewards(model, state), 0.0
    if family == DiversityFamily.DIVMBEST:
        return divmbest_augment(graph, state.history, model.lam), 0.0
    if family == DiversityFamily.HAMMING_BALL_SET and model.exact_union:
        _check_exact_union(n, L)
        table = exact_union_gain_table(state.history, n, L, int(model.k), h)
        return HopAugmentation(dense_gain=model.lam * table), 0.0
    if not state.history:
        return NO_AUGMENTATION, model.lam * ball_constant(model, n, L, 0)
    return compile_hamming_factors(state.history, model, n, L), 0.0


def membership_matrix(
    graph: FactorGraph, model: DiversityModel, items: np.ndarray
) -> np.ndarray:
    """Item × group incidence for coverage families."""
    Y = np.asarray(items, dtype=np.intp)
    n, L = graph.num_vars, graph.num_labels
    family = model.family
    if family == DiversityFamily.LABEL_COST:
        return (Y[:, :, None] == np.arange(L)).any(axis=1)
    if family == DiversityFamily.LABEL_TRANSITION:
        member = np.zeros((Y.shape[0], L * L), dtype=bool)
        for row, y in enumerate(Y.tolist()):
            for a, b in transitions_of(y, graph.edges):
                member[row, a * L + b] = True
        return member
    if family == DiversityFamily.REGION_CONSISTENCY:
        regions = check_regions(model.regions, n)
        member = np.zeros((Y.shape[0], len(regions) * L), dtype=bool)
        for r, region in enumerate(regions):
            block = Y[:, list(region)]
            rows = np.flatnonzero((block == block[:, :1]).all(axis=1))
            member[rows, r * L + block[rows, 0]] = True
        return member
    if family == DiversityFamily.HAMMING_BALL_SET and model.exact_union:
        _check_exact_union(n, L)
        return _hamming_block(Y, all_labelings(n, L)) <= int(model.k)
    raise InvalidConfig(f"family '{family.value}' is not a group coverage")


def pair_kernel(
    graph: FactorGraph, model: DiversityModel, items: np.ndarray
) -> tuple[float, np.ndarray]:
    """(per-item constant u, item-pair matrix K) so that a list's summed gains
    equal Σ_t u + Σ_{s<t} K[s, t] for the pairwise families."""
    Y = np.asarray(items, dtype=np.intp)
    n, L = graph.num_vars, graph.num_labels
    D = _hamming_block(Y, Y).astype(np.intp)
    if model.family == DiversityFamily.DIVMBEST:
        return 0.0, D.astype(float)
    curve = _intersection_curve(model, n, L)
    if model.family == DiversityFamily.HAMMING_BALL_SMOOTH and model.ball_constant_b is None:
        return 0.0, 1.0 - curve[D]
    return ball_constant(model, n, L, 0), -curve[D]
