"""MAP solvers for plain and HOP-augmented factor graphs.

Each greedy step hands one of these a FactorGraph plus a HopAugmentation that
carries the compiled diversity gain.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import networkx as nx
import numpy as np
from networkx.algorithms.flow import edmonds_karp

from src.config import SolverConfig
from src.errors import (
    InvalidFactor,
    NotSubmodular,
    SolverError,
    TooLarge,
    UnsupportedFactor,
    WrongArity,
)
from src.factor_graph import FactorGraph, Labeling, encode_labelings, iter_labeling_blocks

logger = logging.getLogger(__name__)

_DEFAULTS = SolverConfig()
TIE_TOLERANCE = 1e-9
_FLOW_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class CardinalityFactor:
    """Scores y by weight * value_table[ham(reference, y)]."""

    reference: np.ndarray
    value_table: np.ndarray
    weight: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "reference", np.asarray(self.reference, dtype=np.intp))
        object.__setattr__(self, "value_table", np.asarray(self.value_table, dtype=float))
        if self.value_table.shape != (self.reference.size + 1,):
            raise InvalidFactor(
                f"value table needs {self.reference.size + 1} entries, got {self.value_table.size}"
            )
        if not np.all(np.isfinite(self.value_table)):
            raise InvalidFactor("value table has non-finite entries")

    @property
    def num_vars(self) -> int:
        return int(self.reference.size)

    def evaluate_batch(self, Y: np.ndarray) -> np.ndarray:
        ham = (np.asarray(Y) != self.reference[None, :]).sum(axis=1)
        return self.weight * self.value_table[ham]


@dataclass(frozen=True, eq=False)
class HopAugmentation:
    """High-order terms added to r(y) for one greedy step.

    Several parts may be set at once when gains are combined linearly.
    `dense_gain` holds one value per labeling code and is only usable by
    map_exact.
    """

    label_reward: np.ndarray | None = None
    transition_reward: np.ndarray | None = None
    cardinality_factors: tuple[CardinalityFactor, ...] = ()
    node_additive: np.ndarray | None = None
    regions: tuple[tuple[int, ...], ...] = ()
    region_reward: np.ndarray | None = None
    dense_gain: np.ndarray | None = None

    @property
    def parts(self) -> frozenset[str]:
        present = set()
        if self.label_reward is not None:
            present.add("label_reward")
        if self.transition_reward is not None:
            present.add("transition_reward")
        if self.cardinality_factors:
            present.add("cardinality_factors")
        if self.node_additive is not None:
            present.add("node_additive")
        if self.region_reward is not None:
            present.add("region_reward")
        if self.dense_gain is not None:
            present.add("dense_gain")
        return frozenset(present)

    @property
    def is_empty(self) -> bool:
        return not self.parts

    def check(self, graph: FactorGraph) -> None:
        n, L = graph.num_vars, graph.num_labels
        if self.label_reward is not None and np.shape(self.label_reward) != (L,):
            raise InvalidFactor(f"label_reward needs {L} entries")
        if self.transition_reward is not None and np.shape(self.transition_reward) != (L, L):
            raise InvalidFactor(f"transition_reward needs {L}x{L} entries")
        if self.node_additive is not None and np.shape(self.node_additive) != (n, L):
            raise InvalidFactor(f"node_additive needs {n}x{L} entries")
        for factor in self.cardinality_factors:
            if factor.num_vars != n:
                raise InvalidFactor(
                    f"cardinality factor covers {factor.num_vars} variables, graph has {n}"
                )
        if self.region_reward is not None and np.shape(self.region_reward) != (len(self.regions), L):
            raise InvalidFactor("region_reward needs one row of L entries per region")
        if self.dense_gain is not None and np.size(self.dense_gain) != graph.num_labelings:
            raise InvalidFactor("dense_gain needs one entry per labeling")

    def evaluate_batch(self, graph: FactorGraph, Y: np.ndarray) -> np.ndarray:
        Y = np.asarray(Y, dtype=np.intp)
        k, n, L = Y.shape[0], graph.num_vars, graph.num_labels
        total = np.zeros(k)
        if self.label_reward is not None:
            present = (Y[:, :, None] == np.arange(L)[None, None, :]).any(axis=1)
            total += present @ np.asarray(self.label_reward, dtype=float)
        if self.transition_reward is not None and graph.pairwise:
            us, vs, _ = graph.edge_arrays
            a, b = Y[:, us], Y[:, vs]
            lo, hi = np.minimum(a, b), np.maximum(a, b)
            rows, cols = np.nonzero(lo != hi)
            realized = np.zeros((k, L, L), dtype=bool)
            realized[rows, lo[rows, cols], hi[rows, cols]] = True
            upper = np.triu(np.asarray(self.transition_reward, dtype=float), k=1)
            total += (realized * upper[None, :, :]).sum(axis=(1, 2))
        for factor in self.cardinality_factors:
            total += factor.evaluate_batch(Y)
        if self.node_additive is not None:
            total += np.asarray(self.node_additive)[np.arange(n), Y].sum(axis=1)
        if self.region_reward is not None:
            rewards = np.asarray(self.region_reward, dtype=float)
            for r, region in enumerate(self.regions):
                block = Y[:, list(region)]
                uniform = (block == block[:, :1]).all(axis=1)
                total += np.where(uniform, rewards[r, block[:, 0]], 0.0)
        if self.dense_gain is not None:
            total += np.asarray(self.dense_gain)[encode_labelings(Y, L)]
        return total

    def evaluate(self, graph: FactorGraph, y: Sequence[int]) -> float:
        return float(self.evaluate_batch(graph, np.array([graph.check_labeling(y)]))[0])

    def gain_fn(self, graph: FactorGraph) -> Callable[[np.ndarray], np.ndarray]:
        return lambda Y: self.evaluate_batch(graph, Y)

    def scaled(self, weight: float) -> "HopAugmentation":
        def _mul(arr):
            return None if arr is None else weight * np.asarray(arr, dtype=float)

        return HopAugmentation(
            label_reward=_mul(self.label_reward),
            transition_reward=_mul(self.transition_reward),
            cardinality_factors=tuple(
                CardinalityFactor(f.reference, f.value_table, weight * f.weight)
                for f in self.cardinality_factors
            ),
            node_additive=_mul(self.node_additive),
            regions=self.regions,
            region_reward=_mul(self.region_reward),
            dense_gain=_mul(self.dense_gain),
        )

    def __add__(self, other: "HopAugmentation") -> "HopAugmentation":
        def _sum(a, b):
            if a is None:
                return b
            if b is None:
                return a
            return np.asarray(a, dtype=float) + np.asarray(b, dtype=float)

        if self.region_reward is None:
            regions, region_reward = other.regions, other.region_reward
        elif other.region_reward is None:
            regions, region_reward = self.regions, self.region_reward
        else:
            regions = self.regions + other.regions
            region_reward = np.vstack([self.region_reward, other.region_reward])
        return HopAugmentation(
            label_reward=_sum(self.label_reward, other.label_reward),
            transition_reward=_sum(self.transition_reward, other.transition_reward),
            cardinality_factors=self.cardinality_factors + other.cardinality_factors,
            node_additive=_sum(self.node_additive, other.node_additive),
            regions=regions,
            region_reward=region_reward,
            dense_gain=_sum(self.dense_gain, other.dense_gain),
        )


NO_AUGMENTATION = HopAugmentation()


def augmented_score(graph: FactorGraph, aug: HopAugmentation | None, y: Sequence[int]) -> float:
    Y = np.array([graph.check_labeling(y)])
    value = graph.score_batch(Y)
    if aug is not None:
        value = value + aug.evaluate_batch(graph, Y)
    return float(value[0])


def _augmented_batch(graph: FactorGraph, aug: HopAugmentation | None, Y: np.ndarray) -> np.ndarray:
    values = graph.score_batch(Y)
    if aug is not None and not aug.is_empty:
        values = values + aug.evaluate_batch(graph, Y)
    return values


def map_exact(
    graph: FactorGraph,
    aug: HopAugmentation | None = None,
    enum_cap: int | None = None,
) -> tuple[Labeling, float]:
    """Exhaustive MAP; scores within TIE_TOLERANCE of the best are ties and
    the lexicographically smallest labeling wins."""
    cap = _DEFAULTS.enum_cap if enum_cap is None else enum_cap
    total = graph.num_labelings
    if total > cap:
        raise TooLarge(f"{graph.num_labels}^{graph.num_vars} labelings exceed the enumeration cap {cap}")
    if aug is not None:
        aug.check(graph)

    best_max = -np.inf
    chosen_code, chosen_value = 0, -np.inf
    for start, Y in iter_labeling_blocks(graph.num_vars, graph.num_labels):
        values = _augmented_batch(graph, aug, Y)
        block_max = float(values.max())
        if block_max > best_max + TIE_TOLERANCE:
            idx = int(np.argmax(values >= block_max - TIE_TOLERANCE))
            chosen_code, chosen_value = start + idx, float(values[idx])
            best_max = block_max
        elif block_max > best_max:
            best_max = block_max

    labels = labeling_from_code(chosen_code, graph.num_vars, graph.num_labels)
    return labels, chosen_value


def labeling_from_code(code: int, num_vars: int, num_labels: int) -> Labeling:
    digits = []
    for _ in range(num_vars):
        digits.append(code % num_labels)
        code //= num_labels
    return tuple(reversed(digits))


@dataclass(frozen=True)
class FlowNetwork:
    num_nodes: int
    source: int
    sink: int
    arcs: tuple[tuple[int, int, float], ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.source == self.sink:
            raise InvalidFactor("source and sink must differ")
        for u, v, capacity in self.arcs:
            if capacity < 0:
                raise InvalidFactor(f"arc ({u}, {v}) has negative capacity {capacity}")
            if not (0 <= u < self.num_nodes and 0 <= v < self.num_nodes):
                raise InvalidFactor(f"arc ({u}, {v}) references a node outside the network")


def max_flow(net: FlowNetwork) -> tuple[float, frozenset[int]]:
    """Maximum s-t flow and the source side of a minimum cut.

    The cut side is read off the residual graph: an arc counts as saturated
    once its residual capacity falls below a tolerance scaled to the largest
    capacity, so float round-off cannot strand the source.
    """
    g = nx.DiGraph()
    g.add_nodes_from(range(net.num_nodes))
    for u, v, capacity in net.arcs:
        if capacity <= 0 or u == v:
            continue
        if g.has_edge(u, v):
            g[u][v]["capacity"] += capacity
        else:
            g.add_edge(u, v, capacity=capacity)
    largest = max((c for _, _, c in g.edges(data="capacity")), default=0.0)
    tol = _FLOW_TOLERANCE * max(1.0, largest)

    residual = edmonds_karp(g, net.source, net.sink)
    value = float(residual.graph["flow_value"])
    open_arcs = nx.subgraph_view(
        residual,
        filter_edge=lambda u, v: residual[u][v]["capacity"] - residual[u][v]["flow"] > tol,
    )
    source_side = frozenset(nx.descendants(open_arcs, net.source) | {net.source})
    if net.sink in source_side:
        raise SolverError("max flow left an augmenting path to the sink")

    cut = sum(c for u, v, c in g.edges(data="capacity") if u in source_side and v not in source_side)
    if abs(cut - value) > tol * max(1, g.number_of_edges()):
        raise SolverError(f"cut capacity {cut:.12g} does not match flow value {value:.12g}")
    return value, source_side


def _solve_binary_energy(
    unary: np.ndarray,
    us: np.ndarray,
    vs: np.ndarray,
    A: np.ndarray,
    B: np.ndarray,
    C: np.ndarray,
    D: np.ndarray,
) -> np.ndarray:
    """Minimizes Σ unary[i, x_i] + Σ E_e(x_u, x_v) over binary x by one min-cut.

    E_e is given by its four entries A=E(0,0), B=E(0,1), C=E(1,0), D=E(1,1)
    and must satisfy A + D <= B + C. Source side means x = 0.
    """
    num = unary.shape[0]
    source, sink = num, num + 1
    cost1 = unary[:, 1] - unary[:, 0]
    np.add.at(cost1, us, C - A)
    np.add.at(cost1, vs, D - C)
    coupling = B + C - A - D

    arcs: list[tuple[int, int, float]] = []
    for u, v, w in zip(us.tolist(), vs.tolist(), coupling.tolist()):
        if w > 0:
            arcs.append((u, v, w))
    for i, c in enumerate(cost1.tolist()):
        if c > 0:
            arcs.append((source, i, c))
        elif c < 0:
            arcs.append((i, sink, -c))

    _, source_side = max_flow(FlowNetwork(num + 2, source, sink, tuple(arcs)))
    return np.array([0 if i in source_side else 1 for i in range(num)], dtype=np.intp)


def map_graphcut_binary(
    graph: FactorGraph, node_additive: np.ndarray | None = None
) -> tuple[Labeling, float]:
    """Exact MAP for binary graphs whose pairwise tables are supermodular in score."""
    if graph.num_labels != 2:
        raise WrongArity(f"graph cut needs 2 labels, graph has {graph.num_labels}")
    n = graph.num_vars
    additive = np.zeros((n, 2)) if node_additive is None else np.asarray(node_additive, dtype=float)
    us, vs, tables = graph.edge_arrays
    slack = tables[:, 0, 0] + tables[:, 1, 1] - tables[:, 0, 1] - tables[:, 1, 0]
    bad = np.flatnonzero(slack < -1e-12)
    if bad.size:
        raise NotSubmodular(f"pairwise[{int(bad[0])}] violates θ00+θ11 >= θ01+θ10")

    energy = -(graph.unaries + additive)
    x = _solve_binary_energy(
        energy, us, vs, -tables[:, 0, 0], -tables[:, 0, 1], -tables[:, 1, 0], -tables[:, 1, 1]
    )
    labels = tuple(int(v) for v in x)
    aug = HopAugmentation(node_additive=additive)
    return labels, augmented_score(graph, aug, labels)


def _expansion_move(
    y: np.ndarray,
    alpha: int,
    theta: np.ndarray,
    reward: np.ndarray,
    us: np.ndarray,
    vs: np.ndarray,
    weights: np.ndarray,
    bound_vacated: bool,
) -> np.ndarray:
    """One α-expansion move: x_i = 1 switches variable i to alpha.

    Label costs (negative rewards) use auxiliary nodes. Positive rewards are
    replaced by a modular upper bound on the energy tied to one variable;
    with bound_vacated=False the reward lost by vacating a label is dropped.
    """
    n = y.size
    rows = np.arange(n)
    unary = np.zeros((n, 2))
    unary[:, 0] = -theta[rows, y]
    unary[:, 1] = -theta[:, alpha]

    a, b = y[us], y[vs]
    pair_u, pair_v = [us], [vs]
    pair_A = [weights * (a != b)]
    pair_B = [weights * (a != alpha)]
    pair_C = [weights * (b != alpha)]
    pair_D = [np.zeros_like(weights)]
    aux_unary: list[tuple[float, float]] = []

    def _aux_node(e0: float, e1: float) -> int:
        aux_unary.append((e0, e1))
        return n + len(aux_unary) - 1

    for label in range(reward.size):
        r = float(reward[label])
        if r == 0.0:
            continue
        members = np.flatnonzero(y == label)
        if label == alpha:
            if members.size:
                continue
            if r < 0:
                z = _aux_node(0.0, -r)
                pair_u.append(np.full(n, z))
                pair_v.append(rows)
                pair_A.append(np.zeros(n))
                pair_B.append(np.full(n, -r))
                pair_C.append(np.zeros(n))
                pair_D.append(np.zeros(n))
            else:
                j = int(np.argmax(theta[:, alpha] - theta[rows, y]))
                unary[j, 0] += r
        else:
            if not members.size:
                continue
            if r < 0:
                z = _aux_node(-r, 0.0)
                m = members.size
                pair_u.append(np.full(m, z))
                pair_v.append(members)
                pair_A.append(np.zeros(m))
                pair_B.append(np.zeros(m))
                pair_C.append(np.full(m, -r))
                pair_D.append(np.zeros(m))
            elif bound_vacated:
                j = int(members[np.argmax(theta[members, label] - theta[members, alpha])])
                unary[j, 1] += r

    if aux_unary:
        unary = np.vstack([unary, np.array(aux_unary)])
    x = _solve_binary_energy(
        unary,
        np.concatenate(pair_u).astype(np.intp),
        np.concatenate(pair_v).astype(np.intp),
        np.concatenate(pair_A),
        np.concatenate(pair_B),
        np.concatenate(pair_C),
        np.concatenate(pair_D),
    )
    return np.where(x[:n] == 1, alpha, y)


def map_alpha_expansion(
    graph: FactorGraph,
    label_reward: np.ndarray | None = None,
    node_additive: np.ndarray | None = None,
    max_sweeps: int | None = None,
    tolerance: float | None = None,
) -> tuple[Labeling, float]:
    """α-expansion for Potts graphs with per-label rewards granted once per label used."""
    if not graph.is_potts:
        raise UnsupportedFactor("α-expansion needs Potts pairwise factors")
    n, L = graph.num_vars, graph.num_labels
    sweeps = _DEFAULTS.expansion_max_sweeps if max_sweeps is None else max_sweeps
    tol = _DEFAULTS.move_tolerance if tolerance is None else tolerance
    reward = np.zeros(L) if label_reward is None else np.asarray(label_reward, dtype=float)
    additive = np.zeros((n, L)) if node_additive is None else np.asarray(node_additive, dtype=float)
    aug = HopAugmentation(label_reward=reward, node_additive=additive)
    aug.check(graph)

    theta = graph.unaries + additive
    us, vs, _ = graph.edge_arrays
    weights = np.array([f.weight for f in graph.pairwise], dtype=float)

    y = theta.argmax(axis=1).astype(np.intp)
    current = float(_augmented_batch(graph, aug, y[None, :])[0])
    for sweep in range(sweeps):
        improved = False
        for alpha in range(L):
            candidates = [
                _expansion_move(y, alpha, theta, reward, us, vs, weights, bound_vacated=True),
                _expansion_move(y, alpha, theta, reward, us, vs, weights, bound_vacated=False),
                np.full(n, alpha, dtype=np.intp),
            ]
            values = _augmented_batch(graph, aug, np.stack(candidates))
            best = int(np.argmax(values))
            if values[best] > current + tol:
                y, current = candidates[best], float(values[best])
                improved = True
        logger.debug("expansion sweep %d: score %.6f", sweep, current)
        if not improved:
            break
    return tuple(int(v) for v in y), current


def cardinality_messages(factor: CardinalityFactor, incoming: np.ndarray) -> np.ndarray:
    """Max-product messages from a cardinality factor to each of its variables.

    Each variable reduces to "match the reference" or "best mismatching label";
    sorting the mismatch-minus-match deltas once gives the best total for every
    mismatch count, and prefix/suffix maxima give every variable's message in
    O(n log n + nL).
    """
    incoming = np.asarray(incoming, dtype=float)
    ref = factor.reference
    n = ref.size
    if incoming.ndim != 2 or incoming.shape[0] != n:
        raise InvalidFactor(f"incoming table must have {n} rows, got shape {incoming.shape}")
    L = incoming.shape[1]
    if L < 2:
        raise InvalidFactor("cardinality messages need at least 2 labels")
    if np.any(ref >= L) or np.any(ref < 0):
        raise InvalidFactor("reference labeling outside the label range")

    g = factor.weight * factor.value_table
    rows = np.arange(n)
    match = incoming[rows, ref]
    masked = incoming.copy()
    masked[rows, ref] = -np.inf
    delta = masked.max(axis=1) - match

    order = np.argsort(-delta, kind="stable")
    rank = np.empty(n, dtype=np.intp)
    rank[order] = rows
    prefix = np.concatenate(([0.0], np.cumsum(delta[order])))
    counts = np.arange(n)

    best = []
    for m in (0, 1):
        below = np.maximum.accumulate(g[counts + m] + prefix[counts])
        above = np.maximum.accumulate((g[counts + m] + prefix[counts + 1])[::-1])[::-1]
        above = np.append(above, -np.inf)
        best.append(np.maximum(below[rank], above[rank + 1] - delta))

    others = match.sum() - match
    mismatched = np.arange(L)[None, :] != ref[:, None]
    return others[:, None] + np.where(mismatched, best[1][:, None], best[0][:, None])


def map_with_cardinality(
    graph: FactorGraph,
    factors: Sequence[CardinalityFactor] = (),
    max_iters: int | None = None,
    damping: float | None = None,
    node_additive: np.ndarray | None = None,
) -> tuple[Labeling, float]:
    """Damped synchronous max-product over unary, pairwise and cardinality factors.

    Returns the best decode seen under the true augmented score, polished to
    a single-flip local optimum.
    """
    iters = _DEFAULTS.bp_max_iters if max_iters is None else max_iters
    damp = _DEFAULTS.bp_damping if damping is None else damping
    if iters < 1:
        raise ValueError("max_iters must be at least 1")
    if not 0.0 <= damp < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    n, L = graph.num_vars, graph.num_labels
    additive = np.zeros((n, L)) if node_additive is None else np.asarray(node_additive, dtype=float)
    aug = HopAugmentation(cardinality_factors=tuple(factors), node_additive=additive)
    aug.check(graph)

    theta = graph.unaries + additive
    us, vs, tables = graph.edge_arrays
    to_u = np.zeros((us.size, L))
    to_v = np.zeros((us.size, L))
    card = np.zeros((len(factors), n, L))

    best_y = theta.argmax(axis=1)
    best_value = float(_augmented_batch(graph, aug, best_y[None, :])[0])
    for it in range(iters):
        belief = theta + card.sum(axis=0)
        np.add.at(belief, us, to_u)
        np.add.at(belief, vs, to_v)

        u_in = belief[us] - to_u
        v_in = belief[vs] - to_v
        new_to_v = (tables + u_in[:, :, None]).max(axis=1)
        new_to_u = (tables + v_in[:, None, :]).max(axis=2)
        new_card = np.stack(
            [cardinality_messages(f, belief - card[k]) for k, f in enumerate(factors)]
        ) if factors else card

        change = 0.0
        for old, new in ((to_u, new_to_u), (to_v, new_to_v), (card, new_card)):
            if new.size:
                new = new - new.max(axis=-1, keepdims=True)
                damped = damp * old + (1.0 - damp) * new
                change = max(change, float(np.abs(damped - old).max()))
                old[...] = damped

        belief = theta + card.sum(axis=0)
        np.add.at(belief, us, to_u)
        np.add.at(belief, vs, to_v)
        y = belief.argmax(axis=1)
        value = float(_augmented_batch(graph, aug, y[None, :])[0])
        if value > best_value + _DEFAULTS.move_tolerance:
            best_y, best_value = y, value
        if change < 1e-10:
            logger.debug("message passing converged after %d iterations", it + 1)
            break
    return local_search(graph, aug.gain_fn(graph), best_y)


def local_search(
    graph: FactorGraph,
    gain_fn: Callable[[np.ndarray], np.ndarray],
    init: Sequence[int],
    max_sweeps: int | None = None,
) -> tuple[Labeling, float]:
    """Iterated conditional modes on score + gain, alternated with label merges.

    A merge relabels every variable holding label a as b, which removes a
    label and all of its transitions in one move. gain_fn maps a k×n array of
    labelings to k gains.
    """
    sweeps = _DEFAULTS.local_search_max_sweeps if max_sweeps is None else max_sweeps
    n, L = graph.num_vars, graph.num_labels
    y = np.array(graph.check_labeling(init), dtype=np.intp)
    current = float(graph.score_batch(y[None, :])[0] + gain_fn(y[None, :])[0])
    labels = np.arange(L)
    merges = [(a, b) for a in range(L) for b in range(L) if a != b]
    for _ in range(sweeps):
        changed = False
        for i in range(n):
            candidates = np.repeat(y[None, :], L, axis=0)
            candidates[:, i] = labels
            values = graph.score_batch(candidates) + gain_fn(candidates)
            best = int(np.argmax(values))
            if values[best] > current + _DEFAULTS.move_tolerance:
                y, current = candidates[best].copy(), float(values[best])
                changed = True
        if merges:
            candidates = np.repeat(y[None, :], len(merges), axis=0)
            for k, (a, b) in enumerate(merges):
                candidates[k, y == a] = b
            values = graph.score_batch(candidates) + gain_fn(candidates)
            best = int(np.argmax(values))
            if values[best] > current + _DEFAULTS.move_tolerance:
                y, current = candidates[best].copy(), float(values[best])
                changed = True
        if not changed:
            break
    return tuple(int(v) for v in y), current
