"""The list objective F(S) = R(S) + Σ_j w_j λ_j D_j(S), recomputed from scratch.

Parsimony enters as a modular term, so one greedy step adds
r(y) + Σ_j w_j λ_j (d_j(y|S) + p_j(y)).
"""

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from src.diversity import (
    ConcaveH,
    GroupState,
    coverage_value,
    is_coverage_model,
    marginal_gain,
    membership_matrix,
    pair_kernel,
    parsimony_value,
)
from src.factor_graph import FactorGraph, Labeling, evaluate_score
from src.models import DiversityModel, SolutionList, SolutionStep

Component = tuple[DiversityModel, float]


@dataclass(frozen=True)
class StepTerms:
    relevance: float
    gain: float
    parsimony: float
    objective_gain: float


def as_components(model_or_components: DiversityModel | Sequence[Component]) -> list[Component]:
    if isinstance(model_or_components, DiversityModel):
        return [(model_or_components, 1.0)]
    return [(model, float(weight)) for model, weight in model_or_components]


def step_terms(
    graph: FactorGraph,
    components: Sequence[Component],
    states: Sequence[GroupState],
    y: Sequence[int],
) -> StepTerms:
    relevance = evaluate_score(graph, y)
    gain = parsimony = 0.0
    objective_gain = relevance
    for (model, weight), state in zip(components, states):
        d = marginal_gain(model, graph, state, y)
        p = parsimony_value(model, graph, y)
        gain += weight * d
        parsimony += weight * p
        objective_gain += weight * model.lam * (d + p)
    return StepTerms(relevance, gain, parsimony, objective_gain)


def rescore_list(
    graph: FactorGraph,
    components: Sequence[Component],
    items: Sequence[Sequence[int]],
    config: dict[str, Any] | None = None,
    backends: Sequence[str] | None = None,
) -> SolutionList:
    """Per-step records and cumulative F of a list under the given components."""
    states = [GroupState.empty(model, graph) for model, _ in components]
    steps: list[SolutionStep] = []
    F = 0.0
    for t, y in enumerate(items):
        y = graph.check_labeling(y)
        terms = step_terms(graph, components, states, y)
        F += terms.objective_gain
        steps.append(
            SolutionStep(
                labels=list(y),
                relevance=terms.relevance,
                gain=terms.gain,
                parsimony=terms.parsimony,
                objective_gain=terms.objective_gain,
                F=F,
                backend=backends[t] if backends else "",
            )
        )
        states = [state.add(y) for state in states]
    return SolutionList(steps=steps, config=config or {})


def _diversity_value(graph: FactorGraph, model: DiversityModel, items: list[Labeling]) -> float:
    if is_coverage_model(model):
        state = GroupState.from_items(model, graph, items)
        value = coverage_value(state, ConcaveH(model.h))
        return value + sum(parsimony_value(model, graph, y) for y in items)
    if not items:
        return 0.0
    unary, kernel = pair_kernel(graph, model, np.array(items))
    return len(items) * unary + float(np.triu(kernel, k=1).sum())


def list_objective(
    graph: FactorGraph,
    components: Sequence[Component],
    items: Sequence[Sequence[int]],
) -> float:
    items = [graph.check_labeling(y) for y in items]
    total = sum(evaluate_score(graph, y) for y in items)
    for model, weight in components:
        total += weight * model.lam * _diversity_value(graph, model, items)
    return float(total)


class PoolScorer:
    """Scores many lists drawn from one pool of labelings.

    Per-item terms (relevance, group membership, parsimony, pair kernels) are
    computed once; each call then reduces over index rows.
    """

    def __init__(
        self, graph: FactorGraph, components: Sequence[Component], pool: np.ndarray
    ) -> None:
        self.pool = np.asarray(pool, dtype=np.intp)
        self.relevance = graph.score_batch(self.pool)
        self._terms = []
        for model, weight in components:
            scale = weight * model.lam
            if scale == 0.0:
                continue
            if is_coverage_model(model):
                member = membership_matrix(graph, model, self.pool).astype(float)
                pars = np.array([parsimony_value(model, graph, y) for y in self.pool.tolist()])
                self._terms.append(("coverage", scale, ConcaveH(model.h), member, pars))
            else:
                unary, kernel = pair_kernel(graph, model, self.pool)
                self._terms.append(("pairwise", scale, None, unary, kernel))

    def __call__(self, combos: np.ndarray) -> np.ndarray:
        combos = np.asarray(combos, dtype=np.intp)
        size = combos.shape[1]
        total = self.relevance[combos].sum(axis=1)
        for kind, scale, h, first, second in self._terms:
            if kind == "coverage":
                counts = first[combos].sum(axis=1)
                value = h(counts).sum(axis=1) + second[combos].sum(axis=1)
            else:
                value = np.full(combos.shape[0], size * first)
                for s in range(size):
                    for t in range(s + 1, size):
                        value += second[combos[:, s], combos[:, t]]
            total = total + scale * value
        return total
