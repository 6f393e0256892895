"""Greedy construction of diverse lists.

Each step compiles the diversity gain of the chosen family (or a weighted sum
of families) into a HopAugmentation, solves the augmented MAP with a backend
suited to the augmentation, and appends the maximizer to the list. The step
loop runs as a two-node LangGraph workflow: `augment` picks the next item and
`record` commits it.
"""

import itertools
import json
import logging
import uuid
from typing import Any, Callable, Sequence, TypedDict

import numpy as np
from langgraph.graph import END, START, StateGraph

from src.config import SolverConfig
from src.diversity import GroupState, compile_gain
from src.errors import DivStructError, InvalidConfig, TooFew, UnsupportedCombination
from src.factor_graph import FactorGraph, Labeling, graph_to_dict
from src.inference import (
    NO_AUGMENTATION,
    HopAugmentation,
    local_search,
    map_alpha_expansion,
    map_exact,
    map_graphcut_binary,
    map_with_cardinality,
)
from src.models import Backend, DiversityModel, GreedyTrace, SolutionList, TraceStep
from src.objective import Component, as_components, rescore_list, step_terms

logger = logging.getLogger(__name__)

# (graph, aug, states) -> chosen labeling; replaces backend dispatch when set.
StepSolver = Callable[[FactorGraph, HopAugmentation, Sequence[GroupState]], Labeling]

_CUT_PARTS = frozenset({"node_additive"})
_EXPANSION_PARTS = frozenset({"label_reward", "node_additive"})
_MESSAGE_PARTS = frozenset({"cardinality_factors", "node_additive"})
_LOCAL_PARTS = frozenset({"transition_reward", "region_reward"})


class GreedyState(TypedDict, total=False):
    step: int
    M: int
    items: list[Labeling]
    backends: list[str]
    states: list[GroupState]
    trace: list[dict[str, Any]]
    chosen: Labeling
    chosen_backend: str
    chosen_trace: dict[str, Any]


def _is_binary_submodular(graph: FactorGraph) -> bool:
    if graph.num_labels != 2:
        return False
    _, _, tables = graph.edge_arrays
    slack = tables[:, 0, 0] + tables[:, 1, 1] - tables[:, 0, 1] - tables[:, 1, 0]
    return bool(np.all(slack >= -1e-12))


def run_identifier(graph: FactorGraph, components: Sequence[Component], M: int) -> str:
    """Stable id of a greedy run; parallel executions of the same run share it."""
    payload = {
        "graph": graph_to_dict(graph),
        "components": [
            [model.model_dump(mode="json", by_alias=True), weight] for model, weight in components
        ],
        "M": M,
    }
    return str(uuid.uuid5(uuid.NAMESPACE_OID, json.dumps(payload, sort_keys=True)))


class GreedyDriver:
    def __init__(
        self,
        graph: FactorGraph,
        components: Sequence[Component],
        backend: Backend = Backend.AUTO,
        config: SolverConfig | None = None,
        step_solver: StepSolver | None = None,
        trust_solver: bool = False,
    ) -> None:
        for model, weight in components:
            if weight < 0:
                raise InvalidConfig(f"weight of '{model.family.value}' must be >= 0, got {weight}")
        self.graph = graph
        self.components = list(components)
        self.backend = Backend(backend)
        self.config = config or SolverConfig()
        self.step_solver = step_solver
        self.trust_solver = trust_solver
        self.workflow = self._build_graph()

    @property
    def traceable(self) -> bool:
        return self.graph.num_labelings <= min(self.config.exact_threshold, self.config.enum_cap)

    def compile_step(self, states: Sequence[GroupState]) -> tuple[HopAugmentation, float]:
        """Weighted sum of every component's compiled gain for the current list."""
        aug, constant = NO_AUGMENTATION, 0.0
        for (model, weight), state in zip(self.components, states):
            part, part_constant = compile_gain(model, self.graph, state)
            aug = aug + part.scaled(weight)
            constant += weight * part_constant
        return aug, constant

    def _select_backend(self, aug: HopAugmentation) -> Backend:
        if self.backend != Backend.AUTO:
            return self.backend
        parts = aug.parts
        if self.traceable or "dense_gain" in parts:
            return Backend.EXACT
        if parts & _LOCAL_PARTS:
            return Backend.LOCAL_SEARCH
        if parts <= _CUT_PARTS and _is_binary_submodular(self.graph):
            return Backend.GRAPHCUT
        if parts <= _EXPANSION_PARTS and self.graph.is_potts:
            return Backend.EXPANSION
        if parts <= _MESSAGE_PARTS and self.graph.num_labels >= 2:
            return Backend.MESSAGE_PASSING
        raise UnsupportedCombination(
            f"no backend handles {sorted(parts)} on a graph with "
            f"{self.graph.num_labels}^{self.graph.num_vars} labelings"
        )

    def _require(self, backend: Backend, parts: frozenset[str], allowed: frozenset[str]) -> None:
        if not parts <= allowed:
            raise UnsupportedCombination(
                f"backend '{backend.value}' cannot handle {sorted(parts - allowed)}"
            )

    def _initial_labeling(self) -> np.ndarray:
        if self.graph.num_labels >= 2:
            y, _ = map_with_cardinality(
                self.graph, max_iters=self.config.bp_max_iters, damping=self.config.bp_damping
            )
            return np.array(y)
        return self.graph.unaries.argmax(axis=1)

    def solve(self, aug: HopAugmentation) -> tuple[Labeling, Backend]:
        backend = self._select_backend(aug)
        parts = aug.parts
        graph = self.graph
        if backend == Backend.EXACT:
            y, _ = map_exact(graph, aug, enum_cap=self.config.enum_cap)
        elif backend == Backend.GRAPHCUT:
            self._require(backend, parts, _CUT_PARTS)
            y, _ = map_graphcut_binary(graph, aug.node_additive)
        elif backend == Backend.EXPANSION:
            self._require(backend, parts, _EXPANSION_PARTS)
            y, _ = map_alpha_expansion(
                graph,
                label_reward=aug.label_reward,
                node_additive=aug.node_additive,
                max_sweeps=self.config.expansion_max_sweeps,
                tolerance=self.config.move_tolerance,
            )
        elif backend == Backend.MESSAGE_PASSING:
            self._require(backend, parts, _MESSAGE_PARTS)
            y, _ = map_with_cardinality(
                graph,
                aug.cardinality_factors,
                max_iters=self.config.bp_max_iters,
                damping=self.config.bp_damping,
                node_additive=aug.node_additive,
            )
        else:
            if "dense_gain" in parts and not self.traceable:
                raise UnsupportedCombination("exact union gains are only solvable by enumeration")
            y, _ = local_search(
                graph,
                aug.gain_fn(graph),
                self._initial_labeling(),
                max_sweeps=self.config.local_search_max_sweeps,
            )
        return y, backend

    def _augment(self, state: GreedyState) -> GreedyState:
        step = state["step"]
        states = state["states"]
        try:
            aug, constant = self.compile_step(states)
            if self.step_solver is not None:
                y, backend_name = self.step_solver(self.graph, aug, states), "custom"
                exact = False
            else:
                y, backend = self.solve(aug)
                backend_name, exact = backend.value, backend in (Backend.EXACT, Backend.GRAPHCUT)
            achieved = step_terms(self.graph, self.components, states, y).objective_gain

            best = epsilon = None
            if self.trust_solver:
                best, epsilon = achieved, 0.0
            elif self.traceable:
                if backend_name == Backend.EXACT.value:
                    best = achieved
                else:
                    _, value = map_exact(self.graph, aug, enum_cap=self.config.enum_cap)
                    best = value + constant
                epsilon = max(0.0, best - achieved)
        except DivStructError as err:
            err.step = step
            err.add_note(f"raised at greedy step {step + 1}")
            raise

        logger.debug(
            "greedy step %d: backend=%s gain=%.6f best=%s", step + 1, backend_name, achieved, best
        )
        return {
            "chosen": y,
            "chosen_backend": backend_name,
            "chosen_trace": {
                "step": step + 1,
                "backend": backend_name,
                "exact": exact,
                "achieved_gain": achieved,
                "best_gain": best,
                "epsilon": epsilon,
            },
        }

    def _record(self, state: GreedyState) -> GreedyState:
        y = state["chosen"]
        return {
            "step": state["step"] + 1,
            "items": state["items"] + [y],
            "backends": state["backends"] + [state["chosen_backend"]],
            "states": [s.add(y) for s in state["states"]],
            "trace": state["trace"] + [state["chosen_trace"]],
        }

    def _route_after_record(self, state: GreedyState) -> str:
        return "augment" if state["step"] < state["M"] else "done"

    def _build_graph(self):
        graph_builder = StateGraph(GreedyState)
        graph_builder.add_node("augment", self._augment)
        graph_builder.add_node("record", self._record)

        graph_builder.add_edge(START, "augment")
        graph_builder.add_edge("augment", "record")
        graph_builder.add_conditional_edges(
            "record",
            self._route_after_record,
            {
                "augment": "augment",
                "done": END,
            },
        )
        return graph_builder.compile()

    def run(self, M: int, run_config: dict[str, Any] | None = None) -> tuple[SolutionList, GreedyTrace]:
        if M < 1:
            raise InvalidConfig(f"M must be at least 1, got {M}")
        initial_state: GreedyState = {
            "step": 0,
            "M": M,
            "items": [],
            "backends": [],
            "states": [GroupState.empty(model, self.graph) for model, _ in self.components],
            "trace": [],
        }
        final_state = self.workflow.invoke(initial_state, {"recursion_limit": 2 * M + 5})

        config = {
            "run_id": run_identifier(self.graph, self.components, M),
            "M": M,
            "backend": self.backend.value,
            "components": [
                {"model": model.model_dump(mode="json", by_alias=True), "weight": weight}
                for model, weight in self.components
            ],
        }
        config.update(run_config or {})
        solutions = rescore_list(
            self.graph, self.components, final_state["items"], config, final_state["backends"]
        )
        trace = GreedyTrace(
            alpha=1.0, steps=[TraceStep.model_validate(t) for t in final_state["trace"]]
        )
        return solutions, trace


def greedy_diverse(
    graph: FactorGraph,
    model: DiversityModel | Sequence[Component],
    M: int,
    backend: Backend = Backend.AUTO,
    config: SolverConfig | None = None,
) -> tuple[SolutionList, GreedyTrace]:
    driver = GreedyDriver(graph, as_components(model), backend=backend, config=config)
    return driver.run(M)


def concat_split(k: int, M: int) -> list[int]:
    """Items taken from each of k lists; earlier lists absorb the remainder."""
    if k < 1:
        raise InvalidConfig("need at least one list to concatenate")
    return [M // k + (1 if j < M % k else 0) for j in range(k)]


def combine_concat(
    lists: Sequence[SolutionList],
    M: int,
    graph: FactorGraph,
    reference: DiversityModel | Sequence[Component],
) -> SolutionList:
    shares = concat_split(len(lists), M)
    items: list[Labeling] = []
    backends: list[str] = []
    for j, (solutions, share) in enumerate(zip(lists, shares)):
        if len(solutions) < share:
            raise TooFew(f"list {j} has {len(solutions)} items, {share} needed")
        items.extend(solutions.items[:share])
        backends.extend(step.backend for step in solutions.steps[:share])
    config = {"combine": "concat", "M": M, "shares": shares}
    return rescore_list(graph, as_components(reference), items, config, backends)


def combine_linear(
    models: Sequence[Component],
    graph: FactorGraph,
    M: int,
    backend: Backend = Backend.AUTO,
    config: SolverConfig | None = None,
    weight_grid: Sequence[float] | None = None,
    metric: Callable[[SolutionList], float] | None = None,
) -> SolutionList:
    """One greedy run on Σ_j w_j d_j; with a grid and a metric, the weights
    maximizing the metric are kept (first best in grid order)."""
    components = as_components(models)
    for model, weight in components:
        if weight < 0:
            raise InvalidConfig(f"weight of '{model.family.value}' must be >= 0, got {weight}")
    if weight_grid is None or metric is None:
        solutions, _ = GreedyDriver(graph, components, backend, config).run(M, {"combine": "linear"})
        return solutions

    best, best_value = None, -np.inf
    for weights in itertools.product(weight_grid, repeat=len(components)):
        candidate = [(model, float(w)) for (model, _), w in zip(components, weights)]
        solutions, _ = GreedyDriver(graph, candidate, backend, config).run(
            M, {"combine": "linear", "weights": list(weights)}
        )
        value = metric(solutions)
        if value > best_value:
            best, best_value = solutions, value
    return best


def random_baseline(
    graph: FactorGraph,
    M: int,
    seed: int,
    reference: DiversityModel | Sequence[Component] = (),
) -> SolutionList:
    """M labelings drawn uniformly and independently from [L]^n."""
    if M < 1:
        raise InvalidConfig(f"M must be at least 1, got {M}")
    rng = np.random.default_rng(seed)
    Y = rng.integers(0, graph.num_labels, size=(M, graph.num_vars))
    items = [tuple(int(v) for v in row) for row in Y]
    config = {"baseline": "random", "seed": seed}
    return rescore_list(graph, as_components(reference), items, config, ["random"] * M)
