"""Randomized verification suites behind the `verify` command."""

import logging
from typing import Any, Callable, Sequence

import numpy as np

from src.config import SolverConfig
from src.diversity import (
    GroupState,
    ball_intersection_size,
    compile_gain,
    compile_upper_envelope,
    hamming_ball_size,
    marginal_gain,
    parsimony_value,
)
from src.errors import DivStructError
from src.factor_graph import FactorGraph, Labeling, all_labelings, shift_nonnegative
from src.greedy import GreedyDriver
from src.inference import (
    CardinalityFactor,
    HopAugmentation,
    cardinality_messages,
    map_exact,
    map_graphcut_binary,
)
from src.models import (
    Backend,
    DiversityFamily,
    DiversityModel,
    ParsimonyConfig,
    SuiteResult,
    VerificationReport,
)
from src.random_instances import (
    random_labelings,
    random_potts_graph,
    random_submodular_binary,
    random_table_graph,
)
from src.theory import (
    WorstCaseInstance,
    exhaustive_opt_set,
    verify_lemma1,
    verify_lemma2,
    verify_lemma3,
)

logger = logging.getLogger(__name__)

SUITES = ("lemma1", "lemma2", "lemma3", "oracles")
LEMMA1_CASES = ((4, 2, 0.0), (4, 2, 0.6), (20, 4, 0.0), (12, 3, 0.25))
DEFAULT_CASES = {"lemma2": 100, "lemma3": 60, "oracles": 50}


def _exact_config(graph: FactorGraph) -> SolverConfig:
    return SolverConfig(exact_threshold=max(graph.num_labelings, 1))


def random_exact_model(rng: np.random.Generator, n: int) -> DiversityModel:
    """A diversity model with exact, nonnegative gains and no parsimony."""
    lam = float(rng.uniform(0.1, 2.0))
    h = ("count", "sqrt", "log1p")[int(rng.integers(0, 3))]
    family = int(rng.integers(0, 4))
    if family == 0:
        return DiversityModel(
            family="label_cost", h=h, lam=lam, parsimony=ParsimonyConfig(label=0.0)
        )
    if family == 1:
        return DiversityModel(
            family="label_transition", h=h, lam=lam, parsimony=ParsimonyConfig(transition=0.0)
        )
    if family == 2:
        return DiversityModel(
            family="hamming_ball_set", h=h, lam=lam, k=int(rng.integers(0, 3)), exact_union=True
        )
    cut = int(rng.integers(1, n))
    return DiversityModel(
        family="region_consistency", h=h, lam=lam, regions=[list(range(cut)), list(range(cut, n))]
    )


def argmin_step_solver(graph: FactorGraph, aug: HopAugmentation, states) -> Labeling:
    """Picks the worst labeling; used to check that the suites catch a bad solver."""
    Y = all_labelings(graph.num_vars, graph.num_labels)
    values = graph.score_batch(Y) + aug.evaluate_batch(graph, Y)
    return tuple(int(v) for v in Y[int(np.argmin(values))])


def _greedy_case(
    rng: np.random.Generator, shift: bool
) -> tuple[FactorGraph, DiversityModel, int, float]:
    n = int(rng.integers(3, 6))
    M = int(rng.integers(2, 5))
    graph = random_table_graph(rng, n, 2)
    shifted, offset = shift_nonnegative(graph)
    return (shifted if shift else graph), random_exact_model(rng, n), M, offset


def _run_driver(graph: FactorGraph, model: DiversityModel, M: int, inject_fault: bool):
    if inject_fault:
        driver = GreedyDriver(
            graph, [(model, 1.0)], Backend.EXACT, _exact_config(graph),
            step_solver=argmin_step_solver, trust_solver=True,
        )
    else:
        driver = GreedyDriver(graph, [(model, 1.0)], Backend.EXACT, _exact_config(graph))
    return driver.run(M)


def run_lemma1(seed: int, N: int | None = None, M: int | None = None, epsilon: float | None = None) -> SuiteResult:
    if N is not None or M is not None or epsilon is not None:
        cases = [(N if N is not None else 12, M if M is not None else 3, epsilon or 0.0)]
    else:
        cases = list(LEMMA1_CASES)
    reports, failures = [], []
    for i, (n_items, budget, eps) in enumerate(cases):
        report = verify_lemma1(WorstCaseInstance(n_items, budget, eps), seed=seed + i)
        reports.append(report.model_dump())
        if not report.passed:
            failures.append(report.model_dump())
    return SuiteResult(
        name="lemma1", passed=not failures, cases=len(cases), failures=failures,
        details={"reports": reports},
    )


def run_lemma2(seed: int, cases: int, inject_fault: bool = False) -> SuiteResult:
    failures: list[dict[str, Any]] = []
    worst = np.inf
    for case in range(cases):
        rng = np.random.default_rng([seed, 2, case])
        graph, model, M, _ = _greedy_case(rng, shift=True)
        solutions, trace = _run_driver(graph, model, M, inject_fault)
        _, F_opt = exhaustive_opt_set(graph, model, M, allow_repeats=True)
        check = verify_lemma2(trace, F_opt, solutions.objective)
        worst = min(worst, check.margin)
        if not check.passed:
            failures.append(
                {
                    "case": case,
                    "family": model.family.value,
                    "M": M,
                    "F_opt": F_opt,
                    "F_achieved": solutions.objective,
                    "total_epsilon": trace.total_epsilon,
                    "margin": check.margin,
                }
            )
    return SuiteResult(
        name="lemma2", passed=not failures, cases=cases, failures=failures,
        details={"worst_margin": float(worst), "fault_injected": inject_fault},
    )


def run_lemma3(seed: int, cases: int, inject_fault: bool = False) -> SuiteResult:
    """Relative error on graphs with negative scores; the floor of a size-M
    list is −M times the offset that makes every score nonnegative."""
    failures: list[dict[str, Any]] = []
    worst = np.inf
    for case in range(cases):
        rng = np.random.default_rng([seed, 3, case])
        graph, model, M, offset = _greedy_case(rng, shift=False)
        solutions, _ = _run_driver(graph, model, M, inject_fault)
        _, F_opt = exhaustive_opt_set(graph, model, M, allow_repeats=True, exact_size=True)
        check = verify_lemma3(solutions.objective, F_opt, -M * offset)
        worst = min(worst, check.margin)
        if not check.passed:
            failures.append(
                {"case": case, "family": model.family.value, "M": M, "ratio": check.lhs}
            )
    return SuiteResult(
        name="lemma3", passed=not failures, cases=cases, failures=failures,
        details={"worst_margin": float(worst)},
    )


# -- oracle equivalences ------------------------------------------------------


def brute_force_max_marginals(factor: CardinalityFactor, incoming: np.ndarray) -> np.ndarray:
    """Max over all y with y_i = ℓ of Σ_{j≠i} incoming[j, y_j] + factor(y)."""
    n, L = incoming.shape
    Y = all_labelings(n, L)
    rows = np.arange(n)
    base = incoming[rows, Y].sum(axis=1) + factor.evaluate_batch(Y)
    out = np.empty((n, L))
    for i in range(n):
        others = base - incoming[i, Y[:, i]]
        for label in range(L):
            out[i, label] = others[Y[:, i] == label].max()
    return out


def brute_force_ball_intersection(y: Sequence[int], z: Sequence[int], L: int, k: int) -> int:
    Y = all_labelings(len(y), L)
    near_y = (Y != np.asarray(y)).sum(axis=1) <= k
    near_z = (Y != np.asarray(z)).sum(axis=1) <= k
    return int(np.count_nonzero(near_y & near_z))


def _oracle_graphcut(rng: np.random.Generator) -> str | None:
    graph = random_submodular_binary(rng, int(rng.integers(2, 17)))
    _, cut_value = map_graphcut_binary(graph)
    _, exact_value = map_exact(graph)
    if abs(cut_value - exact_value) > 1e-6:
        return f"graph cut {cut_value} vs enumeration {exact_value}"
    return None


def _oracle_cardinality(rng: np.random.Generator) -> str | None:
    n, L = int(rng.integers(1, 9)), int(rng.integers(2, 4))
    factor = CardinalityFactor(rng.integers(0, L, size=n), rng.normal(size=n + 1), 1.0)
    incoming = rng.normal(size=(n, L))
    fast = cardinality_messages(factor, incoming)
    slow = brute_force_max_marginals(factor, incoming)
    if not np.allclose(fast, slow, atol=1e-9):
        return f"cardinality messages differ by {float(np.abs(fast - slow).max())}"
    return None


def _oracle_ball(rng: np.random.Generator) -> str | None:
    L = int(rng.integers(2, 5))
    n = int(rng.integers(1, 7))
    while L**n > 2**12:
        n -= 1
    k = int(rng.integers(0, n + 1))
    y, z = random_labelings(rng, 2, n, L)
    fast, slow = ball_intersection_size(y, z, L, k), brute_force_ball_intersection(y, z, L, k)
    if fast != slow or ball_intersection_size(y, y, L, k) != hamming_ball_size(n, L, k):
        return f"ball intersection n={n} L={L} k={k}: {fast} vs {slow}"
    return None


def _random_model(rng: np.random.Generator, family: DiversityFamily, n: int) -> DiversityModel:
    lam = float(rng.uniform(0.1, 2.0))
    h = ("count", "sqrt", "log1p")[int(rng.integers(0, 3))]
    if family == DiversityFamily.HAMMING_BALL_SET:
        return DiversityModel(family=family, h=h, lam=lam, k=int(rng.integers(0, n + 1)))
    if family == DiversityFamily.HAMMING_BALL_SMOOTH:
        return DiversityModel(family=family, lam=lam, gamma=float(rng.uniform(0.05, 1.0)))
    if family == DiversityFamily.REGION_CONSISTENCY:
        cut = int(rng.integers(1, n)) if n > 1 else 1
        regions = [list(range(cut))] + ([list(range(cut, n))] if cut < n else [])
        return DiversityModel(family=family, h=h, lam=lam, regions=regions)
    return DiversityModel(family=family, h=h, lam=lam)


def _oracle_compiled(rng: np.random.Generator) -> str | None:
    n, L = int(rng.integers(2, 7)), int(rng.integers(2, 4))
    graph = random_potts_graph(rng, n, L)
    for family in DiversityFamily:
        model = _random_model(rng, family, n)
        S = random_labelings(rng, int(rng.integers(1, 4)), n, L)
        state = GroupState.from_items(model, graph, S)
        aug, constant = compile_gain(model, graph, state)
        for y in random_labelings(rng, 20, n, L):
            direct = model.lam * (
                marginal_gain(model, graph, state, y) + parsimony_value(model, graph, y)
            )
            compiled = aug.evaluate(graph, y) + constant
            if abs(direct - compiled) > 1e-9:
                return f"{family.value}: compiled {compiled} vs direct {direct}"
    return None


def _oracle_upper_envelope(rng: np.random.Generator) -> str | None:
    n, L = int(rng.integers(2, 5)), 2
    graph = random_potts_graph(rng, n, L)
    model = _random_model(rng, DiversityFamily.REGION_CONSISTENCY, n)
    state = GroupState.from_items(model, graph, random_labelings(rng, int(rng.integers(0, 3)), n, L))
    aug, _ = compile_gain(model, graph, state)
    _, direct = map_exact(graph, aug)
    reduction = compile_upper_envelope(graph, model, state)
    y_ext, _ = map_exact(reduction.graph)
    y = reduction.decode(y_ext)
    via_reduction = graph.score_batch(np.array([y]))[0] + aug.evaluate(graph, y)
    if abs(direct - via_reduction) > 1e-9:
        return f"upper envelope {via_reduction} vs direct {direct}"
    return None


_ORACLES: dict[str, Callable[[np.random.Generator], str | None]] = {
    "graphcut": _oracle_graphcut,
    "cardinality": _oracle_cardinality,
    "ball_intersection": _oracle_ball,
    "compiled_gain": _oracle_compiled,
    "upper_envelope": _oracle_upper_envelope,
}


def run_oracles(seed: int, cases: int) -> SuiteResult:
    failures: list[dict[str, Any]] = []
    for offset, (name, check) in enumerate(_ORACLES.items()):
        for case in range(cases):
            message = check(np.random.default_rng([seed, 4, offset, case]))
            if message:
                failures.append({"oracle": name, "case": case, "message": message})
    return SuiteResult(
        name="oracles", passed=not failures, cases=cases * len(_ORACLES), failures=failures,
        details={"oracles": list(_ORACLES)},
    )


def run_verification(
    suite: str = "all",
    seed: int = 0,
    cases: int | None = None,
    inject_fault: bool = False,
    N: int | None = None,
    M: int | None = None,
    epsilon: float | None = None,
) -> VerificationReport:
    selected = SUITES if suite == "all" else (suite,)
    results = []
    for name in selected:
        count = cases if cases is not None else DEFAULT_CASES.get(name, 0)
        try:
            if name == "lemma1":
                result = run_lemma1(seed, N, M, epsilon)
            elif name == "lemma2":
                result = run_lemma2(seed, count, inject_fault)
            elif name == "lemma3":
                result = run_lemma3(seed, count, inject_fault)
            elif name == "oracles":
                result = run_oracles(seed, count)
            else:
                raise ValueError(f"unknown suite '{name}'")
        except DivStructError as e:
            result = SuiteResult(
                name=name, passed=False, cases=0,
                failures=[{"error": type(e).__name__, "message": str(e)}],
            )
        logger.info("suite %s: %s (%d cases)", name, "pass" if result.passed else "FAIL", result.cases)
        results.append(result)
    return VerificationReport(seed=seed, passed=all(r.passed for r in results), suites=results)
