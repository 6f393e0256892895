"""Checks for the approximation guarantees of greedy list construction.

Covers the worst-case function for uniform random sampling, the
ε-corrected greedy bound, the relative-error bound with a shifted floor, and
the exhaustive optimum used as their oracle.
"""

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from src.config import SolverConfig
from src.errors import Degenerate, InvalidConfig, NotVerifiable, TooLarge
from src.factor_graph import FactorGraph, Labeling, all_labelings
from src.models import BoundCheck, DiversityModel, GreedyTrace, Lemma1Report
from src.objective import Component, PoolScorer, as_components

GREEDY_FACTOR = 1.0 - 1.0 / math.e
BOUND_SLACK = 1e-9
_CHUNK = 1 << 15


@dataclass(frozen=True)
class WorstCaseInstance:
    """F(S) = |S ∩ R| + ε·min(|S \\ R|, 1) over the ground set [N]."""

    N: int
    M: int
    epsilon: float = 0.0
    R: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        if not self.R:
            object.__setattr__(self, "R", tuple(range(self.M)))
        if not 0 <= self.M <= self.N:
            raise InvalidConfig(f"need 0 <= M <= N, got M={self.M}, N={self.N}")
        if len(set(self.R)) != self.M or any(not 0 <= r < self.N for r in self.R):
            raise InvalidConfig("R must hold M distinct elements of [N]")
        if self.epsilon < 0:
            raise InvalidConfig("epsilon must be >= 0")


def worst_case_value(S: Sequence[int], inst: WorstCaseInstance) -> float:
    members = set(S)
    inside = len(members & set(inst.R))
    return inside + inst.epsilon * min(len(members) - inside, 1)


def _exact_epsilon(inst: WorstCaseInstance) -> Fraction:
    return Fraction(inst.epsilon)


def expected_random_value_exact(inst: WorstCaseInstance) -> Fraction:
    """M²/N + ε(1 − 1/C(N, M)) as an exact rational."""
    if inst.N == 0:
        return Fraction(0)
    return Fraction(inst.M**2, inst.N) + _exact_epsilon(inst) * (
        1 - Fraction(1, math.comb(inst.N, inst.M))
    )


def expected_random_value(inst: WorstCaseInstance) -> float:
    return float(expected_random_value_exact(inst))


def exhaustive_random_value(inst: WorstCaseInstance) -> Fraction:
    """Average of F over every M-subset, in exact arithmetic."""
    R = set(inst.R)
    eps = _exact_epsilon(inst)
    total, count = Fraction(0), 0
    for S in itertools.combinations(range(inst.N), inst.M):
        inside = len(R.intersection(S))
        total += inside + eps * min(inst.M - inside, 1)
        count += 1
    return total / count


def worst_case_optimum(inst: WorstCaseInstance) -> float:
    best = float(inst.M)
    if inst.N > inst.M and inst.M >= 1:
        best = max(best, inst.M - 1 + inst.epsilon)
    return best


def verify_lemma1(
    inst: WorstCaseInstance, num_samples: int = 20_000, seed: int = 0
) -> Lemma1Report:
    """Monte-Carlo and closed-form expectation of F under uniform M-subsets."""
    if num_samples < 1000:
        raise InvalidConfig("lemma 1 needs at least 1000 samples")
    N, M, eps = inst.N, inst.M, inst.epsilon
    rng = np.random.default_rng(seed)
    subsets = np.argsort(rng.random((num_samples, N)), axis=1)[:, :M]
    inside = np.isin(subsets, np.array(inst.R)).sum(axis=1)
    values = inside + eps * np.minimum(M - inside, 1)

    analytic = expected_random_value(inst)
    empirical = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(num_samples))
    within = abs(empirical - analytic) <= 4.0 * stderr + 1e-12

    exhaustive = None
    exact_match = True
    if N <= 12:
        exact = exhaustive_random_value(inst)
        exhaustive = float(exact)
        exact_match = exact == expected_random_value_exact(inst)

    upper = (M / N + eps / M) * M if M else 0.0
    bound_holds = analytic <= upper + 1e-12
    return Lemma1Report(
        N=N,
        M=M,
        epsilon=eps,
        analytic_mean=analytic,
        empirical_mean=empirical,
        standard_error=stderr,
        exhaustive_mean=exhaustive,
        upper_bound=upper,
        sampling_lower_bound=(M / N) * worst_case_value(range(N), inst) if N else 0.0,
        optimum=worst_case_optimum(inst),
        within_tolerance=within and exact_match,
        bound_holds=bound_holds,
        passed=within and exact_match and bound_holds,
    )


def verify_lemma2(
    trace: GreedyTrace, F_opt: float, F_achieved: float, slack: float = BOUND_SLACK
) -> BoundCheck:
    """F_achieved >= (1 − e^{−α})·F_opt − Σ ε_t."""
    if not trace.epsilons_known:
        unknown = [s.step for s in trace.steps if s.epsilon is None]
        raise NotVerifiable(f"steps {unknown} have no exact best gain")
    rhs = (1.0 - math.exp(-trace.alpha)) * F_opt - trace.total_epsilon
    margin = F_achieved - rhs
    return BoundCheck(passed=margin >= -slack, lhs=F_achieved, rhs=rhs, margin=margin)


def verify_lemma3(
    F_achieved: float, F_opt: float, F_min: float, alpha: float = GREEDY_FACTOR
) -> BoundCheck:
    """(F_achieved − F_min) / (F_opt − F_min) >= α."""
    span = F_opt - F_min
    if span <= 0.0:
        raise Degenerate(f"optimum {F_opt} does not exceed the floor {F_min}")
    ratio = (F_achieved - F_min) / span
    return BoundCheck(passed=ratio >= alpha - BOUND_SLACK, lhs=ratio, rhs=alpha, margin=ratio - alpha)


def count_lists(pool_size: int, M: int, allow_repeats: bool, exact_size: bool) -> int:
    sizes = [M] if exact_size else range(1, M + 1)
    if allow_repeats:
        return sum(math.comb(pool_size + m - 1, m) for m in sizes)
    return sum(math.comb(pool_size, m) for m in sizes)


def exhaustive_opt_set(
    graph: FactorGraph,
    model: DiversityModel | Sequence[Component],
    M: int,
    allow_repeats: bool = False,
    exact_size: bool = False,
    cap: int | None = None,
) -> tuple[list[Labeling], float]:
    """Exact maximizer of F over all lists of size <= M (or exactly M).

    Without repeats the search is over sets; with repeats it is over
    multisets, which the greedy may also return. Earlier candidates in
    lexicographic order win ties.
    """
    if M < 1:
        raise InvalidConfig(f"M must be at least 1, got {M}")
    limit = SolverConfig().combination_cap if cap is None else cap
    pool_size = graph.num_labelings
    total = count_lists(pool_size, M, allow_repeats, exact_size)
    if total > limit:
        raise TooLarge(f"{total} candidate lists exceed the combination cap {limit}")

    pool = all_labelings(graph.num_vars, graph.num_labels)
    scorer = PoolScorer(graph, as_components(model), pool)
    choose = itertools.combinations_with_replacement if allow_repeats else itertools.combinations
    sizes = [M] if exact_size else range(1, M + 1)

    best_combo: tuple[int, ...] = ()
    best_value = -np.inf
    for m in sizes:
        combos = choose(range(pool_size), m)
        while True:
            chunk = np.array(list(itertools.islice(combos, _CHUNK)), dtype=np.intp)
            if chunk.size == 0:
                break
            values = scorer(chunk.reshape(-1, m))
            idx = int(np.argmax(values))
            if values[idx] > best_value + 1e-12:
                best_value = float(values[idx])
                best_combo = tuple(int(c) for c in chunk.reshape(-1, m)[idx])
    items = [tuple(int(v) for v in pool[c]) for c in best_combo]
    return items, best_value
