"""Synthetic segmentation benchmark and oracle-accuracy metrics."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import pandas as pd

from src.config import SolverConfig
from src.errors import EmptyList, InvalidConfig, InvalidLabeling
from src.factor_graph import FactorGraph, Labeling, PairwiseFactor
from src.greedy import GreedyDriver, combine_concat, random_baseline
from src.models import (
    Backend,
    CurveRow,
    DiversityModel,
    EvalReport,
    MethodSummary,
    Metric,
    SuiteConfig,
)
from src.objective import Component

logger = logging.getLogger(__name__)

COLOR_SCALE = 0.1
GREEDY_METHODS = ("divmbest", "hamming_smooth", "label_cost", "label_transition")


@dataclass(frozen=True, eq=False)
class SynthInstance:
    height: int
    width: int
    num_labels: int
    sigma: float
    seed: int
    ground_truth: Labeling
    color: np.ndarray
    graph: FactorGraph


def _grid_graph(
    unaries: np.ndarray, color: np.ndarray, height: int, width: int, beta: float
) -> FactorGraph:
    """4-connected Potts grid with contrast-sensitive weights."""
    factors = []
    flat = color.ravel()
    for r in range(height):
        for c in range(width):
            i = r * width + c
            for j in ((i + 1) if c + 1 < width else None, (i + width) if r + 1 < height else None):
                if j is None:
                    continue
                diff = flat[i] - flat[j]
                weight = beta * float(np.exp(-(diff**2) / (2.0 * COLOR_SCALE**2)))
                factors.append(PairwiseFactor(i, j, weight=weight))
    n, L = unaries.shape
    return FactorGraph(n, L, unaries, tuple(factors))


def _observe(
    gt: np.ndarray, L: int, sigma: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    unaries = np.eye(L)[gt.ravel()] + rng.normal(0.0, sigma, size=(gt.size, L))
    denom = max(L - 1, 1)
    color = gt / denom + rng.normal(0.0, 0.5 * sigma, size=gt.shape)
    return unaries, color


def synth_generate(
    height: int,
    width: int,
    L: int,
    sigma: float,
    seed: int,
    beta: float = 0.5,
    max_regions: int | None = None,
) -> SynthInstance:
    """Planted rectangles observed through noisy unaries and a noisy color channel.

    Without max_regions up to L + 1 rectangles are planted.
    """
    if height * width < 1 or L < 2 or sigma < 0:
        raise InvalidConfig(f"need H*W >= 1, L >= 2 and sigma >= 0, got {height}x{width}, {L}, {sigma}")
    if max_regions is not None and max_regions < 1:
        raise InvalidConfig(f"max_regions must be at least 1, got {max_regions}")
    rng = np.random.default_rng(seed)
    gt = np.full((height, width), int(rng.integers(0, L)), dtype=np.intp)
    for _ in range(int(rng.integers(1, (max_regions or L + 1) + 1))):
        r0, r1 = sorted(rng.integers(0, height + 1, size=2))
        c0, c1 = sorted(rng.integers(0, width + 1, size=2))
        gt[r0 : max(r1, r0 + 1), c0 : max(c1, c0 + 1)] = int(rng.integers(0, L))
    unaries, color = _observe(gt, L, sigma, rng)
    graph = _grid_graph(unaries, color, height, width, beta)
    return SynthInstance(height, width, L, sigma, seed, tuple(int(v) for v in gt.ravel()), color, graph)


def synth_rare_transition(
    height: int,
    width: int,
    L: int,
    sigma: float,
    seed: int,
    beta: float = 0.5,
    swap_fraction: float = 0.3,
) -> SynthInstance:
    """Two adjacent rectangles carrying the two rarest labels, with part of
    their unary evidence swapped so the pair is easy to confuse."""
    if L < 3 or width < 2:
        raise InvalidConfig("the rare-transition scenario needs L >= 3 and width >= 2")
    rng = np.random.default_rng(seed)
    gt = np.full((height, width), int(rng.integers(0, L - 2)), dtype=np.intp)
    r0 = int(rng.integers(0, max(height // 2, 1)))
    r1 = min(height, r0 + max(height // 2, 1))
    c0 = int(rng.integers(0, max(width // 2, 1)))
    mid = min(width - 1, c0 + max(width // 4, 1))
    c1 = min(width, mid + max(width // 4, 1))
    gt[r0:r1, c0:mid] = L - 2
    gt[r0:r1, mid:c1] = L - 1
    unaries, color = _observe(gt, L, sigma, rng)

    rare = np.flatnonzero(gt.ravel() >= L - 2)
    swapped = rare[rng.random(rare.size) < swap_fraction]
    unaries[swapped, L - 2], unaries[swapped, L - 1] = (
        unaries[swapped, L - 1].copy(),
        unaries[swapped, L - 2].copy(),
    )
    graph = _grid_graph(unaries, color, height, width, beta)
    return SynthInstance(height, width, L, sigma, seed, tuple(int(v) for v in gt.ravel()), color, graph)


# -- metrics ------------------------------------------------------------------


def _pair(y: Sequence[int], gt: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    y, gt = np.asarray(y), np.asarray(gt)
    if y.shape != gt.shape:
        raise InvalidLabeling(f"labeling has {y.size} entries, ground truth has {gt.size}")
    return y, gt


def pixel_accuracy(y: Sequence[int], gt: Sequence[int]) -> float:
    y, gt = _pair(y, gt)
    return float(np.mean(y == gt))


def iou(y: Sequence[int], gt: Sequence[int], label: int) -> float | None:
    """None when the label is absent from both labelings."""
    y, gt = _pair(y, gt)
    union = np.count_nonzero((y == label) | (gt == label))
    if union == 0:
        return None
    return np.count_nonzero((y == label) & (gt == label)) / union


def mean_iou(y: Sequence[int], gt: Sequence[int], num_labels: int) -> float:
    values = [v for v in (iou(y, gt, label) for label in range(num_labels)) if v is not None]
    return float(np.mean(values)) if values else 0.0


def corpus_iou(pairs: Iterable[tuple[Sequence[int], Sequence[int]]], num_labels: int) -> float:
    """Intersections and unions pooled over all pairs, then averaged over labels."""
    inter = np.zeros(num_labels)
    union = np.zeros(num_labels)
    for y, gt in pairs:
        y, gt = _pair(y, gt)
        for label in range(num_labels):
            inter[label] += np.count_nonzero((y == label) & (gt == label))
            union[label] += np.count_nonzero((y == label) | (gt == label))
    present = union > 0
    return float(np.mean(inter[present] / union[present])) if present.any() else 0.0


def metric_value(metric: Metric, y: Sequence[int], gt: Sequence[int], num_labels: int) -> float:
    if Metric(metric) == Metric.MEAN_IOU:
        return mean_iou(y, gt, num_labels)
    return pixel_accuracy(y, gt)


def oracle_curve(
    items: Sequence[Sequence[int]],
    gt: Sequence[int],
    metric: Metric = Metric.PIXEL_ACCURACY,
    num_labels: int | None = None,
) -> list[float]:
    """Best metric among the first m items, for m = 1..len(items)."""
    if not items:
        raise EmptyList("oracle accuracy needs at least one labeling")
    L = num_labels if num_labels is not None else int(max(max(gt), max(max(y) for y in items))) + 1
    values = [metric_value(metric, y, gt, L) for y in items]
    return [float(v) for v in np.maximum.accumulate(values)]


def oracle_accuracy(
    items: Sequence[Sequence[int]],
    gt: Sequence[int],
    metric: Metric = Metric.PIXEL_ACCURACY,
    num_labels: int | None = None,
) -> float:
    return oracle_curve(items, gt, metric, num_labels)[-1]


# -- benchmark ----------------------------------------------------------------


def split_seeds(suite: SuiteConfig) -> tuple[list[int], list[int]]:
    """Even seeds tune parameters, odd seeds report results."""
    seeds = [suite.base_seed + i for i in range(suite.num_seeds)]
    return [s for s in seeds if s % 2 == 0], [s for s in seeds if s % 2 == 1]


def make_instance(suite: SuiteConfig, seed: int) -> SynthInstance:
    return synth_generate(
        suite.height,
        suite.width,
        suite.num_labels,
        suite.sigma,
        seed,
        suite.potts_beta,
        suite.max_regions,
    )


def method_models(method: str, suite: SuiteConfig) -> list[dict[str, float]]:
    """Parameter candidates searched on the validation split."""
    if method == "hamming_smooth":
        return [{"lambda": lam, "gamma": g} for lam in suite.lambda_grid for g in suite.gamma_grid]
    if method in ("label_cost", "label_transition"):
        return [{"lambda": lam} for lam in suite.label_lambda_grid]
    return [{"lambda": lam} for lam in suite.lambda_grid]


def build_model(method: str, params: dict[str, float], suite: SuiteConfig) -> DiversityModel:
    lam = params["lambda"]
    if method == "divmbest":
        return DiversityModel(family="divmbest", lam=lam)
    if method == "hamming_smooth":
        return DiversityModel(family="hamming_ball_smooth", lam=lam, gamma=params["gamma"])
    if method == "label_cost":
        return DiversityModel(family="label_cost", h=suite.h, lam=lam)
    if method == "label_transition":
        return DiversityModel(family="label_transition", h=suite.h, lam=lam)
    raise InvalidConfig(f"unknown benchmark method '{method}'")


def _greedy_items(
    instance: SynthInstance, components: Sequence[Component], M: int, config: SolverConfig
) -> list[Labeling]:
    solutions, _ = GreedyDriver(instance.graph, components, Backend.AUTO, config).run(M)
    return solutions.items


def _map_seeds(fn: Callable[[int], object], seeds: Sequence[int], jobs: int) -> list:
    if jobs <= 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(fn, seeds))


def _mean_oracle(
    runs: Sequence[tuple[SynthInstance, list[Labeling]]], suite: SuiteConfig
) -> float:
    return float(
        np.mean(
            [
                oracle_accuracy(items, inst.ground_truth, suite.metric, suite.num_labels)
                for inst, items in runs
            ]
        )
    )


def _tune(
    suite: SuiteConfig,
    instances: Sequence[SynthInstance],
    candidates: Sequence[tuple[dict, list[Component]]],
    config: SolverConfig,
) -> tuple[dict, list[Component]]:
    best, best_value = candidates[0], -np.inf
    for params, components in candidates:
        lists = _map_seeds(
            lambda k: _greedy_items(instances[k], components, suite.M, config),
            range(len(instances)),
            suite.jobs,
        )
        value = _mean_oracle(list(zip(instances, lists)), suite)
        logger.debug("tuning %s: %.4f", params, value)
        if value > best_value:
            best, best_value = (params, components), value
    return best


def _summarize(
    method: str,
    params: dict,
    runs: Sequence[tuple[SynthInstance, list[Labeling]]],
    suite: SuiteConfig,
) -> MethodSummary:
    L = suite.num_labels
    curves = np.array([oracle_curve(items, inst.ground_truth, suite.metric, L) for inst, items in runs])
    iou_curves = np.array(
        [oracle_curve(items, inst.ground_truth, Metric.MEAN_IOU, L) for inst, items in runs]
    )
    best_items = [
        max(items, key=lambda y: pixel_accuracy(y, inst.ground_truth)) for inst, items in runs
    ]
    return MethodSummary(
        method=method,
        params=params,
        map_accuracy=float(curves[:, 0].mean()),
        oracle_curve=[float(v) for v in curves.mean(axis=0)],
        mean_iou_curve=[float(v) for v in iou_curves.mean(axis=0)],
        corpus_iou=corpus_iou(
            [(y, inst.ground_truth) for y, (inst, _) in zip(best_items, runs)], L
        ),
    )


def _acceptance(methods: Sequence[MethodSummary]) -> dict[str, dict[str, bool]]:
    random_final = next((m.oracle_curve[-1] for m in methods if m.method == "random"), None)
    table = {}
    for m in methods:
        curve = m.oracle_curve
        row = {"monotone": all(b >= a - 1e-12 for a, b in zip(curve, curve[1:]))}
        if m.method != "random":
            row["beats_map"] = curve[-1] > m.map_accuracy
            if random_final is not None:
                row["beats_random"] = curve[-1] > random_final
        table[m.method] = row
    return table


def run_benchmark(suite: SuiteConfig, config: SolverConfig | None = None) -> EvalReport:
    config = config or SolverConfig()
    validation_seeds, test_seeds = split_seeds(suite)
    validation = _map_seeds(lambda s: make_instance(suite, s), validation_seeds, suite.jobs)
    test = _map_seeds(lambda s: make_instance(suite, s), test_seeds, suite.jobs)

    needed = set(suite.methods)
    if "concat" in needed:
        needed.update(GREEDY_METHODS)
    if "linear" in needed:
        needed.update(("divmbest", "hamming_smooth"))

    tuned: dict[str, tuple[dict, list[Component]]] = {}
    for method in GREEDY_METHODS:
        if method not in needed:
            continue
        candidates = [
            (params, [(build_model(method, params, suite), 1.0)])
            for params in method_models(method, suite)
        ]
        tuned[method] = _tune(suite, validation, candidates, config)
        logger.info("tuned %s: %s", method, tuned[method][0])

    if "linear" in needed:
        first, second = tuned["divmbest"][1][0][0], tuned["hamming_smooth"][1][0][0]
        candidates = [
            ({"weights": [w1, w2]}, [(first, w1), (second, w2)])
            for w1 in suite.linear_weight_grid
            for w2 in suite.linear_weight_grid
        ]
        tuned["linear"] = _tune(suite, validation, candidates, config)

    def _test_lists(k: int) -> dict[str, list[Labeling]]:
        inst = test[k]
        solved = {
            method: GreedyDriver(inst.graph, components, Backend.AUTO, config).run(suite.M)[0]
            for method, (_, components) in tuned.items()
        }
        lists = {method: solutions.items for method, solutions in solved.items()}
        if "concat" in needed:
            parts = [solved[m] for m in GREEDY_METHODS]
            reference = tuned["divmbest"][1]
            lists["concat"] = combine_concat(parts, suite.M, inst.graph, reference).items
        if "random" in needed:
            lists["random"] = random_baseline(inst.graph, suite.M, inst.seed).items
        return lists

    per_instance = _map_seeds(_test_lists, range(len(test)), suite.jobs)

    methods = []
    for method in suite.methods:
        params = tuned.get(method, ({}, []))[0]
        if method == "concat":
            params = {m: tuned[m][0] for m in GREEDY_METHODS}
        runs = [(inst, lists[method]) for inst, lists in zip(test, per_instance)]
        methods.append(_summarize(method, params, runs, suite))

    curves = []
    for summary in methods:
        for m, value in enumerate(summary.oracle_curve, start=1):
            curves.append(CurveRow(method=summary.method, M=m, metric=suite.metric.value, value=value))
        if suite.metric != Metric.MEAN_IOU:
            for m, value in enumerate(summary.mean_iou_curve, start=1):
                curves.append(
                    CurveRow(method=summary.method, M=m, metric=Metric.MEAN_IOU.value, value=value)
                )

    return EvalReport(
        suite=suite,
        validation_seeds=validation_seeds,
        test_seeds=test_seeds,
        methods=methods,
        curves=curves,
        acceptance=_acceptance(methods),
    )


def report_to_dataframe(report: EvalReport) -> pd.DataFrame:
    return pd.DataFrame(
        [row.model_dump() for row in report.curves], columns=["method", "M", "metric", "value"]
    )


def export_csv(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    report_to_dataframe(report).to_csv(path, index=False, float_format="%.10f")
    return path
