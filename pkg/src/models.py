from enum import Enum
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, model_validator


class PairwiseKind(str, Enum):
    POTTS = "potts"
    TABLE = "table"


class ConcaveKind(str, Enum):
    COUNT = "count"
    SQRT = "sqrt"
    LOG1P = "log1p"


class DiversityFamily(str, Enum):
    LABEL_COST = "label_cost"
    LABEL_TRANSITION = "label_transition"
    HAMMING_BALL_SET = "hamming_ball_set"
    HAMMING_BALL_SMOOTH = "hamming_ball_smooth"
    DIVMBEST = "divmbest"
    REGION_CONSISTENCY = "region_consistency"


class Backend(str, Enum):
    AUTO = "auto"
    EXACT = "exact"
    GRAPHCUT = "graphcut"
    EXPANSION = "expansion"
    MESSAGE_PASSING = "message_passing"
    LOCAL_SEARCH = "local_search"


class CombineMode(str, Enum):
    CONCAT = "concat"
    LINEAR = "linear"


class Metric(str, Enum):
    PIXEL_ACCURACY = "pixel_accuracy"
    MEAN_IOU = "mean_iou"


class PairwiseSpec(BaseModel):
    u: int = Field(ge=0)
    v: int = Field(ge=0)
    type: PairwiseKind
    w: float | None = Field(None, ge=0.0)
    scores: list[list[float]] | None = None

    @model_validator(mode="after")
    def _check_form(self) -> "PairwiseSpec":
        if self.type == PairwiseKind.POTTS and self.w is None:
            raise ValueError("potts factor requires 'w'")
        if self.type == PairwiseKind.TABLE and self.scores is None:
            raise ValueError("table factor requires 'scores'")
        return self


class InstanceSpec(BaseModel):
    """JSON instance format consumed by the CLI."""

    num_vars: int = Field(ge=1)
    num_labels: int = Field(ge=1)
    unaries: list[list[float]]
    pairwise: list[PairwiseSpec] = Field(default_factory=list)


class ParsimonyConfig(BaseModel):
    label: float | list[float] = -1.0
    transition: float | list[list[float]] = -1.0


# Optional fields each family accepts. Everything else must stay unset.
_FAMILY_FIELDS: dict[DiversityFamily, frozenset[str]] = {
    DiversityFamily.LABEL_COST: frozenset({"parsimony"}),
    DiversityFamily.LABEL_TRANSITION: frozenset({"parsimony"}),
    DiversityFamily.HAMMING_BALL_SET: frozenset({"k", "ball_constant_b"}),
    DiversityFamily.HAMMING_BALL_SMOOTH: frozenset({"gamma", "ball_constant_b"}),
    DiversityFamily.DIVMBEST: frozenset(),
    DiversityFamily.REGION_CONSISTENCY: frozenset({"regions"}),
}


class DiversityModel(BaseModel):
    """A diversity family with its trade-off weight and family parameters."""

    model_config = ConfigDict(populate_by_name=True, frozen=True)

    family: DiversityFamily
    h: ConcaveKind = ConcaveKind.COUNT
    lam: float = Field(0.0, alias="lambda", ge=0.0)
    gamma: float | None = Field(None, gt=0.0)
    k: int | None = Field(None, ge=0)
    parsimony: ParsimonyConfig | None = None
    regions: list[list[int]] | None = None
    ball_constant_b: float | None = None
    exact_union: bool = False

    @model_validator(mode="after")
    def _check_family_fields(self) -> "DiversityModel":
        allowed = _FAMILY_FIELDS[self.family]
        for name in ("gamma", "k", "parsimony", "regions", "ball_constant_b"):
            if getattr(self, name) is not None and name not in allowed:
                raise ValueError(
                    f"field '{name}' does not apply to family '{self.family.value}'"
                )
        if self.family == DiversityFamily.HAMMING_BALL_SMOOTH and self.gamma is None:
            raise ValueError("hamming_ball_smooth requires 'gamma'")
        if self.family == DiversityFamily.HAMMING_BALL_SET and self.k is None:
            raise ValueError("hamming_ball_set requires 'k'")
        if self.family == DiversityFamily.REGION_CONSISTENCY and not self.regions:
            raise ValueError("region_consistency requires 'regions'")
        if self.exact_union and self.family != DiversityFamily.HAMMING_BALL_SET:
            raise ValueError("'exact_union' only applies to hamming_ball_set")
        return self

    def with_lambda(self, lam: float) -> "DiversityModel":
        return self.model_copy(update={"lam": lam})


class SolutionStep(BaseModel):
    labels: list[int]
    relevance: float
    gain: float
    parsimony: float = 0.0
    objective_gain: float
    F: float
    backend: str = ""


class TraceStep(BaseModel):
    step: int
    backend: str
    exact: bool
    achieved_gain: float
    best_gain: float | None = None
    epsilon: float | None = None


class GreedyTrace(BaseModel):
    alpha: float = 1.0
    steps: list[TraceStep] = Field(default_factory=list)

    @property
    def epsilons_known(self) -> bool:
        return all(s.epsilon is not None for s in self.steps)

    @property
    def total_epsilon(self) -> float:
        return float(sum(s.epsilon or 0.0 for s in self.steps))


class SolutionList(BaseModel):
    steps: list[SolutionStep] = Field(default_factory=list)
    config: dict[str, Any] = Field(default_factory=dict)

    @property
    def items(self) -> list[tuple[int, ...]]:
        return [tuple(s.labels) for s in self.steps]

    @property
    def objective(self) -> float:
        return self.steps[-1].F if self.steps else 0.0

    def __len__(self) -> int:
        return len(self.steps)

    def to_output(self, trace: GreedyTrace | None = None) -> dict[str, Any]:
        return {
            "solutions": [s.model_dump() for s in self.steps],
            "trace": [t.model_dump() for t in trace.steps] if trace else [],
            "config": self.config,
        }

    @classmethod
    def from_output(cls, payload: dict[str, Any]) -> "SolutionList":
        return cls(
            steps=[SolutionStep.model_validate(s) for s in payload["solutions"]],
            config=payload.get("config", {}),
        )


class SuiteConfig(BaseModel):
    """Synthetic benchmark suite. Even seeds tune, odd seeds test."""

    height: int = Field(8, ge=1)
    width: int = Field(8, ge=1)
    num_labels: int = Field(5, ge=2)
    sigma: float = Field(0.8, ge=0.0)
    potts_beta: float = Field(0.5, ge=0.0)
    max_regions: int | None = Field(2, ge=1)
    num_seeds: int = Field(60, ge=2)
    base_seed: int = 0
    M: int = Field(5, ge=1)
    methods: list[str] = Field(
        default_factory=lambda: [
            "divmbest",
            "hamming_smooth",
            "label_cost",
            "label_transition",
            "concat",
            "linear",
            "random",
        ]
    )
    h: ConcaveKind = ConcaveKind.COUNT
    lambda_grid: list[float] = Field(default_factory=lambda: [0.02, 0.05, 0.1, 0.2, 0.5, 1.0])
    gamma_grid: list[float] = Field(default_factory=lambda: [0.05, 0.1, 0.2, 0.5, 1.0])
    # label_cost and label_transition tune over this grid instead of lambda_grid
    label_lambda_grid: list[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0, 4.0, 8.0, 16.0])
    linear_weight_grid: list[float] = Field(default_factory=lambda: [0.25, 1.0])
    metric: Metric = Metric.PIXEL_ACCURACY
    jobs: int = Field(1, ge=1)


class CurveRow(BaseModel):
    method: str
    M: int
    metric: str
    value: float


class MethodSummary(BaseModel):
    method: str
    params: dict[str, Any] = Field(default_factory=dict)
    map_accuracy: float
    oracle_curve: list[float]
    mean_iou_curve: list[float]
    corpus_iou: float | None = None


class EvalReport(BaseModel):
    suite: SuiteConfig
    validation_seeds: list[int]
    test_seeds: list[int]
    methods: list[MethodSummary] = Field(default_factory=list)
    curves: list[CurveRow] = Field(default_factory=list)
    acceptance: dict[str, dict[str, bool]] = Field(default_factory=dict)


class Lemma1Report(BaseModel):
    N: int
    M: int
    epsilon: float
    analytic_mean: float
    empirical_mean: float
    standard_error: float
    exhaustive_mean: float | None = None
    upper_bound: float
    sampling_lower_bound: float
    optimum: float
    within_tolerance: bool
    bound_holds: bool
    passed: bool


class BoundCheck(BaseModel):
    passed: bool
    lhs: float
    rhs: float
    margin: float


class SuiteResult(BaseModel):
    name: str
    passed: bool
    cases: int
    failures: list[dict[str, Any]] = Field(default_factory=list)
    details: dict[str, Any] = Field(default_factory=dict)


class VerificationReport(BaseModel):
    seed: int
    passed: bool
    suites: list[SuiteResult] = Field(default_factory=list)
