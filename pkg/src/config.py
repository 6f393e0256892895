import os
from dataclasses import dataclass, field
from dotenv import load_dotenv


@dataclass
class SolverConfig:
    enum_cap: int = 2**24
    exact_threshold: int = 2**20
    bp_max_iters: int = 100
    bp_damping: float = 0.5
    expansion_max_sweeps: int = 50
    local_search_max_sweeps: int = 50
    combination_cap: int = 10**7
    move_tolerance: float = 1e-12


@dataclass
class BenchmarkDefaults:
    height: int = 8
    width: int = 8
    num_labels: int = 5
    sigma: float = 0.8
    max_regions: int = 2
    num_seeds: int = 60
    M: int = 5
    lambda_grid: list[float] = field(default_factory=lambda: [0.02, 0.05, 0.1, 0.2, 0.5, 1.0])
    gamma_grid: list[float] = field(default_factory=lambda: [0.05, 0.1, 0.2, 0.5, 1.0])
    label_lambda_grid: list[float] = field(default_factory=lambda: [0.5, 1.0, 2.0, 4.0, 8.0, 16.0])


@dataclass
class AppConfig:
    solver: SolverConfig = field(default_factory=SolverConfig)
    benchmark: BenchmarkDefaults = field(default_factory=BenchmarkDefaults)
    reports_dir: str = "reports"
    log_runs: bool = False  # Append a row per CLI run to the daily Excel ledger.


def _env_float(name: str, default: float) -> float:
    value = os.getenv(name)
    if value is None:
        return default
    try:
        return float(value)
    except ValueError:
        return default


def _env_int(name: str, default: int) -> int:
    value = os.getenv(name)
    if value is None:
        return default
    try:
        return int(value)
    except ValueError:
        return default


def _env_bool(name: str, default: bool) -> bool:
    value = os.getenv(name, str(default)).lower()
    return value in ("true", "1", "t", "y", "yes")


def _env_float_list(name: str, default: list[float]) -> list[float]:
    value = os.getenv(name)
    if not value:
        return list(default)
    try:
        return [float(part) for part in value.split(",") if part.strip()]
    except ValueError:
        return list(default)


def load_default_config() -> AppConfig:
    load_dotenv()

    solver = SolverConfig(
        enum_cap=max(1, _env_int("DIVSTRUCT_ENUM_CAP", 2**24)),
        exact_threshold=max(1, _env_int("DIVSTRUCT_EXACT_THRESHOLD", 2**20)),
        bp_max_iters=max(1, _env_int("DIVSTRUCT_BP_MAX_ITERS", 100)),
        bp_damping=min(max(_env_float("DIVSTRUCT_BP_DAMPING", 0.5), 0.0), 0.99),
        combination_cap=max(1, _env_int("DIVSTRUCT_COMBINATION_CAP", 10**7)),
    )
    benchmark = BenchmarkDefaults(
        lambda_grid=_env_float_list("DIVSTRUCT_LAMBDA_GRID", BenchmarkDefaults().lambda_grid),
        gamma_grid=_env_float_list("DIVSTRUCT_GAMMA_GRID", BenchmarkDefaults().gamma_grid),
        label_lambda_grid=_env_float_list(
            "DIVSTRUCT_LABEL_LAMBDA_GRID", BenchmarkDefaults().label_lambda_grid
        ),
    )

    return AppConfig(
        solver=solver,
        benchmark=benchmark,
        reports_dir=os.getenv("DIVSTRUCT_REPORTS_DIR", "reports"),
        log_runs=_env_bool("DIVSTRUCT_LOG_RUNS", False),
    )
