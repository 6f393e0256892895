#!/usr/bin/env python3
import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from pydantic import ValidationError

from src.config import AppConfig, load_default_config
from src.errors import DivStructError, InputError, InvalidConfig, SolverError
from src.evaluation import export_csv, run_benchmark, synth_generate, synth_rare_transition
from src.excel_logger import log_run_to_excel
from src.factor_graph import evaluate_score, graph_to_dict, load_instance
from src.greedy import GreedyDriver, combine_concat
from src.inference import NO_AUGMENTATION
from src.models import Backend, CombineMode, DiversityFamily, DiversityModel, SuiteConfig
from src.report_generator import HAS_REPORTLAB, generate_pdf_report
from src.verification import SUITES, run_verification

logger = logging.getLogger("divstruct")

EXIT_OK = 0
EXIT_VERIFICATION_FAILED = 1
EXIT_INPUT_ERROR = 2
EXIT_SOLVER_ERROR = 3


@dataclass
class RunConfig:
    command: str
    instance: Path | None = None
    out: Path | None = None
    models: list[DiversityModel] = field(default_factory=list)
    weights: list[float] = field(default_factory=list)
    combine: CombineMode | None = None
    backend: Backend = Backend.AUTO
    seed: int = 0
    M: int = 1
    app: AppConfig = field(default_factory=AppConfig)

    def __post_init__(self) -> None:
        if self.M < 1:
            raise InvalidConfig(f"--M must be at least 1, got {self.M}")
        if self.instance is not None and not self.instance.exists():
            raise FileNotFoundError(f"instance file {self.instance} does not exist")


def _emit(payload: dict[str, Any], out: Path | None) -> None:
    text = json.dumps(payload, indent=2)
    if out is None:
        print(text)
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text + "\n", encoding="utf-8")


def _app_config(args: argparse.Namespace) -> AppConfig:
    config = load_default_config()
    solver = config.solver
    if args.enum_cap is not None:
        solver = replace(solver, enum_cap=args.enum_cap)
    if args.bp_iters is not None:
        solver = replace(solver, bp_max_iters=args.bp_iters)
    if args.damping is not None:
        solver = replace(solver, bp_damping=args.damping)
    return replace(config, solver=solver, log_runs=config.log_runs or args.log_runs)


def _model_from_flags(family: str, args: argparse.Namespace) -> DiversityModel:
    family = DiversityFamily(family)
    payload: dict[str, Any] = {"family": family, "h": args.h, "lambda": args.lam}
    if family == DiversityFamily.HAMMING_BALL_SMOOTH:
        payload["gamma"] = args.gamma
    if family == DiversityFamily.HAMMING_BALL_SET:
        payload["k"] = args.k
        payload["exact_union"] = args.exact_union
    if family == DiversityFamily.REGION_CONSISTENCY:
        payload["regions"] = json.loads(args.regions) if args.regions else None
    return DiversityModel.model_validate(payload)


def _load_models(args: argparse.Namespace) -> list[DiversityModel]:
    models = [
        DiversityModel.model_validate(json.loads(Path(p).read_text(encoding="utf-8")))
        for p in args.config
    ]
    models += [_model_from_flags(family, args) for family in args.diversity]
    if not models:
        raise InvalidConfig("give at least one --diversity family or --config file")
    return models


def _log_run(run: RunConfig, row: dict[str, Any]) -> None:
    if not run.app.log_runs:
        return
    first = run.models[0] if run.models else None
    row = {
        "command": run.command,
        "instance": str(run.instance) if run.instance else None,
        "M": run.M,
        "backend": run.backend.value,
        "seed": run.seed,
        "diversity": [m.family.value for m in run.models] or None,
        "lambda": first.lam if first else None,
        "gamma": first.gamma if first else None,
        "k": first.k if first else None,
        **row,
    }
    path = log_run_to_excel(row, run.app.reports_dir)
    logger.info("run logged to %s", path)


def cmd_solve(run: RunConfig) -> int:
    graph = load_instance(run.instance)
    driver = GreedyDriver(graph, [], run.backend, run.app.solver)
    labels, backend = driver.solve(NO_AUGMENTATION)
    _emit(
        {"labels": list(labels), "score": evaluate_score(graph, labels), "backend": backend.value},
        run.out,
    )
    return EXIT_OK


def cmd_diverse(run: RunConfig) -> int:
    start = time.time()
    graph = load_instance(run.instance)
    extra = {"seed": run.seed}
    if run.combine == CombineMode.CONCAT:
        lists = [
            GreedyDriver(graph, [(model, 1.0)], run.backend, run.app.solver).run(run.M, extra)[0]
            for model in run.models
        ]
        solutions = combine_concat(lists, run.M, graph, run.models[0])
        trace = None
    else:
        weights = run.weights or [1.0] * len(run.models)
        if len(weights) != len(run.models):
            raise InvalidConfig(f"{len(run.models)} diversity models but {len(weights)} weights")
        if run.combine == CombineMode.LINEAR:
            extra["combine"] = "linear"
        driver = GreedyDriver(graph, list(zip(run.models, weights)), run.backend, run.app.solver)
        solutions, trace = driver.run(run.M, extra)

    _emit(solutions.to_output(trace), run.out)
    _log_run(
        run,
        {
            "run_id": solutions.config.get("run_id"),
            "num_vars": graph.num_vars,
            "num_labels": graph.num_labels,
            "objective": solutions.objective,
            "total_epsilon": trace.total_epsilon if trace and trace.epsilons_known else None,
            "duration_s": time.time() - start,
        },
    )
    return EXIT_OK


def cmd_bench(run: RunConfig, args: argparse.Namespace) -> int:
    start = time.time()
    payload = json.loads(Path(args.suite).read_text(encoding="utf-8")) if args.suite else {}
    for key, value in asdict(run.app.benchmark).items():
        payload.setdefault(key, value)
    if args.seeds is not None:
        payload["num_seeds"] = args.seeds
    if args.M is not None:
        payload["M"] = args.M
    if args.jobs is not None:
        payload["jobs"] = args.jobs
    payload.setdefault("base_seed", run.seed)
    suite = SuiteConfig.model_validate(payload)

    report = run_benchmark(suite, run.app.solver)
    _emit(report.model_dump(mode="json"), run.out)
    if args.csv:
        export_csv(report, args.csv)
    if args.pdf:
        if not HAS_REPORTLAB:
            logger.warning("reportlab is not installed; skipping %s", args.pdf)
        else:
            Path(args.pdf).write_bytes(generate_pdf_report(report))
    _log_run(
        run,
        {
            "M": suite.M,
            "seed": suite.base_seed,
            "duration_s": time.time() - start,
            "notes": report.acceptance,
        },
    )
    return EXIT_OK


def cmd_verify(run: RunConfig, args: argparse.Namespace) -> int:
    start = time.time()
    report = run_verification(
        suite=args.suite,
        seed=run.seed,
        cases=args.cases,
        inject_fault=args.inject_fault,
        N=args.N,
        M=args.M,
        epsilon=args.epsilon,
    )
    _emit(report.model_dump(mode="json"), run.out)
    _log_run(run, {"passed": report.passed, "duration_s": time.time() - start, "notes": args.suite})
    return EXIT_OK if report.passed else EXIT_VERIFICATION_FAILED


def cmd_synth(run: RunConfig, args: argparse.Namespace) -> int:
    if args.rare_transition:
        instance = synth_rare_transition(args.height, args.width, args.labels, args.sigma, run.seed)
    else:
        instance = synth_generate(
            args.height, args.width, args.labels, args.sigma, run.seed, max_regions=args.max_regions
        )
    payload = graph_to_dict(instance.graph)
    payload.update(
        {
            "height": instance.height,
            "width": instance.width,
            "sigma": instance.sigma,
            "seed": instance.seed,
            "ground_truth": list(instance.ground_truth),
        }
    )
    _emit(payload, run.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", type=Path, default=None, help="Write JSON here instead of stdout.")
    common.add_argument("--log-level", default="WARNING")
    common.add_argument("--log-runs", action="store_true", help="Append the run to the Excel ledger.")
    common.add_argument("--enum-cap", type=int, default=None)
    common.add_argument("--bp-iters", type=int, default=None)
    common.add_argument("--damping", type=float, default=None)

    parser = argparse.ArgumentParser(
        prog="divstruct", description="Diverse M-best solutions for factor graphs."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", parents=[common], help="MAP labeling of an instance.")
    solve.add_argument("instance", type=Path)
    solve.add_argument("--backend", choices=[b.value for b in Backend], default="auto")

    diverse = sub.add_parser("diverse", parents=[common], help="Greedy diverse list.")
    diverse.add_argument("instance", type=Path)
    diverse.add_argument(
        "--diversity", action="append", default=[], choices=[f.value for f in DiversityFamily]
    )
    diverse.add_argument("--config", action="append", default=[], help="Diversity config JSON file.")
    diverse.add_argument("--h", choices=["count", "sqrt", "log1p"], default="count")
    diverse.add_argument("--lambda", dest="lam", type=float, default=0.1)
    diverse.add_argument("--gamma", type=float, default=0.2)
    diverse.add_argument("--k", type=int, default=1)
    diverse.add_argument("--exact-union", action="store_true")
    diverse.add_argument("--regions", default=None, help="JSON list of variable lists.")
    diverse.add_argument("--M", type=int, default=5)
    diverse.add_argument("--combine", choices=[c.value for c in CombineMode], default=None)
    diverse.add_argument("--weights", default=None, help="Comma-separated weights for --combine linear.")
    diverse.add_argument("--backend", choices=[b.value for b in Backend], default="auto")

    bench = sub.add_parser("bench", parents=[common], help="Synthetic benchmark.")
    bench.add_argument("--suite", default=None, help="Suite config JSON file.")
    bench.add_argument("--seeds", type=int, default=None)
    bench.add_argument("--M", type=int, default=None)
    bench.add_argument("--jobs", type=int, default=None)
    bench.add_argument("--csv", type=Path, default=None)
    bench.add_argument("--pdf", type=Path, default=None)

    verify = sub.add_parser("verify", parents=[common], help="Run the guarantee suites.")
    verify.add_argument("--suite", choices=("all",) + SUITES, default="all")
    verify.add_argument("--cases", type=int, default=None)
    verify.add_argument("--N", type=int, default=None)
    verify.add_argument("--M", type=int, default=None)
    verify.add_argument("--epsilon", type=float, default=None)
    verify.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)

    synth = sub.add_parser("synth", parents=[common], help="Write a synthetic instance.")
    synth.add_argument("--height", type=int, default=8)
    synth.add_argument("--width", type=int, default=8)
    synth.add_argument("--labels", type=int, default=3)
    synth.add_argument("--sigma", type=float, default=0.8)
    synth.add_argument("--rare-transition", action="store_true")
    synth.add_argument("--max-regions", type=int, default=None, help="Cap on planted rectangles.")
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    app = _app_config(args)
    if args.command == "solve":
        run = RunConfig(
            "solve", args.instance, args.out, backend=Backend(args.backend), seed=args.seed, app=app
        )
        return cmd_solve(run)
    if args.command == "diverse":
        weights = [float(w) for w in args.weights.split(",")] if args.weights else []
        run = RunConfig(
            "diverse",
            args.instance,
            args.out,
            models=_load_models(args),
            weights=weights,
            combine=CombineMode(args.combine) if args.combine else None,
            backend=Backend(args.backend),
            seed=args.seed,
            M=args.M,
            app=app,
        )
        return cmd_diverse(run)
    run = RunConfig(args.command, out=args.out, seed=args.seed, app=app)
    if args.command == "bench":
        return cmd_bench(run, args)
    if args.command == "verify":
        return cmd_verify(run, args)
    return cmd_synth(run, args)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return _dispatch(args)
    except (InputError, ValidationError, json.JSONDecodeError, OSError, ValueError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except SolverError as e:
        step = f" (step {e.step + 1})" if e.step is not None else ""
        print(f"Solver error{step}: {e}", file=sys.stderr)
        return EXIT_SOLVER_ERROR
    except DivStructError as e:
        print(f"Verification error: {e}", file=sys.stderr)
        return EXIT_VERIFICATION_FAILED


if __name__ == "__main__":
    sys.exit(main())
