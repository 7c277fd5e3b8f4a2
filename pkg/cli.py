"""
Command-line entry point.

    python cli.py run configs/chain4.yaml --out runs/chain4 --seeds 1 2 3
    python cli.py verify configs/toy2x2.yaml
    python cli.py complexity --epsilon 0.1 --delta 0.1 --alpha0 10 --c 50

Exit codes: 0 when every acceptance threshold (or oracle check) passes, 1 when
one fails, 2 on configuration, IO or domain errors.
"""
import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional

from app.core.config import LOG_LEVEL, OUTPUT_DIR
from app.core.errors import DgtdError
from app.schemas.experiment import BoxSpec, ExperimentSpec
from app.services.experiments import build_problem, record_experiment, run_config_for, run_experiment, verify_experiment
from app.services.presets import preset, preset_names
from app.services.saddle import complexity_requirements
from app.utils.config_loader import load_experiment_spec

logger = logging.getLogger("dgtd")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2


def _with_preset(spec: ExperimentSpec, name: Optional[str]) -> ExperimentSpec:
    if name is None:
        return spec
    return spec.model_copy(update={"scenario": spec.scenario.model_copy(update={"preset": name})})


def cmd_run(args: argparse.Namespace) -> int:
    spec = _with_preset(load_experiment_spec(args.spec), args.preset)
    report = run_experiment(
        spec,
        out_dir=args.out,
        base_dir=Path(args.spec).parent,
        iterations=args.iterations,
        seeds=args.seeds,
        max_workers=args.workers,
    )
    if args.record:
        from app.database import Base, SessionLocal, engine

        Base.metadata.create_all(bind=engine)
        db = SessionLocal()
        try:
            experiment = record_experiment(db, spec, report)
            print(f"Recorded as experiment run {experiment.id}")
        finally:
            db.close()

    verdict = report.summary["acceptance"]
    for name, criterion in verdict["criteria"].items():
        print(f"  {name:<20} {'pass' if criterion['passed'] else 'FAIL'}  {json.dumps(criterion, sort_keys=True)}")
    for seed in verdict["failed_runs"]:
        print(f"  seed {seed} did not complete")
    print(f"{report.summary['scenario']}: {'PASSED' if report.passed else 'FAILED'} (output in {report.out_dir})")
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_verify(args: argparse.Namespace) -> int:
    spec = _with_preset(load_experiment_spec(args.spec), args.preset)
    report = verify_experiment(spec, base_dir=Path(args.spec).parent)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_complexity(args: argparse.Namespace) -> int:
    problem = None
    if args.preset is not None:
        scenario = preset(args.preset)
        spec = ExperimentSpec(scenario={"preset": args.preset}, seeds=[0])
        problem = build_problem(scenario, run_config_for(spec, scenario, 0), BoxSpec())
    requirements = complexity_requirements(args.epsilon, args.delta, args.alpha0, args.c, problem)
    table = {name: (asdict(est) if est is not None else None) for name, est in requirements.items()}
    print(json.dumps(table, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dgtd",
        description="Distributed GTD policy evaluation: experiments, oracles and complexity bounds",
    )
    parser.add_argument("--log-level", default=LOG_LEVEL, help="Logging level (default from DGTD_LOG_LEVEL)")
    commands = parser.add_subparsers(dest="command", required=True)

    run_parser = commands.add_parser("run", help="Run every seed of an experiment and evaluate acceptance")
    run_parser.add_argument("spec", help="YAML experiment file")
    run_parser.add_argument("--out", default=OUTPUT_DIR, help=f"Output directory (default {OUTPUT_DIR})")
    run_parser.add_argument("--seeds", type=int, nargs="+", help="Override the seeds of the spec")
    run_parser.add_argument("--iterations", type=int, help="Override total_iterations")
    run_parser.add_argument("--preset", choices=preset_names(), help="Override the scenario preset")
    run_parser.add_argument("--workers", type=int, help="Process pool size (default DGTD_MAX_WORKERS)")
    run_parser.add_argument("--record", action="store_true", help="Store the run in the registry database")
    run_parser.set_defaults(handler=cmd_run)

    verify_parser = commands.add_parser("verify", help="Run the exact-solution oracle suite")
    verify_parser.add_argument("spec", help="YAML experiment file")
    verify_parser.add_argument("--preset", choices=preset_names(), help="Override the scenario preset")
    verify_parser.set_defaults(handler=cmd_verify)

    complexity_parser = commands.add_parser("complexity", help="Sample-complexity calculator")
    complexity_parser.add_argument("--epsilon", type=float, required=True)
    complexity_parser.add_argument("--delta", type=float, required=True)
    complexity_parser.add_argument("--alpha0", type=float, required=True)
    complexity_parser.add_argument("--c", type=float, required=True)
    complexity_parser.add_argument(
        "--preset", choices=preset_names(), help="Also report the consensus and primal-error requirements"
    )
    complexity_parser.set_defaults(handler=cmd_complexity)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except DgtdError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as e:
        logger.error(f"IO error: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
