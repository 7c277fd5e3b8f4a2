"""
Experiment orchestration: scenario resolution, per-seed runs (optionally in a
process pool), acceptance evaluation, complexity reporting and the run registry.
"""
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from pydantic import ValidationError
from sqlalchemy.orm import Session

from app.core import config
from app.core.errors import ConfigError, DgtdError
from app.models.experiment_runs import ExperimentRun, SeedRun
from app.schemas.experiment import AcceptanceSpec, BoxSpec, ExperimentSpec, GraphSpec, ScenarioSpec
from app.schemas.run import RunConfig
from app.services.comm_graph import GraphDistribution, GraphMixture, RandomGraph, empty_graph
from app.services.dgtd import RunTrace, block_spread, run
from app.services.mdp import FeatureMap, MdpModel, effective_rewards
from app.services.oracle import OracleReport, run_oracle_suite
from app.services.presets import Scenario, preset
from app.services.saddle import BoxSettings, SaddleProblem, build_saddle_problem, complexity_requirements, saddle_point
from app.services.trace_export import export_heatmaps, export_trace
from app.utils.config_loader import load_edge_list

logger = logging.getLogger(__name__)


def _build_graph(spec: GraphSpec, base_dir: Path) -> RandomGraph:
    try:
        if spec.mixture is not None:
            return GraphMixture(
                spec.num_agents,
                tuple(tuple(c.edges) for c in spec.mixture),
                np.array([c.weight for c in spec.mixture]),
            )
        if spec.edge_list_file is not None:
            edges = load_edge_list(base_dir / spec.edge_list_file)
            return GraphDistribution.from_edge_list(spec.num_agents, edges)
        if spec.edges is not None:
            return GraphDistribution.from_edge_list(spec.num_agents, spec.edges)
        return empty_graph(spec.num_agents)
    except ValueError as e:
        raise ConfigError(f"scenario.graph: {e}") from e


def resolve_scenario(spec: ScenarioSpec, base_dir: Union[str, Path] = ".") -> Scenario:
    """Preset values fill every field the spec does not give inline"""
    base_dir = Path(base_dir)
    base = preset(spec.preset) if spec.preset is not None else None
    try:
        model = (
            MdpModel(
                np.array(spec.mdp.transition, dtype=float),
                np.array(spec.mdp.agent_rewards, dtype=float),
                spec.mdp.sigma,
                spec.mdp.gamma,
            )
            if spec.mdp is not None
            else base.model
        )
        features = FeatureMap(np.array(spec.features.phi, dtype=float)) if spec.features is not None else base.features
    except ValueError as e:
        raise ConfigError(f"scenario: {e}") from e
    graph = _build_graph(spec.graph, base_dir) if spec.graph is not None else base.graph
    grid_shape = tuple(spec.grid_shape) if spec.grid_shape is not None else (base.grid_shape if base else None)

    if base is not None:
        return replace(base, model=model, features=features, graph=graph, grid_shape=grid_shape)
    return Scenario(name="custom", model=model, features=features, graph=graph, grid_shape=grid_shape)


def run_config_for(
    spec: ExperimentSpec,
    scenario: Scenario,
    seed: int,
    iterations: Optional[int] = None,
) -> RunConfig:
    merged: Dict[str, Any] = dict(scenario.run_defaults)
    merged.update(spec.run.model_dump(exclude_none=True))
    if iterations is not None:
        merged["total_iterations"] = iterations
    merged["seed"] = seed
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as e:
        fields = "; ".join(f"run.{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigError(fields) from e


def box_settings(boxes: BoxSpec) -> BoxSettings:
    return BoxSettings(**boxes.model_dump())


def build_problem(scenario: Scenario, run_cfg: RunConfig, boxes: BoxSpec) -> SaddleProblem:
    """Saddle problem over the expected rewards the sampler actually targets"""
    model = effective_rewards(scenario.model, run_cfg.reward_attribution)
    return build_saddle_problem(
        model,
        scenario.features,
        scenario.graph,
        kappa=run_cfg.kappa,
        rho=run_cfg.rho,
        settings=box_settings(boxes),
    )


def _finite(value: Any) -> Any:
    """Replace non-finite floats by None, recursively"""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {k: _finite(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite(v) for v in value]
    return value


def seed_metrics(trace: RunTrace, evaluate_on: str = "averaged") -> Dict[str, Any]:
    primary = trace.primary
    iterate = trace.last if evaluate_on == "last" else trace.averaged
    tenth = max(1, trace.total_iterations // 10)
    try:
        consensus_at_tenth = primary.value_at("consensus_penalty", tenth)
    except ValueError:
        consensus_at_tenth = None
    return {
        "seed": trace.seed,
        "final_consensus_penalty": primary.consensus_penalty[-1],
        "consensus_penalty_at_tenth": consensus_at_tenth,
        "final_primal_error": primary.theta_err[-1] + primary.v_norm[-1],
        "final_gap_proxy": primary.gap_proxy[-1],
        "block_spread": block_spread(iterate.w),
        "w_error": float(np.max(np.abs(iterate.w - trace.solution.w))),
        "empirical_c": trace.empirical_c,
        "final_w": iterate.w.tolist(),
    }


def run_seed(
    spec_json: str,
    seed: int,
    out_dir: str,
    base_dir: str = ".",
    iterations: Optional[int] = None,
) -> Dict[str, Any]:
    """
    One seed end to end; module-level so a process pool can pickle it.

    Returns:
        per-seed metrics, or {"seed", "error"} when the run failed
    """
    spec = ExperimentSpec.model_validate_json(spec_json)
    evaluate_on = spec.acceptance.evaluate_on if spec.acceptance else "averaged"
    try:
        scenario = resolve_scenario(spec.scenario, base_dir)
        run_cfg = run_config_for(spec, scenario, seed, iterations)
        problem = build_problem(scenario, run_cfg, spec.boxes)
        trace = run(problem, scenario.model, scenario.features, scenario.graph, run_cfg)
    except DgtdError as e:
        logger.error(f"Seed {seed} failed: {e}", exc_info=True)
        return {"seed": seed, "error": str(e)}

    seed_dir = Path(out_dir) / f"seed_{seed}"
    files = []
    if spec.report.trace_csv:
        files += [str(p) for p in export_trace(trace, seed_dir / "trace.csv")]
    if spec.report.heatmaps and scenario.grid_shape is not None:
        heatmaps = export_heatmaps(trace, scenario.features.phi, scenario.grid_shape, seed_dir / "heatmaps")
        files += [str(p) for p in heatmaps.values()]
    metrics = seed_metrics(trace, evaluate_on)
    metrics["files"] = files
    return metrics


def _acceptance_for(spec: ExperimentSpec, scenario: Scenario) -> Optional[AcceptanceSpec]:
    if spec.acceptance is not None:
        return spec.acceptance
    if scenario.acceptance_defaults:
        return AcceptanceSpec(**scenario.acceptance_defaults)
    return None


def evaluate_acceptance(
    acceptance: Optional[AcceptanceSpec],
    results: Sequence[Dict[str, Any]],
    w_solution: np.ndarray,
) -> Dict[str, Any]:
    """
    Per-criterion verdicts; a failed run fails every criterion.

    Spread and w-error thresholds scale with 1 + ||w*||_inf and must hold in at
    least min_pass_fraction of the seeds; consensus decrease must hold in all.
    """
    failed_runs = [r["seed"] for r in results if "error" in r]
    verdict: Dict[str, Any] = {"criteria": {}, "failed_runs": failed_runs}
    if failed_runs:
        verdict["passed"] = False
        return verdict
    if acceptance is None:
        verdict["passed"] = True
        return verdict

    scale = 1.0 + float(np.max(np.abs(w_solution)))
    criteria = verdict["criteria"]

    def fraction_check(name: str, key: str, limit: Optional[float], scaled: bool = True) -> None:
        if limit is None:
            return
        threshold = limit * scale if scaled else limit
        passes = [r[key] <= threshold for r in results]
        fraction = sum(passes) / len(passes)
        criteria[name] = {
            "threshold": threshold,
            "pass_fraction": fraction,
            "passed": fraction >= acceptance.min_pass_fraction,
        }

    fraction_check("block_spread", "block_spread", acceptance.max_block_spread)
    fraction_check("w_error", "w_error", acceptance.max_w_error)
    fraction_check("final_gap_proxy", "final_gap_proxy", acceptance.max_final_gap_proxy, scaled=False)

    if acceptance.max_mean_w_error is not None:
        mean_w = np.mean([np.asarray(r["final_w"]) for r in results], axis=0)
        error = float(np.max(np.abs(mean_w - w_solution)))
        threshold = acceptance.max_mean_w_error * scale
        criteria["mean_w_error"] = {"value": error, "threshold": threshold, "passed": error <= threshold}

    if acceptance.require_consensus_decrease:
        decreased = [
            r["consensus_penalty_at_tenth"] is not None
            and r["final_consensus_penalty"] < r["consensus_penalty_at_tenth"]
            for r in results
        ]
        criteria["consensus_decrease"] = {"pass_fraction": sum(decreased) / len(decreased), "passed": all(decreased)}

    verdict["passed"] = all(c["passed"] for c in criteria.values())
    return verdict


@dataclass
class ExperimentReport:
    summary: Dict[str, Any]
    passed: bool
    out_dir: Path
    seed_results: List[Dict[str, Any]] = field(default_factory=list)


def _complexity_table(spec: ExperimentSpec, run_cfg: RunConfig, problem: SaddleProblem, c: float) -> Optional[Dict]:
    if not c > 0:
        return None
    requirements = complexity_requirements(
        spec.report.epsilon, spec.report.delta, run_cfg.schedule.alpha0, c, problem
    )
    return {name: (asdict(est) if est is not None else None) for name, est in requirements.items()}


def run_experiment(
    spec: ExperimentSpec,
    out_dir: Optional[Union[str, Path]] = None,
    base_dir: Union[str, Path] = ".",
    iterations: Optional[int] = None,
    seeds: Optional[Sequence[int]] = None,
    max_workers: Optional[int] = None,
) -> ExperimentReport:
    """
    Run every seed, write per-seed traces and the aggregate summary.

    Raises:
        ConfigError, NotConnected, SingularB, AssumptionViolation: before any run starts
    """
    out_dir = Path(out_dir or config.OUTPUT_DIR)
    seeds = list(seeds) if seeds else list(spec.seeds)
    if seeds != list(spec.seeds):
        spec = spec.model_copy(update={"seeds": seeds})
    max_workers = max_workers or config.MAX_WORKERS

    scenario = resolve_scenario(spec.scenario, base_dir)
    run_cfg = run_config_for(spec, scenario, seeds[0], iterations)
    problem = build_problem(scenario, run_cfg, spec.boxes)
    acceptance = _acceptance_for(spec, scenario)
    if acceptance is not None and spec.acceptance is None:
        spec = spec.model_copy(update={"acceptance": acceptance})
    solution_w = saddle_point(problem).w

    out_dir.mkdir(parents=True, exist_ok=True)
    spec_json = spec.model_dump_json()
    logger.info(f"Running {scenario.name} for seeds {seeds} with {max_workers} worker(s), output in {out_dir}")

    results: List[Dict[str, Any]] = []
    if max_workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as executor:
            futures = {
                executor.submit(run_seed, spec_json, seed, str(out_dir), str(base_dir), iterations): seed
                for seed in seeds
            }
            for future in as_completed(futures):
                results.append(future.result())
    else:
        for seed in seeds:
            results.append(run_seed(spec_json, seed, str(out_dir), str(base_dir), iterations))
    results.sort(key=lambda r: seeds.index(r["seed"]))

    verdict = evaluate_acceptance(acceptance, results, solution_w)
    completed = [r for r in results if "error" not in r]
    empirical_c = max((r["empirical_c"] for r in completed), default=0.0)
    summary = {
        "scenario": scenario.name,
        "total_iterations": run_cfg.total_iterations,
        "seeds": seeds,
        "kappa": run_cfg.kappa,
        "rho": run_cfg.rho,
        "average_from": run_cfg.average_from,
        "schedule": run_cfg.schedule.model_dump(),
        "boxes": asdict(problem.boxes),
        "w_star": solution_w.tolist(),
        "runs": [{k: v for k, v in r.items() if k != "final_w"} for r in results],
        "empirical_c": empirical_c,
        "complexity": _complexity_table(spec, run_cfg, problem, empirical_c) if spec.report.complexity_table else None,
        "acceptance": verdict,
        "passed": verdict["passed"],
    }
    summary = _finite(summary)
    if spec.report.summary_json:
        path = out_dir / "summary.json"
        path.write_text(json.dumps(summary, indent=2, sort_keys=True))
        logger.info(f"Wrote summary to {path}")

    logger.info(f"Experiment {scenario.name}: {'PASSED' if verdict['passed'] else 'FAILED'}")
    return ExperimentReport(summary=summary, passed=verdict["passed"], out_dir=out_dir, seed_results=results)


def record_experiment(db: Session, spec: ExperimentSpec, report: ExperimentReport) -> ExperimentRun:
    """Store one registry row for the experiment and one per seed"""
    experiment = ExperimentRun(
        scenario=report.summary["scenario"],
        total_iterations=report.summary["total_iterations"],
        num_seeds=len(report.summary["seeds"]),
        passed=report.passed,
        out_dir=str(report.out_dir),
        spec_json=spec.model_dump_json(),
        summary_json=json.dumps(report.summary, sort_keys=True),
    )
    db.add(experiment)
    db.flush()
    for result in report.seed_results:
        db.add(
            SeedRun(
                experiment_id=experiment.id,
                seed=str(result["seed"]),
                error=result.get("error"),
                final_consensus_penalty=result.get("final_consensus_penalty"),
                final_primal_error=result.get("final_primal_error"),
                final_gap_proxy=result.get("final_gap_proxy"),
                block_spread=result.get("block_spread"),
                w_error=result.get("w_error"),
                empirical_c=result.get("empirical_c"),
            )
        )
    db.commit()
    db.refresh(experiment)
    logger.info(f"Recorded experiment run {experiment.id} ({experiment.scenario})")
    return experiment


def verify_experiment(spec: ExperimentSpec, base_dir: Union[str, Path] = ".", seed: Optional[int] = None) -> OracleReport:
    """Oracle suite on the spec's scenario; no stochastic run is made"""
    seed = spec.seeds[0] if seed is None else seed
    scenario = resolve_scenario(spec.scenario, base_dir)
    run_cfg = run_config_for(spec, scenario, seed)
    problem = build_problem(scenario, run_cfg, spec.boxes)
    report = run_oracle_suite(problem, scenario=scenario.name, seed=seed)
    logger.info(f"Oracle suite on {scenario.name}: {'PASSED' if report.passed else 'FAILED'}")
    return report
