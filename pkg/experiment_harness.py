#!/usr/bin/env python3
"""
Calibration Lab Experiment Harness
Runs every (method, seed) pair, evaluates on test, re-evaluates after each post-hoc
calibrator and writes rows, raw arrays, traces, reliability tables and a summary

    out/<config-id>/
        config.copy  rows.csv  summary.json
        raw/<row>.npz  traces/<run>.csv  reliability/<row>.csv
"""

import argparse
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

import calibration_metrics as metrics
import ensemble_distillation as ens
import information_theory as info
import posthoc_calibration as posthoc
import result_store
from calibration_model import TrainedModel
from cpu_manager import RunThrottler
from dataset_factory import Dataset, load_csv, make_quadrant_domains, make_regional_noise, make_two_moons, split
from experiment_config import CALIBRATORS, DatasetSpec, ExperimentConfig, load_config, merge, to_lines
from lab_errors import CalibLabError, ConfigError, ContractViolation
from training_engine import TrainMethod, dump_trace_csv, train

logger = logging.getLogger(__name__)

ROW_COLUMNS = ("run_id", "method", "seed", "calibrator", "accuracy", "ece", "mce", "mean_conf", "std_conf",
               "passes_both")
METRIC_COLUMNS = ("accuracy", "ece", "mce", "mean_conf", "std_conf", "passes_both")
SWEEP_COLUMNS = ("alpha", "method", "n_seeds", "accuracy", "accuracy_std", "ece", "ece_std", "mean_conf",
                 "mean_conf_std", "std_conf", "std_conf_std", "conf_min", "conf_max")
POSTHOC_COLUMNS = ("calibrator", "n_seeds", "accuracy", "ece", "ece_std", "mean_conf", "std_conf", "pass_rate",
                   "delta_var", "bound", "compression_holds")
INFO_COLUMNS = ("k", "entropy", "mutual_information", "gap", "ece_lower_bound")
BINARY_SUPERVISED = tuple(m.value for m in TrainMethod if m is not TrainMethod.DISTILL)


def build_splits(spec: DatasetSpec) -> Tuple[Dataset, Dataset, Dataset]:
    if spec.kind == "two_moons":
        ds = make_two_moons(spec.n, spec.noise, spec.seed)
    elif spec.kind == "csv":
        ds = load_csv(spec.path, spec.label_column)
    else:
        ds = make_regional_noise(spec.n // len(spec.keep_probs), spec.keep_probs, spec.seed).dataset
    return split(ds, spec.sizes, spec.seed)


def result_row(run: str, method: str, seed: int, calibrator: str, report: metrics.EvalReport) -> Dict[str, Any]:
    return {
        "run_id": f"{run}-{calibrator}", "method": method, "seed": seed, "calibrator": calibrator,
        "accuracy": report.accuracy, "ece": report.ece, "mce": report.mce, "mean_conf": report.mean_conf,
        "std_conf": report.std_conf, "passes_both": report.passes_both,
    }


def _persist_row(out: Path, row: Dict[str, Any], report: metrics.EvalReport, conf: np.ndarray, correct: np.ndarray):
    result_store.save_arrays(out / "raw" / f"{row['run_id']}.npz", conf=conf, correct=correct)
    result_store.write_csv(out / "reliability" / f"{row['run_id']}.csv", metrics.RELIABILITY_COLUMNS,
                           metrics.reliability_rows(report))
    row.update(conf_min=float(conf.min()), conf_max=float(conf.max()))


def _fit_calibrator(kind: str, config: ExperimentConfig, conf: np.ndarray, conf_logit: np.ndarray,
                    correct: np.ndarray) -> posthoc.CalibrationMap:
    if kind == "temperature":
        return posthoc.fit_temperature(posthoc.confidence_logits(conf_logit), correct.astype(np.int64),
                                       config.posthoc.iters, config.posthoc.lr)
    if kind == "platt":
        return posthoc.fit_platt(conf, correct)
    return posthoc.fit_isotonic(conf, correct, bounded=True)


@dataclass(frozen=True)
class RunJob:
    config: ExperimentConfig
    method: str
    seed: int
    out_dir: str


def execute_job(job: RunJob) -> Dict[str, Any]:
    """
    Train, evaluate and calibrate one (method, seed) pair

    Never raises; failures are returned as {"status": "error", "error": ...}
    alongside whatever rows were completed.
    """
    config, out = job.config, Path(job.out_dir)
    run = f"{job.method}-s{job.seed}"
    result: Dict[str, Any] = {"run": run, "method": job.method, "seed": job.seed, "status": "ok", "rows": [],
                              "errors": [], "compression": {}}
    start = time.perf_counter()
    try:
        train_ds, val_ds, test_ds = build_splits(config.dataset)
        train_config = config.train_config(job.method, job.seed)
        targets = None
        if train_config.method is TrainMethod.DISTILL:
            pool = val_ds.features if val_ds.n else None
            members = ens.train_ensemble(config.ensemble.members, config.train_config("baseline", job.seed), train_ds,
                                         pool=pool)
            targets = ens.disagreement_target(members, train_ds.features)
        model, trace = train(train_config, train_ds, val_ds, confidence_targets=targets)
        dump_trace_csv(trace, out / "traces" / f"{run}.csv")
        result_store.write_json(out / "traces" / f"{run}.json", trace.to_dict())

        output = model.predict(test_ds.features)
        conf, correct = output.confidence_values(), output.predictions() == test_ds.labels
        report = metrics.evaluate(conf, correct, config.metrics.n_bins)
        row = result_row(run, job.method, job.seed, "none", report)
        _persist_row(out, row, report, conf, correct)
        result["rows"].append(row)

        if config.posthoc.methods and val_ds.n == 0:
            raise ContractViolation("post-hoc calibration needs a validation split")
        val_out = model.predict(val_ds.features) if config.posthoc.methods else None
        for kind in config.posthoc.methods:
            try:
                val_correct = val_out.predictions() == val_ds.labels
                cal = _fit_calibrator(kind, config, val_out.confidence_values(), val_out.conf_logit.data, val_correct)
                after = posthoc.calibrate_confidence(cal, conf, output.conf_logit)
                cal_report = metrics.evaluate(after, correct, config.metrics.n_bins)
                cal_row = result_row(run, job.method, job.seed, kind, cal_report)
                compression = posthoc.compression_report(conf, after, report.accuracy, correct, config.metrics.n_bins)
                cal_row.update(delta_var=compression.delta_var, bound=compression.bound,
                               compression_holds=compression.holds)
                _persist_row(out, cal_row, cal_report, after, correct)
                result_store.write_json(out / "raw" / f"{cal_row['run_id']}.map.json", cal.to_json())
                result["rows"].append(cal_row)
                result["compression"][kind] = {"delta_var": compression.delta_var, "bound": compression.bound,
                                               "holds": compression.holds}
            except CalibLabError as e:
                logger.error(f"[{run}] {kind} calibration failed: {e}")
                result["errors"].append(f"{kind}: {e}")
                result["status"] = "error"
    except Exception as e:
        logger.error(f"[{run}] failed: {e}")
        result["status"] = "error"
        result["error"] = str(e)
    result["wall_time_s"] = time.perf_counter() - start
    return result


def aggregate(rows: Sequence[Dict[str, Any]]) -> Dict[str, Any]:
    """Mean and population std over seeds of one (method, calibrator) group"""
    table: Dict[str, Any] = {"n_seeds": len(rows)}
    for column in ("accuracy", "ece", "mce", "mean_conf", "std_conf"):
        values = np.array([r[column] for r in rows], dtype=np.float64)
        table[column] = float(values.mean()) if values.size else float("nan")
        table[f"{column}_std"] = float(values.std()) if values.size else float("nan")
    table["pass_rate"] = float(np.mean([r["passes_both"] for r in rows])) if rows else float("nan")
    if rows and "conf_min" in rows[0]:
        table["conf_min"] = float(min(r["conf_min"] for r in rows))
        table["conf_max"] = float(max(r["conf_max"] for r in rows))
    return table


def aggregate_rows(rows: Sequence[Dict[str, Any]]) -> List[Dict[str, Any]]:
    groups: Dict[Tuple[str, str], List[Dict[str, Any]]] = {}
    for row in rows:
        groups.setdefault((row["method"], row["calibrator"]), []).append(row)
    return [{"method": m, "calibrator": c, **aggregate(g)} for (m, c), g in groups.items()]


def impossibility_gate(rows: Sequence[Dict[str, Any]]) -> List[Dict[str, Any]]:
    """Uncalibrated rows of binary-supervised methods that are both calibrated and diverse"""
    return [r for r in rows if r["calibrator"] == "none" and r["method"] in BINARY_SUPERVISED and r["passes_both"]]


@dataclass
class RunOutcome:
    out_dir: Path
    rows: List[Dict[str, Any]] = field(default_factory=list)
    failures: List[Dict[str, Any]] = field(default_factory=list)
    gate_offenders: List[Dict[str, Any]] = field(default_factory=list)
    exit_code: int = 0


def run(config: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None, enforce_gate: bool = True) -> RunOutcome:
    """
    Every (method, seed) pair of the config; deterministic per config

    The exit code is 1 when a job failed or, unless `enforce_gate` is off, when a
    binary-supervised run passes both the calibration and the diversity bar.

    Raises:
        ConfigError: a method's merged train settings are invalid; nothing is dispatched
    """
    config.validate_runs()
    out = Path(out_dir) if out_dir else Path(config.output.dir) / config.config_id()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.copy").write_text(to_lines(config), encoding="utf-8")

    jobs = [RunJob(config, method, seed, str(out)) for method in config.run.methods for seed in config.run.seeds]
    logger.info(f"run {out.name}: {len(jobs)} jobs ({config.run.methods} x seeds {config.run.seeds})")
    results = RunThrottler(config.run.workers).map(execute_job, jobs)

    rows = [row for r in results for row in r["rows"]]
    result_store.write_csv(out / "rows.csv", ROW_COLUMNS, [[row[c] for c in ROW_COLUMNS] for row in rows])
    failures = [{"run": r["run"], "error": r.get("error") or "; ".join(r["errors"])}
                for r in results if r["status"] != "ok"]
    offenders = impossibility_gate(rows)
    for row in offenders:
        logger.warning(f"gate violation: {row['run_id']} ece={row['ece']:.4f} std={row['std_conf']:.4f}")

    result_store.write_json(out / "summary.json", {
        "config_id": config.config_id(),
        "n_bins": config.metrics.n_bins,
        "n_rows": len(rows),
        "rows": [{c: row[c] for c in ROW_COLUMNS} for row in rows],
        "aggregates": aggregate_rows(rows),
        "compression": {r["run"]: r["compression"] for r in results if r["compression"]},
        "failures": failures,
        "gate": {"passed": not offenders, "offenders": [row["run_id"] for row in offenders]},
        "wall_time_s": {r["run"]: round(r["wall_time_s"], 3) for r in results},
    })
    exit_code = 1 if failures or (enforce_gate and offenders) else 0
    logger.info(f"run {out.name}: {len(rows)} rows, {len(failures)} failures, "
                f"gate {'passed' if not offenders else 'VIOLATED'}")
    return RunOutcome(out, rows, failures, offenders, exit_code)


def _variant(base: ExperimentConfig, methods: List[str], calibrators: List[str],
             override: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    return base.model_copy(update={
        "run": base.run.model_copy(update={"methods": methods}),
        "posthoc": base.posthoc.model_copy(update={"methods": calibrators}),
        "override": merge(base.override, override or {}),
    })


def sweep_alpha(base: ExperimentConfig, alphas: Optional[Sequence[float]] = None,
                out_dir: Optional[Union[str, Path]] = None) -> Tuple[List[Dict[str, Any]], int]:
    """
    One seed-averaged row per penalty strength of the negative-reward method

    The alpha = 0 point is the baseline method itself.
    """
    alphas = list(base.sweep.alphas if alphas is None else alphas)
    root = (Path(out_dir) if out_dir else Path(base.output.dir) / base.config_id()) / "sweep"
    table, exit_code = [], 0
    for alpha in alphas:
        method = "baseline" if alpha == 0 else "neg_reward"
        variant = _variant(base, [method], [], {"neg_reward": {"nr": {"alpha": alpha}}})
        outcome = run(variant, root / f"alpha-{alpha:g}")
        exit_code = max(exit_code, outcome.exit_code)
        rows = [r for r in outcome.rows if r["calibrator"] == "none"]
        table.append({"alpha": alpha, "method": method, **aggregate(rows)})
    result_store.write_csv(root / "sweep.csv", SWEEP_COLUMNS, [[r.get(c) for c in SWEEP_COLUMNS] for r in table])
    return table, exit_code


def compare_posthoc(base: ExperimentConfig,
                    out_dir: Optional[Union[str, Path]] = None) -> Tuple[List[Dict[str, Any]], int]:
    """Baseline runs re-evaluated after each calibrator, with compression statistics"""
    root = (Path(out_dir) if out_dir else Path(base.output.dir) / base.config_id()) / "posthoc"
    outcome = run(_variant(base, ["baseline"], list(CALIBRATORS)), root)
    table = []
    for calibrator in ("none",) + CALIBRATORS:
        rows = [r for r in outcome.rows if r["calibrator"] == calibrator]
        if not rows:
            continue
        entry = {"calibrator": calibrator, **aggregate(rows)}
        if calibrator == "none":
            entry.update(delta_var=0.0, bound=None, compression_holds=None)
        else:
            entry.update(delta_var=float(np.mean([r["delta_var"] for r in rows])),
                         bound=float(np.mean([r["bound"] for r in rows])),
                         compression_holds=all(r["compression_holds"] for r in rows))
        table.append(entry)
    result_store.write_csv(root / "posthoc.csv", POSTHOC_COLUMNS, [[r.get(c) for c in POSTHOC_COLUMNS] for r in table])
    return table, outcome.exit_code


def analyze_info(kmax: int, out: Union[str, Path], n: int = 1) -> List[Dict[str, float]]:
    """(k, H, I, gap, ECE bound) for uniform natural channels k = 1..kmax"""
    if kmax < 2:
        raise ContractViolation(f"analyze_info: kmax must be >= 2, got {kmax}")
    rows = []
    for k in range(1, kmax + 1):
        joint = info.uniform_channel_joint(k)
        h = info.entropy_bits(joint.weights)
        rows.append({"k": k, "entropy": h, "mutual_information": info.mutual_information(joint),
                     "gap": info.information_gap(joint), "ece_lower_bound": info.ece_lower_bound(k, n, h)})
    result_store.write_csv(out, INFO_COLUMNS, [[r[c] for c in INFO_COLUMNS] for r in rows])
    return rows


def audit(run_dir: Union[str, Path]) -> List[str]:
    """Recompute every row and aggregate from raw arrays; returns mismatch descriptions"""
    run_dir = Path(run_dir)
    if not (run_dir / "rows.csv").exists():
        raise FileNotFoundError(f"no rows.csv in {run_dir}")
    summary = result_store.read_json(run_dir / "summary.json")
    n_bins = int(summary["n_bins"])
    mismatches, recomputed = [], []
    for row in result_store.read_csv(run_dir / "rows.csv"):
        arrays = result_store.load_arrays(run_dir / "raw" / f"{row['run_id']}.npz")
        report = metrics.evaluate(arrays["conf"], arrays["correct"], n_bins)
        fresh = result_row(row["run_id"][: -len(row["calibrator"]) - 1], row["method"], int(row["seed"]),
                           row["calibrator"], report)
        recomputed.append(fresh)
        for column in METRIC_COLUMNS:
            if result_store.format_cell(fresh[column]) != row[column]:
                mismatches.append(f"{row['run_id']}.{column}: file {row[column]} recomputed "
                                  f"{result_store.format_cell(fresh[column])}")
    stored = {(a["method"], a["calibrator"]): a for a in summary["aggregates"]}
    for entry in aggregate_rows(recomputed):
        previous = stored.get((entry["method"], entry["calibrator"]))
        if previous is None:
            mismatches.append(f"summary lacks aggregate {entry['method']}/{entry['calibrator']}")
            continue
        for column in ("accuracy", "ece", "mean_conf", "std_conf", "pass_rate"):
            if abs(entry[column] - previous[column]) > 1e-9:
                mismatches.append(f"aggregate {entry['method']}/{entry['calibrator']}.{column}: "
                                  f"summary {previous[column]} recomputed {entry[column]}")
    logger.info(f"audit {run_dir}: {len(recomputed)} rows, {len(mismatches)} mismatches")
    return mismatches


def _evaluate_model(name: str, model: TrainedModel, test_ds: Dataset, n_bins: int) -> Dict[str, Any]:
    output = model.predict(test_ds.features)
    report = metrics.evaluate(output.confidence_values(), output.predictions() == test_ds.labels, n_bins)
    return result_row(name, model.method, model.seed, "none", report)


def ensemble_experiment(config: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """Ensemble members, a distilled student and the aleatoric trend on regional label noise"""
    root = (Path(out_dir) if out_dir else Path(config.output.dir) / config.config_id()) / "ensemble"
    train_ds, val_ds, test_ds = build_splits(config.dataset)
    base = config.train_config("baseline", config.run.seeds[0])
    workers = config.run.workers

    ensemble = ens.train_ensemble(config.ensemble.members, base, train_ds, workers=workers,
                                  pool=val_ds.features if val_ds.n else None)
    ens.save_ensemble(ensemble, root / "members")
    student = ens.distill_student(ensemble, train_ds, config.ensemble.lam, base)
    rows = [_evaluate_model(f"member{i}", m, test_ds, config.metrics.n_bins) for i, m in enumerate(ensemble.members)]
    rows.append(_evaluate_model("student", student, test_ds, config.metrics.n_bins))
    result_store.write_csv(root / "ensemble.csv", ROW_COLUMNS, [[r[c] for c in ROW_COLUMNS] for r in rows])

    targets = ens.disagreement_target(ensemble, test_ds.features)
    noise = make_regional_noise(config.ensemble.n_per_region, config.dataset.keep_probs, config.dataset.seed)
    trend = ens.aleatoric_convergence_check(noise, config.ensemble.sizes, base, workers=workers)
    summary = {
        "sigma_max": ensemble.sigma_max, "seeds": ensemble.seeds.tolist(),
        "test_target_mean": float(targets.mean()), "test_target_std": float(targets.std()),
        "rows": rows, "aleatoric": trend.to_dict(),
    }
    result_store.write_json(root / "summary.json", summary)
    return summary


def multiagent_experiment(config: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """Quadrant domains, an agent pool and consensus rounds rotating over the domains"""
    root = (Path(out_dir) if out_dir else Path(config.output.dir) / config.config_id()) / "multiagent"
    train_ds, _, _ = build_splits(config.dataset)
    base = config.train_config("baseline", config.run.seeds[0])
    domains = make_quadrant_domains(train_ds)
    pool = ens.build_agent_pool(config.ensemble.agents, base, domains, workers=config.run.workers)
    names = sorted(domains)

    def target_std(p: ens.AgentPool, target: str, agents: Sequence[int]) -> Dict[int, float]:
        x = p.domains[target].features
        return {i: float(p.agents[i].predict(x).confidence_values().std()) for i in agents}

    rounds = []
    for r in range(config.ensemble.rounds):
        source, target = names[r % len(names)], names[(r + 1) % len(names)]
        experts = pool.experts(source)
        novices = [i for i in range(len(pool.agents)) if i not in experts]
        before = target_std(pool, target, novices)
        pool = ens.multi_agent_round(pool, source, target, base)
        after = target_std(pool, target, novices)
        rounds.append({"source": source, "target": target, "experts": experts, "std_before": before,
                       "std_after": after, "rankings": pool.rankings})
        logger.info(f"round {r + 1}: {source}->{target} novice std {before} -> {after}")
    summary = {"domains": {k: v.n for k, v in domains.items()}, "assignments": pool.domain_assignments,
               "rounds": rounds}
    result_store.write_json(root / "summary.json", summary)
    return summary


# Command line

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment file (.conf key-value or .json)")
    common.add_argument("--out", help="output root directory")
    common.add_argument("--seeds", help="comma-separated seeds")
    common.add_argument("--workers", type=int, help="parallel runs")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(
        prog="caliblab",
        description="Confidence calibration lab. Any config key can be set as --section.key=value.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    train_cmd = sub.add_parser("train", parents=[common], help="train and evaluate every method x seed")
    train_cmd.add_argument("--ignore-gate", action="store_true",
                           help="report runs that pass both bars without exiting 1")
    sweep_cmd = sub.add_parser("sweep", parents=[common], help="negative-reward penalty sweep")
    sweep_cmd.add_argument("--alphas", help="comma-separated penalty strengths")
    sub.add_parser("calibrate", parents=[common], help="post-hoc calibrator comparison")
    info_cmd = sub.add_parser("analyze-info", parents=[common], help="information quantities per k")
    info_cmd.add_argument("--kmax", type=int, default=16)
    info_cmd.add_argument("--n", type=int, default=1, help="sample count for the ECE bound")
    sub.add_parser("ensemble", parents=[common], help="ensemble distillation and aleatoric trend")
    sub.add_parser("multiagent", parents=[common], help="multi-agent consensus rounds")
    audit_cmd = sub.add_parser("audit", parents=[common], help="recompute a run directory from raw arrays")
    audit_cmd.add_argument("run_dir")
    return parser


def _configure_logging(verbose: bool):
    level = logging.DEBUG if verbose else getattr(logging, os.getenv("CALIBLAB_LOG_LEVEL", "INFO").upper(),
                                                  logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    _configure_logging(args.verbose)

    overrides = list(extra)
    if args.seeds:
        overrides.append(f"--run.seeds={args.seeds},")
    if args.workers:
        overrides.append(f"--run.workers={args.workers}")
    if args.out:
        overrides.append(f"--output.dir={args.out}")
    try:
        config = load_config(args.config, overrides)
    except ConfigError as e:
        logger.error(str(e))
        return 2

    try:
        if args.command == "train":
            outcome = run(config, enforce_gate=not args.ignore_gate)
            print(f"{len(outcome.rows)} rows written to {outcome.out_dir}")
            return outcome.exit_code
        if args.command == "sweep":
            alphas = None
            if args.alphas:
                alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
            table, code = sweep_alpha(config, alphas)
            for row in table:
                print(f"alpha={row['alpha']:<5g} acc={row['accuracy']:.3f} ece={row['ece']:.3f} "
                      f"conf={row['mean_conf']:.3f}±{row['std_conf']:.3f}")
            return code
        if args.command == "calibrate":
            table, code = compare_posthoc(config)
            for row in table:
                print(f"{row['calibrator']:<12} ece={row['ece']:.3f} conf={row['mean_conf']:.3f}±{row['std_conf']:.3f} "
                      f"pass_rate={row['pass_rate']:.2f}")
            return code
        if args.command == "analyze-info":
            out = Path(config.output.dir) / "info.csv"
            rows = analyze_info(args.kmax, out, args.n)
            print(f"{len(rows)} rows written to {out}")
            return 0
        if args.command == "ensemble":
            summary = ensemble_experiment(config)
            print(f"sigma_max={summary['sigma_max']:.4g}, aleatoric correlations {summary['aleatoric']['correlations']}")
            return 0
        if args.command == "multiagent":
            summary = multiagent_experiment(config)
            print(f"{len(summary['rounds'])} rounds over domains {sorted(summary['domains'])}")
            return 0
        if args.command == "audit":
            mismatches = audit(args.run_dir)
            for line in mismatches:
                print(line)
            print("audit clean" if not mismatches else f"{len(mismatches)} mismatches")
            return 1 if mismatches else 0
    except ConfigError as e:
        logger.error(str(e))
        return 2
    except (CalibLabError, FileNotFoundError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
