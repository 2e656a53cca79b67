"""Commands of the nashbid CLI."""

import json
import shutil
from multiprocessing import Pool
from pathlib import Path
from typing import Any

import numpy as np
import rich
from loguru import logger
from rich.table import Table

from .baselines import TRAINERS
from .bpg import IterationCallback, TrainResult, bpg_train, unified_solution_ratios
from .config import RESOLVED_CONFIG_FNAME, build_config, load_config
from .enums import BaselineKind, ExitCode, Method
from .exceptions import ConfigError
from .exploitability import exploitability_from_returns, max_exploitability
from .exporter import ReportExporter, RunExporter, SweepExporter
from .exporter.run import AGENT_FNAME, EXPLOIT_FNAME, THETA_FNAME, X_STAR_FNAME
from .logger import run_log
from .models import ExperimentConfig, ExploitReport, MarketConfig, OracleReport, RunSummary, TrainConfig
from .oracle import TinyConfig, exact_best_response, exact_returns, exact_unified_ratios
from .policy import PolicyParams
from .rollout import rollout_shared
from .utils import default_file, make_run_dir, read_user_dict, seed_info, thread_limit
from .validation import run_checks

SAMPLE_CONFIG_FNAME = "experiment.yaml"
TINY_CONFIG_FNAME = "tiny.yaml"
ORACLE_REPORT_FNAME = "oracle_report.json"
RATIOS_FNAME = "unified_ratios.json"
LOG_FNAME = "nashbid.log"
EVALUATION_STREAM = 1


def get_trainer(method: Method):
    """Trainer function of ``method``."""
    if method == Method.BPG:
        return bpg_train
    return TRAINERS[BaselineKind(method)]


def _load(cli_args: dict) -> ExperimentConfig:
    if not cli_args.get("config"):
        raise ConfigError("A config file is required, pass it with --config")
    config = load_config(cli_args["config"], cli_args)
    if cli_args.get("deterministic"):
        config = config.model_copy(update={"train": config.train.model_copy(update={"deterministic": True})})
    if cli_args.get("verbose", 0) >= 1:
        config.info()
    return config


def exploit_rng(env: MarketConfig, cfg: TrainConfig) -> np.random.Generator:
    """Evaluation stream of a run, independent of the training stream."""
    return np.random.default_rng([env.seed, cfg.seed, EVALUATION_STREAM])


def train_single(config: ExperimentConfig, run_folder: Path, relative_to: Path | None = None) -> RunSummary:
    """Train ``config.method`` on one epsilon and seed and write every run output.

    ``config`` must come from :meth:`ExperimentConfig.for_run`.
    """
    env, cfg = config.market, config.train
    exporter = RunExporter(config, run_folder)
    with run_log(run_folder / LOG_FNAME, f"{config.method}/eps{cfg.epsilon_norm:g}/seed{cfg.seed}"):
        logger.info("Training {} with epsilon={} seed={}", config.method, cfg.epsilon_norm, cfg.seed)
        on_iteration: IterationCallback = exporter.record
        result: TrainResult = get_trainer(config.method)(env, cfg, on_iteration=on_iteration)
        report = max_exploitability(result.profile, env, cfg, exploit_rng(env, cfg))
        exporter.run(result, report)
    run_dir = run_folder.relative_to(relative_to) if relative_to else Path(run_folder.name)
    summary = exporter.summary(result, report, str(run_dir))
    logger.success(
        "{} eps={} seed={}: sw={:.4f} max_exploitability={:.4f}",
        config.method,
        cfg.epsilon_norm,
        cfg.seed,
        summary.social_welfare,
        summary.max_exploitability,
    )
    return summary


def train(cli_args: dict) -> ExitCode:
    """Run a single method on the first epsilon and seed of the config."""
    config = _load(cli_args)
    run_config = config.for_run(config.epsilon_list[0], config.seeds[0])
    run_folder = make_run_dir(config.output_dir, seed_info(run_config.seeds))
    train_single(run_config, run_folder)
    return ExitCode.OK


def _run_cell(job: tuple[str, str, str]) -> str:
    config_json, run_folder, sweep_folder = job
    config = ExperimentConfig.model_validate_json(config_json)
    summary = train_single(config, Path(run_folder), relative_to=Path(sweep_folder))
    return summary.model_dump_json()


def sweep_jobs(
    config: ExperimentConfig, methods: list[Method], sweep_folder: Path
) -> list[tuple[str, str, str]]:
    """One job per (method, epsilon, seed) cell of the grid."""
    jobs = []
    for method in methods:
        for epsilon in config.epsilon_list:
            for seed in config.seeds:
                cell = config.for_run(epsilon, seed).model_copy(update={"method": method})
                folder = sweep_folder / f"{method}_eps{epsilon:g}_seed{seed}"
                jobs.append((cell.model_dump_json(), str(folder), str(sweep_folder)))
    return jobs


def sweep(cli_args: dict) -> ExitCode:
    """Train every cell of the epsilon by seed grid and aggregate the results."""
    config = _load(cli_args)
    methods = [Method(m) for m in cli_args.get("methods") or [config.method]]
    sweep_folder = make_run_dir(config.output_dir, seed_info(config.seeds))
    jobs = sweep_jobs(config, methods, sweep_folder)
    workers = 1 if config.train.deterministic else min(thread_limit(), len(jobs))
    logger.info("Running {} sweep cells on {} workers", len(jobs), workers)
    if workers == 1:
        lines = [_run_cell(job) for job in jobs]
    else:
        with Pool(workers) as pool:
            lines = pool.map(_run_cell, jobs)
    runs = [RunSummary.model_validate_json(line) for line in lines]
    SweepExporter(config, sweep_folder).run(runs)
    logger.success("Sweep written to {}", sweep_folder)
    return ExitCode.OK


def load_profile(run_folder: Path, n_agents: int) -> PolicyParams | list[PolicyParams]:
    """Shared policy of a run, or the per-agent policies of an independent run."""
    agent_fpaths = [run_folder / AGENT_FNAME.format(i) for i in range(n_agents)]
    if all(fpath.is_file() for fpath in agent_fpaths):
        return [PolicyParams.load(fpath) for fpath in agent_fpaths]
    theta_fpath = run_folder / THETA_FNAME
    if not theta_fpath.is_file():
        raise ConfigError(f"No checkpoint found in {run_folder}")
    return PolicyParams.load(theta_fpath)


def exact_exploitability(theta: PolicyParams, config: ExperimentConfig) -> ExploitReport:
    """Exploitability of ``theta`` on an enumerable market with exact returns and best responses."""
    tiny = TinyConfig.from_market(config.market)
    returns = exact_returns(theta, tiny)
    best = [exact_best_response(i, theta, tiny)[1] for i in range(tiny.n_agents)]
    rng = exploit_rng(config.market, config.train)
    revenue = rollout_shared(theta, config.market, config.train.episodes_per_return, rng).estimates().revenue
    return exploitability_from_returns(best, returns, config.train.epsilon_norm, revenue=revenue)


def exploit(cli_args: dict) -> ExitCode:
    """Evaluate the checkpoint of a finished run."""
    run_folder = Path(cli_args["run_folder"])
    resolved = run_folder / RESOLVED_CONFIG_FNAME
    if not resolved.is_file():
        raise ConfigError(f"{run_folder} has no {RESOLVED_CONFIG_FNAME}")
    config = build_config(read_user_dict(resolved), cli_args)
    config = config.for_run(config.epsilon_list[0], config.seeds[0])
    env, cfg = config.market, config.train
    profile = load_profile(run_folder, env.n_agents)
    out_folder = make_run_dir(config.output_dir, seed_info(config.seeds))
    exporter = RunExporter(config, out_folder)

    if cli_args.get("exact"):
        if not isinstance(profile, PolicyParams):
            raise ConfigError("Exact evaluation needs a shared policy checkpoint")
        report = exact_exploitability(profile, config)
    else:
        report = max_exploitability(profile, env, cfg, exploit_rng(env, cfg))
    exporter.write_json(report, EXPLOIT_FNAME)
    logger.success(
        "max_exploitability={:.4f} (epsilon={}) compliant={}",
        report.max_exploitability,
        report.epsilon_norm,
        report.compliant,
    )

    if cli_args.get("ratios"):
        x_star_fpath = run_folder / X_STAR_FNAME
        if not x_star_fpath.is_file() or not isinstance(profile, PolicyParams):
            raise ConfigError(f"{run_folder} has no unified solution checkpoint")
        x_star = PolicyParams.load(x_star_fpath)
        if cli_args.get("exact"):
            ratios = exact_unified_ratios(x_star, profile, TinyConfig.from_market(env))
        else:
            ratios = unified_solution_ratios(x_star, profile, env, cfg, exploit_rng(env, cfg))
        exporter.write_json(ratios, RATIOS_FNAME)
        logger.success("Unified solution ratios: {}", [round(r, 4) for r in ratios.ratios])
    return ExitCode.OK


def print_oracle_report(report: OracleReport) -> None:
    table = Table(title="Oracle checks", show_header=True, title_justify="left", title_style="bold")
    table.add_column("Check", style="cyan")
    table.add_column("Error", justify="right")
    table.add_column("Tolerance", justify="right")
    table.add_column("Cases", justify="right")
    table.add_column("Result")
    for check in report.checks:
        table.add_row(
            check.name,
            f"{check.error:.3g}",
            f"{check.tolerance:.3g}",
            str(check.cases),
            "[green]pass[/green]" if check.passed else "[red]FAIL[/red]",
        )
    rich.print(table)


def oracle_check(cli_args: dict) -> ExitCode:
    """Run the validation suite on an enumerable market, the shipped tiny market by default."""
    cli_args = {**cli_args, "config": cli_args.get("config") or default_file(TINY_CONFIG_FNAME)}
    config = _load(cli_args)
    out_folder = make_run_dir(config.output_dir, seed_info(config.seeds))
    report = run_checks(
        config.market,
        seed=config.seeds[0],
        mc_episodes=cli_args.get("mc_episodes", 50_000),
        exact_only=cli_args.get("exact_only", False),
    )
    (out_folder / ORACLE_REPORT_FNAME).write_text(
        json.dumps({"passed": report.passed, **report.model_dump(mode="json")}, indent=2)
    )
    print_oracle_report(report)
    if not report.passed:
        logger.error("Oracle checks failed: {}", ", ".join(report.failures))
        return ExitCode.ORACLE_FAILED
    logger.success("All {} oracle checks passed", len(report.checks))
    return ExitCode.OK


def report(cli_args: dict) -> ExitCode:
    """Render the figures of a sweep folder."""
    sweep_folder = Path(cli_args["sweep_folder"])
    resolved = sweep_folder / RESOLVED_CONFIG_FNAME
    if not resolved.is_file():
        raise ConfigError(f"{sweep_folder} has no {RESOLVED_CONFIG_FNAME}")
    config = build_config(read_user_dict(resolved), cli_args)
    out_folder = make_run_dir(config.output_dir, seed_info(config.seeds))
    ReportExporter(config, out_folder).run(sweep_folder)
    logger.success("Report written to {}", out_folder)
    return ExitCode.OK


def init(cli_args: dict[str, Any]) -> ExitCode:
    """Copy the documented sample configuration to the path the user requests.

    If the user does not provide a path, the current path is used.
    """
    logger.debug("Running init command")
    path = Path(cli_args["path"])
    path.mkdir(parents=True, exist_ok=True)
    fname = TINY_CONFIG_FNAME if cli_args.get("tiny") else SAMPLE_CONFIG_FNAME
    target = path / fname
    if target.exists():
        raise ConfigError(f"{target} already exists")
    shutil.copy(default_file(fname), target)
    logger.success("Wrote {}", target)
    return ExitCode.OK
