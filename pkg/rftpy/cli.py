"""Command line entry point.

Every subcommand accepts `--config`, `--seed`, `--out-dir`, `--metrics`,
`--checkpoint` and `--log-level`. Library errors are reported on stderr and
mapped to an exit status by their category.
"""

import argparse
import csv
import io
import json
import logging
import sys
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from rftpy import __version__
from rftpy.auditor import ChatCompletionAuditor, settings_from_env
from rftpy.checkpoint import load_checkpoint, save_checkpoint
from rftpy.config import RunConfig, load_config, with_overrides
from rftpy.curriculum import train
from rftpy.enums import DropPolicy, Split, Strategy, TaskType
from rftpy.exceptions import RftError
from rftpy.grpo import evaluate
from rftpy.models import EvalReport, QAPair, RefineReport, StepStats
from rftpy.optim import AdamState
from rftpy.policy import PolicyParams, init_params
from rftpy.refinery import Auditor, RuleMockAuditor, refine_dataset
from rftpy.rewards import check_reward_fixture, load_reward_fixture
from rftpy.runio import (
    MetricsLog,
    eval_report_to_dict,
    write_json,
    write_metrics_csv,
    write_text,
)
from rftpy.taskgen import build_vocab, dump_jsonl, generate_dataset, load_jsonl, split_pairs

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CODES = {"config": 2, "data": 3, "divergence": 4, "io": 5, "usage": 6}


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    return load_config(
        args.config,
        seed=args.seed,
        out_dir=args.out_dir,
        metrics=args.metrics,
        checkpoint=args.checkpoint,
    )


def load_pairs(config: RunConfig) -> tuple[list[QAPair], list[QAPair]]:
    """Training and test pairs from the configured files or the synthetic world."""

    if config.train_data is not None and config.test_data is not None:
        return load_jsonl(config.train_data), load_jsonl(config.test_data)
    pairs = generate_dataset(config.world)
    return split_pairs(pairs, Split.TRAIN), split_pairs(pairs, Split.TEST)


def make_auditor(config: RunConfig) -> Auditor:
    if config.auditor == "mock":
        return RuleMockAuditor()
    settings = settings_from_env(
        endpoint=config.auditor_endpoint,
        model=config.auditor_model,
        timeout=config.auditor_timeout,
        max_concurrency=config.auditor_max_concurrency,
        max_attempts=config.auditor_max_attempts,
    )
    return ChatCompletionAuditor(settings)


def _refine(config: RunConfig, pairs: list[QAPair]) -> tuple[list[QAPair], RefineReport]:
    auditor = make_auditor(config)
    try:
        return refine_dataset(pairs, auditor, config.drop_policy)
    finally:
        if isinstance(auditor, ChatCompletionAuditor):
            auditor.close()


@dataclass(frozen=True, eq=False)
class RunOutcome:
    params: PolicyParams
    opt_state: AdamState
    history: tuple[StepStats, ...]
    evaluation: EvalReport
    refine_report: RefineReport | None


def run_training(
    config: RunConfig, on_step: Callable[[StepStats], None] | None = None
) -> RunOutcome:
    """Loads data, optionally refines it, trains with the configured strategy and evaluates."""

    train_pairs, test_pairs = load_pairs(config)
    refine_report = None
    if config.refine:
        train_pairs, refine_report = _refine(config, train_pairs)

    world = config.world if config.train_data is None else None
    vocab = build_vocab(world, train_pairs + test_pairs)
    params = init_params(
        vocab, config.context_window, config.hidden_dim, config.seed, config.embedding_dim
    )
    result = train(
        params,
        [qa for qa in train_pairs if qa.task_type is TaskType.CLOSE],
        [qa for qa in train_pairs if qa.task_type is TaskType.OPEN],
        config.schedule,
        config.settings,
        config.seed,
        eval_ds=test_pairs,
        on_step=on_step,
    )
    evaluation = evaluate(result.params, test_pairs, config.grpo, config.reward)
    return RunOutcome(
        params=result.params,
        opt_state=result.opt_state,
        history=result.history,
        evaluation=evaluation,
        refine_report=refine_report,
    )


def _print_json(obj: object) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_train(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    with MetricsLog(config.metrics_path) as metrics_log:
        outcome = run_training(config, on_step=metrics_log)

    write_metrics_csv(config.metrics_path.with_suffix(".csv"), outcome.history)
    save_checkpoint(config.checkpoint_path, outcome.params, outcome.opt_state)
    report = eval_report_to_dict(outcome.evaluation)
    write_json(config.out_dir / "eval.json", report)
    if outcome.refine_report is not None:
        write_json(config.out_dir / "refine_report.json", outcome.refine_report.to_dict())
    logger.info("final evaluation: %s", report)
    _print_json(report)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    params, _ = load_checkpoint(config.checkpoint_path)
    _, test_pairs = load_pairs(config)
    report = eval_report_to_dict(evaluate(params, test_pairs, config.grpo, config.reward))
    write_json(config.out_dir / "eval.json", report)
    _print_json(report)
    return EXIT_OK


def _summary(values: Sequence[float]) -> dict[str, object]:
    if not values:
        return {"mean": None, "std": None, "values": []}
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std()), "values": [float(v) for v in arr]}


def _combined(report: EvalReport) -> float | None:
    parts = [v for v in (report.close_accuracy, report.open_score) if v is not None]
    return float(np.mean(parts)) if parts else None


def _cell_config(config: RunConfig, strategy: Strategy, refine: bool, seed: int) -> RunConfig:
    # single-stage strategies get the whole curriculum budget
    steps = config.stage1_steps
    if strategy is not Strategy.CURRICULUM:
        steps = config.stage1_steps + config.stage2_steps
    return with_overrides(
        config, strategy=strategy, refine=refine, seed=seed, stage1_steps=steps
    )


COMPARE_COLUMNS = (
    "strategy",
    "refine",
    "seeds",
    "failed",
    "close_accuracy_mean",
    "close_accuracy_std",
    "open_score_mean",
    "open_score_std",
    "combined_mean",
    "combined_std",
)


def run_compare(config: RunConfig) -> dict[str, object]:
    """Runs every strategy and refinement setting across the configured seeds.

    A failing run marks its cell and the grid continues.
    """

    cells = []
    for strategy in config.compare_strategies:
        for refine in config.compare_refinement:
            close, open_, combined, failures = [], [], [], []
            for seed in config.seeds:
                name = f"{strategy.value}-{'refined' if refine else 'raw'}-seed{seed}"
                try:
                    cell = _cell_config(config, strategy, refine, seed)
                    with MetricsLog(config.out_dir / "compare" / f"{name}.jsonl") as metrics_log:
                        outcome = run_training(cell, on_step=metrics_log)
                except RftError as e:
                    logger.warning("compare cell %s failed: %s", name, e)
                    failures.append({"seed": seed, "category": e.category, "error": str(e)})
                    continue
                ev = outcome.evaluation
                if ev.close_accuracy is not None:
                    close.append(ev.close_accuracy)
                if ev.open_score is not None:
                    open_.append(ev.open_score)
                value = _combined(ev)
                if value is not None:
                    combined.append(value)
            cells.append(
                {
                    "strategy": strategy.value,
                    "refine": refine,
                    "seeds": list(config.seeds),
                    "failed": failures,
                    "close_accuracy": _summary(close),
                    "open_score": _summary(open_),
                    "combined": _summary(combined),
                }
            )

    return {"cells": cells, "observation": _observation(cells)}


def _observation(cells: Sequence[dict]) -> str:
    def best(strategy: str) -> float | None:
        means = [
            c["combined"]["mean"]
            for c in cells
            if c["strategy"] == strategy and c["combined"]["mean"] is not None
        ]
        return max(means) if means else None

    curriculum, joint = best(Strategy.CURRICULUM.value), best(Strategy.JOINT.value)
    if curriculum is None or joint is None:
        return "curriculum and joint were not both run; no directional observation"
    relation = ">=" if curriculum >= joint else "<"
    return (
        f"curriculum combined {curriculum:.4f} {relation} joint combined {joint:.4f} "
        "(stochastic observation over the configured seeds, not a significance test)"
    )


def render_compare_csv(result: dict[str, object]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(COMPARE_COLUMNS)
    for c in result["cells"]:  # type: ignore[union-attr]
        writer.writerow(
            [
                c["strategy"],
                c["refine"],
                len(c["seeds"]),
                len(c["failed"]),
                c["close_accuracy"]["mean"],
                c["close_accuracy"]["std"],
                c["open_score"]["mean"],
                c["open_score"]["std"],
                c["combined"]["mean"],
                c["combined"]["std"],
            ]
        )
    return buffer.getvalue()


def cmd_compare(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    result = run_compare(config)
    write_json(config.out_dir / "compare.json", result)
    write_text(config.out_dir / "compare.csv", render_compare_csv(result))
    for c in result["cells"]:
        logger.info(
            "%s refine=%s: combined %s",
            c["strategy"],
            c["refine"],
            c["combined"]["mean"],
        )
    logger.info(result["observation"])
    print(render_compare_csv(result), end="")
    return EXIT_OK


def cmd_refine(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    if args.drop_policy is not None:
        config = with_overrides(config, drop_policy=DropPolicy(args.drop_policy))
    if args.auditor is not None:
        config = with_overrides(config, auditor=args.auditor)
    pairs = load_jsonl(args.input)
    refined, report = _refine(config, pairs)
    dump_jsonl(args.output, refined)
    report_path = args.report or args.output.with_suffix(".report.json")
    write_json(report_path, report.to_dict())
    _print_json(report.to_dict())
    return EXIT_OK


def cmd_reward_check(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    records = load_reward_fixture(args.fixture)
    mismatches = check_reward_fixture(records, config.reward, args.tolerance)
    for index, expected, actual in mismatches:
        print(f"record {index}: expected {expected!r}, got {actual!r}")
    print(f"{len(records) - len(mismatches)}/{len(records)} records match")
    return EXIT_CHECK_FAILED if mismatches else EXIT_OK


def cmd_gen_data(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    pairs = generate_dataset(config.world)
    train_pairs = split_pairs(pairs, Split.TRAIN)
    test_pairs = split_pairs(pairs, Split.TEST)
    dump_jsonl(config.out_dir / "train.jsonl", train_pairs)
    dump_jsonl(config.out_dir / "test.jsonl", test_pairs)
    print(f"wrote {len(train_pairs)} train and {len(test_pairs)} test pairs to {config.out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run config")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", type=Path)
    common.add_argument("--metrics", type=Path, help="metrics log path")
    common.add_argument("--checkpoint", type=Path, help="checkpoint path")
    common.add_argument(
        "--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"]
    )

    parser = argparse.ArgumentParser(prog="rftpy", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[common], help="train with the configured strategy")
    sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test split")
    sub.add_parser("compare", parents=[common], help="strategy x refinement grid over seeds")
    sub.add_parser("gen-data", parents=[common], help="write synthetic train/test JSONL")

    refine = sub.add_parser("refine", parents=[common], help="audit and refine open-ended pairs")
    refine.add_argument("--input", type=Path, required=True)
    refine.add_argument("--output", type=Path, required=True)
    refine.add_argument("--report", type=Path)
    refine.add_argument("--drop-policy", choices=[p.value for p in DropPolicy])
    refine.add_argument("--auditor", choices=["mock", "http"])

    check = sub.add_parser("reward-check", parents=[common], help="verify a reward fixture")
    check.add_argument("fixture", type=Path)
    check.add_argument("--tolerance", type=float, default=1e-9)
    return parser


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "refine": cmd_refine,
    "reward-check": cmd_reward_check,
    "gen-data": cmd_gen_data,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except RftError as e:
        logger.debug("command failed", exc_info=True)
        print(f"error [{e.category}]: {e}", file=sys.stderr)
        return EXIT_CODES.get(e.category, EXIT_CODES["usage"])
    except OSError as e:
        print(f"error [io]: {e}", file=sys.stderr)
        return EXIT_CODES["io"]
