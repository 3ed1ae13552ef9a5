"""``robust-dpo`` command line: generate | train | sweep | verify | report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .core import PromptSpace
from .errors import ConfigError, ShapeError, TrainingDivergedError
from .losses import LOSS_KINDS, LossSpec
from .serialization import (
    dataset_from_jsonl,
    dataset_to_jsonl,
    policy_from_json,
    policy_to_json,
    read_text,
    report_to_json,
    reward_from_json,
    reward_to_json,
    write_text,
)
from .sweep import SweepSpec, read_csv, rows_to_csv, run_sweep
from .synth import NoiseSpec, TaskSpec, make_task
from .train import TrainConfig, train

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

TASK_FILE = "task.json"
REWARD_FILE = "reward.json"
REFERENCE_FILE = "reference.json"
TRAIN_FILE = "train.jsonl"
TEST_FILE = "test.jsonl"


def _add_task_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--num-prompts", type=int, default=8)
    p.add_argument("--completions-per-prompt", type=int, default=8)
    p.add_argument("--reward-scale", type=float, default=1.0)
    p.add_argument("--ref-sharpness", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pointwise-rho", type=float, default=0.0)
    p.add_argument("--pairwise-p", type=float, default=0.0)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=2000)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--loss", choices=LOSS_KINDS, default="dpo")
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--beta-prime", type=float, default=1.0)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--learning-rate", type=float, default=0.05)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=0)
    p.add_argument("--record-every", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robust-dpo", description="Robust preference optimisation on tabular tasks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a synthetic task and write it to a directory")
    _add_task_flags(p)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("train", help="train on a generated task directory")
    p.add_argument("--data", required=True, type=Path, help="directory written by 'generate'")
    _add_train_flags(p)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("sweep", help="run a grid of training runs from a JSON spec file")
    p.add_argument("spec", type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("verify", help="check closed forms against independent oracles")
    p.add_argument("--grad-tol", type=float, default=1e-5)

    p = sub.add_parser("report", help="summary tables and figures from a sweep CSV")
    p.add_argument("results", type=Path, help="results.csv written by 'sweep'")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--no-figures", action="store_true")
    return parser


def cmd_generate(args) -> int:
    space = PromptSpace(args.num_prompts, args.completions_per_prompt)
    spec = TaskSpec(space, args.reward_scale, args.ref_sharpness, args.seed)
    noise = NoiseSpec(args.pointwise_rho, args.pairwise_p, args.seed)
    task = make_task(spec, noise, args.n_train, args.n_test)
    args.out.mkdir(parents=True, exist_ok=True)
    meta = {
        "num_prompts": space.num_prompts, "completions_per_prompt": space.completions_per_prompt,
        "reward_scale": spec.reward_scale, "ref_sharpness": spec.ref_sharpness, "seed": spec.seed,
        "pointwise_rho": noise.pointwise_rho, "pairwise_p": noise.pairwise_p,
        "n_train": args.n_train, "n_test": args.n_test,
    }
    write_text(args.out / TASK_FILE, json.dumps(meta, indent=2) + "\n")
    write_text(args.out / REWARD_FILE, reward_to_json(task.reward))
    write_text(args.out / REFERENCE_FILE, policy_to_json(task.reference))
    write_text(args.out / TRAIN_FILE, dataset_to_jsonl(task.train))
    write_text(args.out / TEST_FILE, dataset_to_jsonl(task.test))
    print(f"wrote task to {args.out} ({len(task.train)} train pairs, "
          f"{int(task.train.flipped.sum())} flipped; {len(task.test)} test pairs)")
    return EXIT_OK


def cmd_train(args) -> int:
    reference = policy_from_json(read_text(args.data / REFERENCE_FILE))
    reward = reward_from_json(read_text(args.data / REWARD_FILE))
    train_set = dataset_from_jsonl(read_text(args.data / TRAIN_FILE), reference.space)
    test_path = args.data / TEST_FILE
    test_set = dataset_from_jsonl(read_text(test_path), reference.space) if test_path.exists() else None
    loss = LossSpec(args.loss, args.beta, args.beta_prime, args.epsilon, args.tau)
    config = TrainConfig(loss, args.learning_rate, args.steps, args.batch_size, args.seed, args.record_every)
    policy, report = train(reference, train_set, config, reward=reward, clean_test=test_set)
    args.out.mkdir(parents=True, exist_ok=True)
    write_text(args.out / "report.json", report_to_json(report))
    write_text(args.out / "policy.json", policy_to_json(policy))
    print(f"final loss {report.loss_curve[-1][1]:.6f}  accuracy {report.final_preference_accuracy}  "
          f"reward {report.final_expected_reward:.6f}  kl {report.final_kl:.6f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.jobs < 1:
        raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
    try:
        doc = json.loads(read_text(args.spec))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"sweep spec is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("sweep spec must be a JSON object")
    spec = SweepSpec.from_config(doc)
    print(f"sweep: {spec.size} runs")
    rows = run_sweep(spec, jobs=args.jobs)
    args.out.mkdir(parents=True, exist_ok=True)
    write_text(args.out / "results.csv", rows_to_csv(rows))
    write_text(args.out / "results.json", json.dumps({"spec": spec.to_config(), "rows": rows}, indent=2) + "\n")
    print(f"wrote {len(rows)} rows to {args.out / 'results.csv'}")
    return EXIT_OK


def cmd_verify(args, perturb_gradient: float = 0.0) -> int:
    from .verify import run_checks

    checks = run_checks(grad_tol=args.grad_tol, perturb_gradient=perturb_gradient)
    for c in checks:
        print(c.line())
    failed = [c.name for c in checks if not c.passed]
    if failed:
        print(f"{len(failed)} of {len(checks)} checks failed: {'; '.join(failed)}")
        return EXIT_FAIL
    print(f"all {len(checks)} checks passed")
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import write_report

    rows = read_csv(read_text(args.results))
    for path in write_report(rows, args.out, figures=not args.no_figures):
        print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "sweep": cmd_sweep,
            "verify": cmd_verify, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ShapeError) as exc:
        print(f"robust-dpo {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"robust-dpo {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except TrainingDivergedError as exc:
        print(f"robust-dpo {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
