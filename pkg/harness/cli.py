"""
ISO Command Line
================
    python -m harness.cli gen-world    --config exp.json [--set world.seed=3] --out worlds/
    python -m harness.cli run-tabular  --config exp.json [--set k=v ...] [--force] [--workers N]
    python -m harness.cli run-neural   --config exp.json [--set neural.lambda_kl=0.1]
    python -m harness.cli summarize    results/<hash>
    python -m harness.cli emit-plots   results/<hash> plots/

Exit codes: 0 success, 1 replica failures or invariant violations,
2 configuration errors.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from core.errors import ISOError
from harness.config import ExperimentConfig, apply_overrides, config_hash, load_config, load_environment
from harness.experiment import run_experiment, summarize
from harness.plots import emit_plot_data
from harness.stats import SummaryStats
from harness.store import ArtifactStore
from tabular.world import sample_reward, sample_system

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2

logger = logging.getLogger("harness.cli")


def _build_config(args, mode: Optional[str] = None) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    overrides = list(args.set or [])
    if mode is not None:
        overrides.insert(0, f"mode={mode}")
    return apply_overrides(config, overrides)


def _print_summary(summary: SummaryStats) -> None:
    ratio = "n/a" if summary.improvement_ratio is None else f"{summary.improvement_ratio:.3f}"
    print(f"📊 replicas: {summary.n_replicas} (failed {summary.n_failed})")
    print(f"📊 quality: {summary.initial_mean:.4f} -> {summary.final_mean:.4f} (ratio {ratio})")
    test = summary.test
    if test.p is None:
        print("⚠️ paired t-test undefined (fewer than two replicas)")
    else:
        flag = " [degenerate]" if test.degenerate else ""
        print(f"📊 paired t-test ({test.alternative}): t={test.t:.4g} p={test.p:.4g} df={test.df}{flag}")


def cmd_gen_world(args) -> int:
    config = _build_config(args)
    system = sample_system(config.world)
    reward = sample_reward(config.world)
    artifact_id = args.id or f"world_{config.world.seed}"
    metadata = ArtifactStore(args.out).save_world(artifact_id, system, reward, config.world)
    print(f"✅ World saved: {artifact_id}")
    print(f"   States: {system.n_states}  Actions: {system.n_actions}  CF: {system.connection_factor}")
    print(f"   sha256: {metadata['checksum_sha256']}")
    return EXIT_OK


def _cmd_run(args, mode: str) -> int:
    config = _build_config(args, mode)
    settings = load_environment(args.env_file)
    output = args.output or config.output or settings.results_dir
    workers = args.workers or config.workers or settings.workers
    print(f"🚀 {mode} run {config_hash(config)[:12]}: {config.n_replicas} replicas, "
          f"{config.n_iterations} iterations, {workers} workers")
    outcome = run_experiment(config, force=args.force, workers=workers, output=output)
    if outcome.skipped:
        print(f"📦 Already finished, reusing {outcome.run_dir} (use --force to rerun)")
    _print_summary(outcome.summary)
    print(f"✅ Results: {outcome.run_dir}")
    if outcome.failures:
        print(f"⚠️ {len(outcome.failures)} replicas failed and were excluded")
        return EXIT_FAILED
    return EXIT_OK


def cmd_run_tabular(args) -> int:
    return _cmd_run(args, "tabular")


def cmd_run_neural(args) -> int:
    return _cmd_run(args, "neural")


def cmd_summarize(args) -> int:
    _print_summary(summarize(args.run_dir))
    return EXIT_OK


def cmd_emit_plots(args) -> int:
    written = emit_plot_data(args.results, args.out)
    print(f"✅ Wrote {len(written)} CSV files to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iso", description="Interactive System Optimizer simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def config_args(p):
        p.add_argument("--config", type=Path, help="experiment config (JSON)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")

    p = sub.add_parser("gen-world", help="sample and store a tabular world")
    config_args(p)
    p.add_argument("--out", type=Path, default=Path("worlds"))
    p.add_argument("--id", help="artifact id (default world_<seed>)")
    p.set_defaults(func=cmd_gen_world)

    for name, func in (("run-tabular", cmd_run_tabular), ("run-neural", cmd_run_neural)):
        p = sub.add_parser(name, help=f"run a replicated {name[4:]} experiment")
        config_args(p)
        p.add_argument("--force", action="store_true", help="rerun a finished config")
        p.add_argument("--workers", type=int, help="worker processes (default ISO_WORKERS)")
        p.add_argument("--output", help="results root (default ISO_RESULTS_DIR)")
        p.add_argument("--env-file", type=Path, help=".env file to load")
        p.set_defaults(func=func)

    p = sub.add_parser("summarize", help="re-aggregate a run directory")
    p.add_argument("run_dir", type=Path)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("emit-plots", help="write per-curve CSV files")
    p.add_argument("results", type=Path, help="results.jsonl or its run directory")
    p.add_argument("out", type=Path)
    p.set_defaults(func=cmd_emit_plots)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ValidationError, ValueError, FileNotFoundError) as exc:
        print(f"❌ Configuration error: {exc}")
        return EXIT_CONFIG
    except ISOError as exc:
        print(f"❌ Run failed: {exc}")
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
