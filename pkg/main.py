"""
Command-line entry point of the race-subspace audit pipeline.

    python main.py train-ref --family admissions
    python main.py gen-data --family admissions --template free
    python main.py sweep
    python main.py debias --scope variants
    python main.py run-all --planted --positions 7
"""
import argparse
import json
import logging
import sys

from errors import AuditError, UsageError
from harness import (
    ArtifactLayout,
    RunConfig,
    emit_report,
    gen_data,
    load_report,
    parse_indices,
    parse_tap,
    run_all,
    run_debias,
    run_generalization,
    run_prompt_audit,
    sweep_stage,
    train_das_stage,
    train_ref,
)
from setup_logging import attach_package_loggers, setup_logging

logger = logging.getLogger("rsub")

PACKAGES = ("alignment", "harness", "interventions", "metrics", "numerics", "refmodel", "tasks",
            "file_helpers", "worker_pool", "seeds")
COMMANDS = ("gen-data", "train-ref", "train-das", "sweep", "audit-prompts", "debias", "generalize", "run-all",
            "report")
SWEEP_COMMANDS = ("sweep", "run-all")


class AuditArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common_flags():
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", type=str, default=None, help="JSON run configuration; flags override it.")
    parent.add_argument("--seed", type=int, default=None, help="Master seed (default: config.MASTER_SEED).")
    parent.add_argument("--family", type=str, default=None, help="Task family: admissions or hiring.")
    parent.add_argument("--template", type=str, default=None, help="Prompt template: free, list or explicit.")
    parent.add_argument("--suffix", type=str, default=None, help="Fairness suffix appended to every prompt.")
    parent.add_argument("--tap", type=parse_tap, default=None, help="Residual-stream location as LAYER:POS.")
    parent.add_argument("--k", type=int, default=None, help="Subspace dimension (0 = empty subspace).")
    parent.add_argument("--scope", type=str, default=None, help="Averaging scope: batch or variants.")
    parent.add_argument("--out", type=str, default=None, dest="out_dir", help="Output directory of the run.")
    parent.add_argument("--formats", type=str, default=None, help="Comma-separated report formats (json,csv,svg).")
    parent.add_argument("--n-profiles", type=int, default=None, dest="n_profiles",
                        help="Evaluation panel size in profiles.")
    parent.add_argument("--trials", type=int, default=None, dest="n_trials",
                        help="Independent trial panels for significance (0 = off).")
    parent.add_argument("--planted", action="store_true", default=None,
                        help="Use the planted-subspace model instead of a trained one.")
    parent.add_argument("--mask", action="store_true", default=None, help="Learn k with the boundary mask.")
    parent.add_argument("--reverse", action="store_true", default=None,
                        help="Also run every generalization transfer in reverse.")
    parent.add_argument("--verbose", action="store_true", help="Log debug output to the console.")
    parent.add_argument("--quiet", action="store_true", help="Only log warnings and errors to the console.")
    return parent


def parse_args(argv=None):
    parser = AuditArgumentParser(description="Locate and intervene on race subspaces of a small decision transformer.")
    subparsers = parser.add_subparsers(dest="command", parser_class=AuditArgumentParser)
    parent = _common_flags()
    for command in COMMANDS:
        sub = subparsers.add_parser(command, parents=[parent])
        if command in SWEEP_COMMANDS:
            sub.add_argument("--workers", type=int, default=None, help="Threads training sweep cells.")
            sub.add_argument("--layers", type=parse_indices, default=None, dest="sweep_layers",
                             help="Comma-separated sweep layers (default: all).")
            sub.add_argument("--positions", type=parse_indices, default=None, dest="sweep_positions",
                             help="Comma-separated sweep positions (default: all).")
        if command == "report":
            sub.add_argument("path", type=str, help="Saved JSON report to re-render.")
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a subcommand is required", choices=",".join(COMMANDS))
    return args


def load_run_config(args):
    overrides = {
        name: getattr(args, name)
        for name in ("seed", "family", "template", "suffix", "tap", "k", "scope", "out_dir", "n_profiles",
                     "n_trials", "planted", "mask", "reverse")
    }
    for name in ("sweep_layers", "sweep_positions"):
        overrides[name] = getattr(args, name, None)
    if args.formats is not None:
        overrides["formats"] = tuple(f.strip() for f in args.formats.split(",") if f.strip())
    return RunConfig.load(args.config, overrides)


def run_command(args, run_config):
    """Runs one subcommand and returns the reports it produced."""
    show_progress = not args.quiet
    if args.command == "gen-data":
        return gen_data(run_config)
    if args.command == "train-ref":
        return train_ref(run_config, show_progress=show_progress)
    if args.command == "train-das":
        return train_das_stage(run_config, show_progress=show_progress)
    if args.command == "sweep":
        return sweep_stage(run_config, num_workers=args.workers)
    if args.command == "audit-prompts":
        return run_prompt_audit(run_config)
    if args.command == "debias":
        return run_debias(run_config)
    if args.command == "generalize":
        return run_generalization(run_config)
    if args.command == "run-all":
        return run_all(run_config, num_workers=args.workers, show_progress=show_progress)
    return [load_report(args.path)]


def cmd_dispatch(argv=None):
    """
    Parses argv, runs the subcommand and emits its reports.

    :return: process exit code; AuditErrors map to their own code and print a JSON record to stderr.
    """
    try:
        args = parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 0
    except AuditError as e:
        print(json.dumps(e.to_record(), sort_keys=True), file=sys.stderr)
        return e.exit_code

    try:
        run_config = load_run_config(args)
        layout = ArtifactLayout(run_config.out_dir)
        console_level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
        run_logger = setup_logging("rsub", log_dir=layout.log_dir, console_log_level=console_level)
        attach_package_loggers(run_logger, PACKAGES)

        reports = run_command(args, run_config)
        for report in reports:
            emit_report(report, layout, run_config.formats)
        logger.info(f"✅ {args.command} finished: {len(reports)} report(s) under {layout.root}")
        return 0
    except AuditError as e:
        logger.error(f"❌ {args.command} failed: {e.message}")
        print(json.dumps(e.to_record(), sort_keys=True), file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception(f"❌ Unexpected error in {args.command}: {e}")
        return 1


def main():
    sys.exit(cmd_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
