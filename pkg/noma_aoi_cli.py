"""
Adaptive NOMA/OMA Age-of-Information Command Line Interface

Runs one experiment spec (solve-mdp, simulate, sweep or allocate) and writes
its CSV / policy-text artifacts.
"""

import argparse
import logging
import sys
from pathlib import Path

import ujson

# Add src to path
sys.path.insert(0, str(Path(__file__).parent / "src"))

from src.config import CONFIG
from src.exceptions import AoISchedError, InvalidParameterError, RunFailedError, SpecValidationError
from src.experiment import execute, load_spec
from src.logging_config import setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def error_line(code: int, error: Exception) -> str:
    """Machine-readable single-line error report"""
    payload = {"status": "error", "exit_code": code, "type": type(error).__name__}
    payload["errors"] = error.errors if isinstance(error, (SpecValidationError, RunFailedError)) else [str(error)]
    return ujson.dumps(payload, ensure_ascii=False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Compute and evaluate age-optimal adaptive NOMA/OMA scheduling policies"
    )
    parser.add_argument(
        "--spec",
        required=True,
        help="Path to a JSON experiment spec"
    )
    parser.add_argument(
        "--out",
        help="Output path (overrides the spec's output)"
    )
    parser.add_argument(
        "--seed",
        type=int,
        help="Root RNG seed for simulations"
    )
    parser.add_argument(
        "--replications",
        type=int,
        help="Number of independent replications"
    )
    parser.add_argument(
        "--deterministic",
        action="store_true",
        help="Single worker process for bit-exact regression runs"
    )
    parser.add_argument(
        "--no-timestamp",
        action="store_true",
        help="Do not write the generated_at header line"
    )
    parser.add_argument(
        "--no-progress",
        action="store_true",
        help="Hide sweep progress bars"
    )
    parser.add_argument(
        "--log-file",
        default=CONFIG.log_file,
        help="Also log to this rotating file at DEBUG level"
    )
    parser.add_argument(
        "--verbose",
        "-v",
        action="store_true",
        help="Enable verbose logging"
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(log_level="DEBUG" if args.verbose else CONFIG.log_level, log_file=args.log_file)

    try:
        if args.seed is not None and args.seed < 0:
            raise InvalidParameterError(f"--seed must be >= 0, got {args.seed}")
        if args.replications is not None and args.replications < 1:
            raise InvalidParameterError(f"--replications must be >= 1, got {args.replications}")
        try:
            spec = load_spec(args.spec)
        except OSError as e:
            raise SpecValidationError([f"cannot read spec {args.spec}: {e.strerror}"]) from e
    except (SpecValidationError, InvalidParameterError) as e:
        logger.error(f"[cli] Invalid input: {e}")
        print(error_line(EXIT_VALIDATION, e), file=sys.stderr)
        return EXIT_VALIDATION

    # from here on every toolkit error is a runtime failure, parameter errors included
    try:
        report = execute(
            spec,
            out=args.out,
            seed=args.seed,
            replications=args.replications,
            deterministic=args.deterministic,
            timestamp=not args.no_timestamp,
            progress=not args.no_progress,
        )
    except AoISchedError as e:
        logger.error(f"[cli] Run failed: {e}")
        print(error_line(EXIT_RUNTIME, e), file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        logger.info("[cli] Interrupted")
        return EXIT_RUNTIME

    for path in report.paths:
        print(path)
    logger.info(f"[cli] {report.command} finished: {len(report.paths)} artifact(s), {report.rows} row(s)")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
