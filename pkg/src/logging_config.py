"""
Centralized logging configuration for solver runs, simulations and sweeps
"""
import functools
import logging
import logging.handlers
import sys
import time
from pathlib import Path


class ColoredFormatter(logging.Formatter):
    """Colored formatter for console output"""

    COLORS = {
        'DEBUG': '\033[36m',
        'INFO': '\033[32m',
        'WARNING': '\033[33m',
        'ERROR': '\033[31m',
        'CRITICAL': '\033[35m',
        'RESET': '\033[0m'
    }

    def format(self, record):
        # Work on a copy so file handlers keep the plain level name
        record = logging.makeLogRecord(record.__dict__)
        if record.levelname in self.COLORS:
            record.levelname = f"{self.COLORS[record.levelname]}{record.levelname}{self.COLORS['RESET']}"
        return super().format(record)


def setup_logging(
    log_level: str = "INFO",
    log_file: str | None = None,
    max_bytes: int = 10 * 1024 * 1024,
    backup_count: int = 3,
    colored_output: bool = True
) -> None:
    """
    Setup logging for a CLI invocation

    Console output goes to stderr so CSV artifacts written to stdout stay clean.

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_file: Path to a rotating log file (optional, always at DEBUG)
        max_bytes: Maximum size of log file before rotation
        backup_count: Number of rotated files to keep
        colored_output: Whether to color console level names
    """
    level = getattr(logging, log_level.upper(), logging.INFO)
    root = logging.getLogger()
    root.setLevel(logging.DEBUG if log_file else level)
    root.handlers.clear()

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(level)
    fmt = '%(asctime)s - %(levelname)s - %(message)s'
    if colored_output and sys.stderr.isatty():
        console_handler.setFormatter(ColoredFormatter(fmt=fmt, datefmt='%H:%M:%S'))
    else:
        console_handler.setFormatter(logging.Formatter(fmt=fmt, datefmt='%H:%M:%S'))
    root.addHandler(console_handler)

    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.handlers.RotatingFileHandler(
            filename=log_file,
            maxBytes=max_bytes,
            backupCount=backup_count,
            encoding='utf-8'
        )
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter(
            fmt='%(asctime)s - %(name)s - %(levelname)s - [%(filename)s:%(lineno)d] - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        ))
        root.addHandler(file_handler)


def log_performance(func):
    """Decorator logging the wall time of solver and simulation entry points"""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        logger = logging.getLogger(func.__module__)
        start_time = time.perf_counter()
        try:
            result = func(*args, **kwargs)
        except Exception as e:
            logger.error(f"{func.__name__} failed after {time.perf_counter() - start_time:.3f}s: {e}")
            raise
        logger.debug(f"{func.__name__} completed in {time.perf_counter() - start_time:.3f}s")
        return result

    return wrapper
