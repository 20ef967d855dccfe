"""Logging setup for epochnoise."""

import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional

from .config import LoggingConfig

# Custom log levels
RUN = 25  # Between INFO (20) and WARNING (30): experiment milestones
NUMERIC = 15  # Between DEBUG (10) and INFO (20): numeric diagnostics

logging.addLevelName(RUN, "RUN")
logging.addLevelName(NUMERIC, "NUMERIC")


class EpochNoiseLogger(logging.Logger):
    """Logger with experiment milestone and numeric diagnostic methods."""

    def run_event(self, kind: str, text: str):
        """Log an experiment milestone."""
        if self.isEnabledFor(RUN):
            self._log(RUN, f"[{kind}] {text}", ())

    def numeric(self, quantity: str, value: float, note: Optional[str] = None):
        """Log a numeric diagnostic."""
        if self.isEnabledFor(NUMERIC):
            msg = f"{quantity} = {value:.6g}"
            if note:
                msg += f" ({note})"
            self._log(NUMERIC, msg, ())


# Set the custom logger class
logging.setLoggerClass(EpochNoiseLogger)


def setup_logging(config: LoggingConfig, verbose: bool = False) -> logging.Logger:
    """Configure logging based on config.

    Args:
        config: Logging configuration
        verbose: Override to enable DEBUG level

    Returns:
        The configured root logger
    """
    if verbose:
        level = logging.DEBUG
    else:
        level_name = config.level.upper()
        level = getattr(logging, level_name, logging.INFO)

    formatter = logging.Formatter(
        fmt="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    root_logger.handlers.clear()

    # Diagnostics go to stderr so stdout stays clean for summaries
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)

    if config.file:
        log_path = Path(config.file)
        log_path.parent.mkdir(parents=True, exist_ok=True)

        file_handler = RotatingFileHandler(
            log_path,
            maxBytes=config.max_size_mb * 1024 * 1024,
            backupCount=config.backup_count,
        )
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)
        root_logger.addHandler(file_handler)

    if not config.log_numeric:
        # Handler-level so records from child loggers are filtered too
        for handler in root_logger.handlers:
            handler.addFilter(lambda r: r.levelno != NUMERIC)

    return root_logger


def get_logger(name: str = "epochnoise") -> EpochNoiseLogger:
    """Get an epochnoise logger instance.

    Args:
        name: Logger name (will be prefixed with 'epochnoise.')

    Returns:
        Configured logger instance
    """
    if not name.startswith("epochnoise"):
        name = f"epochnoise.{name}"
    return logging.getLogger(name)
