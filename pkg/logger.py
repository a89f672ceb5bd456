"""
Centralized logging configuration for firlab.
Provides colored console output and an optional rotating log file under <output>/logs.
"""

import logging
import sys
from datetime import datetime
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional


APP_LOGGER = "firlab"


class ColoredFormatter(logging.Formatter):
    """Formatter that adds colors to console output."""

    COLORS = {
        'DEBUG': '\033[36m',     # Cyan
        'INFO': '\033[32m',      # Green
        'WARNING': '\033[33m',   # Yellow
        'ERROR': '\033[31m',     # Red
        'CRITICAL': '\033[35m',  # Magenta
    }
    RESET = '\033[0m'
    SYMBOLS = {
        'DEBUG': '·',
        'INFO': '✓',
        'WARNING': '⚠',
        'ERROR': '✗',
        'CRITICAL': '!!',
    }

    def format(self, record):
        record.symbol = self.SYMBOLS.get(record.levelname, '')
        record.color = self.COLORS.get(record.levelname, '')
        record.reset = self.RESET
        return super().format(record)


def setup_logging(
    level: str = "INFO",
    log_dir: Optional[Path] = None,
    max_bytes: int = 10 * 1024 * 1024,  # 10MB
    backup_count: int = 5,
) -> logging.Logger:
    """
    Set up the application logger.

    Args:
        level: Console log level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_dir: Optional directory for a rotating log file
        max_bytes: Max size of log file before rotation
        backup_count: Number of backup files to keep

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(APP_LOGGER)
    log_level = getattr(logging, level.upper(), logging.INFO)

    # Only configure the console once; later calls adjust its level
    console = next((h for h in logger.handlers if getattr(h, "_firlab_console", False)), None)
    if console is None:
        console = logging.StreamHandler(sys.stderr)
        console.setFormatter(ColoredFormatter("%(color)s%(symbol)s %(message)s%(reset)s"))
        console._firlab_console = True
        logger.addHandler(console)
    console.setLevel(log_level)
    logger.setLevel(logging.DEBUG)

    if log_dir is not None:
        attach_file_handler(log_dir, max_bytes=max_bytes, backup_count=backup_count)

    # Prevent propagation to root logger
    logger.propagate = False
    return logger


def attach_file_handler(
    log_dir: Path,
    max_bytes: int = 10 * 1024 * 1024,
    backup_count: int = 5,
) -> Path:
    """Add a rotating DEBUG-level file handler writing to log_dir (idempotent per path)."""
    logger = logging.getLogger(APP_LOGGER)
    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    log_path = log_dir / f"firlab_{datetime.now().strftime('%Y%m%d')}.log"

    for handler in logger.handlers:
        if isinstance(handler, RotatingFileHandler) and Path(handler.baseFilename) == log_path.absolute():
            return log_path

    file_handler = RotatingFileHandler(
        log_path,
        maxBytes=max_bytes,
        backupCount=backup_count,
        encoding="utf-8",
    )
    file_handler.setLevel(logging.DEBUG)  # Log everything to file
    file_handler.setFormatter(logging.Formatter(
        "%(asctime)s | %(levelname)-8s | %(name)s:%(funcName)s:%(lineno)d | %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    ))
    logger.addHandler(file_handler)
    return log_path


def get_logger(name: str = APP_LOGGER) -> logging.Logger:
    """
    Get a logger instance.

    Args:
        name: Logger name (will be prefixed with 'firlab.')

    Returns:
        Logger instance
    """
    if name == APP_LOGGER:
        logger = logging.getLogger(name)
    else:
        logger = logging.getLogger(f"{APP_LOGGER}.{name}")

    # Ensure the application logger is configured
    if not logging.getLogger(APP_LOGGER).handlers:
        setup_logging()

    return logger
