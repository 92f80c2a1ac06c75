"""
Colored logging for orbitavg

Standard output carries command results (JSON, CSV), so every log record
and status line goes to stderr.  Colors are used only when stderr is a
terminal and NO_COLOR is unset.
"""
import logging
import os
import sys
from datetime import datetime
from typing import Dict, Optional, TextIO

from config import LOG_LEVEL_NAME

# Resolved once; falls back to INFO for unknown level names
LOG_LEVEL = getattr(logging, LOG_LEVEL_NAME, logging.INFO)

APP_LOGGER = "orbitavg"
MODULE_LOGGERS = [
    'scalars', 'symbolalg', 'data_processor', 'averaging', 'corrections',
    'sphere', 'spectra', 'verify', 'pipeline', 'cli_interface', 'main',
]
# Third-party loggers and the warnings bridge: warnings and above only
QUIET_LOGGERS = ['py.warnings', 'scipy', 'numexpr', 'matplotlib']

RESET = '\033[0m'


def _use_color(stream: TextIO) -> bool:
    if os.getenv("NO_COLOR"):
        return False
    isatty = getattr(stream, "isatty", None)
    return bool(isatty and isatty())


class ColoredFormatter(logging.Formatter):
    """[time] LEVEL logger: message, colored by level"""

    COLORS: Dict[str, str] = {
        'DEBUG': '\033[36m',     # Cyan
        'INFO': '\033[32m',      # Green
        'WARNING': '\033[33m',   # Yellow
        'ERROR': '\033[31m',     # Red
        'CRITICAL': '\033[35m',  # Magenta
    }

    def __init__(self, use_color: bool = True):
        super().__init__()
        self.use_color = use_color

    def format(self, record):
        timestamp = self.formatTime(record, '%Y-%m-%d %H:%M:%S')
        text = f"[{timestamp}] {record.levelname:8} {record.name}: {record.getMessage()}"
        if record.exc_info:
            text += f"\n{self.formatException(record.exc_info)}"
        if not self.use_color:
            return text
        return f"{self.COLORS.get(record.levelname, '')}{text}{RESET}"


def setup_colored_logging(
    level: int = LOG_LEVEL,
    logger_name: Optional[str] = None,
    stream: Optional[TextIO] = None,
) -> logging.Logger:
    """
    Attach a single colored handler to a logger

    Args:
        level: Logging level (default: ORBITAVG_LOG_LEVEL)
        logger_name: Name of the logger (default: root logger)
        stream: Output stream (default: stderr)

    Returns:
        Configured logger
    """
    stream = sys.stderr if stream is None else stream
    logger = logging.getLogger(logger_name)

    # Clear existing handlers to avoid duplicates
    logger.handlers.clear()

    handler = logging.StreamHandler(stream)
    handler.setLevel(level)
    handler.setFormatter(ColoredFormatter(_use_color(stream)))

    logger.addHandler(handler)
    logger.setLevel(level)
    logger.propagate = False
    return logger


def _app_logger() -> logging.Logger:
    logger = logging.getLogger(APP_LOGGER)
    if not logger.handlers:
        setup_colored_logging(LOG_LEVEL, APP_LOGGER)
    return logger


def log_error(message: str, exception: Optional[Exception] = None):
    """Log an error, with traceback when an exception is given"""
    if exception:
        _app_logger().error(f"{message}: {exception}", exc_info=exception)
    else:
        _app_logger().error(message)


def log_warning(message: str):
    _app_logger().warning(message)


def log_info(message: str):
    _app_logger().info(message)


def log_success(message: str):
    _app_logger().info(f"[SUCCESS] {message}")


def log_critical(message: str, exception: Optional[Exception] = None):
    if exception:
        _app_logger().critical(f"{message}: {exception}", exc_info=exception)
    else:
        _app_logger().critical(message)


def configure_application_logging(level: Optional[int] = None):
    """
    One level for every orbitavg logger; numpy and scipy RuntimeWarnings
    are routed through logging instead of printed raw
    """
    level = LOG_LEVEL if level is None else level
    setup_colored_logging(level=level)
    setup_colored_logging(level=level, logger_name=APP_LOGGER)
    for module in MODULE_LOGGERS:
        setup_colored_logging(level=level, logger_name=module)

    logging.captureWarnings(True)
    for name in QUIET_LOGGERS:
        setup_colored_logging(level=max(level, logging.WARNING), logger_name=name)


def _print_colored(tag: str, color: str, message: str, include_timestamp: bool):
    stream = sys.stderr
    prefix = f"[{datetime.now().strftime('%Y-%m-%d %H:%M:%S')}] " if include_timestamp else ""
    text = f"{prefix}{tag}: {message}"
    if _use_color(stream):
        text = f"{color}{text}{RESET}"
    print(text, file=stream, flush=True)


def print_colored_error(message: str, include_timestamp: bool = True):
    """Print an error line to stderr (non-logging version)"""
    _print_colored("ERROR", '\033[31m', message, include_timestamp)


def print_colored_warning(message: str, include_timestamp: bool = True):
    _print_colored("WARNING", '\033[33m', message, include_timestamp)


def print_colored_success(message: str, include_timestamp: bool = True):
    _print_colored("SUCCESS", '\033[32m', message, include_timestamp)
