"""
Logging configuration for the DLRM training kit.

Everything goes to stderr (rich console handler) and optionally to a
rotating file; stdout is reserved for reports and CSV tables. Modules get
structlog loggers through ``get_logger`` or ``LoggerMixin``.
"""

import functools
import logging
import logging.handlers
import time
from typing import Any, Callable, TypeVar

import structlog
from rich.console import Console
from rich.logging import RichHandler

from .config import Settings

F = TypeVar("F", bound=Callable[..., Any])

FILE_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(threadName)s - %(message)s"


def _file_handler(settings: Settings) -> logging.Handler:
    settings.get_logs_dir().mkdir(parents=True, exist_ok=True)
    handler = logging.handlers.RotatingFileHandler(
        filename=settings.log_file_path,
        maxBytes=settings.log_max_size_mb * 1024 * 1024,
        backupCount=settings.log_backup_count,
        encoding="utf-8",
    )
    # rank threads interleave; the thread name tells comm workers from compute
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(logging.Formatter(FILE_FORMAT))
    return handler


def setup_logging(settings: Settings) -> Any:
    """
    Configure stdlib handlers and structlog from run settings.

    Args:
        settings: Run settings

    Returns:
        The kit's root structlog logger
    """
    level = getattr(logging, settings.log_level.upper())

    root_logger = logging.getLogger()
    root_logger.handlers.clear()
    root_logger.setLevel(logging.DEBUG if settings.log_to_file else level)

    console_handler = RichHandler(
        console=Console(stderr=True),
        show_time=True,
        show_path=settings.debug,
        markup=False,
        rich_tracebacks=True,
    )
    console_handler.setLevel(level)
    root_logger.addHandler(console_handler)

    if settings.log_to_file:
        root_logger.addHandler(_file_handler(settings))

    processors = [
        structlog.contextvars.merge_contextvars,
        structlog.stdlib.add_logger_name,
        structlog.processors.add_log_level,
        structlog.processors.StackInfoRenderer(),
        structlog.dev.set_exc_info,
        structlog.processors.TimeStamper(fmt="ISO"),
    ]
    if settings.debug:
        processors.append(structlog.dev.ConsoleRenderer(colors=True))
    else:
        processors.append(structlog.processors.JSONRenderer())

    file_level = logging.DEBUG if settings.log_to_file else level
    structlog.configure(
        processors=processors,
        wrapper_class=structlog.make_filtering_bound_logger(file_level),
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=True,
    )

    logger = structlog.get_logger("dlrm_kit")
    logger.info(
        "logging initialized",
        log_level=settings.log_level,
        log_file=settings.log_file_path if settings.log_to_file else None,
        debug_mode=settings.debug,
    )
    return logger


def quiet_logging(level: int = logging.WARNING) -> None:
    """Drop everything below ``level`` (tests, subprocess ranks)."""
    structlog.configure(
        processors=[
            structlog.processors.add_log_level,
            structlog.dev.ConsoleRenderer(colors=False),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(level),
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=False,
    )
    logging.getLogger().setLevel(level)


def get_logger(name: str) -> Any:
    """Structlog logger for a module (usually ``__name__``)."""
    return structlog.get_logger(name)


def log_call(logger: Any) -> Callable[[F], F]:
    """
    Decorator that logs entry, completion and failure of a harness operation.

    Args:
        logger: Logger instance to use
    """
    def decorator(func: F) -> F:
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start = time.perf_counter()
            logger.debug(f"calling {func.__name__}")
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                logger.error(
                    f"{func.__name__} failed",
                    error=str(e),
                    error_type=type(e).__name__,
                    elapsed_s=round(time.perf_counter() - start, 3),
                )
                raise
            logger.debug(
                f"{func.__name__} completed",
                elapsed_s=round(time.perf_counter() - start, 3),
            )
            return result
        return wrapper  # type: ignore[return-value]
    return decorator


class LoggerMixin:
    """Gives a class a structlog logger named after it."""

    @property
    def logger(self) -> Any:
        return get_logger(self.__class__.__name__)
