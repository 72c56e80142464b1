"""
Utility modules for the stitlab project: error taxonomy, result objects,
resampling decorator and logging setup
"""

import logging
import os
from typing import Any, Callable, Dict, Generic, Optional, Tuple, Type, TypeVar
from enum import Enum
from dataclasses import dataclass
from functools import wraps

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

logger = logging.getLogger("utils")

# Type variable for generic return type
T = TypeVar('T')


def configure_logging(level: Optional[str] = None) -> int:
    """Configure root logging from an explicit level or the STITLAB_LOG variable.

    Returns the numeric level that was applied.
    """
    name = (level or os.environ.get("STITLAB_LOG") or "WARNING").upper()
    numeric = getattr(logging, name, None)
    if not isinstance(numeric, int):
        numeric = logging.WARNING
    logging.basicConfig(level=numeric, format=LOG_FORMAT)
    logging.getLogger().setLevel(numeric)
    return numeric


class ErrorCategory(Enum):
    """Categories of errors that can occur during simulation and analysis"""
    GEOMETRY = "geometry"
    SAMPLING = "sampling"
    COMBINATORICS = "combinatorics"
    CONFIG = "config"
    STATISTICS = "statistics"
    IO = "io"
    UNKNOWN = "unknown"


class StitError(Exception):
    """Base class for all stitlab errors"""
    category = ErrorCategory.UNKNOWN


class DegenerateCut(StitError):
    """A cut leaves a piece with (numerically) zero volume."""
    category = ErrorCategory.GEOMETRY


class NoHit(StitError):
    category = ErrorCategory.GEOMETRY


class UnknownLabel(StitError):
    category = ErrorCategory.GEOMETRY


class NonmonotoneTime(StitError):
    category = ErrorCategory.GEOMETRY


class NotContained(StitError):
    category = ErrorCategory.GEOMETRY


class RejectionOverflow(StitError):
    """Rejection sampling exceeded its proposal budget."""
    category = ErrorCategory.SAMPLING


class InvalidTuple(StitError):
    category = ErrorCategory.COMBINATORICS


class NotALeaf(StitError):
    category = ErrorCategory.COMBINATORICS


class OutOfRange(StitError):
    category = ErrorCategory.COMBINATORICS


class TooLarge(StitError):
    category = ErrorCategory.COMBINATORICS


class DegenerateRates(StitError):
    category = ErrorCategory.STATISTICS


class InsufficientData(StitError):
    category = ErrorCategory.STATISTICS


class ConfigError(StitError):
    """Invalid configuration; `field` names the offending entry."""
    category = ErrorCategory.CONFIG

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


def determine_error_category(exception: Exception) -> ErrorCategory:
    """
    Determine the error category based on the exception

    Args:
        exception: The exception to categorize

    Returns:
        ErrorCategory enum value
    """
    if isinstance(exception, StitError):
        return exception.category

    if isinstance(exception, (OSError, UnicodeError)):
        return ErrorCategory.IO

    if isinstance(exception, (KeyError, TypeError, ValueError)):
        return ErrorCategory.CONFIG

    if isinstance(exception, (ArithmeticError, FloatingPointError)):
        return ErrorCategory.GEOMETRY

    return ErrorCategory.UNKNOWN


@dataclass
class RunResult(Generic[T]):
    """Result object returned by a replication, with error information on failure"""
    success: bool
    value: Optional[T] = None
    error_message: Optional[str] = None
    error_category: Optional[ErrorCategory] = None
    metadata: Dict[str, Any] = None

    def __post_init__(self):
        if self.metadata is None:
            self.metadata = {}

    @classmethod
    def success_result(cls, value: T, **metadata: Any) -> 'RunResult[T]':
        """Create a successful result"""
        return cls(success=True, value=value, metadata=dict(metadata))

    @classmethod
    def error_result(cls,
                     error_message: str,
                     error_category: ErrorCategory = ErrorCategory.UNKNOWN,
                     **metadata: Any) -> 'RunResult[T]':
        """Create an error result"""
        return cls(
            success=False,
            error_message=error_message,
            error_category=error_category,
            metadata=dict(metadata)
        )

    @classmethod
    def from_exception(cls, exc: Exception, **metadata: Any) -> 'RunResult[T]':
        return cls.error_result(
            error_message=f"{type(exc).__name__}: {exc}",
            error_category=determine_error_category(exc),
            **metadata
        )


def with_resample(
    max_retries: int = 100,
    exceptions: Tuple[Type[BaseException], ...] = (DegenerateCut,)
) -> Callable[[Callable[..., T]], Callable[..., T]]:
    """
    Decorator that re-invokes a random sampling step when it raises one of
    `exceptions`. The wrapped function must draw fresh randomness on each
    call, so a retry is a resample rather than a repeat.

    Args:
        max_retries: Maximum number of resamples before the error propagates
        exceptions: Exception types that trigger a resample

    Returns:
        Decorated function with resampling
    """
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            retry_count = 0
            while True:
                try:
                    return func(*args, **kwargs)
                except exceptions as e:
                    retry_count += 1
                    if retry_count > max_retries:
                        raise
                    logger.warning(f"Resampling {func.__name__} "
                                   f"(attempt {retry_count}/{max_retries}): {e}")
        return wrapper
    return decorator
