"""
Retry utilities using tenacity for resilient dataset and report writes.
"""

import errno
import logging
from typing import Tuple, Type

from tenacity import (
    retry,
    stop_after_attempt,
    wait_exponential,
    retry_if_exception,
    before_sleep_log,
    after_log,
)

from config import MAX_RETRIES, RETRY_BACKOFF


# Get logger
logger = logging.getLogger("firlab.retry")


# Exceptions that may succeed on a second attempt
RETRYABLE_EXCEPTIONS: Tuple[Type[Exception], ...] = (
    BlockingIOError,
    InterruptedError,
    TimeoutError,
)

# errno values of OSError worth retrying (busy file, temporarily unavailable, stale NFS handle)
RETRYABLE_ERRNOS = frozenset({errno.EAGAIN, errno.EBUSY, errno.EINTR, errno.ESTALE})


def is_retryable_error(exc: BaseException) -> bool:
    """Check if a filesystem error is transient."""
    if isinstance(exc, RETRYABLE_EXCEPTIONS):
        return True
    return isinstance(exc, OSError) and exc.errno in RETRYABLE_ERRNOS


def create_retry_decorator(
    max_attempts: int = MAX_RETRIES,
    backoff_factor: int = RETRY_BACKOFF,
    max_wait: float = 10,
):
    """
    Create a retry decorator with configurable settings.

    Args:
        max_attempts: Maximum number of attempts
        backoff_factor: Exponential backoff multiplier
        max_wait: Upper bound on a single wait, in seconds

    Returns:
        Configured retry decorator
    """
    return retry(
        stop=stop_after_attempt(max_attempts),
        wait=wait_exponential(multiplier=backoff_factor, min=0, max=max_wait),
        retry=retry_if_exception(is_retryable_error),
        before_sleep=before_sleep_log(logger, logging.WARNING),
        after=after_log(logger, logging.DEBUG),
        reraise=True,
    )


# Default retry decorator
default_retry = create_retry_decorator()
