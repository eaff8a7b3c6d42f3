"""
Retry policy for result-file writes.
"""

import logging
from typing import Tuple, Type, Union

from tenacity import RetryCallState, retry, retry_if_exception_type, stop_after_attempt, wait_exponential

logger = logging.getLogger(__name__)


def io_retry(
    exception_type: Union[Type[Exception], Tuple[Type[Exception], ...]] = (OSError,),
    max_attempts: int = 3,
    min_wait: float = 0.1,
    max_wait: float = 1.0,
):
    def before_sleep(retry_state: RetryCallState):
        logger.warning(f"⚠️ Write [{retry_state.fn.__name__}] failed on attempt {retry_state.attempt_number}, "
                       f"retrying: {retry_state.outcome.exception()}")

    return retry(
        stop=stop_after_attempt(max_attempts),
        wait=wait_exponential(multiplier=min_wait, min=min_wait, max=max_wait),
        retry=retry_if_exception_type(exception_type),
        before_sleep=before_sleep,
        reraise=True
    )
