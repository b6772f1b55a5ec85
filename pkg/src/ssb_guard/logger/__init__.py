"""
Structured logging for ssb_guard pipeline commands
"""

from ssb_guard.logger.context import log_command
from ssb_guard.logger.core import (
    clear_log_context,
    get_log_context,
    get_logger,
    set_log_context,
    setup_logging,
)

__all__ = [
    "clear_log_context",
    "get_log_context",
    "get_logger",
    "log_command",
    "set_log_context",
    "setup_logging",
]
