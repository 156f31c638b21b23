"""
UI module for progress display.
"""

from .progress import ProgressInfo, ProgressTracker, format_time

__all__ = ["ProgressInfo", "ProgressTracker", "format_time"]
