"""
CLI module for command-line interface.
"""

from .main import VCPApp, main

__all__ = ["VCPApp", "main"]
