"""CLI module for specdet."""

from .main import main

__all__ = ["main"]
