# cimo/verify/__init__.py
from __future__ import annotations

"""
Property-verification package for CIMO.
Provides the `verify` Click group and the invariant suites behind it.
"""

from .cli import verify

__all__ = ["verify"]
