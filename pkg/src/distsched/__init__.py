"""Scheduling of an uncertain multi-product batch plant with risk-aware policy search."""
from __future__ import annotations

__version__ = "0.1.0"
