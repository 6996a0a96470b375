"""Sparse Pauli-Lindblad noise learning and probabilistic error cancellation."""

from __future__ import annotations

__version__ = "0.1.0"
