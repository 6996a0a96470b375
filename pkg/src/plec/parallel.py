"""Order-preserving map over independent tasks."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence


def parallel_map(fn: Callable, tasks: Sequence, jobs: int = 1) -> list:
    """``[fn(t) for t in tasks]``, spread over ``jobs`` processes when ``jobs > 1``.

    Every task carries its own seed derivation, so the result does not depend
    on ``jobs``.
    """
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, tasks))
