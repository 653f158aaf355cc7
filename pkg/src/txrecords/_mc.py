"""Seeded Monte-Carlo replicates that do not depend on the worker count.

Replicate ``r`` of a run with seed ``s`` always draws from
``default_rng([s, r])``; work is split into contiguous replicate blocks and
the per-block results are concatenated in block order.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable

import numpy as np


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def blocks(n: int, size: int) -> list[tuple[int, int]]:
    return [(i, min(i + size, n)) for i in range(0, n, size)]


def map_blocks(func: Callable, n: int, *args, block: int = 250, jobs: int = 1) -> list:
    """Call ``func(start, stop, *args)`` for each replicate block, in order."""
    spans = blocks(n, block)
    if jobs <= 1 or len(spans) == 1:
        return [func(a, b, *args) for a, b in spans]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        futures = [ex.submit(func, a, b, *args) for a, b in spans]
        return [f.result() for f in futures]
