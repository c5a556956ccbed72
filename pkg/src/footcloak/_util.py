"""Small shared helpers: deterministic rounding, seeding, ordered parallel map."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterable, Sequence

import numpy as np


def round_half_up(x: float) -> int:
    """Round half away from zero (0.5 -> 1, 1.5 -> 2, -0.5 -> -1)."""
    if x >= 0:
        return int(math.floor(x + 0.5))
    return -int(math.floor(-x + 0.5))


def derive_seed(base_seed: int, stream: int) -> int:
    """Derive an independent child seed from a base seed and a stream id.

    Deterministic; distinct streams give statistically independent
    generators even for adjacent base seeds.
    """
    ss = np.random.SeedSequence([int(base_seed), int(stream)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def map_ordered(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    """Map fn over items, optionally with a thread pool.

    Results come back in input order regardless of jobs, so any
    reduction over them is independent of the parallelism degree.
    """
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def canonical_json(obj: Any) -> str:
    """Serialize to JSON with sorted keys and a trailing newline.

    Used for every result file so that reruns are byte-identical.
    """
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def as_float_list(values: Iterable) -> list:
    return [float(v) for v in values]
