"""Kernel backend selection and deterministic chunked execution.

The compiled backend (``_ckernels``) is used when it imports cleanly and the
environment variable ``TUBELAB_PURE_PYTHON`` is unset or ``0``. Otherwise the
numpy twin in ``_pykernels`` is used. Both expose the same three functions.

Work is always split into the same chunks regardless of the thread count set
by ``TUBELAB_THREADS``; results are reduced in chunk order, so output does not
depend on how many threads ran.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

from . import _pykernels

T = TypeVar("T")
R = TypeVar("R")


def _load_backend():
    if os.environ.get("TUBELAB_PURE_PYTHON", "0") not in ("", "0"):
        return _pykernels, "python"
    try:
        from . import _ckernels  # type: ignore[attr-defined]
    except ImportError:
        return _pykernels, "python"
    return _ckernels, "compiled"


_backend, BACKEND = _load_backend()

voxelize_segments = _backend.voxelize_segments
triple_sums = _backend.triple_sums
cross_triple_sums = _backend.cross_triple_sums


def use_backend(name: str) -> str:
    """Switch backend at runtime ("compiled" or "python"); returns the previous name."""
    global _backend, BACKEND, voxelize_segments, triple_sums, cross_triple_sums
    previous = BACKEND
    if name == "python":
        _backend, BACKEND = _pykernels, "python"
    elif name == "compiled":
        from . import _ckernels  # type: ignore[attr-defined]

        _backend, BACKEND = _ckernels, "compiled"
    else:
        raise ValueError(f"unknown backend {name!r}")
    voxelize_segments = _backend.voxelize_segments
    triple_sums = _backend.triple_sums
    cross_triple_sums = _backend.cross_triple_sums
    return previous


def compiled_available() -> bool:
    try:
        from . import _ckernels  # noqa: F401  # type: ignore[attr-defined]
    except ImportError:
        return False
    return True


def thread_count() -> int:
    raw = os.environ.get("TUBELAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def ordered_map(fn: Callable[[T], R], items: Sequence[T] | Iterable[T]) -> list[R]:
    """Map ``fn`` over ``items`` on ``TUBELAB_THREADS`` threads, preserving order."""
    items = list(items)
    workers = thread_count()
    if workers == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
