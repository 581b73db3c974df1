"""Order-preserving parallel map used by the bootstrap and the simulation runner."""

from __future__ import annotations

from typing import Callable, Iterable, TypeVar

T = TypeVar("T")


def indexed_map(fn: Callable[[int], T], indices: Iterable[int], n_jobs: int = 1) -> list[T]:
    """``[fn(i) for i in indices]``, optionally spread over worker processes.

    Results come back in input order; tasks must seed themselves from their
    index so the output does not depend on ``n_jobs``.
    """
    indices = list(indices)
    if n_jobs is None or n_jobs <= 1 or len(indices) <= 1:
        return [fn(i) for i in indices]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs, backend="loky")(delayed(fn)(i) for i in indices)
