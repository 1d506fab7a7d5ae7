from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar, Union

T = TypeVar("T")
R = TypeVar("R")


def fan_out(fn: Callable[[T], R], items: Sequence[T], parallelism: int = 1) -> list[Union[R, BaseException]]:
    """Apply ``fn`` to every item, returning results (or the raised exception) in input order."""

    def guarded(item: T) -> Union[R, BaseException]:
        try:
            return fn(item)
        except Exception as exc:  # collected, re-raised by the caller as needed
            return exc

    if parallelism <= 1 or len(items) <= 1:
        return [guarded(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(parallelism, len(items))) as pool:
        return list(pool.map(guarded, items))
