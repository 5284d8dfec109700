"""Worker pool behind the parallel loops over blocks, parameters, probes and local fits."""
import concurrent.futures
import logging
import os
import typing as t

import tqdm

THREADS_VARIABLE = "BFSA_THREADS"

_thread_count: t.Optional[int] = None

T = t.TypeVar("T")
R = t.TypeVar("R")


def thread_count_from_environment() -> int:
    """Reads the worker count from BFSA_THREADS, defaulting to 1."""
    value = os.environ.get(THREADS_VARIABLE)
    if value is None:
        return 1
    try:
        count = int(value)
    except ValueError:
        raise ValueError(f"{THREADS_VARIABLE} must be a positive integer, got {value!r}.")
    if count < 1:
        raise ValueError(f"{THREADS_VARIABLE} must be a positive integer, got {value!r}.")
    return count


def set_thread_count(count: t.Optional[int]):
    """Caps the worker pool. None restores the environment default."""
    global _thread_count
    if count is not None and count < 1:
        raise ValueError(f"Thread count must be positive, got {count}.")
    _thread_count = count
    logging.info(f"Using {get_thread_count()} worker thread(s)")


def get_thread_count() -> int:
    if _thread_count is None:
        return thread_count_from_environment()
    return _thread_count


def thread_map(
    func: t.Callable[[T], R], items: t.Iterable[T], desc: t.Optional[str] = None
) -> t.List[R]:
    """Maps func over items on the worker pool, returning results in input order."""
    items = list(items)
    threads = min(get_thread_count(), len(items))
    if threads <= 1:
        iterator = map(func, items)
        if desc is not None:
            iterator = tqdm.tqdm(iterator, total=len(items), desc=desc)
        return list(iterator)

    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as executor:
        iterator = executor.map(func, items)
        if desc is not None:
            iterator = tqdm.tqdm(iterator, total=len(items), desc=desc)
        return list(iterator)
