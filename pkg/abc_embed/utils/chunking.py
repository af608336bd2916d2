from typing import Iterator, Sequence, TypeVar

T = TypeVar("T")


def iter_chunks(items: Sequence[T], size: int) -> Iterator[Sequence[T]]:
    """Yield consecutive slices of at most ``size`` items.

    Args:
        items: Sequence to split
        size: Maximum slice length

    Yields:
        Slices in order; the last one may be shorter
    """
    if size < 1:
        raise ValueError("chunk size must be at least 1")
    for start in range(0, len(items), size):
        yield items[start : start + size]


def chunk_bounds(total: int, size: int) -> list[tuple[int, int]]:
    """(start, stop) pairs covering ``range(total)`` in chunks of ``size``."""
    if size < 1:
        raise ValueError("chunk size must be at least 1")
    return [(start, min(start + size, total)) for start in range(0, total, size)]
