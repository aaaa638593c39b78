"""Row-tile parallelism for per-pixel kernels.

Kernels must be pixel-local so the output is independent of the tiling.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

_default_threads = 1


def set_default_threads(n: int) -> None:
    global _default_threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _default_threads = int(n)


def get_default_threads() -> int:
    return _default_threads


def row_tiles(height: int, threads: int) -> list[slice]:
    n = max(1, min(threads, height))
    bounds = np.linspace(0, height, n + 1).round().astype(int)
    return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def map_rows(kernel, arrays: dict, out_shape: tuple, threads: int | None = None) -> np.ndarray:
    """Evaluate ``kernel(**row_slices)`` over row tiles into a preallocated output.

    ``arrays`` maps keyword names to ``(H, W, ...)`` arrays; each tile receives
    the matching row range of every array.
    """
    threads = threads or _default_threads
    out = np.empty(out_shape)
    tiles = row_tiles(out_shape[0], threads)

    def run(sl):
        out[sl] = kernel(**{k: v[sl] for k, v in arrays.items()})

    if len(tiles) == 1:
        run(tiles[0])
    else:
        with ThreadPoolExecutor(max_workers=len(tiles)) as ex:
            list(ex.map(run, tiles))
    return out


def map_rows_multi(kernel, arrays: dict, height: int, threads: int | None = None) -> tuple:
    """Like :func:`map_rows` for kernels returning a tuple of row-aligned arrays."""
    threads = threads or _default_threads
    tiles = row_tiles(height, threads)

    def run(sl):
        return kernel(**{k: v[sl] for k, v in arrays.items()})

    if len(tiles) == 1:
        return tuple(run(tiles[0]))
    with ThreadPoolExecutor(max_workers=len(tiles)) as ex:
        parts = list(ex.map(run, tiles))
    return tuple(np.concatenate(p, axis=0) for p in zip(*parts))
