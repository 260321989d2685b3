"""Counter-based random streams, one per simulated path.

Each path draws from a Philox generator keyed by (master seed, path
index), so results are bit-identical for a fixed seed no matter how
paths are chunked across workers.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def path_stream(seed: int, path_index: int) -> np.random.Generator:
    """The dedicated generator of one path."""
    key = np.array([seed & _MASK64, path_index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def fill_normals(seed: int, out: np.ndarray, workers: int = 1) -> None:
    """Fill out[p] with standard normals from path p's stream.

    ``out`` has shape (n_paths, ...); chunking across workers cannot
    change the result because every path owns its stream.
    """
    n_paths = out.shape[0]

    def fill(lo: int, hi: int) -> None:
        for p in range(lo, hi):
            out[p] = path_stream(seed, p).standard_normal(out.shape[1:])

    if workers <= 1 or n_paths < 2 * workers:
        fill(0, n_paths)
        return
    from concurrent.futures import ThreadPoolExecutor

    bounds = np.linspace(0, n_paths, workers + 1, dtype=int)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(fill, bounds[k], bounds[k + 1]) for k in range(workers)
        ]
        for fut in futures:
            fut.result()
