import os
from concurrent.futures import ProcessPoolExecutor


def resolve_jobs(n_jobs) -> int:
    if n_jobs is None:
        return 1
    n_jobs = int(n_jobs)
    if n_jobs <= 0:
        return os.cpu_count() or 1
    return n_jobs


def parallel_map(fn, items, n_jobs=1) -> list:
    """Ordered map over ``items``; uses worker processes when ``n_jobs > 1``.

    ``fn`` and the items must be picklable. Results come back in input order
    so anything assembled from them is independent of ``n_jobs``.
    """
    items = list(items)
    jobs = min(resolve_jobs(n_jobs), max(len(items), 1))
    if jobs <= 1:
        return [fn(item) for item in items]
    chunk = max(1, len(items) // (4 * jobs))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=chunk))
