"""Process-level fan-out for independent restarts, chains and folds."""
from concurrent.futures import ProcessPoolExecutor


def map_jobs(fn, args, jobs=1):
    """``[fn(a) for a in args]``, optionally across ``jobs`` worker processes.

    Results keep the input order, so output never depends on ``jobs``.
    """
    args = list(args)
    if jobs is None or jobs <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=min(jobs, len(args))) as pool:
        return list(pool.map(fn, args))
