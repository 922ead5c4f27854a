from concurrent.futures import ProcessPoolExecutor


def parallel_map(func, items, jobs: int = 1) -> list:
    """``list(map(func, items))``, optionally across worker processes; order preserved."""
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, items))
