from concurrent.futures import ProcessPoolExecutor


def parallel_map(fn, items, jobs=1):
    """``list(map(fn, items))``, optionally across processes; result order is input order."""
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))
