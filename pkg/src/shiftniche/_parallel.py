from concurrent.futures import ThreadPoolExecutor


def ordered_map(fn, items, workers=1):
    """``list(map(fn, items))``, optionally on a thread pool.

    Results come back in input order, so reductions over them are
    independent of the worker count.
    """
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
