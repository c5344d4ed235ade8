from concurrent.futures import ThreadPoolExecutor


def ordered_map(fn, items, jobs=1):
    """Apply ``fn`` to every item, optionally in threads; results keep input order."""
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))
