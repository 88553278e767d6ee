import os
from concurrent.futures import ThreadPoolExecutor


def thread_count(threads=None):
    if threads is None:
        threads = int(os.environ.get("PREVIEW_GAIN_THREADS", "1") or 1)
    return max(1, int(threads))


def pmap(fn, items, threads=None):
    """Ordered map, fanned out over a thread pool when more than one thread is allowed.

    LAPACK calls release the GIL, so threads help for the block-sized linear algebra here.
    """
    items = list(items)
    k = thread_count(threads)
    if k == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=k) as ex:
        return list(ex.map(fn, items))
