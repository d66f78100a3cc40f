"""Deterministic chunked fan-out for the nogil kernels.

Work is cut into fixed-size chunks independent of the thread count, and
every item carries its own random stream, so results do not depend on
scheduling.
"""
from concurrent.futures import ThreadPoolExecutor

CHUNK = 4096


def chunks(n, size=CHUNK):
    bounds = list(range(0, n, size)) + [n]
    return [(bounds[k], bounds[k + 1]) for k in range(len(bounds) - 1)]


def run_chunks(fn, n, threads=1, size=CHUNK):
    parts = chunks(n, size)
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            list(ex.map(lambda p: fn(*p), parts))
    else:
        for p in parts:
            fn(*p)
