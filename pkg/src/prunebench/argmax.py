"""Per-pixel argmax over the channel axis, serial and data-parallel.

Both paths run the same compiled per-pixel scan. The parallel path splits the
flattened pixel range into ``worker_count`` contiguous chunks and scans them on
a thread pool; the kernel releases the GIL so chunks run concurrently.
Ties resolve to the lowest channel index.
"""
from __future__ import annotations

import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .tensor import as_tensor

LABEL_DTYPE = np.uint32


class BenchConfigError(ValueError):
    pass


@numba.njit(nogil=True, cache=True)
def _scan(scores, out, start, stop):
    hw = scores.shape[2]
    c = scores.shape[1]
    for p in range(start, stop):
        b = p // hw
        q = p - b * hw
        best = scores[b, 0, q]
        idx = 0
        for k in range(1, c):
            v = scores[b, k, q]
            if v > best:
                best = v
                idx = k
        out[b, q] = idx


def _prepare(scores):
    scores = as_tensor(scores)
    n, c, h, w = scores.shape
    return scores.reshape(n, c, h * w), np.empty((n, h * w), dtype=LABEL_DTYPE), (n, h, w)


def argmax_serial(scores) -> np.ndarray:
    """Label map (n, h, w): index of the first maximum along channels."""
    flat, out, shape = _prepare(scores)
    _scan(flat, out, 0, out.size)
    return out.reshape(shape)


def chunk_bounds(total: int, parts: int) -> list[tuple[int, int]]:
    """Split ``range(total)`` into ``parts`` contiguous, near-equal ranges."""
    edges = [total * i // parts for i in range(parts + 1)]
    return list(zip(edges[:-1], edges[1:]))


_pools: dict[int, ThreadPoolExecutor] = {}


def _pool(workers: int) -> ThreadPoolExecutor:
    pool = _pools.get(workers)
    if pool is None:
        pool = _pools[workers] = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="argmax")
    return pool


def argmax_parallel(scores, worker_count: int | None = None) -> np.ndarray:
    """Same result as :func:`argmax_serial`, pixels partitioned across threads."""
    workers = default_workers() if worker_count is None else int(worker_count)
    if workers < 1:
        raise ValueError(f"worker_count must be >= 1, got {worker_count}")
    flat, out, shape = _prepare(scores)
    if workers == 1:
        _scan(flat, out, 0, out.size)
    else:
        futures = [_pool(workers).submit(_scan, flat, out, a, b) for a, b in chunk_bounds(out.size, workers)]
        for fut in futures:
            fut.result()
    return out.reshape(shape)


def default_workers() -> int:
    env = os.environ.get("PRUNEBENCH_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass
class BenchRecord:
    implementation: str
    shape: tuple[int, int, int, int]
    repetitions: int
    seconds: float  # median wall time per pass, warm-up excluded

    @property
    def fps(self) -> float:
        return 1.0 / max(self.seconds, 1e-12)


def bench_argmax(shape, implementations=("serial", "parallel"), repetitions: int = 5,
                 workers: int | None = None, seed: int = 0) -> list[BenchRecord]:
    """Time each implementation on one random score tensor.

    The first repetition is a warm-up and is discarded; the median of the rest
    is reported. Raises if any implementation disagrees with the serial scan.
    """
    if repetitions < 3:
        raise BenchConfigError("repetitions must be >= 3 (first run is discarded)")
    workers = default_workers() if workers is None else workers
    runners = {
        "serial": argmax_serial,
        "parallel": lambda s: argmax_parallel(s, workers),
    }
    unknown = [name for name in implementations if name not in runners]
    if unknown:
        raise BenchConfigError(f"unknown implementation(s): {', '.join(unknown)}")
    rng = np.random.default_rng(seed)
    scores = rng.standard_normal(tuple(shape), dtype=np.float32)
    reference = argmax_serial(scores)
    records = []
    for name in implementations:
        fn = runners[name]
        times = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            labels = fn(scores)
            times.append(time.perf_counter() - t0)
            if not np.array_equal(labels, reference):
                raise AssertionError(f"{name} argmax disagrees with the serial scan")
        records.append(BenchRecord(name, tuple(shape), repetitions, statistics.median(times[1:])))
    return records


def format_bench(records: list[BenchRecord]) -> str:
    lines = [f"{'implementation':<16}{'shape':<22}{'reps':>6}{'median ms':>12}{'fps':>12}"]
    for r in records:
        shape = "x".join(map(str, r.shape))
        lines.append(f"{r.implementation:<16}{shape:<22}{r.repetitions:>6}{r.seconds * 1e3:>12.3f}{r.fps:>12.1f}")
    return "\n".join(lines)


def bench_csv(records: list[BenchRecord]) -> str:
    rows = ["implementation,shape,repetitions,median_seconds,fps"]
    for r in records:
        rows.append(f"{r.implementation},{'x'.join(map(str, r.shape))},{r.repetitions},{r.seconds:.9f},{r.fps:.3f}")
    return "\n".join(rows) + "\n"
