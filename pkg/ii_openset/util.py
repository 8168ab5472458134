import zlib
from itertools import islice

import numpy as np


def batcher(iterable, batch_size):
    iterator = iter(iterable)
    while batch := list(islice(iterator, batch_size)):
        yield batch


def row_batches(n_rows, batch_size):
    """Yield ``slice`` objects covering ``range(n_rows)`` in order."""
    for start in range(0, n_rows, batch_size):
        yield slice(start, min(start + batch_size, n_rows))


def sub_seed(seed, name):
    """
    Derive a named child seed (``split``, ``init``, ``batching``, ``dropout``,
    ``blobs``) from the experiment seed. Stable across runs and platforms.
    """
    sequence = np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def sub_rng(seed, name):
    return np.random.default_rng(sub_seed(seed, name))


def parse_seeds(text):
    """
    Seeds from ``"3"``, ``"0-4"`` or comma-joined parts like ``"0-2,7"``, in
    order and without repeats.

    :raise ValueError: on an empty, descending or non-integer part.
    """
    seeds = []
    for part in text.split(","):
        first, sep, last = part.strip().partition("-")
        start = int(first)
        stop = int(last) if sep else start
        if stop < start:
            raise ValueError(f"descending seed range {part!r}")
        seeds.extend(seed for seed in range(start, stop + 1) if seed not in seeds)
    return seeds
