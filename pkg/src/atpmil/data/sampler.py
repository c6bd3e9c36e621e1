"""Batch construction: ATP-bin balanced sampling and plain shuffling."""

from __future__ import annotations

import math
from collections import defaultdict
from typing import Iterator, Sequence

import numpy as np


def bin_index(atp: float, r_bin: float) -> int:
    return int(math.floor(atp / r_bin))


def group_by_bin(atp: Sequence[float], r_bin: float) -> dict[int, np.ndarray]:
    bins: dict[int, list[int]] = defaultdict(list)
    for i, v in enumerate(atp):
        bins[bin_index(v, r_bin)].append(i)
    return {b: np.asarray(idx) for b, idx in sorted(bins.items())}


def balanced_batches(atp: Sequence[float], batch_size: int, r_bin: float,
                     seed: int = 0) -> Iterator[list[int]]:
    """Endless stream of index batches with equal pressure on every non-empty bin.

    For each batch the non-empty bins are shuffled and visited round-robin;
    each visit draws one sample uniformly (with replacement) from that bin.
    """
    if len(atp) == 0:
        raise ValueError("cannot sample from an empty manifest")
    rng = np.random.default_rng(seed)
    bins = list(group_by_bin(atp, r_bin).values())
    while True:
        order = rng.permutation(len(bins))
        batch = []
        for k in range(batch_size):
            members = bins[order[k % len(bins)]]
            batch.append(int(members[rng.integers(len(members))]))
        yield batch


def random_batches(n: int, batch_size: int, seed: int = 0) -> Iterator[list[int]]:
    """Endless stream of batches from successive random permutations (no balancing)."""
    if n == 0:
        raise ValueError("cannot sample from an empty manifest")
    rng = np.random.default_rng(seed)
    pending: list[int] = []
    while True:
        while len(pending) < batch_size:
            pending.extend(int(i) for i in rng.permutation(n))
        batch, pending = pending[:batch_size], pending[batch_size:]
        yield batch


def stratified_split(atp: Sequence[float], fraction: float, r_bin: float,
                     seed: int = 0) -> tuple[list[int], list[int]]:
    """Hold out roughly ``fraction`` of each ATP bin; returns ``(train, holdout)``."""
    if len(atp) < 2:
        raise ValueError("need at least 2 samples to split off a holdout")
    rng = np.random.default_rng(seed)
    train, hold = [], []
    for members in group_by_bin(atp, r_bin).values():
        members = rng.permutation(members)
        k = int(round(fraction * len(members)))
        if len(members) > 1:
            k = min(max(k, 0), len(members) - 1)
        else:
            k = 0
        hold.extend(int(i) for i in members[:k])
        train.extend(int(i) for i in members[k:])
    if not hold:  # tiny or single-bin sets: fall back to one random sample
        i = train.pop(int(rng.integers(len(train))))
        hold.append(i)
    return sorted(train), sorted(hold)
