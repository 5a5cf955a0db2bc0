from __future__ import annotations

from typing import Sequence, TypeVar

import numpy as np

from ..errors import TooFewRecords

T = TypeVar("T")


def split(records: Sequence[T], train_fraction: float = 0.8, seed: int = 0, key=None) -> tuple[list[T], list[T]]:
    """Deterministic stratified train/test split.

    The global test size is ``n - round(train_fraction * n)``. Each class
    first gets ``floor(share)`` test items, the remainder goes to classes with
    the largest fractional share. Classes of two or more members always keep
    at least one training item; classes of five or more get at least one test
    item. Input order is preserved inside each partition.
    """
    n = len(records)
    if n < 2:
        raise TooFewRecords("need at least 2 records to split")
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    key = key or (lambda r: r.code.raw)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    n_test = n - int(round(train_fraction * n))
    n_test = min(max(n_test, 1), n - 1)

    classes: dict = {}
    for i, r in enumerate(records):
        classes.setdefault(key(r), []).append(i)
    labels = sorted(classes, key=str)
    test_frac = 1.0 - train_fraction
    share = {c: len(classes[c]) * test_frac for c in labels}
    quota = {c: int(np.floor(share[c] + 1e-9)) for c in labels}
    for c in labels:
        size = len(classes[c])
        if size >= 2:
            quota[c] = min(quota[c], size - 1)
    remaining = n_test - sum(quota.values())
    jitter = rng.random(len(labels))
    order = sorted(range(len(labels)), key=lambda j: (-(share[labels[j]] - quota[labels[j]]), jitter[j]))

    def capacity(c):
        size = len(classes[c])
        return (size - 1 if size >= 2 else 1) - quota[c]

    while remaining > 0:
        progressed = False
        for j in order:
            c = labels[j]
            if remaining and capacity(c) > 0:
                quota[c] += 1
                remaining -= 1
                progressed = True
        if not progressed:
            break
    while remaining < 0:
        for j in reversed(order):
            c = labels[j]
            floor = 1 if len(classes[c]) >= 5 else 0
            if remaining < 0 and quota[c] > floor:
                quota[c] -= 1
                remaining += 1

    test_idx: set[int] = set()
    for c in labels:
        members = classes[c]
        picked = rng.permutation(len(members))[: quota[c]]
        test_idx.update(members[p] for p in picked)
    train = [r for i, r in enumerate(records) if i not in test_idx]
    test = [r for i, r in enumerate(records) if i in test_idx]
    return train, test
