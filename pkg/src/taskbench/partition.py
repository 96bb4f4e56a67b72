"""Space-filling-curve ordering, contiguous splits, skeleton/enclave classes.

The grid is ordered along a Peano-style curve (base case: column serpentine
on 3 x 3), partitions are contiguous curve segments, and a patch is a
skeleton iff one of its four periodic neighbors lives in another partition.
"""

import csv
import math

from .fv import DIRECTIONS, neighbor

SKELETON = "skeleton"
ENCLAVE = "enclave"

MAX_ILL_PARTITIONS = 20


class Partition:
    """Contiguous index range [start, stop) into the SFC order."""

    __slots__ = ("id", "start", "stop")

    def __init__(self, pid, start, stop):
        if stop <= start:
            raise ValueError("partition must contain at least one patch")
        self.id = pid
        self.start = start
        self.stop = stop

    @property
    def count(self):
        return self.stop - self.start

    def indices(self):
        return range(self.start, self.stop)

    def __repr__(self):
        return f"Partition(id={self.id}, start={self.start}, stop={self.stop})"


def _peano(k, flip_x, flip_y, base_x, base_y, out):
    if k == 0:
        out.append((base_x, base_y))
        return
    sub = 3 ** (k - 1)
    for bx in range(3):
        by_range = range(3) if bx % 2 == 0 else range(2, -1, -1)
        for by in by_range:
            px = (2 - bx) if flip_x else bx
            py = (2 - by) if flip_y else by
            _peano(k - 1,
                   flip_x ^ (by % 2 == 1),
                   flip_y ^ (bx % 2 == 1),
                   base_x + px * sub,
                   base_y + py * sub,
                   out)


def sfc_order(m):
    """Peano-style order of all (ix, iy) grid positions; M must be 3**k.

    Consecutive positions are face-adjacent on the (non-periodic) grid.
    """
    k = round(math.log(m, 3)) if m > 1 else 0
    if 3 ** k != m:
        raise ValueError(f"grid side must be a power of 3, got {m}")
    out = []
    _peano(k, False, False, 0, 0, out)
    return out


def split_balanced(order, p):
    """Contiguous chunks whose sizes differ by at most one."""
    total = len(order)
    if not 1 <= p <= total:
        raise ValueError(f"partition count must lie in [1, {total}], got {p}")
    q, r = divmod(total, p)
    partitions = []
    start = 0
    for pid in range(p):
        size = q + 1 if pid < r else q
        partitions.append(Partition(pid, start, start + size))
        start += size
    return partitions


def split_ill_balanced(order, p):
    """Iterative halving: each partition takes ceil(remaining / 2).

    Stops when the range is exhausted or min(p, 20) partitions exist; the
    last partition absorbs any remainder.
    """
    if p < 2:
        raise ValueError(f"ill-balanced split needs at least 2 partitions, got {p}")
    total = len(order)
    cap = min(p, MAX_ILL_PARTITIONS)
    partitions = []
    start = 0
    remaining = total
    while remaining > 0:
        if len(partitions) == cap - 1:
            size = remaining
        else:
            size = (remaining + 1) // 2
        partitions.append(Partition(len(partitions), start, start + size))
        start += size
        remaining -= size
    return partitions


def owners_by_patch(order, partitions, m):
    """Flat grid-index -> partition id."""
    owners = [0] * (m * m)
    for part in partitions:
        for k in part.indices():
            ix, iy = order[k]
            owners[iy * m + ix] = part.id
    return owners


def classify(order, partitions, m):
    """Per flat grid index: SKELETON iff some periodic neighbor is foreign."""
    owners = owners_by_patch(order, partitions, m)
    classes = [ENCLAVE] * (m * m)
    for iy in range(m):
        for ix in range(m):
            idx = iy * m + ix
            mine = owners[idx]
            for d in DIRECTIONS:
                nx, ny = neighbor((ix, iy), d, m)
                if owners[ny * m + nx] != mine:
                    classes[idx] = SKELETON
                    break
    return classes


def split_for_mode(order, balance, p):
    if balance == "well":
        return split_balanced(order, p)
    if balance == "ill":
        return split_ill_balanced(order, p)
    raise ValueError(f"unknown balance mode {balance!r}")


def write_layout_csv(path, m, order, partitions, classes):
    """Dump the partition layout for inspection."""
    owners = owners_by_patch(order, partitions, m)
    sfc_index = {pos: k for k, pos in enumerate(order)}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ix", "iy", "sfc_index", "partition_id", "class"])
        for iy in range(m):
            for ix in range(m):
                idx = iy * m + ix
                writer.writerow([ix, iy, sfc_index[(ix, iy)], owners[idx], classes[idx]])
