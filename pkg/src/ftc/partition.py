"""Consecutive-run partitions of index sets and the reduced index set.

Indices are 1-based throughout: an index set lives inside [1, K].  The
consecutive partition splits a set into maximal runs of consecutive
integers.  The reduced index set keeps every tuned index plus the two
endpoints of each untuned run, dropping run interiors; a one-dimensional
interpolant that is affine across each dropped interior loses nothing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import FrozenSet, List, Sequence, Set, Tuple


@dataclass(frozen=True)
class ConsecutivePartition:
    """Maximal runs of consecutive integers covering an index set."""

    blocks: Tuple[Tuple[int, ...], ...]

    @property
    def cardinality(self) -> int:
        return len(self.blocks)

    def block_sizes(self) -> List[int]:
        return [len(b) for b in self.blocks]

    def interior_total(self) -> int:
        """Total count of removable interiors: sum of max(|P| - 2, 0)."""
        return sum(max(len(b) - 2, 0) for b in self.blocks)


def consecutive_partition(indices: Sequence[int] | Set[int], K: int) -> ConsecutivePartition:
    """Partition an index set within [1, K] into maximal consecutive runs."""
    idx = sorted(set(indices))
    if idx and (idx[0] < 1 or idx[-1] > K):
        raise ValueError("indices must lie in [1, K]")
    blocks: List[Tuple[int, ...]] = []
    run: List[int] = []
    for i in idx:
        if run and i == run[-1] + 1:
            run.append(i)
        else:
            if run:
                blocks.append(tuple(run))
            run = [i]
    if run:
        blocks.append(tuple(run))
    return ConsecutivePartition(tuple(blocks))


def partition_cardinality_bounds(size: int, K: int) -> Tuple[int, int]:
    """|P(I)| is at most min(|I|, K - |I| + 1); returns (1 if size else 0, that cap)."""
    if size == 0:
        return (0, 0)
    return (1, min(size, K - size + 1))


@dataclass(frozen=True)
class ReducedIndexSet:
    """Union of a tuned set with the endpoints of each untuned run."""

    K: int
    tuned: FrozenSet[int]
    kept: Tuple[int, ...]          # sorted, 1-based
    removed: Tuple[int, ...]       # sorted untuned-run interiors
    untuned_partition: ConsecutivePartition

    @property
    def size(self) -> int:
        return len(self.kept)

    def size_bound(self) -> int:
        return min(3 * len(self.tuned) + 2, self.K)


def j_size_bound(K: int, N: int) -> int:
    """Cap on the reduced index set size: min(3N + 2, K)."""
    if not (0 <= N <= K):
        raise ValueError("need 0 <= N <= K")
    return min(3 * N + 2, K)


def reduced_index_set(K: int, tuned: Sequence[int] | Set[int]) -> ReducedIndexSet:
    """Keep tuned indices and untuned-run endpoints; drop run interiors.

    |kept| = K - sum over untuned runs of max(|run| - 2, 0), and is always
    at most min(3N + 2, K).
    """
    T = frozenset(tuned)
    if any(i < 1 or i > K for i in T):
        raise ValueError("tuned indices must lie in [1, K]")
    untuned = [i for i in range(1, K + 1) if i not in T]
    part = consecutive_partition(untuned, K)
    removed: List[int] = []
    for block in part.blocks:
        removed.extend(block[1:-1])
    removed_set = set(removed)
    kept = tuple(i for i in range(1, K + 1) if i not in removed_set)
    return ReducedIndexSet(K, T, kept, tuple(sorted(removed)), part)
