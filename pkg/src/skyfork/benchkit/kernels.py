"""Compute kernels shared by local runs and offloaded task bodies."""

from __future__ import annotations

import random


def pi_estimate(samples: int, seed: int) -> float:
    """Monte-Carlo estimate of pi from ``samples`` points in the unit square.

    Deterministic for a given seed: a fresh ``random.Random(seed)`` is used,
    so a worker computes the same value wherever it runs.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rand = random.Random(seed).random
    hits = 0
    for _ in range(samples):
        x = rand()
        y = rand()
        if x * x + y * y <= 1.0:
            hits += 1
    return 4.0 * hits / samples


def split_samples(n: int, workers: int) -> list[int]:
    """Spread ``n`` samples over ``workers``; the first ``n % workers`` get one extra."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    base, extra = divmod(n, workers)
    return [base + 1 if i < extra else base for i in range(workers)]


def combine_estimates(estimates, samples) -> float:
    """Sample-weighted mean of per-worker estimates."""
    total = sum(samples)
    return sum(e * s for e, s in zip(estimates, samples)) / total


# -- N-Queens ----------------------------------------------------------------
#
# A placement is a tuple of column bitmasks, one per filled row from row 0.
# Diagonal masks shift by one column per row: ``left`` towards higher
# columns, ``right`` towards lower ones.

def _board_mask(board_n: int) -> int:
    if board_n < 1 or board_n > 64:
        raise ValueError(f"board size must be in 1..64, got {board_n}")
    return (1 << board_n) - 1


def _replay(board_n: int, prefix) -> tuple[int, int, int]:
    """Attack state after placing ``prefix``; raises if it is not a valid placement."""
    full = _board_mask(board_n)
    if len(prefix) > board_n:
        raise ValueError(f"prefix has {len(prefix)} rows for a {board_n}x{board_n} board")
    cols = left = right = 0
    for row, bit in enumerate(prefix):
        if bit <= 0 or bit & (bit - 1) or bit & ~full:
            raise ValueError(f"row {row}: {bit:#x} is not a single column of the board")
        if bit & (cols | left | right):
            raise ValueError(f"row {row}: queen at column {bit.bit_length() - 1} is attacked")
        cols |= bit
        left = ((left | bit) << 1) & full
        right = (right | bit) >> 1
    return cols, left, right


def enumerate_prefixes(board_n: int, prefix_len: int) -> list[tuple[int, ...]]:
    """All non-attacking placements of the first ``prefix_len`` rows."""
    full = _board_mask(board_n)
    if not 0 <= prefix_len <= board_n:
        raise ValueError(f"prefix length must be in 0..{board_n}, got {prefix_len}")
    out: list[tuple[int, ...]] = []

    def extend(placed, cols, left, right):
        if len(placed) == prefix_len:
            out.append(tuple(placed))
            return
        free = full & ~(cols | left | right)
        while free:
            bit = free & -free
            free ^= bit
            placed.append(bit)
            extend(placed, cols | bit, ((left | bit) << 1) & full, (right | bit) >> 1)
            placed.pop()

    extend([], 0, 0, 0)
    return out


def count_solutions_from_prefix(board_n: int, prefix) -> int:
    """Number of complete boards extending ``prefix`` (bitboard backtracking)."""
    full = _board_mask(board_n)
    cols, left, right = _replay(board_n, prefix)

    def solve(cols, left, right):
        if cols == full:
            return 1
        count = 0
        free = full & ~(cols | left | right)
        while free:
            bit = free & -free
            free ^= bit
            count += solve(cols | bit, ((left | bit) << 1) & full, (right | bit) >> 1)
        return count

    return solve(cols, left, right)


def count_solutions(board_n: int) -> int:
    return count_solutions_from_prefix(board_n, ())
