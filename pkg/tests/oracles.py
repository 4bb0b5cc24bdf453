"""Independent reference implementations used to check the package."""

from fractions import Fraction


def queens_count(n, first_rows=()):
    """Array backtracker with per-column and per-diagonal flags.

    Counts the boards whose first rows hold queens at the columns in
    ``first_rows``; 0 if those rows already attack each other.
    """
    col = [False] * n
    diag = [False] * (2 * n)  # row + c
    anti = [False] * (2 * n)  # row - c + n

    def put(row, c, flag):
        col[c] = diag[row + c] = anti[row - c + n] = flag

    for row, c in enumerate(first_rows):
        if col[c] or diag[row + c] or anti[row - c + n]:
            return 0
        put(row, c, True)

    def place(row):
        if row == n:
            return 1
        total = 0
        for c in range(n):
            if not (col[c] or diag[row + c] or anti[row - c + n]):
                put(row, c, True)
                total += place(row + 1)
                put(row, c, False)
        return total

    return place(len(first_rows))


def queens_prefixes(n, p):
    """Valid first-p-row placements as column-index tuples, by brute force over all n**p tuples."""
    from itertools import product

    out = []
    for combo in product(range(n), repeat=p):
        ok = all(combo[i] != combo[j] and abs(combo[i] - combo[j]) != j - i
                 for i in range(p) for j in range(i + 1, p))
        if ok:
            out.append(combo)
    return out


def exact_compute_cost(memory_mb, billed_ms, gb_second_rate):
    """Memory-time charge in exact rational arithmetic."""
    return (Fraction(memory_mb) / 1024) * (Fraction(billed_ms) / 1000) * Fraction(gb_second_rate)


def le_uint(value, size):
    return value.to_bytes(size, "little", signed=False)


def le_int(value, size):
    return value.to_bytes(size, "little", signed=True)
