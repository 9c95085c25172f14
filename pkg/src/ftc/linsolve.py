"""Linear solves in two arithmetics.

Float systems go through numpy (least-norm particular solution via lstsq,
null space via SVD).  Exact systems use fraction-preserving Gaussian
elimination with partial pivoting by magnitude; the particular solution sets
free variables to zero and the null-space basis has one vector per free
variable.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence

import numpy as np

from .numerics import Scalar, to_exact


@dataclass
class LinearSolveResult:
    rank: int
    particular: Optional[List[Scalar]]   # None when inconsistent
    nullspace: List[List[Scalar]]        # basis vectors, possibly empty

    @property
    def consistent(self) -> bool:
        return self.particular is not None


def solve_exact(
    A: Sequence[Sequence[Scalar]],
    b: Optional[Sequence[Scalar]] = None,
    ordered_pivots: bool = False,
) -> LinearSolveResult:
    """ordered_pivots picks the first usable pivot row instead of the largest;
    exactness never needs magnitude pivoting, and honoring the caller's row
    order preserves sparsity when early rows have small support."""
    rows = len(A)
    cols = len(A[0]) if rows else 0
    M = [[to_exact(v) for v in row] for row in A]
    rhs = [to_exact(v) for v in b] if b is not None else [Fraction(0)] * rows

    pivot_cols: List[int] = []
    r = 0
    for c in range(cols):
        pivot = None
        best = Fraction(0)
        for i in range(r, rows):
            mag = abs(M[i][c])
            if mag > best:
                best = mag
                pivot = i
                if ordered_pivots:
                    break
        if pivot is None:
            continue
        M[r], M[pivot] = M[pivot], M[r]
        rhs[r], rhs[pivot] = rhs[pivot], rhs[r]
        inv = 1 / M[r][c]
        if inv != 1:
            M[r] = [v * inv if v else v for v in M[r]]
            rhs[r] = rhs[r] * inv
        # touch only the pivot row's support; sparse pivot rows then cost
        # O(support) per eliminated row instead of O(cols)
        prow = M[r]
        nz = [k for k, v in enumerate(prow) if v]
        for i in range(rows):
            if i != r and M[i][c] != 0:
                f = M[i][c]
                row = M[i]
                for k in nz:
                    row[k] = row[k] - f * prow[k]
                rhs[i] = rhs[i] - f * rhs[r]
        pivot_cols.append(c)
        r += 1
        if r == rows:
            break

    rank = r
    for i in range(rank, rows):
        if rhs[i] != 0:
            return LinearSolveResult(rank, None, _exact_nullspace(M, pivot_cols, cols, rank))

    particular = [Fraction(0)] * cols
    for i, c in enumerate(pivot_cols):
        particular[c] = rhs[i]
    return LinearSolveResult(rank, particular, _exact_nullspace(M, pivot_cols, cols, rank))


def _exact_nullspace(
    M: List[List[Fraction]], pivot_cols: List[int], cols: int, rank: int
) -> List[List[Fraction]]:
    free = [c for c in range(cols) if c not in pivot_cols]
    basis = []
    for fc in free:
        v = [Fraction(0)] * cols
        v[fc] = Fraction(1)
        for i, pc in enumerate(pivot_cols):
            v[pc] = -M[i][fc]
        basis.append(v)
    return basis


def solve_float(
    A: Sequence[Sequence[float]],
    b: Optional[Sequence[float]] = None,
    rcond: float = 1e-10,
) -> LinearSolveResult:
    M = np.asarray(A, dtype=float)
    rows, cols = M.shape
    rhs = np.asarray(b, dtype=float) if b is not None else np.zeros(rows)

    U, s, Vt = np.linalg.svd(M, full_matrices=True)
    if s.size:
        tol = rcond * max(rows, cols) * s[0]
        rank = int(np.sum(s > tol))
    else:
        rank = 0
    nullspace = [list(map(float, Vt[i])) for i in range(rank, cols)]

    x, *_ = np.linalg.lstsq(M, rhs, rcond=rcond)
    residual = M @ x - rhs
    scale = max(1.0, float(np.max(np.abs(rhs))) if rows else 1.0)
    if rows and float(np.max(np.abs(residual))) > 1e-7 * scale:
        return LinearSolveResult(rank, None, nullspace)
    return LinearSolveResult(rank, list(map(float, x)), nullspace)


def solve(
    A: Sequence[Sequence[Scalar]],
    b: Optional[Sequence[Scalar]] = None,
    exact: bool = False,
) -> LinearSolveResult:
    if exact:
        return solve_exact(A, b)
    return solve_float(A, b)
