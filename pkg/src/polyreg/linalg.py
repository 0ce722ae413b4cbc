"""Dense linear algebra over F_p on int64 numpy arrays.

Entries stay in [0, p) and p <= 2^16, so a product of two entries fits in
int64 with plenty of headroom.
"""
from __future__ import annotations

import numpy as np


def rref(M, p: int):
    """Reduced row echelon form mod p. Returns (R, pivot_columns)."""
    A = np.array(M, dtype=np.int64) % p
    if A.ndim != 2:
        raise ValueError("expected a matrix")
    rows, cols = A.shape
    pivots = []
    r = 0
    for c in range(cols):
        if r >= rows:
            break
        nz = np.nonzero(A[r:, c])[0]
        if nz.size == 0:
            continue
        piv = r + int(nz[0])
        if piv != r:
            A[[r, piv]] = A[[piv, r]]
        inv = pow(int(A[r, c]), p - 2, p)
        A[r] = (A[r] * inv) % p
        col = A[:, c].copy()
        col[r] = 0
        hit = np.nonzero(col)[0]
        if hit.size:
            A[hit] = (A[hit] - np.outer(col[hit], A[r])) % p
        pivots.append(c)
        r += 1
    return A, pivots


def rank(M, p: int) -> int:
    M = np.asarray(M)
    if M.size == 0:
        return 0
    return len(rref(M, p)[1])


def nullspace(M, p: int) -> list[np.ndarray]:
    """Basis of {v : M v = 0 mod p}, one vector per free column."""
    M = np.asarray(M, dtype=np.int64)
    cols = M.shape[1]
    if M.shape[0] == 0:
        return [np.eye(cols, dtype=np.int64)[i] for i in range(cols)]
    R, pivots = rref(M, p)
    free = [c for c in range(cols) if c not in set(pivots)]
    basis = []
    for f in free:
        v = np.zeros(cols, dtype=np.int64)
        v[f] = 1
        for i, pc in enumerate(pivots):
            v[pc] = (-R[i, f]) % p
        basis.append(v)
    return basis


def solve(A, b, p: int):
    """One solution of A x = b mod p, or None when the system is inconsistent."""
    A = np.asarray(A, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64).reshape(-1, 1)
    R, pivots = rref(np.hstack([A, b]), p)
    ncols = A.shape[1]
    if pivots and pivots[-1] == ncols:
        return None
    x = np.zeros(ncols, dtype=np.int64)
    for i, pc in enumerate(pivots):
        x[pc] = R[i, ncols]
    return x


class IncrementalBasis:
    """Greedy row basis mod p, filled one vector at a time.

    ``add`` reports whether the vector was independent of everything kept so
    far. Used to thin out long lists of derivative polynomials.
    """

    def __init__(self, p: int, width: int):
        self.p = p
        self.width = width
        self._rows: dict[int, np.ndarray] = {}  # pivot column -> reduced row

    def reduce(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.int64) % self.p
        for c, row in self._rows.items():
            if v[c]:
                v = (v - v[c] * row) % self.p
        return v

    def add(self, v) -> bool:
        v = self.reduce(v)
        nz = np.nonzero(v)[0]
        if nz.size == 0:
            return False
        c = int(nz[0])
        v = (v * pow(int(v[c]), self.p - 2, self.p)) % self.p
        for k, row in self._rows.items():
            if row[c]:
                self._rows[k] = (row - row[c] * v) % self.p
        self._rows[c] = v
        return True

    def __len__(self):
        return len(self._rows)
