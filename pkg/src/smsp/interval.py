"""Interval vectors/matrices and sign-split linear algebra."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROWSUPP_TOL = 1e-9


@dataclass(frozen=True)
class IntervalVector:
    """Elementwise box ``[lo, hi]``.

    Emptiness (some ``lo > hi``) is representable on purpose: intersections
    carry it as a flag instead of raising.
    """

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(-1)
        hi = np.asarray(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError(f"bound shapes differ: {lo.shape} vs {hi.shape}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def point(cls, x) -> "IntervalVector":
        x = np.asarray(x, dtype=float)
        return cls(x, x.copy())

    @classmethod
    def symmetric(cls, radius) -> "IntervalVector":
        r = np.asarray(radius, dtype=float)
        return cls(-r, r)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.hi + self.lo)

    @property
    def is_empty(self) -> bool:
        return bool(np.any(self.lo > self.hi))

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def contains_box(self, other: "IntervalVector", tol: float = 0.0) -> bool:
        return bool(np.all(other.lo >= self.lo - tol) and np.all(other.hi <= self.hi + tol))

    def concat(self, other: "IntervalVector") -> "IntervalVector":
        return IntervalVector(np.concatenate([self.lo, other.lo]), np.concatenate([self.hi, other.hi]))

    def __getitem__(self, idx) -> "IntervalVector":
        return IntervalVector(np.atleast_1d(self.lo[idx]), np.atleast_1d(self.hi[idx]))

    def inflate(self, amount) -> "IntervalVector":
        return IntervalVector(self.lo - amount, self.hi + amount)


@dataclass(frozen=True)
class IntervalMatrix:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_2d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_2d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape:
            raise ValueError(f"bound shapes differ: {lo.shape} vs {hi.shape}")
        if np.any(lo > hi):
            raise ValueError("interval matrix requires lo <= hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def point(cls, M) -> "IntervalMatrix":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return cls(M, M.copy())

    @classmethod
    def from_vector(cls, v: IntervalVector) -> "IntervalMatrix":
        return cls(v.lo[:, None], v.hi[:, None])

    @property
    def shape(self):
        return self.lo.shape

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)


def sign_split(M):
    """Return ``(M+, M-, |M|)`` with ``M = M+ - M-``."""
    M = np.asarray(M, dtype=float)
    Mplus = np.maximum(M, 0.0)
    Mminus = Mplus - M
    return Mplus, Mminus, Mplus + Mminus


def rowsupp(M, tol: float = ROWSUPP_TOL) -> np.ndarray:
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return (np.abs(M) > tol).any(axis=1).astype(int)


def _check_inner(p: int, q: int):
    if p != q:
        raise ValueError(f"inner dimensions disagree: {p} vs {q}")


def mul_const_interval(A, B: IntervalMatrix) -> IntervalMatrix:
    """Enclosure of ``A @ b`` for every point ``b`` in ``B``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    _check_inner(A.shape[1], B.shape[0])
    Ap, Am, _ = sign_split(A)
    return IntervalMatrix(Ap @ B.lo - Am @ B.hi, Ap @ B.hi - Am @ B.lo)


def mul_interval_interval(A: IntervalMatrix, B: IntervalMatrix) -> IntervalMatrix:
    _check_inner(A.shape[1], B.shape[0])
    alo_p, alo_m, _ = sign_split(A.lo)
    ahi_p, ahi_m, _ = sign_split(A.hi)
    blo_p, blo_m, _ = sign_split(B.lo)
    bhi_p, bhi_m, _ = sign_split(B.hi)
    lower = alo_p @ blo_p - ahi_p @ blo_m - alo_m @ bhi_p + ahi_m @ bhi_m
    upper = ahi_p @ bhi_p - alo_p @ bhi_m - ahi_m @ blo_p + alo_m @ blo_m
    return IntervalMatrix(lower, upper)


def affine_image(A, lo, hi, offset_lo=0.0, offset_hi=0.0):
    """Bounds of ``A x + e`` for ``x`` in ``[lo, hi]`` (raw arrays, hot path)."""
    Ap = np.maximum(A, 0.0)
    Am = Ap - A
    return Ap @ lo - Am @ hi + offset_lo, Ap @ hi - Am @ lo + offset_hi


def intersect(a: IntervalVector, b: IntervalVector) -> IntervalVector:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return IntervalVector(np.maximum(a.lo, b.lo), np.minimum(a.hi, b.hi))


def pinv(M, tol: float = 1e-12) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD; singular values below
    ``tol * s_max`` are truncated."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return np.zeros((M.shape[1], M.shape[0]))
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    cutoff = tol * (s[0] if s.size else 0.0)
    keep = s > cutoff
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (Vt.T * s_inv) @ U.T


def block_form(J) -> np.ndarray:
    """``[[J+, -J-], [-J-, J+]]`` acting on stacked ``[upper; lower]`` bounds."""
    Jp, Jm, _ = sign_split(J)
    return np.block([[Jp, -Jm], [-Jm, Jp]])
