"""Decomposition functions from Jacobian bounds, and the combined bound that
takes the tighter of the decomposition and affine-abstraction enclosures."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .abstraction import AffineAbstraction, solve_parallel_abstraction
from .interval import IntervalMatrix, IntervalVector, affine_image


class JacobianBounds(IntervalMatrix):
    """Entrywise bounds ``lo[i, j] <= d q_i / d x_j <= hi[i, j]`` over a domain."""


@dataclass(frozen=True)
class DecompositionSpec:
    """``q_d(x, y) = q(z) + C (x - y)`` where row ``i`` reads ``z_j = y_j``
    when ``anchor_y[i, j]`` and ``z_j = x_j`` otherwise."""

    C: np.ndarray
    anchor_y: np.ndarray
    # distinct anchor rows and, per output row, which of them it uses
    _patterns: np.ndarray = field(init=False, repr=False, compare=False)
    _pattern_of_row: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        anchor = np.atleast_2d(np.asarray(self.anchor_y, dtype=bool))
        if C.shape != anchor.shape:
            raise ValueError("C and anchor_y must have the same shape")
        if np.any(C < 0):
            raise ValueError("decomposition correction must be nonnegative")
        patterns, inverse = np.unique(anchor, axis=0, return_inverse=True)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "anchor_y", anchor)
        object.__setattr__(self, "_patterns", patterns)
        object.__setattr__(self, "_pattern_of_row", np.asarray(inverse).reshape(-1))


def build_decomposition(f: Callable | None, jb: IntervalMatrix) -> DecompositionSpec:
    """Bounded-Jacobian decomposition: increasing entries anchor at ``x``,
    decreasing ones at ``y``, sign-indefinite ones anchor at ``x`` with the
    correction ``max(-lo, 0)``."""
    lo, hi = jb.lo, jb.hi
    increasing = lo >= 0
    decreasing = (hi <= 0) & ~increasing
    indefinite = ~(increasing | decreasing)
    C = np.where(indefinite, np.maximum(-lo, 0.0), 0.0)
    return DecompositionSpec(C, decreasing)


def eval_decomposition(f, spec: DecompositionSpec, x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.empty(spec.C.shape[0])
    for p, pattern in enumerate(spec._patterns):
        z = np.where(pattern, y, x)
        rows = spec._pattern_of_row == p
        out[rows] = np.asarray(f(z[None, :]), dtype=float).reshape(-1)[rows]
    return out + spec.C @ (x - y)


def embed_pair(f, spec: DecompositionSpec, lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """``(f_d(lo, hi), f_d(hi, lo))`` with one batched call of ``f`` per anchor pattern."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    m = spec.C.shape[0]
    out_lo = np.empty(m)
    out_hi = np.empty(m)
    for p, pattern in enumerate(spec._patterns):
        Z = np.stack([np.where(pattern, hi, lo), np.where(pattern, lo, hi)])
        vals = np.asarray(f(Z), dtype=float)
        rows = spec._pattern_of_row == p
        out_lo[rows] = vals[0, rows]
        out_hi[rows] = vals[1, rows]
    corr = spec.C @ (hi - lo)
    return out_lo - corr, out_hi + corr


def embed_bound(f, spec: DecompositionSpec, box: IntervalVector) -> IntervalVector:
    return IntervalVector(*embed_pair(f, spec, box.lo, box.hi))


def tight_bound(f, spec: DecompositionSpec, abs_: AffineAbstraction, box: IntervalVector) -> IntervalVector:
    emb = embed_bound(f, spec, box)
    a_lo, a_hi = affine_image(abs_.A, box.lo, box.hi, abs_.e_lo, abs_.e_hi)
    return IntervalVector(np.maximum(emb.lo, a_lo), np.minimum(emb.hi, a_hi))


def jacobian_bounds_from_samples(jac, domain: IntervalVector, samples, sigma=0.0) -> JacobianBounds:
    """Bounds on the partials from a zero-slope abstraction over ``samples``.

    ``jac`` maps ``(N, n)`` points to ``(N, m, n)`` Jacobians; ``sigma`` is the
    sampling margin (e.g. a Lipschitz constant of the partials times the
    sample dispersion).
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    J = np.asarray(jac(samples), dtype=float)
    N, m, n = J.shape
    flat = J.reshape(N, m * n)
    zero = np.zeros((m * n, domain.dim))
    abs_ = solve_parallel_abstraction(
        lambda X: flat, lambda X: flat, domain, samples, sigma, slope_bounds=(zero, zero)
    )
    return JacobianBounds(abs_.e_lo.reshape(m, n), abs_.e_hi.reshape(m, n))
