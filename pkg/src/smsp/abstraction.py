"""Parallel affine abstractions of vector fields over boxes.

An abstraction ``(A, e_lo, e_hi)`` of a function pair ``psi_lo <= psi_hi``
on a box satisfies ``A x + e_lo <= psi_lo(x) <= psi_hi(x) <= A x + e_hi``
for every ``x`` in the box.  It is computed by an LP over sample points,
with a margin ``sigma`` that makes sample-wise validity imply box-wise
validity.

All functions passed here are batch-evaluated: they take an ``(N, n)``
array and return ``(N, m)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import sparse

from .interval import IntervalVector, affine_image
from .lp import LpProblem, LpStatus, lp_solve

MAX_VERTEX_DIM = 12

VectorField = Callable[[np.ndarray], np.ndarray]


class AbstractionInfeasible(RuntimeError):
    """The sampled LP has no solution (sigma too large or containment too strict)."""


class UnsupportedDimension(ValueError):
    pass


@dataclass(frozen=True)
class AffineAbstraction:
    A: np.ndarray
    e_hi: np.ndarray
    e_lo: np.ndarray
    domain: IntervalVector
    theta: float

    @property
    def widths(self) -> np.ndarray:
        return self.e_hi - self.e_lo

    def image(self, lo, hi):
        """Bounds of the abstraction over the box ``[lo, hi]``."""
        return affine_image(self.A, lo, hi, self.e_lo, self.e_hi)

    def rows(self, idx) -> "AffineAbstraction":
        idx = np.atleast_1d(idx)
        w = self.e_hi[idx] - self.e_lo[idx]
        return AffineAbstraction(self.A[idx], self.e_hi[idx], self.e_lo[idx], self.domain, float(w.max(initial=0.0)))


def sigma_margin(lipschitz, dispersion: float) -> np.ndarray:
    lipschitz = np.asarray(lipschitz, dtype=float)
    if np.any(lipschitz < 0) or dispersion < 0:
        raise ValueError("lipschitz and dispersion must be nonnegative")
    return lipschitz * dispersion


def box_vertices(domain: IntervalVector) -> np.ndarray:
    n = domain.dim
    if n > MAX_VERTEX_DIM:
        raise UnsupportedDimension(f"vertex enumeration capped at {MAX_VERTEX_DIM} dimensions, got {n}")
    corners = np.array(list(itertools.product((0, 1), repeat=n)), dtype=float).reshape(-1, n)
    return domain.lo + corners * domain.width


def grid_samples(domain: IntervalVector, counts) -> tuple[np.ndarray, np.ndarray]:
    """Product grid (endpoints included) and its per-axis spacing."""
    counts = np.broadcast_to(np.asarray(counts, dtype=int), (domain.dim,))
    if domain.dim > MAX_VERTEX_DIM:
        raise UnsupportedDimension(f"grid sampling capped at {MAX_VERTEX_DIM} dimensions, got {domain.dim}")
    axes = []
    spacing = np.zeros(domain.dim)
    for j in range(domain.dim):
        c = int(counts[j]) if domain.width[j] > 0 else 1
        c = max(c, 1)
        axes.append(np.linspace(domain.lo[j], domain.hi[j], c) if c > 1 else np.array([domain.mid[j]]))
        spacing[j] = domain.width[j] / (c - 1) if c > 1 else 0.0
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1) if axes else np.zeros((1, 0))
    return pts, spacing


def grid_dispersion(spacing) -> float:
    """Largest distance from a box point to its nearest grid point."""
    return 0.5 * float(np.linalg.norm(spacing))


def default_samples(domain: IntervalVector, refinement: int = 16) -> tuple[np.ndarray, float]:
    """Vertices plus a uniform grid whose dispersion is at most ``width / refinement``
    per axis; returns ``(samples, dispersion)``."""
    pts, spacing = grid_samples(domain, refinement * 2 + 1)
    return pts, grid_dispersion(spacing)


def _row_lp_blocks(
    x: np.ndarray,
    lo_vals: np.ndarray,
    hi_vals: np.ndarray,
    sigma: float,
    slope_bounds=None,
    containment=None,
):
    """Constraints of a single-row LP over ``[a (k), e_hi, e_lo]`` minimizing ``e_hi - e_lo``."""
    S, k = x.shape
    ones = np.ones((S, 1))
    zeros = np.zeros((S, 1))
    blocks = [
        np.hstack([x, zeros, ones]),  # a.x + e_lo <= psi_lo - sigma
        np.hstack([-x, -ones, zeros]),  # psi_hi + sigma <= a.x + e_hi
    ]
    rhs = [lo_vals - sigma, -hi_vals - sigma]
    if containment is not None:
        V, g_a, g_hi, g_lo = containment
        nv = V.shape[0]
        o = np.ones((nv, 1))
        z = np.zeros((nv, 1))
        gv = V @ g_a
        blocks.append(np.hstack([-V, z, -o]))  # g_lo - e_lo <= (a - g_a).v
        rhs.append(-g_lo - gv)
        blocks.append(np.hstack([V, o, z]))  # (a - g_a).v <= g_hi - e_hi
        rhs.append(g_hi + gv)
    c = np.zeros(k + 2)
    c[k] = 1.0
    c[k + 1] = -1.0
    bounds = [(None, None)] * (k + 2)
    if slope_bounds is not None:
        for j in range(k):
            bounds[j] = (float(slope_bounds[0][j]), float(slope_bounds[1][j]))
    return np.vstack(blocks), np.concatenate(rhs), c, bounds


def _solve_rows(rows: list) -> list:
    """Solve independent single-row LPs as one block-diagonal LP.

    The objective is separable, so the joint optimum is optimal row by row;
    one backend call replaces many small ones.
    """
    if not rows:
        return []
    if len(rows) == 1:
        A_ub, b_ub, c, bounds = rows[0]
    else:
        A_ub = sparse.block_diag([r[0] for r in rows], format="csr")
        b_ub = np.concatenate([r[1] for r in rows])
        c = np.concatenate([r[2] for r in rows])
        bounds = [b for r in rows for b in r[3]]
    res = lp_solve(LpProblem(c, A_ub, b_ub, bounds))
    if res.status is not LpStatus.OPTIMAL:
        raise AbstractionInfeasible(f"abstraction LP {res.status.value}")
    out, off = [], 0
    for r in rows:
        k = r[2].shape[0] - 2
        out.append((res.x[off : off + k], res.x[off + k], res.x[off + k + 1]))
        off += k + 2
    return out


def _row_lp(x, lo_vals, hi_vals, sigma, slope_bounds=None, containment=None):
    return _solve_rows([_row_lp_blocks(x, lo_vals, hi_vals, sigma, slope_bounds, containment)])[0]


def _parallel_problems(psi_lo, psi_hi, domain, samples, sigma, global_abs=None, slope_bounds=None):
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    lo_vals = np.atleast_2d(np.asarray(psi_lo(samples), dtype=float).reshape(samples.shape[0], -1))
    hi_vals = np.atleast_2d(np.asarray(psi_hi(samples), dtype=float).reshape(samples.shape[0], -1))
    m = lo_vals.shape[1]
    n = domain.dim
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (m,))
    active = np.flatnonzero(domain.width > 0)
    x_act = samples[:, active]
    verts = box_vertices(domain) if global_abs is not None else None
    inactive = np.setdiff1d(np.arange(n), active)
    problems = []
    for i in range(m):
        containment = None
        if global_abs is not None:
            # inactive coordinates are constant on the box, fold them into the offsets
            fixed = verts[:, inactive] @ global_abs.A[i, inactive]
            containment = (
                verts[:, active],
                global_abs.A[i, active],
                global_abs.e_hi[i] + fixed,
                global_abs.e_lo[i] + fixed,
            )
        sb = None
        if slope_bounds is not None:
            sb = (np.asarray(slope_bounds[0])[i, active], np.asarray(slope_bounds[1])[i, active])
        problems.append(_row_lp_blocks(x_act, lo_vals[:, i], hi_vals[:, i], float(sigma[i]), sb, containment))
    return problems, active, m, sigma


def solve_parallel_abstraction(
    psi_lo: VectorField,
    psi_hi: VectorField,
    domain: IntervalVector,
    samples: np.ndarray,
    sigma,
    global_abs: Optional[AffineAbstraction] = None,
    slope_bounds: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> AffineAbstraction:
    """Optimal parallel affine abstraction of ``(psi_lo, psi_hi)`` on ``domain``.

    Rows are solved independently; the per-row optima jointly minimize the
    largest row width.  Zero-width axes get zero slope.  ``slope_bounds`` is an
    optional ``(lo, hi)`` pair of ``(m, n)`` matrices boxing the slopes.
    """
    problems, active, m, sigma = _parallel_problems(psi_lo, psi_hi, domain, samples, sigma, global_abs, slope_bounds)
    A = np.zeros((m, domain.dim))
    e_hi = np.zeros(m)
    e_lo = np.zeros(m)
    for i, (a, eh, el) in enumerate(_solve_rows(problems)):
        A[i, active] = a
        e_hi[i] = eh
        e_lo[i] = el
    theta = float(np.max(e_hi - e_lo - 2 * sigma)) if m else 0.0
    return AffineAbstraction(A, e_hi, e_lo, domain, theta)


def validate(
    abs_: AffineAbstraction,
    psi_lo: VectorField,
    psi_hi: VectorField,
    test_points,
    tol: float = 1e-9,
) -> tuple[bool, float]:
    X = np.atleast_2d(np.asarray(test_points, dtype=float))
    lo_vals = np.asarray(psi_lo(X), dtype=float).reshape(X.shape[0], -1)
    hi_vals = np.asarray(psi_hi(X), dtype=float).reshape(X.shape[0], -1)
    base = X @ abs_.A.T
    below = (base + abs_.e_lo) - lo_vals
    above = hi_vals - (base + abs_.e_hi)
    worst = float(max(below.max(initial=0.0), above.max(initial=0.0)))
    return worst <= tol, worst


def row_support(jac_lo: np.ndarray, jac_hi: np.ndarray) -> list[np.ndarray]:
    """Columns each output row depends on, read off Jacobian bounds."""
    nz = (jac_lo != 0) | (jac_hi != 0)
    return [np.flatnonzero(r) for r in nz]


def abstract_by_rows(
    func: VectorField,
    domain: IntervalVector,
    jac_lo: np.ndarray,
    jac_hi: np.ndarray,
    points_per_axis: int = 5,
    global_abs: Optional[AffineAbstraction] = None,
    exact_tol: float = 1e-12,
) -> AffineAbstraction:
    """Row-wise abstraction of a point function using its Jacobian bounds.

    Each row is solved on the coordinates it depends on.  An axis whose partial
    derivative is a known constant gets its slope pinned to that constant, so
    the residual does not vary along it and its midpoint is the only sample
    needed; other axes get ``points_per_axis`` grid points.  With slopes boxed inside the Jacobian
    bounds, the mean value theorem gives the sound margin
    ``sigma = sum_j (hi_j - lo_j) * spacing_j / 2``.  Rows on which the global
    abstraction is already exact are copied from it without solving.
    """
    jac_lo = np.atleast_2d(jac_lo)
    jac_hi = np.atleast_2d(jac_hi)
    m, n = jac_lo.shape
    A = np.zeros((m, n))
    e_hi = np.zeros(m)
    e_lo = np.zeros(m)
    margins = np.zeros(m)
    support = row_support(jac_lo, jac_hi)
    mid = domain.mid
    pending = []  # (row, cols, active, problem with containment, problem without)
    for i in range(m):
        if global_abs is not None and global_abs.e_hi[i] - global_abs.e_lo[i] <= exact_tol:
            A[i] = global_abs.A[i]
            e_hi[i] = global_abs.e_hi[i]
            e_lo[i] = global_abs.e_lo[i]
            continue
        cols = support[i]
        sub = domain[cols]
        spread = jac_hi[i, cols] - jac_lo[i, cols]
        counts = np.where(spread > 0, points_per_axis, 1)
        pts, spacing = grid_samples(sub, counts)
        sigma = float(np.sum(spread * spacing) / 2.0)
        full = np.tile(mid, (pts.shape[0], 1))
        full[:, cols] = pts
        vals = np.asarray(func(full), dtype=float)[:, i]
        row_fn = lambda _x, v=vals: v[:, None]
        g_row = None
        if global_abs is not None:
            # restrict the global row to the support; off-support coordinates sit at mid
            off = np.setdiff1d(np.arange(n), cols)
            shift = float(global_abs.A[i, off] @ mid[off])
            g_row = AffineAbstraction(
                global_abs.A[i : i + 1, cols],
                np.array([global_abs.e_hi[i] + shift]),
                np.array([global_abs.e_lo[i] + shift]),
                sub,
                0.0,
            )
        sb = (jac_lo[i : i + 1, cols], jac_hi[i : i + 1, cols])
        probs, active, _, _ = _parallel_problems(row_fn, row_fn, sub, pts, sigma, g_row, sb)
        loose = None
        if g_row is not None:
            loose = _parallel_problems(row_fn, row_fn, sub, pts, sigma, None, sb)[0][0]
        pending.append((i, cols[active], probs[0], loose))
        margins[i] = sigma
    try:
        solved = _solve_rows([p for _, _, p, _ in pending])
    except AbstractionInfeasible:
        # find the rows whose containment constraints cannot be met and drop them there
        solved = []
        for _, _, p, loose in pending:
            try:
                solved.append(_solve_rows([p])[0])
            except AbstractionInfeasible:
                if loose is None:
                    raise
                solved.append(_solve_rows([loose])[0])
    for (i, cols, _, _), (a, eh, el) in zip(pending, solved):
        A[i, cols] = a
        e_hi[i] = eh
        e_lo[i] = el
    theta = float(np.max(e_hi - e_lo - 2 * margins)) if m else 0.0
    # the residual does not vary along axes with constant partials, so the
    # abstraction holds for any value there
    linear = np.all(jac_hi - jac_lo == 0, axis=0)
    valid = IntervalVector(np.where(linear, -np.inf, domain.lo), np.where(linear, np.inf, domain.hi))
    return AffineAbstraction(A, e_hi, e_lo, valid, theta)
