"""Set-membership learning of an unknown Lipschitz attack policy.

Every stored sample ``(x~, d_lo, d_hi, eps)`` says the policy value at the
framer midpoint ``x~`` lies in ``[d_lo - eps, d_hi + eps]``.  Lipschitz cones
through the samples give pointwise upper/lower envelopes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .abstraction import AffineAbstraction, _parallel_problems, _solve_rows, grid_dispersion, grid_samples
from .interval import IntervalVector

DEFAULT_PRUNE_CAP = 5000


class EmptyDataset(ValueError):
    pass


@dataclass(frozen=True)
class PolicySample:
    x_tilde: np.ndarray
    d_lo: np.ndarray
    d_hi: np.ndarray
    eps: np.ndarray

    def __post_init__(self):
        for name in ("x_tilde", "d_lo", "d_hi", "eps"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        if np.any(self.d_lo > self.d_hi):
            raise ValueError("sample requires d_lo <= d_hi")
        if np.any(self.eps < 0):
            raise ValueError("sample requires eps >= 0")


class _Store:
    """Append-only growable buffer shared by envelope snapshots."""

    def __init__(self, n: int, p: int, capacity: int = 64):
        self.x = np.empty((capacity, n))
        self.lo = np.empty((capacity, p))
        self.hi = np.empty((capacity, p))
        self.eps = np.empty((capacity, p))
        self.fill = 0

    def append(self, x, lo, hi, eps) -> None:
        if self.fill == self.x.shape[0]:
            cap = 2 * self.x.shape[0]
            for name in ("x", "lo", "hi", "eps"):
                old = getattr(self, name)
                new = np.empty((cap, old.shape[1]))
                new[: self.fill] = old[: self.fill]
                setattr(self, name, new)
        i = self.fill
        self.x[i] = x
        self.lo[i] = lo
        self.hi[i] = hi
        self.eps[i] = eps
        self.fill += 1


class PolicyEnvelope:
    """Immutable snapshot of the policy dataset.

    ``features[j]`` lists the state coordinates policy component ``j`` is
    measured against (default: all of them); the Lipschitz constant
    ``lipschitz[j]`` is w.r.t. the Euclidean norm on those coordinates.
    ``window=None`` keeps every sample.
    """

    def __init__(
        self,
        n: int,
        lipschitz,
        window: Optional[int] = None,
        features: Optional[Sequence[Sequence[int]]] = None,
        prune_cap: int = DEFAULT_PRUNE_CAP,
        _store: Optional[_Store] = None,
        _start: int = 0,
        _stop: int = 0,
        _next_prune: Optional[int] = None,
    ):
        self.lipschitz = np.asarray(lipschitz, dtype=float).reshape(-1)
        if np.any(self.lipschitz < 0):
            raise ValueError("Lipschitz constants must be nonnegative")
        if window is not None and window < 1:
            raise ValueError("window must be positive or None")
        self.n = int(n)
        self.p = self.lipschitz.shape[0]
        self.window = window
        if features is None:
            features = [tuple(range(self.n))] * self.p
        self.features = [tuple(int(i) for i in f) for f in features]
        if len(self.features) != self.p:
            raise ValueError("one feature list per policy component")
        self.prune_cap = prune_cap
        self._store = _store if _store is not None else _Store(self.n, self.p)
        self._start = _start
        self._stop = _stop
        self._next_prune = prune_cap if _next_prune is None else _next_prune
        groups: dict[tuple, list[int]] = {}
        for j, f in enumerate(self.features):
            groups.setdefault(f, []).append(j)
        self._groups = [(np.array(f, dtype=int), np.array(js, dtype=int)) for f, js in groups.items()]
        # feature selection per group and the group of each component
        self._select = np.zeros((self.n, len(self._groups)))
        self._group_of = np.zeros(self.p, dtype=int)
        for g, (f, js) in enumerate(self._groups):
            self._select[f, g] = 1.0
            self._group_of[js] = g
        single = all(len(f) == 1 for f in self.features)
        self._scalar_features = np.array([f[0] for f in self.features], dtype=int) if single else None

    def _derive(self, store, start, stop, next_prune=None) -> "PolicyEnvelope":
        out = object.__new__(PolicyEnvelope)
        out.__dict__.update(self.__dict__)
        out._store = store
        out._start = start
        out._stop = stop
        if next_prune is not None:
            out._next_prune = next_prune
        return out

    def __len__(self) -> int:
        return self._stop - self._start

    @property
    def x_tilde(self) -> np.ndarray:
        return self._store.x[self._start : self._stop]

    @property
    def d_lo(self) -> np.ndarray:
        return self._store.lo[self._start : self._stop]

    @property
    def d_hi(self) -> np.ndarray:
        return self._store.hi[self._start : self._stop]

    @property
    def eps(self) -> np.ndarray:
        return self._store.eps[self._start : self._stop]

    def samples(self) -> list[PolicySample]:
        return [PolicySample(*row) for row in zip(self.x_tilde, self.d_lo, self.d_hi, self.eps)]

    def eps_for_box(self, lo, hi) -> np.ndarray:
        """Per-component slack ``2 L_j |hi - lo|`` (norm over the component's features)."""
        w = np.asarray(hi, dtype=float) - np.asarray(lo, dtype=float)
        return 2.0 * self.lipschitz * np.sqrt((w * w) @ self._select)[self._group_of]

    def _check_nonempty(self):
        if len(self) == 0:
            raise EmptyDataset("policy envelope has no samples")

    def eval_upper(self, x) -> np.ndarray:
        X = np.atleast_2d(np.asarray(x, dtype=float))
        out = self._eval(X, upper=True)
        return out[0] if np.ndim(x) == 1 else out

    def eval_lower(self, x) -> np.ndarray:
        X = np.atleast_2d(np.asarray(x, dtype=float))
        out = self._eval(X, upper=False)
        return out[0] if np.ndim(x) == 1 else out

    def _eval(self, X: np.ndarray, upper: bool) -> np.ndarray:
        self._check_nonempty()
        return self._eval_all(X)[1 if upper else 0]

    def _eval_group(self, Xf: np.ndarray, f: np.ndarray, js: np.ndarray):
        """Lower and upper envelopes of components ``js`` at points given on their features ``f``."""
        self._check_nonempty()
        diff = Xf[:, None, :] - self.x_tilde[None, :, f]
        dist = np.sqrt(np.einsum("qnk,qnk->qn", diff, diff))[:, :, None]
        cone = self.lipschitz[js] * dist + self.eps[:, js]
        return np.max(self.d_lo[:, js] - cone, axis=1), np.min(self.d_hi[:, js] + cone, axis=1)

    def is_redundant(self, s: PolicySample) -> bool:
        """True when adding ``s`` would leave both envelopes unchanged everywhere.

        The envelopes are L-Lipschitz, so the cone of ``s`` is inactive
        everywhere iff it is inactive at its own apex.
        """
        if len(self) == 0:
            return False
        lo, hi = self._eval_all(s.x_tilde[None, :])
        return bool((hi[0] <= s.d_hi + s.eps).all() and (lo[0] >= s.d_lo - s.eps).all())

    def _eval_all(self, X: np.ndarray):
        diff = X[:, None, :] - self.x_tilde[None, :, :]
        dist = np.sqrt((diff * diff) @ self._select)[:, :, self._group_of]
        cone = self.lipschitz * dist + self.eps
        return np.max(self.d_lo - cone, axis=1), np.min(self.d_hi + cone, axis=1)

    def box_bounds(self, lo, hi) -> tuple[np.ndarray, np.ndarray]:
        """Sound enclosure of both envelopes over the box, from the farthest
        box point to each sample."""
        self._check_nonempty()
        X = self.x_tilde
        far = np.maximum(np.abs(X - lo), np.abs(X - hi))
        r = np.sqrt((far * far) @ self._select)[:, self._group_of]
        cone = self.lipschitz * r + self.eps
        return (self.d_lo - cone).max(axis=0), (self.d_hi + cone).min(axis=0)

    def range_bounds(self, lo, hi, points_per_axis: int = 9, grid_budget: int = 729) -> tuple[np.ndarray, np.ndarray]:
        """Sound enclosure of both envelopes over the box from a grid.

        The envelopes are L-Lipschitz, so their extremes over the box are
        within ``L * dispersion`` of the extremes over the grid.
        """
        self._check_nonempty()
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if self._scalar_features is not None:
            return self._range_bounds_scalar(lo, hi, max(2, points_per_axis))[:2]
        box = IntervalVector(lo, hi)
        dn = np.empty(self.p)
        up = np.empty(self.p)
        for f, js in self._groups:
            k = len(f)
            per_axis = max(2, min(points_per_axis, int(np.floor(grid_budget ** (1.0 / max(k, 1))))))
            pts, spacing = grid_samples(box[f], per_axis)
            lo_v, hi_v = self._eval_group(pts, f, js)
            pad = self.lipschitz[js] * grid_dispersion(spacing)
            dn[js] = lo_v.min(axis=0) - pad
            up[js] = hi_v.max(axis=0) + pad
        return dn, up

    def _range_bounds_scalar(self, lo, hi, count: int):
        # every component depends on one coordinate: grid all of them at once
        f = self._scalar_features
        X, d_lo, d_hi, eps = self.x_tilde[:, f], self.d_lo, self.d_hi, self.eps
        L = self.lipschitz
        # a sample whose cone at the nearest box point is already beaten by
        # another sample's cone at the farthest box point is never active
        far = np.maximum(np.abs(X - lo[f]), np.abs(X - hi[f]))
        near = np.maximum(np.maximum(lo[f] - X, X - hi[f]), 0.0)
        up_best = (d_hi + eps + L * far).min(axis=0)
        dn_best = (d_lo - eps - L * far).max(axis=0)
        keep = ((d_hi + eps + L * near <= up_best) | (d_lo - eps - L * near >= dn_best)).any(axis=1)
        X, d_lo, d_hi, eps = X[keep], d_lo[keep], d_hi[keep], eps[keep]
        t = np.linspace(0.0, 1.0, count)[:, None]
        pts = lo[f] + t * (hi[f] - lo[f])  # (count, p)
        cone = L * np.abs(pts[:, None, :] - X[None]) + eps
        lo_v = np.max(d_lo - cone, axis=1)
        hi_v = np.min(d_hi + cone, axis=1)
        pad = self.lipschitz * 0.5 * (hi[f] - lo[f]) / (count - 1)
        return lo_v.min(axis=0) - pad, hi_v.max(axis=0) + pad, dn_best, up_best

    def input_bounds(self, lo, hi, points_per_axis: int = 9) -> tuple[np.ndarray, np.ndarray]:
        """Intersection of :meth:`box_bounds` and :meth:`range_bounds`."""
        self._check_nonempty()
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if self._scalar_features is not None:
            r_lo, r_hi, b_lo, b_hi = self._range_bounds_scalar(lo, hi, max(2, points_per_axis))
        else:
            r_lo, r_hi = self.range_bounds(lo, hi, points_per_axis)
            b_lo, b_hi = self.box_bounds(lo, hi)
        return np.maximum(r_lo, b_lo), np.minimum(r_hi, b_hi)

    def prune(self) -> "PolicyEnvelope":
        """Drop samples whose cones are dominated everywhere by another sample's.

        Domination is checked via the triangle inequality, so the envelopes of
        the pruned snapshot equal the original ones.
        """
        N = len(self)
        dropped = np.ones(N, dtype=bool)
        hi_key = self.d_hi + self.eps
        lo_key = self.d_lo - self.eps
        later = np.tril(np.ones((N, N), dtype=bool), -1)  # row index > column index
        for f, js in self._groups:
            X = self.x_tilde[:, f]
            D = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
            for j in js:
                L = self.lipschitz[j]
                # dom[s, t]: the cones of s lie inside those of t everywhere
                dom = (hi_key[:, j][:, None] + L * D <= hi_key[:, j][None, :]) & (
                    lo_key[:, j][:, None] - L * D >= lo_key[:, j][None, :]
                )
                np.fill_diagonal(dom, False)
                # identical cones dominate each other; only the earlier one counts
                dom &= ~(dom & dom.T & later)
                dropped &= dom.any(axis=0)
        return self._rebuild(~dropped)

    def _rebuild(self, keep: np.ndarray) -> "PolicyEnvelope":
        store = _Store(self.n, self.p, capacity=max(64, int(keep.sum()) * 2))
        for x, lo, hi, e in zip(self.x_tilde[keep], self.d_lo[keep], self.d_hi[keep], self.eps[keep]):
            store.append(x, lo, hi, e)
        next_prune = max(self.prune_cap, int(1.5 * store.fill))
        return self._derive(store, 0, store.fill, next_prune)


def push_sample(env: PolicyEnvelope, s: PolicySample) -> PolicyEnvelope:
    store = env._store
    if store.fill != env._stop:
        # this snapshot is not the newest view of its buffer: branch off a copy
        store = _Store(env.n, env.p, capacity=max(64, 2 * len(env)))
        for row in zip(env.x_tilde, env.d_lo, env.d_hi, env.eps):
            store.append(*row)
        start, stop = 0, store.fill
    else:
        start, stop = env._start, env._stop
    store.append(s.x_tilde, s.d_lo, s.d_hi, s.eps)
    stop += 1
    if env.window is not None and stop - start > env.window:
        start = stop - env.window
    out = env._derive(store, start, stop)
    if env.window is None and len(out) > out._next_prune:
        out = out.prune()
    return out


def eval_upper(env: PolicyEnvelope, x) -> np.ndarray:
    return env.eval_upper(x)


def eval_lower(env: PolicyEnvelope, x) -> np.ndarray:
    return env.eval_lower(x)


def envelope_abstraction(
    env: PolicyEnvelope,
    box: IntervalVector,
    sigma=None,
    points_per_axis: int = 17,
    grid_budget: int = 4096,
) -> AffineAbstraction:
    """Parallel affine abstraction of ``(eval_lower, eval_upper)`` over ``box``.

    Each group of components sharing a feature set is abstracted over those
    coordinates only; slopes on other coordinates are zero.  ``sigma``
    defaults to ``L * dispersion`` of the sampling grid.
    """
    if box.is_empty:
        raise ValueError("box must be nonempty")
    env._check_nonempty()
    n, p = env.n, env.p
    A = np.zeros((p, n))
    e_hi = np.zeros(p)
    e_lo = np.zeros(p)
    margins = np.zeros(p)
    mid = box.mid
    problems, where = [], []
    for f, js in env._groups:
        sub = box[f]
        k = len(f)
        per_axis = max(2, min(points_per_axis, int(np.floor(grid_budget ** (1.0 / max(k, 1))))))
        pts, spacing = grid_samples(sub, per_axis)
        lo_vals, hi_vals = env._eval_group(pts, f, js)
        if sigma is None:
            sig = env.lipschitz[js] * grid_dispersion(spacing)
        else:
            sig = np.broadcast_to(np.asarray(sigma, dtype=float), (p,))[js]
        probs, active, _, _ = _parallel_problems(lambda _X: lo_vals, lambda _X: hi_vals, sub, pts, sig)
        problems += probs
        where += [(j, f[active]) for j in js]
        margins[js] = sig
    # all groups go to the backend as one block-diagonal LP
    for (j, cols), (a, eh, el) in zip(where, _solve_rows(problems)):
        A[j, cols] = a
        e_hi[j] = eh
        e_lo[j] = el
    theta = float(np.max(e_hi - e_lo - 2 * margins)) if p else 0.0
    # the envelopes ignore coordinates outside every feature set
    used = np.zeros(n, dtype=bool)
    for f, _ in env._groups:
        used[f] = True
    valid = IntervalVector(np.where(used, box.lo, -np.inf), np.where(used, box.hi, np.inf))
    return AffineAbstraction(A, e_hi, e_lo, valid, theta)


def export_csv(env: PolicyEnvelope, path) -> None:
    n, p = env.n, env.p
    header = (
        [f"x_{i + 1}" for i in range(n)]
        + [f"d_lo_{j + 1}" for j in range(p)]
        + [f"d_hi_{j + 1}" for j in range(p)]
        + [f"eps_{j + 1}" for j in range(p)]
    )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in np.hstack([env.x_tilde, env.d_lo, env.d_hi, env.eps]):
            w.writerow([repr(float(v)) for v in row])


def import_csv(path, lipschitz, window=None, features=None) -> PolicyEnvelope:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in r] for r in reader if r]
    n = sum(1 for h in header if h.startswith("x_"))
    p = sum(1 for h in header if h.startswith("d_lo_"))
    expected = 3 * p + n
    if len(header) != expected or sum(1 for h in header if h.startswith("eps_")) != p:
        raise ValueError(f"unexpected policy CSV header: {header}")
    env = PolicyEnvelope(n, lipschitz, window=window, features=features)
    for r in rows:
        r = np.asarray(r)
        env = push_sample(env, PolicySample(r[:n], r[n : n + p], r[n + p : n + 2 * p], r[n + 2 * p :]))
    return env
