"""Mode-matched interval observer for the augmented state ``z = [x; d]``.

Conventions: ``f`` is batch-evaluated on stacked rows ``[x, d, w]`` and
returns ``x+``; ``g`` is batch-evaluated on ``[x, d, v]`` and returns ``y``.
Known inputs are frozen inside these closures.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .abstraction import AffineAbstraction, VectorField, abstract_by_rows
from .interval import IntervalVector, affine_image, pinv, rowsupp
from .mixed_monotone import DecompositionSpec, JacobianBounds, build_decomposition, embed_pair
from .policy import PolicyEnvelope, PolicySample, envelope_abstraction, push_sample

EMPTY_TOL = 1e-9


@dataclass
class UpdateConfig:
    max_update_iters: int = 10
    update_tol: float = 1e-8
    kappa_mask: bool = True
    rowsupp_tol: float = 1e-9
    # beyond the pseudoinverse update, contract each coordinate through every
    # measurement row it appears in
    row_contractor: bool = True
    freeze_g_abstraction: bool = False
    points_per_axis: int = 5
    envelope_points: int = 17
    # cached f/mu abstractions are solved on the box widened by this much
    cache_margin: float = 0.5
    mu_refresh_every: int = 100
    # also clamp the estimated input to the envelopes' range over the propagated box
    envelope_box_bound: bool = True
    envelope_range_points: int = 9
    # leave out samples whose cones are inactive everywhere (envelopes unchanged)
    skip_redundant_samples: bool = True
    # bound on |d| used while the policy envelope has no samples
    input_bound: float = 10.0

    def __post_init__(self):
        if self.max_update_iters < 1:
            raise ValueError("max_update_iters must be >= 1")
        if self.update_tol <= 0:
            raise ValueError("update_tol must be positive")
        if not self.input_bound > 0:
            raise ValueError("input_bound must be positive")

    @property
    def kappa(self) -> float:
        return np.inf if self.kappa_mask else 1e12


@dataclass
class ModeHypothesis:
    mode_id: int
    n: int
    p: int
    f: VectorField
    g: VectorField
    f_jacobian_bounds: JacobianBounds
    g_jacobian_bounds: JacobianBounds
    mu_lipschitz: np.ndarray
    policy_features: Optional[list] = None
    global_f_abs: Optional[AffineAbstraction] = None
    global_g_abs: Optional[AffineAbstraction] = None
    G_index: Optional[np.ndarray] = None
    H_index: Optional[np.ndarray] = None
    f_decomp: Optional[DecompositionSpec] = None
    g_decomp: Optional[DecompositionSpec] = None
    g_lipschitz: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        self.mu_lipschitz = np.asarray(self.mu_lipschitz, dtype=float).reshape(-1)
        if self.mu_lipschitz.shape[0] != self.p:
            raise ValueError("one policy Lipschitz constant per unknown input")
        for sel in (self.G_index, self.H_index):
            if sel is not None:
                sel = np.asarray(sel)
                if not np.all(np.isin(sel, (0, 1))) or not np.all(sel.sum(axis=0) <= 1):
                    raise ValueError("attack pattern columns must be unit vectors")
        if self.f_decomp is None:
            self.f_decomp = build_decomposition(self.f, self.f_jacobian_bounds)
        if self.g_decomp is None:
            self.g_decomp = build_decomposition(self.g, self.g_jacobian_bounds)
        if self.g_lipschitz is None:
            jb = self.g_jacobian_bounds
            self.g_lipschitz = np.linalg.norm(np.maximum(np.abs(jb.lo), np.abs(jb.hi)), axis=1)
        self.n_w = self.f_jacobian_bounds.shape[1] - self.n - self.p
        self.n_v = self.g_jacobian_bounds.shape[1] - self.n - self.p
        self.l = self.g_jacobian_bounds.shape[0]
        self._g_const = None
        if self.global_g_abs is not None and np.all(self.global_g_abs.widths <= 1e-12):
            self._g_const = _MeasurementModel(self.global_g_abs, self.n + self.p)

    @property
    def nz(self) -> int:
        return self.n + self.p


class _MeasurementModel:
    """Slope split and pseudoinverse of one g-abstraction, computed once."""

    def __init__(self, abs_: AffineAbstraction, nz: int, rowsupp_tol: float = 1e-9):
        self.abs = abs_
        self.A = abs_.A[:, :nz]
        self.Ap = np.maximum(self.A, 0.0)
        self.Am = self.Ap - self.A
        self.W = abs_.A[:, nz:]
        self.Wp = np.maximum(self.W, 0.0)
        self.Wm = self.Wp - self.W
        self.Ad = pinv(self.A)
        self.Adp = np.maximum(self.Ad, 0.0)
        self.Adm = self.Adp - self.Ad
        self.rowsupp_tol = rowsupp_tol
        self.mask = rowsupp(np.eye(nz) - self.Ad @ self.A, rowsupp_tol).astype(bool)
        self.exact = bool((abs_.e_hi - abs_.e_lo <= 1e-12).all())


@dataclass
class ModeObserverState:
    z: IntervalVector
    envelope: PolicyEnvelope
    alive: bool = True
    step_index: int = 0
    z_prop: Optional[IntervalVector] = None
    inconsistent: bool = False
    f_abs: Optional[AffineAbstraction] = field(default=None, repr=False)
    mu_abs: Optional[AffineAbstraction] = field(default=None, repr=False)
    mu_abs_step: int = field(default=-1, repr=False)

    @property
    def z_lo(self) -> np.ndarray:
        return self.z.lo

    @property
    def z_hi(self) -> np.ndarray:
        return self.z.hi


def _inside(domain: Optional[IntervalVector], lo, hi) -> bool:
    return domain is not None and bool((lo >= domain.lo).all() and (hi <= domain.hi).all())


def _widened(lo, hi, margin: float) -> IntervalVector:
    pad = margin * np.maximum(hi - lo, 1.0)
    return IntervalVector(lo - pad, hi + pad)


def f_abstraction(state: ModeObserverState, hyp: ModeHypothesis, xi_lo, xi_hi, config: UpdateConfig):
    """Abstraction of ``f`` valid on the box, reusing the cached one when it covers it."""
    if state.f_abs is not None and _inside(state.f_abs.domain, xi_lo, xi_hi):
        return state.f_abs
    g_abs = hyp.global_f_abs
    if g_abs is not None and _inside(g_abs.domain, xi_lo, xi_hi) and np.all(g_abs.widths <= 1e-12):
        return g_abs
    box = _widened(xi_lo, xi_hi, config.cache_margin)
    if g_abs is not None and _inside(g_abs.domain, box.lo, box.hi):
        reuse = g_abs
    else:
        reuse = None
    jb = hyp.f_jacobian_bounds
    return abstract_by_rows(hyp.f, box, jb.lo, jb.hi, config.points_per_axis, reuse)


def propagate(
    state: ModeObserverState,
    hyp: ModeHypothesis,
    noise: IntervalVector,
    config: Optional[UpdateConfig] = None,
) -> tuple[IntervalVector, AffineAbstraction]:
    """Propagated x-framers: the tighter of the decomposition and abstraction bounds."""
    config = config or UpdateConfig()
    xi_lo = np.concatenate([state.z.lo, noise.lo])
    xi_hi = np.concatenate([state.z.hi, noise.hi])
    lo, up = embed_pair(hyp.f, hyp.f_decomp, xi_lo, xi_hi)
    f_abs = f_abstraction(state, hyp, xi_lo, xi_hi, config)
    a_lo, a_hi = f_abs.image(xi_lo, xi_hi)
    return IntervalVector(np.maximum(lo, a_lo), np.minimum(up, a_hi)), f_abs


def estimate_input(x_framers: IntervalVector, mu_abs: AffineAbstraction) -> IntervalVector:
    lo, hi = affine_image(mu_abs.A, x_framers.lo, x_framers.hi, mu_abs.e_lo, mu_abs.e_hi)
    return IntervalVector(lo, hi)


def _mu_abstraction(state: ModeObserverState, env: PolicyEnvelope, x_box: IntervalVector, config: UpdateConfig):
    cached = state.mu_abs
    fresh_enough = state.step_index - state.mu_abs_step < config.mu_refresh_every
    if (
        cached is not None
        and env.window is None
        and fresh_enough
        and _inside(cached.domain, x_box.lo, x_box.hi)
    ):
        # envelopes only tighten as samples accrue, so an older abstraction stays valid
        return cached, False
    box = _widened(x_box.lo, x_box.hi, config.cache_margin)
    return envelope_abstraction(env, box, points_per_axis=config.envelope_points), True


def _measurement_model(hyp: ModeHypothesis, lo, hi, noise_v: IntervalVector, config: UpdateConfig):
    if hyp._g_const is not None and _inside(hyp.global_g_abs.domain, np.concatenate([lo, noise_v.lo]), np.concatenate([hi, noise_v.hi])):
        return hyp._g_const
    box = IntervalVector(np.concatenate([lo, noise_v.lo]), np.concatenate([hi, noise_v.hi]))
    jb = hyp.g_jacobian_bounds
    reuse = hyp.global_g_abs if _inside(hyp.global_g_abs.domain if hyp.global_g_abs else None, box.lo, box.hi) else None
    abs_ = abstract_by_rows(hyp.g, box, jb.lo, jb.hi, config.points_per_axis, reuse)
    return _MeasurementModel(abs_, hyp.nz, config.rowsupp_tol)


def _contract_rows(A, a_lo, a_hi, lo, hi):
    """Tighten each coordinate from ``a_lo <= A z <= a_hi`` (row-wise interval contraction)."""
    nzmask = np.abs(A) > 1e-12
    t1 = A * lo
    t2 = A * hi
    tlo = np.minimum(t1, t2)
    thi = np.maximum(t1, t2)
    s_lo = tlo.sum(axis=1, keepdims=True)
    s_hi = thi.sum(axis=1, keepdims=True)
    # bounds on A_rj z_j implied by row r
    c_lo = a_lo[:, None] - (s_hi - thi)
    c_hi = a_hi[:, None] - (s_lo - tlo)
    safe = np.where(nzmask, A, 1.0)
    q1 = c_lo / safe
    q2 = c_hi / safe
    z_lo = np.where(nzmask, np.minimum(q1, q2), -np.inf).max(axis=0)
    z_hi = np.where(nzmask, np.maximum(q1, q2), np.inf).min(axis=0)
    return np.maximum(lo, z_lo), np.minimum(hi, z_hi)


def measurement_update(
    z_prop: IntervalVector,
    y,
    hyp: ModeHypothesis,
    noise_v: IntervalVector,
    config: Optional[UpdateConfig] = None,
    return_iterates: bool = False,
):
    """Iterated set-membership update of ``z`` given ``y``.

    Returns ``(z_updated, empty)``, plus the list of iterates when
    ``return_iterates`` is set.  Every iterate is nested in the previous one.
    """
    config = config or UpdateConfig()
    y = np.asarray(y, dtype=float)
    lo = z_prop.lo.copy()
    hi = z_prop.hi.copy()
    iterates = [IntervalVector(lo.copy(), hi.copy())] if return_iterates else None
    empty = False
    model = None
    for _ in range(config.max_update_iters):
        if model is None or not config.freeze_g_abstraction:
            model = _measurement_model(hyp, lo, hi, noise_v, config)
        e_lo, e_hi = model.abs.e_lo, model.abs.e_hi
        t_hi = y + model.Wm @ noise_v.hi - model.Wp @ noise_v.lo - e_lo
        t_lo = y - model.Wp @ noise_v.hi + model.Wm @ noise_v.lo - e_hi
        Az_lo = model.Ap @ lo - model.Am @ hi
        Az_hi = model.Ap @ hi - model.Am @ lo
        a_hi = np.minimum(t_hi, Az_hi)
        a_lo = np.maximum(t_lo, Az_lo)
        if (a_lo > a_hi + EMPTY_TOL).any():
            empty = True
            break
        a_lo = np.minimum(a_lo, a_hi)
        new_hi = model.Adp @ a_hi - model.Adm @ a_lo
        new_lo = model.Adp @ a_lo - model.Adm @ a_hi
        if config.kappa_mask:
            new_hi = np.where(model.mask, np.inf, new_hi)
            new_lo = np.where(model.mask, -np.inf, new_lo)
        else:
            new_hi = new_hi + config.kappa * model.mask
            new_lo = new_lo - config.kappa * model.mask
        new_hi = np.minimum(new_hi, hi)
        new_lo = np.maximum(new_lo, lo)
        if config.row_contractor:
            new_lo, new_hi = _contract_rows(model.A, a_lo, a_hi, new_lo, new_hi)
        if (new_lo > new_hi + EMPTY_TOL).any():
            empty = True
            break
        # rounding-level crossings collapse to a point
        cross = new_lo > new_hi
        if cross.any():
            m = 0.5 * (new_lo + new_hi)
            new_lo = np.where(cross, m, new_lo)
            new_hi = np.where(cross, m, new_hi)
        change = max((hi - new_hi).max(initial=0.0), (new_lo - lo).max(initial=0.0))
        lo, hi = new_lo, new_hi
        if return_iterates:
            iterates.append(IntervalVector(lo.copy(), hi.copy()))
        if change < config.update_tol * max(1.0, float((hi - lo).max(initial=0.0))):
            break
    out = IntervalVector(lo, hi)
    if return_iterates:
        return out, empty, iterates
    return out, empty


def observer_step(
    state: ModeObserverState,
    hyp: ModeHypothesis,
    y,
    noise_w: IntervalVector,
    noise_v: IntervalVector,
    config: Optional[UpdateConfig] = None,
) -> ModeObserverState:
    """Propagate, estimate the unknown input, update on ``y`` and learn."""
    if not state.alive:
        return state
    config = config or UpdateConfig()
    n = hyp.n
    x_prop, f_abs = propagate(state, hyp, noise_w, config)
    env = state.envelope
    if len(env) == 0:
        mu_abs, refreshed = None, False
        d_lo = np.full(hyp.p, -config.input_bound)
        d_hi = np.full(hyp.p, config.input_bound)
    else:
        mu_abs, refreshed = _mu_abstraction(state, env, x_prop, config)
        d_prop = estimate_input(x_prop, mu_abs)
        d_lo, d_hi = d_prop.lo, d_prop.hi
    if config.envelope_box_bound and len(env):
        b_lo, b_hi = env.input_bounds(x_prop.lo, x_prop.hi, config.envelope_range_points)
        d_lo = np.maximum(d_lo, b_lo)
        d_hi = np.minimum(d_hi, b_hi)
    z_prop = IntervalVector(np.concatenate([x_prop.lo, d_lo]), np.concatenate([x_prop.hi, d_hi]))
    common = dict(
        step_index=state.step_index + 1,
        z_prop=z_prop,
        f_abs=f_abs,
        mu_abs=mu_abs,
        mu_abs_step=state.step_index if refreshed else state.mu_abs_step,
    )
    if z_prop.is_empty:
        return ModeObserverState(z_prop, env, alive=False, inconsistent=True, **common)
    z, empty = measurement_update(z_prop, y, hyp, noise_v, config)
    if empty:
        return ModeObserverState(z_prop, env, alive=False, inconsistent=True, **common)
    x_lo, x_hi = z.lo[:n], z.hi[:n]
    sample = PolicySample(0.5 * (x_lo + x_hi), z.lo[n:], z.hi[n:], env.eps_for_box(x_lo, x_hi))
    if not (config.skip_redundant_samples and env.window is None and env.is_redundant(sample)):
        env = push_sample(env, sample)
    return ModeObserverState(z, env, **common)


def replace(state: ModeObserverState, **changes) -> ModeObserverState:
    return dataclasses.replace(state, **changes)
