"""Residual-based mode elimination, global fusion and the SMSP loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from .interval import IntervalVector
from .mixed_monotone import tight_bound
from .observer import ModeHypothesis, ModeObserverState, UpdateConfig, _measurement_model, measurement_update, observer_step
from .policy import PolicyEnvelope

log = logging.getLogger(__name__)

MEMBERSHIP_TOL = 1e-9


class AllModesEliminated(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"every mode hypothesis was rejected at step {step}")
        self.step = step


@dataclass(frozen=True)
class ResidualRecord:
    mode_id: int
    r: np.ndarray
    half_width: np.ndarray
    violated: bool


@dataclass
class FusionResult:
    step: int
    surviving_modes: frozenset
    x_union: list
    d_union: list
    envelopes: dict
    eliminated: dict = field(default_factory=dict)  # mode_id -> "residual" | "empty"
    records: dict = field(default_factory=dict)
    mu_hi_grid: Optional[np.ndarray] = None
    mu_lo_grid: Optional[np.ndarray] = None

    def mu_upper(self, x) -> np.ndarray:
        return np.max([self.envelopes[q].eval_upper(x) for q in sorted(self.surviving_modes)], axis=0)

    def mu_lower(self, x) -> np.ndarray:
        return np.min([self.envelopes[q].eval_lower(x) for q in sorted(self.surviving_modes)], axis=0)


def output_bounds(hyp: ModeHypothesis, z: IntervalVector, noise_v: IntervalVector, config: Optional[UpdateConfig] = None) -> IntervalVector:
    """Tightest available enclosure of ``g`` over the framers and noise box."""
    config = config or UpdateConfig()
    box = z.concat(noise_v)
    model = _measurement_model(hyp, z.lo, z.hi, noise_v, config)
    if model.exact:
        # an exact abstraction of an affine map already gives its range
        return IntervalVector(*model.abs.image(box.lo, box.hi))
    return tight_bound(hyp.g, hyp.g_decomp, model.abs, box)


def residual(
    hyp: ModeHypothesis,
    state: ModeObserverState,
    y,
    noise_v: IntervalVector,
    tol: float = MEMBERSHIP_TOL,
    config: Optional[UpdateConfig] = None,
) -> ResidualRecord:
    """Residual of ``y`` against the output enclosure of the predicted framers.

    The propagated (pre-update) framers are used when the state carries them,
    so the membership test is not trivially satisfied by the update itself.
    """
    z = state.z_prop if state.z_prop is not None else state.z
    gb = output_bounds(hyp, z, noise_v, config)
    y = np.asarray(y, dtype=float)
    r = y - 0.5 * (gb.hi + gb.lo)
    half = 0.5 * (gb.hi - gb.lo)
    violated = bool(np.any(half < -tol) or np.any(np.abs(r) > half + tol))
    return ResidualRecord(hyp.mode_id, r, np.maximum(half, 0.0), violated)


def fuse(
    states: dict,
    records: dict,
    previous: Optional[Iterable[int]] = None,
    x_query_grid=None,
    step: int = 0,
) -> FusionResult:
    """Drop violators from the previous survivors and collect the survivors' outputs.

    ``states`` and ``records`` are keyed by mode id.  A state that is no longer
    alive counts as eliminated (empty framers certify inconsistency).
    """
    previous = set(states) if previous is None else set(previous)
    eliminated = {}
    for q in sorted(previous):
        st = states.get(q)
        if st is None or not st.alive:
            eliminated[q] = "empty"
        elif q in records and records[q].violated:
            eliminated[q] = "residual"
    surviving = frozenset(previous - set(eliminated))
    if not surviving:
        raise AllModesEliminated(step)
    order = sorted(surviving)
    n_x = None
    x_union, d_union = [], []
    for q in order:
        z = states[q].z
        n_x = states[q].envelope.n
        x_union.append(z[: n_x] if n_x else z)
        d_union.append(IntervalVector(z.lo[n_x:], z.hi[n_x:]))
    result = FusionResult(
        step=step,
        surviving_modes=surviving,
        x_union=x_union,
        d_union=d_union,
        envelopes={q: states[q].envelope for q in order},
        eliminated=eliminated,
        records={q: records[q] for q in previous if q in records},
    )
    if x_query_grid is not None:
        X = np.atleast_2d(np.asarray(x_query_grid, dtype=float))
        result.mu_hi_grid = result.mu_upper(X)
        result.mu_lo_grid = result.mu_lower(X)
    return result


def initial_state(hyp: ModeHypothesis, init: IntervalVector, envelope: PolicyEnvelope) -> ModeObserverState:
    if init.dim != hyp.nz:
        raise ValueError(f"initial box has dimension {init.dim}, expected {hyp.nz}")
    return ModeObserverState(init, envelope)


def run_smsp(
    hyps: Sequence[ModeHypothesis],
    y_stream: Iterable,
    init: IntervalVector,
    config: UpdateConfig,
    noise_w: IntervalVector,
    noise_v: IntervalVector,
    envelopes: Optional[dict] = None,
    y0=None,
    x_query_grid=None,
    on_step: Optional[Callable[[FusionResult, dict], None]] = None,
) -> Iterator[FusionResult]:
    """Simultaneous mode, state and attack-policy estimation.

    Yields one :class:`FusionResult` per measurement.  ``envelopes`` maps mode
    id to a (possibly warm-started) policy envelope; ``y0``, if given, is used
    for an initial measurement update of ``init``.  ``on_step`` receives the
    fusion result and the per-mode states after every step.
    """
    by_id = {h.mode_id: h for h in hyps}
    if len(by_id) != len(hyps):
        raise ValueError("mode ids must be unique")
    states = {}
    for q in sorted(by_id):
        h = by_id[q]
        env = envelopes[q] if envelopes and q in envelopes else PolicyEnvelope(h.n, h.mu_lipschitz, features=h.policy_features)
        st = initial_state(h, init, env)
        if y0 is not None:
            z, empty = measurement_update(init, y0, h, noise_v, config)
            st = ModeObserverState(z, env, alive=not empty, inconsistent=empty)
        states[q] = st
    survivors = {q for q in states if states[q].alive}
    if not survivors:
        raise AllModesEliminated(0)
    for k, y in enumerate(y_stream, start=1):
        records = {}
        for q in sorted(survivors):
            st = observer_step(states[q], by_id[q], y, noise_w, noise_v, config)
            states[q] = st
            if st.alive:
                records[q] = residual(by_id[q], st, y, noise_v, config=config)
        fused = fuse(states, records, survivors, x_query_grid, step=k)
        for q, why in fused.eliminated.items():
            log.info("step %d: mode %d eliminated (%s)", k, q, why)
            states[q].alive = False
        survivors = set(fused.surviving_modes)
        if on_step is not None:
            on_step(fused, states)
        yield fused
