"""Three-area power network under circuit-breaker attacks.

Each area ``i`` has phase angle ``theta_i`` and frequency ``f_i``; the state is
ordered ``(theta_1, f_1, theta_2, f_2, theta_3, f_3)``.  Tie-line flows are
``t_il sin(theta_i - theta_l)``.  An attacker who controls the breakers can
sever lines, which gives the hidden mode, and injects ``d_i = mu(theta_i)``
into the frequency dynamics and the frequency sensor.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .abstraction import abstract_by_rows
from .analysis import DetectabilityReport, InstabilityResult, WidthModel, detectability_report, from_abstractions, schur_instability_check, stability_search
from .interval import IntervalMatrix, IntervalVector
from .mixed_monotone import JacobianBounds
from .modes import AllModesEliminated, FusionResult, run_smsp
from .observer import ModeHypothesis, UpdateConfig
from .policy import PolicyEnvelope, PolicySample, envelope_abstraction, push_sample

log = logging.getLogger(__name__)

POLICIES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "theta_sin_theta": lambda th: th * np.sin(th),
    "zero": lambda th: np.zeros_like(th),
}

# derivative of each policy and a bound on the magnitude of its second
# derivative over |theta| <= r (used to pad sampled Jacobian ranges)
POLICY_SLOPES: dict[str, tuple[Callable, Callable]] = {
    "theta_sin_theta": (lambda th: np.sin(th) + th * np.cos(th), lambda r: 2.0 + r),
    "zero": (lambda th: np.zeros_like(th), lambda r: 0.0),
}


def _triangle(areas: int) -> list:
    return [(i, l) for i in range(1, areas + 1) for l in range(i + 1, areas + 1)]


@dataclass
class PowerNetModel:
    """Network parameters; scalars broadcast over areas or lines, and
    ``lines=None`` connects every pair of areas."""

    areas: int = 3
    inertia: np.ndarray = 1.0
    damping: np.ndarray = 1.0
    lines: Optional[list] = None  # 1-based area pairs
    tie_line_gains: np.ndarray = 1.0
    dt: float = 0.01
    noise_w: Optional[IntervalVector] = None  # default +-0.1 per state
    noise_v: Optional[IntervalVector] = None
    policy: str = "theta_sin_theta"
    # mode id -> severed line indices (into ``lines``)
    modes: dict = field(default_factory=dict)

    def __post_init__(self):
        a = self.areas
        if a < 1:
            raise ValueError("areas must be positive")
        if self.lines is None:
            self.lines = _triangle(a)
        if self.noise_w is None:
            self.noise_w = IntervalVector.symmetric(np.full(2 * a, 0.1))
        if self.noise_v is None:
            self.noise_v = IntervalVector.symmetric(np.full(2 * a, 0.1))
        self.inertia = np.broadcast_to(np.asarray(self.inertia, dtype=float), (a,)).copy()
        self.damping = np.broadcast_to(np.asarray(self.damping, dtype=float), (a,)).copy()
        self.lines = [tuple(int(v) for v in ln) for ln in self.lines]
        self.tie_line_gains = np.broadcast_to(np.asarray(self.tie_line_gains, dtype=float), (len(self.lines),)).copy()
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if np.any(self.inertia <= 0):
            raise ValueError("inertia must be positive")
        for i, l in self.lines:
            if not (1 <= i <= a and 1 <= l <= a) or i == l:
                raise ValueError(f"invalid tie line ({i}, {l})")
        if self.noise_w.dim != 2 * a or self.noise_v.dim != 2 * a:
            raise ValueError("noise boxes must have one entry per state")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; choose from {sorted(POLICIES)}")
        if not self.modes:
            self.modes = default_modes(self.areas, self.lines)

    @property
    def n(self) -> int:
        return 2 * self.areas

    @property
    def p(self) -> int:
        return self.areas

    def policy_fn(self) -> Callable[[np.ndarray], np.ndarray]:
        return POLICIES[self.policy]

    def active_lines(self, mode: int) -> list:
        cut = set(self.modes[mode])
        return [(k, ln) for k, ln in enumerate(self.lines) if k not in cut]


def default_modes(areas: int, lines: Sequence) -> dict:
    """Mode 1: no attack; mode ``i + 1``: area ``i`` cut off; last mode: every line cut."""
    modes = {1: ()}
    for i in range(1, areas + 1):
        modes[i + 1] = tuple(k for k, ln in enumerate(lines) if i in ln)
    modes[areas + 2] = tuple(range(len(lines)))
    return modes


@dataclass
class ScenarioConfig:
    true_mode: int = 1
    horizon: int = 2000
    seed: int = 0
    initial_box: Optional[IntervalVector] = None  # default +-0.3 per state
    initial_policy_samples: int = 400
    lipschitz: np.ndarray = 4.0
    observer: UpdateConfig = field(default_factory=UpdateConfig)
    output: str = "out"
    model: PowerNetModel = field(default_factory=PowerNetModel)
    # bound on |d| used to initialise the attack framers when there is no warm start
    attack_bound: float = 10.0
    # box over which global abstractions are computed (theta, f, d ranges)
    region_theta: tuple = (-1.0, 4.5)
    region_freq: tuple = (-5.0, 5.0)
    region_attack: tuple = (-15.0, 15.0)

    def __post_init__(self):
        if self.true_mode not in self.model.modes:
            raise ValueError(f"true_mode must be one of {sorted(self.model.modes)}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.initial_policy_samples < 0:
            raise ValueError("initial_policy_samples must be >= 0")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.initial_box is None:
            self.initial_box = IntervalVector.symmetric(np.full(self.model.n, 0.3))
        self.lipschitz = np.broadcast_to(np.asarray(self.lipschitz, dtype=float), (self.model.p,)).copy()
        if self.initial_box.dim != self.model.n:
            raise ValueError(f"initial_box must have dimension {self.model.n}")


def _dynamics(model: PowerNetModel, mode: int):
    a, dt = model.areas, model.dt
    m, D = model.inertia, model.damping
    act = model.active_lines(mode)
    n, p = model.n, model.p

    def f(Z):
        Z = np.atleast_2d(Z)
        x, d, w = Z[:, :n], Z[:, n : n + p], Z[:, n + p :]
        th, fr = x[:, 0::2], x[:, 1::2]
        P = np.zeros_like(th)
        for k, (i, l) in act:
            s = model.tie_line_gains[k] * np.sin(th[:, i - 1] - th[:, l - 1])
            P[:, i - 1] += s
            P[:, l - 1] -= s
        out = np.empty((Z.shape[0], n))
        out[:, 0::2] = th + dt * (fr + w[:, 0::2])
        out[:, 1::2] = fr + dt * (-(D * fr + P - d) / m + w[:, 1::2])
        return out

    # Jacobian bounds over all states, from |cos| <= 1
    nz = n + p + n
    lo = np.zeros((n, nz))
    hi = np.zeros((n, nz))
    for i in range(a):
        r_th, r_fr = 2 * i, 2 * i + 1
        lo[r_th, r_th] = hi[r_th, r_th] = 1.0
        lo[r_th, r_fr] = hi[r_th, r_fr] = dt
        lo[r_th, n + p + r_th] = hi[r_th, n + p + r_th] = dt
        lo[r_fr, r_fr] = hi[r_fr, r_fr] = 1.0 - dt * D[i] / m[i]
        lo[r_fr, n + i] = hi[r_fr, n + i] = dt / m[i]
        lo[r_fr, n + p + r_fr] = hi[r_fr, n + p + r_fr] = dt
    for k, (i, l) in act:
        t = model.tie_line_gains[k]
        for area in (i, l):
            c = dt * abs(t) / m[area - 1]
            row = 2 * (area - 1) + 1
            lo[row, 2 * (i - 1)] -= c
            hi[row, 2 * (i - 1)] += c
            lo[row, 2 * (l - 1)] -= c
            hi[row, 2 * (l - 1)] += c
    return f, JacobianBounds(lo, hi)


def _measurement(model: PowerNetModel):
    n, p = model.n, model.p

    def g(Z):
        Z = np.atleast_2d(Z)
        x, d, v = Z[:, :n], Z[:, n : n + p], Z[:, n + p :]
        y = x + v
        y[:, 1::2] += d
        return y

    J = np.zeros((n, n + p + n))
    J[:, :n] = np.eye(n)
    J[:, n + p :] = np.eye(n)
    for i in range(p):
        J[2 * i + 1, n + i] = 1.0
    return g, JacobianBounds(J, J.copy())


def analysis_region(cfg: ScenarioConfig) -> IntervalVector:
    """Box in ``[x, d]`` used for global abstractions and offline analysis."""
    n, p = cfg.model.n, cfg.model.p
    lo = np.empty(n + p)
    hi = np.empty(n + p)
    lo[0:n:2], hi[0:n:2] = cfg.region_theta
    lo[1:n:2], hi[1:n:2] = cfg.region_freq
    lo[n:], hi[n:] = cfg.region_attack
    return IntervalVector(lo, hi)


def build_powernet(cfg: ScenarioConfig, with_global: bool = True) -> tuple[PowerNetModel, list]:
    """The network model and one observer hypothesis per breaker mode."""
    model = cfg.model
    n, p = model.n, model.p
    region = analysis_region(cfg)
    g, gjb = _measurement(model)
    g_box = region.concat(model.noise_v)
    g_global = abstract_by_rows(g, g_box, gjb.lo, gjb.hi, 2) if with_global else None
    features = [[2 * i] for i in range(p)]
    # the attack enters the frequency equation and the frequency sensor of each area
    attack_pattern = np.zeros((n, p))
    attack_pattern[1::2] = np.eye(p)
    hyps = []
    for q in sorted(model.modes):
        f, fjb = _dynamics(model, q)
        f_global = None
        if with_global:
            f_global = abstract_by_rows(f, region.concat(model.noise_w), fjb.lo, fjb.hi, 5)
        cut = model.modes[q]
        hyps.append(
            ModeHypothesis(
                mode_id=q,
                n=n,
                p=p,
                f=f,
                g=g,
                f_jacobian_bounds=fjb,
                g_jacobian_bounds=gjb,
                mu_lipschitz=cfg.lipschitz,
                policy_features=features,
                global_f_abs=f_global,
                global_g_abs=g_global,
                G_index=attack_pattern,
                H_index=attack_pattern,
                name="no attack" if not cut else "lines cut: " + ", ".join(f"{model.lines[k]}" for k in cut),
            )
        )
    return model, hyps


def simulate_truth(model: PowerNetModel, true_mode: int, horizon: int, seed: int, x0=None, initial_box=None):
    """Euler simulation; returns states ``(H+1, n)``, attacks ``(H+1, p)`` and outputs ``(H+1, l)``.

    ``x0`` defaults to a uniform draw from ``initial_box`` (itself defaulting to
    ``[-0.3, 0.3]`` per state).  Noise is uniform over the boxes.
    """
    rng = np.random.default_rng(seed)
    n, p = model.n, model.p
    if x0 is None:
        box = initial_box if initial_box is not None else IntervalVector.symmetric(np.full(n, 0.3))
        x0 = rng.uniform(box.lo, box.hi)
    f, _ = _dynamics(model, true_mode)
    g, _ = _measurement(model)
    mu = model.policy_fn()
    X = np.empty((horizon + 1, n))
    Dd = np.empty((horizon + 1, p))
    Y = np.empty((horizon + 1, n))
    X[0] = x0
    W = rng.uniform(model.noise_w.lo, model.noise_w.hi, size=(horizon, n))
    V = rng.uniform(model.noise_v.lo, model.noise_v.hi, size=(horizon + 1, n))
    for k in range(horizon + 1):
        Dd[k] = mu(X[k, 0::2])
        Y[k] = g(np.concatenate([X[k], Dd[k], V[k]]))[0]
        if k < horizon:
            X[k + 1] = f(np.concatenate([X[k], Dd[k], W[k]]))[0]
    return X, Dd, Y


def latin_grid(box: IntervalVector, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` points whose projection on every axis is an evenly spaced grid."""
    if count == 0:
        return np.zeros((0, box.dim))
    u = (np.arange(count) + 0.5) / count
    cols = [box.lo[j] + rng.permutation(u) * box.width[j] for j in range(box.dim)]
    return np.stack(cols, axis=1)


def warm_start_policy(model: PowerNetModel, cfg: ScenarioConfig) -> dict:
    """Envelopes seeded with exact policy samples over the initial state box."""
    rng = np.random.default_rng([cfg.seed, 1])
    pts = latin_grid(cfg.initial_box, cfg.initial_policy_samples, rng)
    mu = model.policy_fn()
    features = [[2 * i] for i in range(model.p)]
    base = PolicyEnvelope(model.n, cfg.lipschitz, features=features)
    zero = np.zeros(model.p)
    for x in pts:
        d = mu(x[0::2])
        base = push_sample(base, PolicySample(x, d, d, zero))
    # each mode learns on its own branch of the shared warm-start buffer
    return {q: base for q in sorted(model.modes)}


def initial_augmented_box(cfg: ScenarioConfig, envelope: PolicyEnvelope) -> IntervalVector:
    xb = cfg.initial_box
    if len(envelope):
        d_lo, d_hi = envelope.box_bounds(xb.lo, xb.hi)
    else:
        d_lo = np.full(cfg.model.p, -cfg.attack_bound)
        d_hi = np.full(cfg.model.p, cfg.attack_bound)
    return IntervalVector(np.concatenate([xb.lo, d_lo]), np.concatenate([xb.hi, d_hi]))


@dataclass
class RunResult:
    truth_x: np.ndarray
    truth_d: np.ndarray
    outputs: np.ndarray
    # per step (1..H): mode id -> (z_lo, z_hi) for survivors
    framers: list
    residuals: list
    alive: list
    elimination_step: dict
    envelopes: dict
    all_eliminated_at: Optional[int] = None
    wall_time: float = 0.0

    def true_mode_violation(self, mode: int) -> float:
        """Largest amount by which the truth leaves that mode's framers."""
        worst = 0.0
        for k, fr in enumerate(self.framers, start=1):
            if mode not in fr:
                continue
            lo, hi = fr[mode]
            z = np.concatenate([self.truth_x[k], self.truth_d[k]])
            worst = max(worst, float(np.max(lo - z)), float(np.max(z - hi)))
        return worst


def run_scenario(
    cfg: ScenarioConfig,
    hyps: Optional[list] = None,
    keep_envelopes_at: Sequence[int] = (),
    on_step: Optional[Callable] = None,
) -> RunResult:
    """Simulate the truth and run the observer bank over it."""
    t0 = time.perf_counter()
    model = cfg.model
    if hyps is None:
        model, hyps = build_powernet(cfg)
    X, Dd, Y = simulate_truth(model, cfg.true_mode, cfg.horizon, cfg.seed, initial_box=cfg.initial_box)
    envs = warm_start_policy(model, cfg)
    init = initial_augmented_box(cfg, next(iter(envs.values())))
    obs_cfg = dataclasses.replace(cfg.observer, input_bound=cfg.attack_bound)
    framers, residuals, alive = [], [], []
    elim = {}
    kept = {0: dict(envs)} if 0 in keep_envelopes_at else {}

    def record(fused: FusionResult, states: dict):
        framers.append({q: (states[q].z.lo.copy(), states[q].z.hi.copy()) for q in fused.surviving_modes})
        residuals.append({q: r.r.copy() for q, r in fused.records.items() if q in fused.surviving_modes})
        alive.append(frozenset(fused.surviving_modes))
        for q in fused.eliminated:
            elim.setdefault(q, fused.step)
        if fused.step in keep_envelopes_at:
            kept[fused.step] = dict(fused.envelopes)
        if on_step is not None:
            on_step(fused, states)

    all_dead = None
    try:
        for _ in run_smsp(hyps, Y[1:], init, obs_cfg, model.noise_w, model.noise_v, envs, y0=Y[0], on_step=record):
            pass
    except AllModesEliminated as exc:
        all_dead = exc.step
    return RunResult(X, Dd, Y, framers, residuals, alive, elim, kept, all_dead, time.perf_counter() - t0)


def _fmt(v: float) -> str:
    return repr(float(v))


def trace_header(model: PowerNetModel) -> list:
    n, p = model.n, model.p
    cols = ["step"] + [f"x{i + 1}" for i in range(n)] + [f"d{j + 1}" for j in range(p)]
    for q in sorted(model.modes):
        cols += [f"x{i + 1}_{b}_{q}" for i in range(n) for b in ("lo", "hi")]
        cols += [f"d{j + 1}_{b}_{q}" for j in range(p) for b in ("lo", "hi")]
        cols += [f"r{c + 1}_{q}" for c in range(n)]
    cols.append("alive_mask")
    return cols


def write_trace(path, model: PowerNetModel, res: RunResult) -> None:
    n, p = model.n, model.p
    modes = sorted(model.modes)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trace_header(model))
    for k in range(1, len(res.framers) + 1):
        fr, rs, al = res.framers[k - 1], res.residuals[k - 1], res.alive[k - 1]
        row = [str(k)] + [_fmt(v) for v in res.truth_x[k]] + [_fmt(v) for v in res.truth_d[k]]
        for q in modes:
            if q in fr:
                lo, hi = fr[q]
                row += [_fmt(v) for i in range(n) for v in (lo[i], hi[i])]
                row += [_fmt(v) for j in range(p) for v in (lo[n + j], hi[n + j])]
                r = rs.get(q)
                row += [_fmt(v) for v in r] if r is not None else [""] * n
            else:
                row += [""] * (2 * n + 2 * p + n)
        row.append(str(sum(1 << (q - 1) for q in al)))
        w.writerow(row)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(buf.getvalue())
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc


def summarize(cfg: ScenarioConfig, res: RunResult) -> dict:
    q = cfg.true_mode
    widths = [float(np.linalg.norm(fr[q][1] - fr[q][0])) for fr in res.framers if q in fr]
    return {
        "true_mode": q,
        "horizon": cfg.horizon,
        "seed": cfg.seed,
        "steps_run": len(res.framers),
        "elimination_step": {str(m): res.elimination_step.get(m) for m in sorted(cfg.model.modes) if m != q},
        "true_mode_eliminated": q in res.elimination_step,
        "all_modes_eliminated_at": res.all_eliminated_at,
        "final_width_norm": widths[-1] if widths else None,
        "max_framer_violation": max(res.true_mode_violation(q), 0.0),
        "wall_time_s": res.wall_time,
    }


def run_and_trace(cfg: ScenarioConfig, out_dir: Optional[str] = None) -> tuple[str, dict]:
    """Run the scenario, write ``trace.csv`` and ``summary.json`` under ``out_dir``."""
    out_dir = out_dir or cfg.output
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    res = run_scenario(cfg)
    trace = os.path.join(out_dir, "trace.csv")
    write_trace(trace, cfg.model, res)
    summary = summarize(cfg, res)
    path = os.path.join(out_dir, "summary.json")
    try:
        with open(path, "w") as fh:
            json.dump(summary, fh, indent=2)
    except OSError as exc:
        raise OSError(f"cannot write summary to {path}: {exc}") from exc
    if res.all_eliminated_at is not None:
        raise AllModesEliminated(res.all_eliminated_at)
    return trace, summary


def policy_jacobian_bounds(model: PowerNetModel, theta_range: tuple, samples: int = 4001) -> IntervalMatrix:
    """Bounds on ``d mu / d x`` with the policy slope sampled over ``theta_range``."""
    slope, curvature = POLICY_SLOPES[model.policy]
    lo_t, hi_t = theta_range
    th = np.linspace(lo_t, hi_t, samples)
    s = slope(th)
    pad = curvature(max(abs(lo_t), abs(hi_t))) * 0.5 * (hi_t - lo_t) / (samples - 1)
    lo = np.zeros((model.p, model.n))
    hi = np.zeros((model.p, model.n))
    for i in range(model.p):
        lo[i, 2 * i] = s.min() - pad
        hi[i, 2 * i] = s.max() + pad
    return IntervalMatrix(lo, hi)


def instability_check(cfg: ScenarioConfig, mode: int, theta_range: Optional[tuple] = None, criterion: str = "real_part") -> InstabilityResult:
    """Closed-loop instability test of one mode over ``theta_range`` (default: the analysis region)."""
    model = cfg.model
    n, p = model.n, model.p
    _, fjb = _dynamics(model, mode)
    jx = IntervalMatrix(fjb.lo[:, :n], fjb.hi[:, :n])
    jd = IntervalMatrix(fjb.lo[:, n : n + p], fjb.hi[:, n : n + p])
    jmu = policy_jacobian_bounds(model, theta_range or cfg.region_theta)
    return schur_instability_check(jx, jd, jmu, criterion)


def width_model(cfg: ScenarioConfig, hyp: ModeHypothesis, envelope: PolicyEnvelope) -> WidthModel:
    """Width model of one mode from its global abstractions and the policy
    envelope abstracted over the analysis region."""
    if hyp.global_f_abs is None or hyp.global_g_abs is None:
        raise ValueError("width model needs the global abstractions")
    model = cfg.model
    region = analysis_region(cfg)
    mu_abs = envelope_abstraction(envelope, region[: model.n])
    return from_abstractions(
        hyp.global_g_abs,
        hyp.global_f_abs,
        mu_abs,
        hyp.f_decomp,
        model.n,
        model.p,
        model.noise_w.width,
        model.noise_v.width,
    )


def analyze(cfg: ScenarioConfig, criterion: str = "real_part") -> DetectabilityReport:
    """Stability certificate and instability test for every mode."""
    model, hyps = build_powernet(cfg)
    envs = warm_start_policy(model, cfg)
    certs, instab = {}, {}
    for h in hyps:
        certs[h.mode_id] = stability_search(width_model(cfg, h, envs[h.mode_id]))
        instab[h.mode_id] = instability_check(cfg, h.mode_id, criterion=criterion)
    return detectability_report(certs, instab)
