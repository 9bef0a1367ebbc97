"""Acceptance suite: one PASS/FAIL line per criterion, tolerances as required."""

import sys
import time

import numpy as np
import pytest

import toy
from oracles import best_parallel_width
from smsp.abstraction import grid_samples, solve_parallel_abstraction
from smsp.analysis import enumerate_admissible, iterate_bound, stability_search
from smsp.cli import main
from smsp.interval import IntervalVector
from smsp.mixed_monotone import JacobianBounds
from smsp.observer import ModeHypothesis, ModeObserverState, UpdateConfig, measurement_update, observer_step
from smsp.scenario import ScenarioConfig, build_powernet, run_scenario
from width_models import ScalarLoop, random_width_model

pytestmark = pytest.mark.slow

CONTAIN_TOL = 1e-9


def _violating_steps(res, mode, tol=CONTAIN_TOL):
    count = 0
    for k, fr in enumerate(res.framers, start=1):
        if mode in fr:
            lo, hi = fr[mode]
            z = np.concatenate([res.truth_x[k], res.truth_d[k]])
            count += bool(np.any(lo - z > tol) or np.any(z - hi > tol))
        else:
            count += 1
    return count


def test_framer_correctness_and_true_mode_safety(criterion):
    cfg0 = ScenarioConfig()
    _, hyps = build_powernet(cfg0)
    t0 = time.perf_counter()
    violations, eliminated, worst = 0, 0, 0.0
    runs = 100
    for seed in range(runs):
        res = run_scenario(ScenarioConfig(seed=seed, horizon=2000, true_mode=1), hyps=hyps)
        assert len(res.framers) == 2000
        violations += _violating_steps(res, 1)
        worst = max(worst, res.true_mode_violation(1))
        dropped = 1 in res.elimination_step or res.all_eliminated_at is not None or any(1 not in a for a in res.alive)
        eliminated += dropped
    elapsed = time.perf_counter() - t0
    ok1 = criterion(
        1,
        violations == 0,
        f"{violations} containment violations over {runs} runs x 2000 steps (tol 1e-9, worst excess {worst:.3g}); "
        f"runtime {elapsed:.0f} s (expected < 300 s)",
    )
    ok2 = criterion(2, eliminated == 0, f"true mode eliminated in {eliminated} of {runs} runs")
    assert ok1 and ok2


def test_mode_elimination(criterion):
    cfg0 = ScenarioConfig()
    _, hyps = build_powernet(cfg0)
    runs = 20
    last = []
    for seed in range(runs):
        res = run_scenario(ScenarioConfig(seed=seed, horizon=5000), hyps=hyps)
        steps = [res.elimination_step.get(q) for q in (2, 3, 4, 5)]
        last.append(max(steps) if None not in steps else np.inf)
    done = int(np.sum(np.isfinite(last)))
    median = float(np.median(last))
    ok = criterion(
        3,
        done >= 0.9 * runs,
        f"all four false modes eliminated within 5000 steps in {done}/{runs} runs (need >= 18); "
        f"median last-elimination step {median:g}",
    )
    assert ok


def test_abstraction_optimum(criterion):
    t0 = time.perf_counter()
    dom_sq = IntervalVector([0.0], [1.0])
    dom_sin = IntervalVector([0.0], [np.pi])
    sq = solve_parallel_abstraction(np.square, np.square, dom_sq, grid_samples(dom_sq, 2001)[0], 0.0)
    sn = solve_parallel_abstraction(np.sin, np.sin, dom_sin, grid_samples(dom_sin, 2001)[0], 0.0)
    elapsed = time.perf_counter() - t0
    ref_sq, _ = best_parallel_width(np.square, 0.0, 1.0, 2001)
    ref_sin, _ = best_parallel_width(np.sin, 0.0, np.pi, 2001)
    ok = (
        abs(sq.theta - 0.25) <= 1e-5
        and abs(sn.theta - 1.0) <= 1e-4
        and abs(sq.theta - ref_sq) <= 1e-5
        and abs(sn.theta - ref_sin) <= 1e-4
        and elapsed < 5.0
    )
    criterion(
        4,
        ok,
        f"x^2 on [0,1]: theta {sq.theta:.8f} (brute force {ref_sq:.8f}); sin on [0,pi]: theta {sn.theta:.8f} "
        f"(brute force {ref_sin:.8f}); {elapsed:.2f} s",
    )
    assert ok


def test_width_bound(criterion):
    sl = ScalarLoop()
    hyp = sl.hypothesis()
    wm = sl.width_model()
    X, D, Y = sl.simulate(1000, seed=0)
    x_box = IntervalVector([X[0] - 0.5], [X[0] + 0.5])
    d_lo, d_hi = sl.envelope.box_bounds(x_box.lo, x_box.hi)
    state = ModeObserverState(IntervalVector(np.r_[x_box.lo, d_lo], np.r_[x_box.hi, d_hi]), sl.envelope)
    widths = [state.z.width]
    contained = True
    for k in range(1, 1001):
        state = observer_step(state, hyp, Y[k : k + 1], sl.noise_w, sl.noise_v)
        contained &= state.alive and state.z.contains([X[k], D[k]], tol=CONTAIN_TOL)
        widths.append(state.z.width)
    W = np.array(widths)
    worst = -np.inf
    triples = enumerate_admissible(wm)
    for Dt in triples:
        B = iterate_bound(wm, Dt, W[0], 1000)
        with np.errstate(invalid="ignore"):
            worst = max(worst, float(np.max(W - B)))
    ok = contained and worst <= 1e-12
    criterion(
        5,
        ok,
        f"scalar loop, 1000 steps, {len(triples)} admissible triples: max(observed - bound) = {worst:.3g} (tol 1e-12); "
        f"truth contained: {bool(contained)}",
    )
    assert ok


def test_stability_search_agreement(criterion):
    rng = np.random.default_rng(2024)
    diffs, masked, bits, feasible = [], 0, [], 0
    for i in range(50):
        # half of the models sit near the top of the size range
        wm = random_width_model(rng, max_bits=12, min_bits=9 if i % 2 else 0)
        bits.append(len(wm.free_d1) + wm.l + wm.n)
        ex = stability_search(wm, "exhaustive")
        gr = stability_search(wm, "greedy")
        diffs.append(abs(ex.contraction_norm - gr.contraction_norm))
        masked += not (ex.respects_mask(wm.r_mask) and gr.respects_mask(wm.r_mask))
        feasible += ex.feasible
    ok = max(bits) <= 12 and max(diffs) <= 1e-10 and masked == 0
    criterion(
        6,
        ok,
        f"50 random models ({min(bits)}-{max(bits)} binary choices, {feasible} contracting): "
        f"max |L*_exhaustive - L*_greedy| = {max(diffs):.3g} (tol 1e-10); mask violations {masked}",
    )
    assert ok


def test_envelope_learning(criterion):
    cfg = ScenarioConfig()
    q = cfg.true_mode
    th = np.linspace(*cfg.region_theta, 111)
    grid = np.zeros((th.size, cfg.model.n))
    grid[:, 0::2] = th[:, None]
    true = grid[:, 0::2] * np.sin(grid[:, 0::2])
    worst = [0.0]

    def check(fused, states):
        env = fused.envelopes.get(q)
        if env is None:
            worst[0] = np.inf
            return
        lo, hi = env.eval_lower(grid), env.eval_upper(grid)
        worst[0] = max(worst[0], float(np.max(lo - true)), float(np.max(true - hi)))

    res = run_scenario(cfg, keep_envelopes_at=(0, 1500), on_step=check)
    e0, e1 = res.envelopes[0][q], res.envelopes[1500][q]
    w0 = float(np.mean(e0.eval_upper(grid) - e0.eval_lower(grid)))
    w1 = float(np.mean(e1.eval_upper(grid) - e1.eval_lower(grid)))
    ok = w1 < w0 and worst[0] <= CONTAIN_TOL
    criterion(
        7,
        ok,
        f"default run (seed {cfg.seed}): mean envelope width on a {th.size}-point theta grid {w0:.6g} at k=0, "
        f"{w1:.6g} at k=1500 ({len(e0)} -> {len(e1)} samples); worst containment excess {worst[0]:.3g} (tol 1e-9)",
    )
    assert ok


def _nonlinear_hypothesis():
    def g(Z):
        Z = np.atleast_2d(Z)
        x0, x1, d, v0, v1 = Z.T
        return np.stack([x0 + 0.3 * np.sin(x1) + v0, x1 + d + 0.2 * np.tanh(x0) + v1], axis=1)

    gjb = JacobianBounds(
        np.array([[1.0, -0.3, 0.0, 1.0, 0.0], [0.0, 1.0, 1.0, 0.0, 1.0]]),
        np.array([[1.0, 0.3, 0.0, 1.0, 0.0], [0.2, 1.0, 1.0, 0.0, 1.0]]),
    )
    f, fjb = toy.make_f()
    return ModeHypothesis(1, 2, 1, f, g, fjb, gjb, [toy.L])


def _nested(its, tol=CONTAIN_TOL):
    return all(a.contains_box(b, tol=tol) for a, b in zip(its, its[1:]))


def test_update_nesting(criterion):
    rng = np.random.default_rng(8)
    cfg = ScenarioConfig()
    model, hyps = build_powernet(cfg)
    nonlinear = _nonlinear_hypothesis()
    total, bad, pairs = 0, 0, 0
    config = UpdateConfig()
    for i in range(9000):
        hyp = hyps[i % len(hyps)]
        bad, pairs = _one_update(rng, hyp, model.noise_v, config, bad, pairs)
        total += 1
    for _ in range(1000):
        bad, pairs = _one_update(rng, nonlinear, toy.NOISE_V, config, bad, pairs)
        total += 1
    ok = total == 10_000 and bad == 0
    criterion(8, ok, f"{total} randomized updates ({pairs} consecutive iterate pairs): {bad} nesting failures")
    assert ok


def _one_update(rng, hyp, noise_v, config, bad, pairs):
    nz = hyp.nz
    z = rng.uniform(-2.0, 2.0, nz)
    v = rng.uniform(noise_v.lo, noise_v.hi)
    y = hyp.g(np.concatenate([z, v]))[0]
    if rng.random() < 0.2:
        # outputs that may be inconsistent with the prior
        y = y + rng.normal(scale=1.0, size=y.shape)
    prior = IntervalVector(z - rng.uniform(0, 1.5, nz), z + rng.uniform(0, 1.5, nz))
    _, _, its = measurement_update(prior, y, hyp, noise_v, config, return_iterates=True)
    pairs += len(its) - 1
    bad += not _nested(its)
    return bad, pairs


def test_determinism(criterion, tmp_path):
    from pathlib import Path

    cfg = str(Path(__file__).resolve().parents[1] / "configs" / "default.toml")
    same = []
    for seed in ("0", "7"):
        a, b = tmp_path / f"a{seed}", tmp_path / f"b{seed}"
        assert main(["run", "--config", cfg, "--out", str(a), "--seed", seed]) == 0
        assert main(["run", "--config", cfg, "--out", str(b), "--seed", seed]) == 0
        same.append((a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes())
    ok = all(same)
    criterion(9, ok, f"repeated `smsp run` on the default config gives byte-identical traces for seeds 0 and 7: {same}")
    assert ok


def test_convergence(criterion):
    cfg = ScenarioConfig(horizon=3000)
    res = run_scenario(cfg)
    q = cfg.true_mode
    w = np.array([np.linalg.norm(fr[q][1] - fr[q][0]) for fr in res.framers])
    assert w.size == 3000
    w2700, w3000 = w[2699], w[2999]
    rel = abs(w3000 - w2700) / w2700
    tail = w[2700:]
    ok = rel < 1e-3
    criterion(
        10,
        ok,
        f"seed {cfg.seed}, 3000 steps: width norm {w2700:.6g} at k=2700, {w3000:.6g} at k=3000, relative change "
        f"{rel:.3g} (need < 1e-3); last-300 range [{tail.min():.4g}, {tail.max():.4g}]",
    )
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
