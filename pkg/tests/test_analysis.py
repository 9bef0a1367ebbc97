import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smsp.analysis import (
    DetectabilityReport,
    StabilityCertificate,
    WidthModel,
    contraction_norm,
    detectability_report,
    enumerate_admissible,
    iterate_bound,
    limit_bound,
    schur_instability_check,
    stability_search,
    system_matrices,
    width_step,
)
from smsp.interval import IntervalMatrix
from width_models import ScalarLoop, random_width_model


def _objective(wm, D):
    A_bar, D_bar = system_matrices(wm, D)
    L = float(np.linalg.norm(A_bar, 2))
    lim = float(np.linalg.norm(limit_bound(A_bar, D_bar))) if L < 1 else np.inf
    return lim, L


def test_perfect_measurement_certificate():
    wm = ScalarLoop(a=0.5, b=0.3, c=0.8).width_model()
    cert = stability_search(wm, "exhaustive")
    assert cert.feasible
    np.testing.assert_array_equal(np.diag(cert.D1), [1.0, 0.0])
    assert cert.D2[0, 0] == 1.0
    # x is measured to within the noise width; d follows through the policy slope
    assert cert.limit_width[0] == pytest.approx(0.2)
    assert cert.limit_width[1] == pytest.approx(0.8 * (0.5 * 0.2 + 0.3 * cert.limit_width[1] + 0.1) + 0.8 * 0.05)
    assert cert.respects_mask(wm.r_mask)
    assert cert.evaluated == 8
    assert cert.limit_width_exp is not None


def test_no_measurement_means_open_loop_growth():
    wm = ScalarLoop(a=1.2, b=0.3, c=0.8).width_model()
    D = (np.zeros((2, 2)), np.eye(1), np.eye(1))
    A_bar, _ = system_matrices(wm, D)
    np.testing.assert_allclose(A_bar[0], [1.2, 0.3])
    assert contraction_norm(wm, D) > 1.0


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_exhaustive_search_is_the_brute_force_optimum(seed):
    wm = random_width_model(np.random.default_rng(seed), max_bits=9)
    cert = stability_search(wm, "exhaustive")
    best = min(_objective(wm, D) for D in enumerate_admissible(wm))
    got = _objective(wm, (cert.D1, cert.D2, cert.D3))
    assert got[0] == best[0] or np.isclose(got[0], best[0], rtol=1e-12)
    assert got[1] == pytest.approx(best[1], abs=1e-12)
    assert cert.respects_mask(wm.r_mask)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_greedy_certificates_respect_mask(seed):
    wm = random_width_model(np.random.default_rng(seed))
    cert = stability_search(wm, "greedy", restarts=3, seed=seed)
    assert cert.respects_mask(wm.r_mask)
    assert cert.contraction_norm == pytest.approx(contraction_norm(wm, (cert.D1, cert.D2, cert.D3)), abs=1e-10)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_limit_matches_iterated_bound(seed):
    rng = np.random.default_rng(seed)
    wm = random_width_model(rng, scale=0.3)
    cert = stability_search(wm)
    if not cert.feasible or cert.contraction_norm > 0.9:
        return
    D = (cert.D1, cert.D2, cert.D3)
    traj = iterate_bound(wm, D, rng.uniform(0, 2, wm.nz), 600)
    np.testing.assert_allclose(traj[-1], cert.limit_width, atol=1e-6)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_width_step_is_monotone(seed):
    rng = np.random.default_rng(seed)
    wm = random_width_model(rng)
    D = enumerate_admissible(wm)[int(rng.integers(len(enumerate_admissible(wm))))]
    a = rng.uniform(0, 1, wm.nz)
    b = a + rng.uniform(0, 1, wm.nz)
    assert np.all(width_step(wm, D, a) <= width_step(wm, D, b) + 1e-12)


def test_masked_coordinate_gets_infinite_width():
    wm = ScalarLoop().width_model()
    D = (np.diag([0.0, 1.0]), np.eye(1), np.eye(1))
    out = width_step(wm, D, [0.1, 0.1])
    assert np.isinf(out[1]) and np.isfinite(out[0])
    with pytest.raises(ValueError):
        width_step(wm, D, [-1.0, 0.0])


def test_admissible_set_excludes_masked_bits():
    wm = ScalarLoop().width_model()
    triples = enumerate_admissible(wm)
    assert len(triples) == 8
    assert all(D[0][1, 1] == 0.0 for D in triples)


def test_literal_policy_row_form():
    kw = ScalarLoop().width_model().__dict__.copy()
    kw["literal_policy_row"] = True
    wm = WidthModel(**kw)
    A_bar, D_bar = system_matrices(wm, (np.diag([1.0, 0.0]), np.eye(1), np.eye(1)))
    np.testing.assert_allclose(A_bar[1], [0.8, 0.0])
    assert D_bar[1] == pytest.approx(0.8 * 0.05)


def test_width_model_validation():
    kw = ScalarLoop().width_model().__dict__.copy()
    bad = dict(kw, A_f_abs=[[-1.0, 0.0]])
    with pytest.raises(ValueError):
        WidthModel(**bad)
    with pytest.raises(ValueError):
        WidthModel(**dict(kw, r_mask=[0]))
    with pytest.raises(ValueError):
        WidthModel(**dict(kw, A_mu_abs=[[1.0, 2.0]]))
    with pytest.raises(ValueError):
        stability_search(ScalarLoop().width_model(), method="annealing")


def test_schur_instability_examples():
    one = lambda v: IntervalMatrix.point(np.array([[v]]))
    assert schur_instability_check(one(2.0), one(0.0), one(0.0)).unstable
    assert not schur_instability_check(one(0.5), one(0.0), one(0.0)).unstable
    neg = schur_instability_check(one(-0.5), one(0.0), one(0.0))
    assert neg.unstable and not neg.unstable_by_radius
    assert not schur_instability_check(one(-0.5), one(0.0), one(0.0), criterion="spectral_radius").flag
    # closed loop 0.9 + 1 * 0.5 from the policy slope
    res = schur_instability_check(one(0.9), one(1.0), IntervalMatrix([[0.0]], [[1.0]]))
    assert res.J_m[0, 0] == pytest.approx(1.4) and res.flag
    with pytest.raises(ValueError):
        schur_instability_check(one(0.9), one(1.0), one(1.0), criterion="other")
    with pytest.raises(ValueError):
        schur_instability_check(IntervalMatrix.point(np.ones((2, 3))), one(1.0), one(1.0))


def test_detectability_report():
    wm = ScalarLoop().width_model()
    good = stability_search(wm)
    bad = StabilityCertificate(good.D1, good.D2, good.D3, 1.5, False, np.full(2, np.inf))
    one = lambda v: IntervalMatrix.point(np.array([[v]]))
    unstable = schur_instability_check(one(2.0), one(0.0), one(0.0))
    stable = schur_instability_check(one(0.5), one(0.0), one(0.0))
    rep = detectability_report({1: good, 2: bad}, {1: unstable, 2: stable})
    assert isinstance(rep, DetectabilityReport)
    assert not rep.detectable
    assert rep.failures == {2: ["observer_stability", "destabilizing_policy"]}
    text = rep.to_text()
    assert text.startswith("detectable: false\n")
    assert "mode_1.D1: 10" in text and "mode_2.failed: observer_stability, destabilizing_policy" in text
    for line in text.strip().splitlines():
        assert ": " in line
    assert detectability_report([good], [unstable]).detectable
    with pytest.raises(ValueError):
        detectability_report({1: good}, {2: unstable})


def _scalar_state_only(a_f, c):
    return WidthModel(
        A_g=[[1.0]],
        A_g_dagger_abs=[[1.0]],
        W_g_abs=[[1.0]],
        W_f_abs=[[1.0]],
        A_f_abs=[[a_f]],
        A_mu_abs=np.zeros((0, 1)),
        C_f_z=[[c]],
        C_f_w=[[0.0]],
        delta_e_f=[0.0],
        delta_e_g=[0.0],
        delta_w=[0.1],
        delta_v=[0.2],
        r_mask=[0],
    )


def test_perfect_measurement_row_gives_zero_contraction():
    # |A_f| + 2C = 2 would diverge open loop; trusting the invertible output row removes it
    wm = _scalar_state_only(1.0, 0.5)
    cert = stability_search(wm)
    assert cert.contraction_norm == 0.0 and cert.feasible
    assert cert.D1[0, 0] == 1.0 and cert.D2[0, 0] == 1.0
    assert cert.limit_width[0] == pytest.approx(0.2)
    assert contraction_norm(wm, (np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)))) == pytest.approx(2.0)


def test_zero_dynamics_slopes_give_zero_contraction():
    wm = _scalar_state_only(0.0, 0.0)
    for D in enumerate_admissible(wm):
        assert contraction_norm(wm, D) == 0.0
