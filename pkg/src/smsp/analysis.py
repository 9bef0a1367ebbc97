"""Offline certificates for the mode-matched observers.

The width model bounds the framer widths ``dz_k = z_hi_k - z_lo_k`` of one
mode by the comparison system

    dz_k <= Ag(D1, D2) Afmu(D3) dz_{k-1} + Dg(D1, D2) + Ag(D1, D2) Dfh(D3)

for binary diagonal ``D1`` (which coordinates use the measurement), ``D2``
(which measurement rows are trusted) and ``D3`` (which dynamics rows use the
affine abstraction rather than the decomposition function).  The stability
search picks the triple with the smallest limiting width.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm

from .interval import IntervalMatrix, mul_interval_interval, pinv, rowsupp

EXHAUSTIVE_CAP = 24
GREEDY_RESTARTS = 10
_CHUNK = 4096


@dataclass
class WidthModel:
    """Magnitudes of the slopes and error widths of one mode's abstractions.

    Shapes, with ``nz = n + p``: ``A_g`` (l, nz), ``A_g_dagger_abs`` (nz, l),
    ``W_g_abs`` (l, n_v), ``A_f_abs`` (n, nz), ``W_f_abs`` (n, n_w),
    ``A_mu_abs`` (p, n), ``C_f_z`` (n, nz), ``C_f_w`` (n, n_w).

    ``literal_policy_row`` switches the policy rows of the state matrix to act
    on the previous state width (``[|A_mu| 0]``) instead of the propagated one.
    """

    A_g: np.ndarray
    A_g_dagger_abs: np.ndarray
    W_g_abs: np.ndarray
    W_f_abs: np.ndarray
    A_f_abs: np.ndarray
    A_mu_abs: np.ndarray
    C_f_z: np.ndarray
    C_f_w: np.ndarray
    delta_e_f: np.ndarray
    delta_e_g: np.ndarray
    delta_w: np.ndarray
    delta_v: np.ndarray
    r_mask: np.ndarray
    delta_e_mu: Optional[np.ndarray] = None
    literal_policy_row: bool = False

    def __post_init__(self):
        names = ("A_g", "A_g_dagger_abs", "W_g_abs", "W_f_abs", "A_f_abs", "A_mu_abs", "C_f_z", "C_f_w")
        for name in names:
            setattr(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        for name in ("delta_e_f", "delta_e_g", "delta_w", "delta_v"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        self.r_mask = np.asarray(self.r_mask).reshape(-1).astype(int)
        if self.delta_e_mu is None:
            self.delta_e_mu = np.zeros(self.p)
        self.delta_e_mu = np.asarray(self.delta_e_mu, dtype=float).reshape(-1)
        for name in names:
            if np.any(getattr(self, name) < 0):
                raise ValueError(f"{name} must be elementwise nonnegative")
        for name in ("delta_e_f", "delta_e_g", "delta_w", "delta_v", "delta_e_mu"):
            if np.any(getattr(self, name) < 0):
                raise ValueError(f"{name} must be nonnegative")
        n, nz, l = self.n, self.nz, self.l
        expected = {
            "A_g_dagger_abs": (nz, l),
            "A_f_abs": (n, nz),
            "A_mu_abs": (self.p, n),
            "C_f_z": (n, nz),
            "C_f_w": (n, self.W_f_abs.shape[1]),
            "W_g_abs": (l, self.delta_v.shape[0]),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        checks = {
            "delta_e_f": n,
            "delta_e_g": l,
            "delta_w": self.W_f_abs.shape[1],
            "r_mask": nz,
            "delta_e_mu": self.p,
        }
        for name, size in checks.items():
            if getattr(self, name).shape[0] != size:
                raise ValueError(f"{name} has length {getattr(self, name).shape[0]}, expected {size}")

    @property
    def n(self) -> int:
        return self.A_f_abs.shape[0]

    @property
    def nz(self) -> int:
        return self.A_g.shape[1]

    @property
    def p(self) -> int:
        return self.nz - self.n

    @property
    def l(self) -> int:
        return self.A_g.shape[0]

    @property
    def free_d1(self) -> np.ndarray:
        """Coordinates whose ``D1`` bit may be set."""
        return np.flatnonzero(self.r_mask == 0)


@dataclass
class StabilityCertificate:
    D1: np.ndarray
    D2: np.ndarray
    D3: np.ndarray
    contraction_norm: float
    feasible: bool
    limit_width: np.ndarray
    # the exponential-form limit, reported for comparison
    limit_width_exp: Optional[np.ndarray] = None
    searched: str = "exhaustive"
    evaluated: int = 0

    def respects_mask(self, r_mask) -> bool:
        return bool(np.all(np.diag(self.D1) * np.asarray(r_mask) == 0))


def _diag_bits(D) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    return np.diag(D).copy() if D.ndim == 2 else D.reshape(-1)


def from_abstractions(
    g_abs,
    f_abs,
    mu_abs,
    f_decomp,
    n: int,
    p: int,
    delta_w,
    delta_v,
    rowsupp_tol: float = 1e-9,
    **kwargs,
) -> WidthModel:
    """Width model from affine abstractions of ``g``, ``f`` and the policy."""
    nz = n + p
    A = g_abs.A[:, :nz]
    Ad = pinv(A)
    mask = rowsupp(np.eye(nz) - Ad @ A, rowsupp_tol)
    return WidthModel(
        A_g=np.abs(A),
        A_g_dagger_abs=np.abs(Ad),
        W_g_abs=np.abs(g_abs.A[:, nz:]),
        W_f_abs=np.abs(f_abs.A[:, nz:]),
        A_f_abs=np.abs(f_abs.A[:, :nz]),
        A_mu_abs=np.abs(mu_abs.A[:, :n]),
        C_f_z=f_decomp.C[:, :nz],
        C_f_w=f_decomp.C[:, nz:],
        delta_e_f=f_abs.widths,
        delta_e_g=g_abs.widths,
        delta_w=delta_w,
        delta_v=delta_v,
        r_mask=mask,
        delta_e_mu=mu_abs.widths,
        **kwargs,
    )


def _batch_terms(wm: WidthModel, d1: np.ndarray, d2: np.ndarray, d3: np.ndarray):
    """State matrices and offsets for a batch of diagonal bit vectors (B, .)."""
    nz, n = wm.nz, wm.n
    Ad, Ag_abs = wm.A_g_dagger_abs, wm.A_g
    Ag = d1[:, :, None] * np.einsum("ij,bj,jk->bik", Ad, 1.0 - d2, Ag_abs)
    Ag = Ag + np.eye(nz)[None] * (1.0 - d1)[:, None, :]
    F = wm.A_f_abs[None] + 2.0 * (1.0 - d3)[:, :, None] * wm.C_f_z[None]
    if wm.literal_policy_row:
        mu_rows = np.zeros((d1.shape[0], wm.p, nz))
        mu_rows[:, :, :n] = wm.A_mu_abs
    else:
        mu_rows = np.einsum("ij,bjk->bik", wm.A_mu_abs, F)
    Afmu = np.concatenate([F, mu_rows], axis=1)
    meas = wm.W_g_abs @ wm.delta_v + wm.delta_e_g
    Dg = d1 * np.einsum("ij,bj->bi", Ad, d2 * meas)
    df = np.einsum("bij,j->bi", wm.W_f_abs[None] + 2.0 * (1.0 - d3)[:, :, None] * wm.C_f_w[None], wm.delta_w)
    df = df + wm.delta_e_f
    if wm.literal_policy_row:
        dmu = np.broadcast_to(wm.delta_e_mu, (d1.shape[0], wm.p))
    else:
        dmu = df @ wm.A_mu_abs.T + wm.delta_e_mu
    Dfh = np.concatenate([df, dmu], axis=1)
    return Ag, Afmu, Dg, Dfh


def system_matrices(wm: WidthModel, D) -> tuple[np.ndarray, np.ndarray]:
    """``(A_bar, Delta_bar)`` of the comparison system for one triple."""
    d1, d2, d3 = (_diag_bits(x)[None] for x in D)
    Ag, Afmu, Dg, Dfh = _batch_terms(wm, d1, d2, d3)
    return Ag[0] @ Afmu[0], Dg[0] + Ag[0] @ Dfh[0]


def contraction_norm(wm: WidthModel, D) -> float:
    """Induced 2-norm of the comparison system's state matrix."""
    A_bar, _ = system_matrices(wm, D)
    return float(np.linalg.norm(A_bar, 2))


def width_step(wm: WidthModel, D, delta_prev) -> np.ndarray:
    """One step of the width comparison system.

    Coordinates flagged by ``r_mask`` whose ``D1`` bit is set get an infinite
    bound, since the pseudoinverse cannot recover them from the output.
    """
    delta_prev = np.asarray(delta_prev, dtype=float)
    if np.any(delta_prev < 0):
        raise ValueError("widths must be nonnegative")
    A_bar, D_bar = system_matrices(wm, D)
    with np.errstate(invalid="ignore"):
        out = A_bar @ delta_prev + D_bar
    bad = (_diag_bits(D[0]) * wm.r_mask) > 0
    out[bad] = np.inf
    return out


def iterate_bound(wm: WidthModel, D, delta0, steps: int) -> np.ndarray:
    """Widths ``(steps + 1, nz)`` of the comparison system started at ``delta0``."""
    out = np.empty((steps + 1, wm.nz))
    out[0] = delta0
    for k in range(steps):
        out[k + 1] = width_step(wm, D, out[k])
    return out


def limit_bound(A_bar: np.ndarray, D_bar: np.ndarray) -> np.ndarray:
    """Fixed point ``(I - A_bar)^-1 D_bar`` of the comparison system."""
    return np.linalg.solve(np.eye(A_bar.shape[0]) - A_bar, D_bar)


def _evaluate(wm: WidthModel, d1, d2, d3):
    """Contraction norms and limit-width norms for a batch of triples."""
    Ag, Afmu, Dg, Dfh = _batch_terms(wm, d1, d2, d3)
    A_bar = Ag @ Afmu
    D_bar = Dg + np.einsum("bij,bj->bi", Ag, Dfh)
    L = np.linalg.norm(A_bar, 2, axis=(1, 2))
    lim = np.full(L.shape, np.inf)
    ok = L < 1.0
    if ok.any():
        I = np.eye(wm.nz)[None]
        sol = np.linalg.solve(I - A_bar[ok], D_bar[ok][:, :, None])[:, :, 0]
        lim[ok] = np.linalg.norm(sol, axis=1)
    return L, lim


def _objective_order(L: np.ndarray, lim: np.ndarray) -> np.ndarray:
    """Indices sorted by limit-width norm, then by contraction norm."""
    return np.lexsort((L, lim))


def _better(La, lima, Lb, limb) -> bool:
    return (lima, La) < (limb, Lb)


class _BitLayout:
    """Maps a free-bit vector to the ``(d1, d2, d3)`` diagonals."""

    def __init__(self, wm: WidthModel):
        self.wm = wm
        self.free1 = wm.free_d1
        self.k1 = len(self.free1)
        self.size = self.k1 + wm.l + wm.n

    def split(self, bits: np.ndarray):
        bits = np.atleast_2d(bits).astype(float)
        B = bits.shape[0]
        d1 = np.zeros((B, self.wm.nz))
        d1[:, self.free1] = bits[:, : self.k1]
        d2 = bits[:, self.k1 : self.k1 + self.wm.l]
        d3 = bits[:, self.k1 + self.wm.l :]
        return d1, d2, d3


def _all_bits(k: int, start: int, stop: int) -> np.ndarray:
    idx = np.arange(start, stop, dtype=np.int64)
    return ((idx[:, None] >> np.arange(k)) & 1).astype(np.int8)


def _certificate(wm: WidthModel, layout: _BitLayout, bits, searched: str, evaluated: int) -> StabilityCertificate:
    d1, d2, d3 = (x[0] for x in layout.split(bits))
    D = (np.diag(d1), np.diag(d2), np.diag(d3))
    A_bar, D_bar = system_matrices(wm, D)
    L = float(np.linalg.norm(A_bar, 2))
    if L < 1.0:
        lim = limit_bound(A_bar, D_bar)
        lim_exp = expm(A_bar) @ D_bar
    else:
        lim = np.full(wm.nz, np.inf)
        lim_exp = None
    return StabilityCertificate(D[0], D[1], D[2], L, L <= 1.0, lim, lim_exp, searched, evaluated)


def _exhaustive(wm: WidthModel, layout: _BitLayout):
    k = layout.size
    total = 1 << k
    best = None
    for start in range(0, total, _CHUNK):
        bits = _all_bits(k, start, min(total, start + _CHUNK))
        L, lim = _evaluate(wm, *layout.split(bits))
        i = _objective_order(L, lim)[0]
        if best is None or _better(L[i], lim[i], best[1], best[2]):
            best = (bits[i].copy(), L[i], lim[i])
    return best[0], total


def _greedy(wm: WidthModel, layout: _BitLayout, restarts: int, seed: int):
    rng = np.random.default_rng(seed)
    k = layout.size
    flips = np.eye(k, dtype=np.int8)
    best = None
    evaluated = 0
    starts = [np.ones(k, dtype=np.int8)] + [rng.integers(0, 2, k).astype(np.int8) for _ in range(restarts)]
    for cur in starts:
        L, lim = _evaluate(wm, *layout.split(cur))
        cur_L, cur_lim = L[0], lim[0]
        evaluated += 1
        while True:
            nbrs = cur[None, :] ^ flips
            L, lim = _evaluate(wm, *layout.split(nbrs))
            evaluated += k
            i = _objective_order(L, lim)[0]
            if not _better(L[i], lim[i], cur_L, cur_lim):
                break
            cur, cur_L, cur_lim = nbrs[i], L[i], lim[i]
        if best is None or _better(cur_L, cur_lim, best[1], best[2]):
            best = (cur.copy(), cur_L, cur_lim)
    return best[0], evaluated


def stability_search(
    wm: WidthModel,
    method: str = "auto",
    cap: int = EXHAUSTIVE_CAP,
    restarts: int = GREEDY_RESTARTS,
    seed: int = 0,
) -> StabilityCertificate:
    """Admissible ``(D1, D2, D3)`` minimizing the limit-width norm among
    contracting triples, or the smallest contraction norm if none contracts.

    ``method`` is ``"exhaustive"``, ``"greedy"`` or ``"auto"`` (exhaustive up
    to ``cap`` free bits).  ``D1`` bits on masked coordinates are never set.
    """
    layout = _BitLayout(wm)
    if method == "auto":
        method = "exhaustive" if layout.size <= cap else "greedy"
    if method == "exhaustive":
        bits, evaluated = _exhaustive(wm, layout)
    elif method == "greedy":
        bits, evaluated = _greedy(wm, layout, restarts, seed)
    else:
        raise ValueError(f"unknown search method {method!r}")
    return _certificate(wm, layout, bits, method, evaluated)


@dataclass
class InstabilityResult:
    unstable: bool
    J_m: np.ndarray
    spectrum: list
    spectral_radius: float
    unstable_by_radius: bool
    criterion: str = "real_part"

    @property
    def flag(self) -> bool:
        return self.unstable_by_radius if self.criterion == "spectral_radius" else self.unstable


def schur_instability_check(
    jb_f_x: IntervalMatrix,
    jb_f_d: IntervalMatrix,
    jb_mu: IntervalMatrix,
    criterion: str = "real_part",
) -> InstabilityResult:
    """Instability test on the midpoint closed-loop Jacobian.

    ``unstable`` holds when some eigenvalue's real part lies strictly outside
    ``[0, 1]``; ``unstable_by_radius`` is the spectral-radius-above-one test.
    ``criterion`` selects which of the two ``flag`` reports.
    """
    if criterion not in ("real_part", "spectral_radius"):
        raise ValueError(f"unknown instability criterion {criterion!r}")
    if jb_f_x.shape[0] != jb_f_x.shape[1]:
        raise ValueError("state Jacobian must be square")
    if jb_f_d.shape[0] != jb_f_x.shape[0] or jb_mu.shape != (jb_f_d.shape[1], jb_f_x.shape[1]):
        raise ValueError("Jacobian dimensions are inconsistent")
    fm = mul_interval_interval(jb_f_d, jb_mu)
    J_m = 0.5 * (jb_f_x.lo + jb_f_x.hi + fm.lo + fm.hi)
    eig = np.linalg.eigvals(J_m)
    unstable = bool(np.any((eig.real < 0.0) | (eig.real > 1.0)))
    rho = float(np.max(np.abs(eig))) if eig.size else 0.0
    return InstabilityResult(unstable, J_m, [complex(e) for e in eig], rho, rho > 1.0, criterion)


@dataclass
class DetectabilityReport:
    detectable: bool
    failures: dict = field(default_factory=dict)  # mode -> list of failed conditions
    certificates: dict = field(default_factory=dict)
    instabilities: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"detectable: {str(self.detectable).lower()}"]
        for q in sorted(self.certificates):
            c = self.certificates[q]
            lines.append(f"mode_{q}.contraction_norm: {c.contraction_norm!r}")
            lines.append(f"mode_{q}.stable_certificate: {str(c.feasible).lower()}")
            lines.append(f"mode_{q}.search: {c.searched}")
            lines.append(f"mode_{q}.D1: {_bits_text(c.D1)}")
            lines.append(f"mode_{q}.D2: {_bits_text(c.D2)}")
            lines.append(f"mode_{q}.D3: {_bits_text(c.D3)}")
            lines.append(f"mode_{q}.limit_width_norm: {float(np.linalg.norm(c.limit_width))!r}")
            if c.limit_width_exp is not None:
                lines.append(f"mode_{q}.limit_width_norm_exp: {float(np.linalg.norm(c.limit_width_exp))!r}")
        for q in sorted(self.instabilities):
            r = self.instabilities[q]
            lines.append(f"mode_{q}.policy_unstable: {str(r.flag).lower()}")
            lines.append(f"mode_{q}.spectral_radius: {r.spectral_radius!r}")
            lines.append(f"mode_{q}.eigenvalue_real_parts: " + " ".join(f"{e.real:.6g}" for e in r.spectrum))
        for q in sorted(self.failures):
            lines.append(f"mode_{q}.failed: {', '.join(self.failures[q])}")
        return "\n".join(lines) + "\n"


def _bits_text(D) -> str:
    return "".join(str(int(b)) for b in _diag_bits(D))


def detectability_report(certs, instab) -> DetectabilityReport:
    """Sufficient conditions for eliminating every false mode.

    ``certs`` and ``instab`` are mappings (or equal-length sequences) keyed by
    mode.  Every mode needs a stable certificate and an unstable closed loop.
    """
    certs = dict(certs) if isinstance(certs, dict) else dict(enumerate(certs, start=1))
    instab = dict(instab) if isinstance(instab, dict) else dict(enumerate(instab, start=1))
    if set(certs) != set(instab):
        raise ValueError("need one certificate and one instability result per mode")
    failures = {}
    for q in sorted(certs):
        failed = []
        if not certs[q].feasible:
            failed.append("observer_stability")
        if not instab[q].flag:
            failed.append("destabilizing_policy")
        if failed:
            failures[q] = failed
    return DetectabilityReport(not failures, failures, certs, instab)


def enumerate_admissible(wm: WidthModel) -> Sequence[tuple]:
    """Every admissible triple as diagonal matrices (small models only)."""
    layout = _BitLayout(wm)
    out = []
    for bits in itertools.product((0, 1), repeat=layout.size):
        d1, d2, d3 = (x[0] for x in layout.split(np.array(bits)))
        out.append((np.diag(d1), np.diag(d2), np.diag(d3)))
    return out
