"""Thin LP layer over scipy's HiGHS backend."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog


class LpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class NumericalFailure(RuntimeError):
    """The backend stopped without a trustworthy answer."""


@dataclass
class LpProblem:
    """``min c.x  s.t.  A_ub x <= b_ub``, variables free unless ``bounds`` given.

    ``A_ub`` may be a scipy sparse matrix.
    """

    objective: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    bounds: Optional[Sequence] = field(default=None)

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).reshape(-1)
        if sparse.issparse(self.A_ub):
            self.A_ub = sparse.csr_matrix(self.A_ub, dtype=float)
        else:
            self.A_ub = np.atleast_2d(np.asarray(self.A_ub, dtype=float))
        self.b_ub = np.asarray(self.b_ub, dtype=float).reshape(-1)
        n = self.objective.shape[0]
        if self.A_ub.shape != (self.b_ub.shape[0], n):
            raise ValueError(f"inconsistent LP shapes: A {self.A_ub.shape}, b {self.b_ub.shape}, c {n}")


@dataclass
class LpResult:
    status: LpStatus
    x: Optional[np.ndarray]
    objective_value: float


def lp_solve(p: LpProblem) -> LpResult:
    n = p.objective.shape[0]
    bounds = p.bounds if p.bounds is not None else [(None, None)] * n
    res = linprog(p.objective, A_ub=p.A_ub, b_ub=p.b_ub, bounds=bounds, method="highs")
    if res.status == 0:
        return LpResult(LpStatus.OPTIMAL, np.asarray(res.x), float(res.fun))
    if res.status == 2:
        return LpResult(LpStatus.INFEASIBLE, None, np.inf)
    if res.status == 3:
        return LpResult(LpStatus.UNBOUNDED, None, -np.inf)
    raise NumericalFailure(f"LP backend failed (status {res.status}): {res.message}")
