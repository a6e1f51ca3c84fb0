"""Ground-truth adequacy tests and schedule validation.

An aggregate profile u is adequate when it splits into per-task admissible
profiles. Two independent routes decide this: a feasibility LP over the
full charging system (any scale), and exhaustive/greedy evaluation of the
subset inequalities characterizing the aggregate set (tiny scale). The two
must agree wherever both run; that agreement is itself a test target.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import lp
from .errors import DimensionMismatch, TooLarge
from .fleet import Fleet

ENUM_BUDGET = 22  # max N + m for subset enumeration


@dataclass(frozen=True)
class AdequacyVerdict:
    adequate: bool
    witness: Optional[np.ndarray] = None          # N x m charging matrix
    violated: Optional[tuple[tuple[int, ...], tuple[int, ...]]] = None
    # violated = (task indices alpha, 1-based slots beta) failing the
    # subset inequality; only enumeration-based verdicts fill it in.

    def __bool__(self) -> bool:
        return self.adequate


def _charging_system(fleet: Fleet, u: np.ndarray):
    """Variables x[i,t] for t in each task's window; returns (cols, problem)."""
    delta = fleet.delta
    cols = [(i, t) for i, task in enumerate(fleet.tasks) for t in task.window]
    col_of = {key: j for j, key in enumerate(cols)}
    nv = len(cols)
    covered = sorted({t for _, t in cols})
    # column sums pinned to u on covered slots
    eq_r, eq_c = [], []
    for r, t in enumerate(covered):
        for i, task in enumerate(fleet.tasks):
            if task.a <= t <= task.d:
                eq_r.append(r)
                eq_c.append(col_of[(i, t)])
    a_eq = sp.coo_matrix((np.ones(len(eq_r)), (eq_r, eq_c)),
                         shape=(len(covered), nv)).tocsr()
    b_eq = np.array([u[t - 1] for t in covered])
    # per-task energy interval
    in_r, in_c, in_v = [], [], []
    for i, task in enumerate(fleet.tasks):
        for t in task.window:
            j = col_of[(i, t)]
            in_r.extend([2 * i, 2 * i + 1])
            in_c.extend([j, j])
            in_v.extend([delta, -delta])
    a_in = sp.coo_matrix((in_v, (in_r, in_c)), shape=(2 * fleet.n, nv)).tocsr()
    b_in = np.empty(2 * fleet.n)
    b_in[0::2] = [t.e_high for t in fleet.tasks]
    b_in[1::2] = [-t.e_low for t in fleet.tasks]
    upper = np.array([fleet.tasks[i].p for i, _ in cols])
    problem = lp.LpProblem(objective=np.zeros(nv), a_in=a_in, b_in=b_in,
                           a_eq=a_eq, b_eq=b_eq,
                           lower=np.zeros(nv), upper=upper, name="adequacy")
    return cols, covered, problem


def adequacy_lp(fleet: Fleet, u: np.ndarray, tol: float = lp.TOL_FEAS) -> AdequacyVerdict:
    """Feasibility-LP adequacy test; adequate verdicts carry a witness."""
    u = np.asarray(u, dtype=float).ravel()
    if u.size != fleet.m:
        raise DimensionMismatch(f"profile length {u.size} vs horizon {fleet.m}")
    covered_mask = np.zeros(fleet.m, dtype=bool)
    for task in fleet.tasks:
        covered_mask[task.a - 1:task.d] = True
    if np.any(np.abs(u[~covered_mask]) > tol):
        return AdequacyVerdict(False)
    cols, _, problem = _charging_system(fleet, u)
    result = lp.check_feasible(problem, tol_feas=tol)
    if not result.feasible:
        return AdequacyVerdict(False)
    witness = np.zeros((fleet.n, fleet.m))
    for (i, t), v in zip(cols, result.x):
        witness[i, t - 1] = v
    return AdequacyVerdict(True, witness=witness)


def _window_counts(fleet: Fleet, beta_masks: np.ndarray) -> np.ndarray:
    """|beta intersect window_i| for every mask row; result (n_masks, N)."""
    windows = np.zeros((fleet.n, fleet.m))
    for i, task in enumerate(fleet.tasks):
        windows[i, task.a - 1:task.d] = 1.0
    return beta_masks @ windows.T


def adequacy_thm1(fleet: Fleet, u: np.ndarray, budget: int = ENUM_BUDGET,
                  tol: float = 1e-9) -> AdequacyVerdict:
    """Subset-inequality adequacy test via per-task worst-case selection.

    For each slot subset beta, the binding task subset alpha separates per
    task, so only the 2^m slot subsets are enumerated. Returns the first
    failing beta (ascending bitmask) with its worst alpha.
    """
    u = np.asarray(u, dtype=float).ravel()
    if u.size != fleet.m:
        raise DimensionMismatch(f"profile length {u.size} vs horizon {fleet.m}")
    if fleet.n + fleet.m > budget:
        raise TooLarge(f"N+m = {fleet.n + fleet.m} exceeds enumeration budget {budget}")
    delta = fleet.delta
    e_high = np.array([t.e_high for t in fleet.tasks])
    e_low = np.array([t.e_low for t in fleet.tasks])
    p = np.array([t.p for t in fleet.tasks])
    u_total = delta * u.sum()
    n_masks = 1 << fleet.m
    block = min(n_masks, 1 << 16)   # bound the mask matrix, not the horizon
    for start in range(0, n_masks, block):
        idx = np.arange(start, min(start + block, n_masks))
        bits = ((idx[:, None] >> np.arange(fleet.m)[None, :]) & 1).astype(float)
        cap = delta * _window_counts(fleet, bits) * p      # energy reachable in beta
        u_beta = delta * (bits @ u)
        ok1 = np.minimum(e_high, cap).sum(axis=1) + tol >= u_beta
        ok2 = (u_total - u_beta) + tol >= np.maximum(0.0, e_low - cap).sum(axis=1)
        bad = ~(ok1 & ok2)
        if bad.any():
            k = int(np.argmax(bad))
            beta = tuple(t + 1 for t in range(fleet.m) if bits[k, t])
            if not ok1[k]:
                alpha = tuple(i for i in range(fleet.n) if e_high[i] <= cap[k, i])
            else:
                alpha = tuple(i for i in range(fleet.n) if e_low[i] <= cap[k, i])
            return AdequacyVerdict(False, violated=(alpha, beta))
    return AdequacyVerdict(True)


def adequacy_bruteforce(fleet: Fleet, u: np.ndarray, budget: int = ENUM_BUDGET,
                        tol: float = 1e-9) -> AdequacyVerdict:
    """Literal enumeration of every (alpha, beta) pair; the test-of-the-test.

    Returns the first violating pair in lexicographic (alpha-major,
    ascending bitmask) order.
    """
    u = np.asarray(u, dtype=float).ravel()
    if fleet.n + fleet.m > budget:
        raise TooLarge(f"N+m = {fleet.n + fleet.m} exceeds enumeration budget {budget}")
    delta = fleet.delta
    e_high = [t.e_high for t in fleet.tasks]
    e_low = [t.e_low for t in fleet.tasks]
    windows = [set(t.window) for t in fleet.tasks]
    p = [t.p for t in fleet.tasks]
    slots = list(range(1, fleet.m + 1))
    for a_bits in range(1 << fleet.n):
        alpha = [i for i in range(fleet.n) if a_bits >> i & 1]
        alpha_c = [i for i in range(fleet.n) if not a_bits >> i & 1]
        for b_bits in range(1 << fleet.m):
            beta = [t for t in slots if b_bits >> (t - 1) & 1]
            beta_set = set(beta)
            term_a = sum(e_high[i] for i in alpha) - delta * sum(u[t - 1] for t in beta)
            term_b = (delta * sum(u[t - 1] for t in slots if t not in beta_set)
                      - sum(e_low[i] for i in alpha_c))
            rhs = -sum(delta * len(beta_set & windows[i]) * p[i] for i in alpha_c)
            if min(term_a, term_b) < rhs - tol:
                return AdequacyVerdict(False, violated=(tuple(alpha), tuple(beta)))
    return AdequacyVerdict(True)


@dataclass(frozen=True)
class Violation:
    kind: str
    task_id: Optional[str]
    slot: Optional[int]
    magnitude: float


@dataclass(frozen=True)
class ScheduleReport:
    ok: bool
    violations: tuple[Violation, ...]
    max_column_error: float

    def __bool__(self) -> bool:
        return self.ok


def validate_schedule(fleet: Fleet, schedule: np.ndarray, u: np.ndarray,
                      tol: float = 1e-6) -> ScheduleReport:
    """Check an N x m schedule row-by-row and against the aggregate profile."""
    schedule = np.atleast_2d(np.asarray(schedule, dtype=float))
    u = np.asarray(u, dtype=float).ravel()
    if schedule.shape != (fleet.n, fleet.m):
        raise DimensionMismatch(
            f"schedule shape {schedule.shape} vs ({fleet.n}, {fleet.m})")
    if u.size != fleet.m:
        raise DimensionMismatch(f"profile length {u.size} vs horizon {fleet.m}")
    bad: list[Violation] = []
    for i, task in enumerate(fleet.tasks):
        row = schedule[i]
        for t in range(1, fleet.m + 1):
            v = row[t - 1]
            if task.a <= t <= task.d:
                if v < -tol:
                    bad.append(Violation("rate_low", task.id, t, -v))
                elif v > task.p + tol:
                    bad.append(Violation("rate_high", task.id, t, v - task.p))
            elif abs(v) > tol:
                bad.append(Violation("window", task.id, t, abs(v)))
        energy = fleet.delta * row.sum()
        if energy < task.e_low - tol:
            bad.append(Violation("energy_low", task.id, None, task.e_low - energy))
        elif energy > task.e_high + tol:
            bad.append(Violation("energy_high", task.id, None, energy - task.e_high))
    col_err = np.abs(schedule.sum(axis=0) - u)
    for t in np.where(col_err > tol)[0]:
        bad.append(Violation("column_sum", None, int(t) + 1, float(col_err[t])))
    return ScheduleReport(ok=not bad, violations=tuple(bad),
                          max_column_error=float(col_err.max(initial=0.0)))
