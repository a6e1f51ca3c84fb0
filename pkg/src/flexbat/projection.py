"""Equality elimination and homothet-in-projection approximation.

A collection of flexibility units (tasks or batteries, each a box with a
total-energy budget over its active slots) induces a lifted polytope over
(u, u_tilde): the aggregate profile plus the non-eliminated per-unit
coordinates. The aggregate flexibility is the projection of that polytope
onto u. `solve_app` finds the largest scaled-and-translated copy of a
nominal battery certified to fit inside the projection, together with the
affine rule u_tilde = W u + V that reconstructs per-unit profiles; the
certificate is a nonnegative multiplier matrix G tying the two facet
systems together. `solve_opp3` is the cheaper fixed-cross-section variant
(a constant rule), kept as the conservative reference.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import lp
from .errors import DimensionMismatch, EmptyOrDegenerate, EmptyUnit
from .fleet import ChargingTask
from .geometry import Homothet, HPolytope, VirtualBattery, battery_to_hpolytope

S_MAX = 1e9    # upper guard on the inverse scale
S_MIN = 1e-7   # below this the homothet is reported degenerate, not huge
APP_TOL = 1e-9


@dataclass(frozen=True)
class FlexUnit:
    """One aggregatable unit: per-slot power bounds plus an energy budget.

    Unifies leaf tasks and intermediate batteries so a single elimination
    routine serves every aggregation stage. `active` holds the global
    1-based slots the unit may draw power in; bounds align with it.
    """

    active: tuple[int, ...]
    lo: np.ndarray
    hi: np.ndarray
    e_low: float
    e_high: float
    origin: str
    delta: float = 1.0

    def __post_init__(self):
        active = tuple(int(t) for t in self.active)
        if not active or list(active) != sorted(set(active)):
            raise ValueError(f"unit {self.origin}: active slots must be sorted and unique")
        lo = np.asarray(self.lo, dtype=float).ravel()
        hi = np.asarray(self.hi, dtype=float).ravel()
        if lo.size != len(active) or hi.size != len(active):
            raise DimensionMismatch(f"unit {self.origin}: bounds vs active slots")
        tol = 1e-9
        if (np.any(lo > hi + tol) or self.e_low > self.e_high + tol
                or self.delta * lo.sum() > self.e_high + tol
                or self.e_low > self.delta * hi.sum() + tol):
            raise EmptyUnit(f"unit {self.origin} has an empty admissible set")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "active", active)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_task(cls, task: ChargingTask, delta: float = 1.0) -> "FlexUnit":
        w = task.window_length
        return cls(active=tuple(task.window), lo=np.zeros(w), hi=np.full(w, task.p),
                   e_low=task.e_low, e_high=task.e_high, origin=task.id, delta=delta)

    @classmethod
    def from_battery(cls, battery: VirtualBattery, coords: Sequence[int],
                     origin: str, delta: float = 1.0) -> "FlexUnit":
        """Battery over global slots `coords`; zero-pinned slots are dropped."""
        coords = tuple(int(t) for t in coords)
        if len(coords) != battery.m:
            raise DimensionMismatch("coords length vs battery horizon")
        keep = ~((np.abs(battery.p_low) <= 1e-12) & (np.abs(battery.p_high) <= 1e-12))
        if not keep.any():
            raise EmptyUnit(f"battery unit {origin} is identically zero")
        return cls(active=tuple(t for t, k in zip(coords, keep) if k),
                   lo=battery.p_low[keep], hi=battery.p_high[keep],
                   e_low=battery.e_low, e_high=battery.e_high,
                   origin=origin, delta=delta)

    @property
    def battery(self) -> VirtualBattery:
        return VirtualBattery(self.lo, self.hi, self.e_low, self.e_high)

    @property
    def poly(self) -> HPolytope:
        return battery_to_hpolytope(self.battery, delta=self.delta, coords=self.active)

    def bound_at(self, slot: int) -> tuple[float, float]:
        k = self.active.index(slot)
        return float(self.lo[k]), float(self.hi[k])


@dataclass(frozen=True)
class EliminationMap:
    """Bookkeeping of the substitution that removes the coupling equalities.

    For every coordinate slot the lowest-indexed active unit is eliminated
    (its power there becomes u_t minus the others'); each remaining (unit,
    slot) pair is one u_tilde coordinate, in unit-major slot-ascending order.
    """

    coords: tuple[int, ...]
    n_t: tuple[tuple[int, ...], ...]
    j_t: tuple[Optional[int], ...]
    s_i: tuple[tuple[int, ...], ...]
    utilde: tuple[tuple[int, int], ...]
    unit_active: tuple[tuple[int, ...], ...]

    @property
    def m(self) -> int:
        return len(self.coords)

    @property
    def m_tilde(self) -> int:
        return len(self.utilde)

    @property
    def n_units(self) -> int:
        return len(self.unit_active)

    @cached_property
    def coord_index(self) -> dict[int, int]:
        return {t: k for k, t in enumerate(self.coords)}

    @cached_property
    def utilde_index(self) -> dict[tuple[int, int], int]:
        return {pair: q for q, pair in enumerate(self.utilde)}

    def reconstruct(self, z: np.ndarray, utilde_vals: np.ndarray) -> list[np.ndarray]:
        """Per-unit profiles over each unit's active slots from (u, u_tilde)."""
        out = []
        for i, active in enumerate(self.unit_active):
            row = np.empty(len(active))
            for k, t in enumerate(active):
                tk = self.coord_index[t]
                if self.j_t[tk] == i:
                    val = z[tk]
                    for other in self.n_t[tk]:
                        if other != i:
                            val -= utilde_vals[self.utilde_index[(other, t)]]
                    row[k] = val
                else:
                    row[k] = utilde_vals[self.utilde_index[(i, t)]]
            out.append(row)
        return out

    def to_dict(self) -> dict:
        return {
            "coords": list(self.coords),
            "n_t": [list(v) for v in self.n_t],
            "j_t": list(self.j_t),
            "s_i": [list(v) for v in self.s_i],
            "utilde": [list(v) for v in self.utilde],
            "unit_active": [list(v) for v in self.unit_active],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EliminationMap":
        return cls(
            coords=tuple(d["coords"]),
            n_t=tuple(tuple(v) for v in d["n_t"]),
            j_t=tuple(None if v is None else int(v) for v in d["j_t"]),
            s_i=tuple(tuple(v) for v in d["s_i"]),
            utilde=tuple((int(a), int(b)) for a, b in d["utilde"]),
            unit_active=tuple(tuple(v) for v in d["unit_active"]),
        )


@dataclass(frozen=True)
class LiftedPolytope:
    """B [u; u_tilde] <= c over the aggregate and retained coordinates."""

    b: np.ndarray
    c: np.ndarray
    m: int
    m_tilde: int
    elim: Optional[EliminationMap] = None
    delta: float = 1.0

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        c = np.asarray(self.c, dtype=float).ravel()
        if b.shape != (c.size, self.m + self.m_tilde):
            raise DimensionMismatch(
                f"B shape {b.shape} vs {c.size} rows x {self.m + self.m_tilde} cols")
        b.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def n_rows(self) -> int:
        return self.c.size

    @property
    def u_block(self) -> np.ndarray:
        return self.b[:, :self.m]

    @property
    def tail_block(self) -> np.ndarray:
        return self.b[:, self.m:]

    def max_violation(self, z: np.ndarray, utilde_vals: np.ndarray) -> float:
        point = np.concatenate([z, utilde_vals])
        return float(np.max(self.b @ point - self.c, initial=0.0))


def eliminate(units: Sequence[FlexUnit],
              coords: Optional[Sequence[int]] = None) -> LiftedPolytope:
    """Build the lifted inequality system for a unit collection.

    `coords` may widen the aggregate coordinate set beyond the units' union
    window (needed when several collections must share one nominal base);
    slots covered by no unit get the pinned rows u_t <= 0, -u_t <= 0.
    Rows come in the fixed order: eliminated-coordinate rate bounds per
    slot, retained-coordinate rate bounds, then two energy rows per unit.
    """
    units = list(units)
    if not units:
        raise EmptyUnit("cannot eliminate over zero units")
    union = sorted({t for un in units for t in un.active})
    if coords is None:
        coords = union
    else:
        coords = sorted(int(t) for t in coords)
        if set(union) - set(coords):
            raise DimensionMismatch("coords must cover every unit's active slots")
    m = len(coords)
    delta = units[0].delta
    n_t = []
    j_t: list[Optional[int]] = []
    for t in coords:
        idx = tuple(i for i, un in enumerate(units) if t in un.active)
        n_t.append(idx)
        j_t.append(idx[0] if idx else None)
    s_i = [tuple(t for t in un.active if j_t[coords.index(t)] == i)
           for i, un in enumerate(units)]
    utilde = [(i, t) for i, un in enumerate(units) for t in un.active
              if j_t[coords.index(t)] != i]
    elim = EliminationMap(
        coords=tuple(coords), n_t=tuple(n_t), j_t=tuple(j_t),
        s_i=tuple(s_i), utilde=tuple(utilde),
        unit_active=tuple(un.active for un in units))
    m_tilde = elim.m_tilde
    width = m + m_tilde
    rows: list[np.ndarray] = []
    rhs: list[float] = []

    def ucol(t: int) -> int:
        return elim.coord_index[t]

    def tcol(i: int, t: int) -> int:
        return m + elim.utilde_index[(i, t)]

    # rate rows for the eliminated coordinate of every slot
    for k, t in enumerate(coords):
        j = j_t[k]
        row = np.zeros(width)
        row[ucol(t)] = 1.0
        if j is None:
            lo_j, hi_j = 0.0, 0.0
        else:
            lo_j, hi_j = units[j].bound_at(t)
            for other in n_t[k]:
                if other != j:
                    row[tcol(other, t)] = -1.0
        rows.extend([row, -row])
        rhs.extend([hi_j, -lo_j])
    # rate rows for the retained coordinates
    for (i, t) in utilde:
        row = np.zeros(width)
        row[tcol(i, t)] = 1.0
        lo_i, hi_i = units[i].bound_at(t)
        rows.extend([row, -row])
        rhs.extend([hi_i, -lo_i])
    # two energy rows per unit
    for i, un in enumerate(units):
        row = np.zeros(width)
        for t in un.active:
            k = ucol(t)
            if j_t[k] == i:
                row[k] += delta
                for other in n_t[k]:
                    if other != i:
                        row[tcol(other, t)] -= delta
            else:
                row[tcol(i, t)] += delta
        rows.extend([row, -row])
        rhs.extend([un.e_high, -un.e_low])
    return LiftedPolytope(b=np.vstack(rows), c=np.asarray(rhs), m=m,
                          m_tilde=m_tilde, elim=elim, delta=delta)


def _blocks(lifted: LiftedPolytope, nominal: HPolytope):
    if nominal.dim != lifted.m:
        raise DimensionMismatch(
            f"nominal dimension {nominal.dim} vs aggregate coordinates {lifted.m}")
    f = sp.csr_matrix(nominal.a)
    h = nominal.c
    b11 = lifted.u_block
    b12 = sp.csr_matrix(lifted.tail_block)
    return f, h, b11, b12


def build_app(lifted: LiftedPolytope, nominal: HPolytope) -> lp.LpProblem:
    """LP for the affine-rule approximation.

    Variables (s, G, r, W, V): minimize s subject to G F = B [I; W],
    G H <= B [r; -V] + s c, G >= 0. G is n x k row-major; W is m_tilde x m
    row-major.
    """
    f, h, b11, b12 = _blocks(lifted, nominal)
    n, m, mt, k = lifted.n_rows, lifted.m, lifted.m_tilde, f.shape[0]
    n_g = n * k
    nv = 1 + n_g + m + mt * m + mt
    eye_n = sp.eye(n, format="csr")
    zero_s = sp.csr_matrix((n * m, 1))
    g_eq = sp.kron(eye_n, f.T, format="csr")
    zero_r = sp.csr_matrix((n * m, m))
    blocks = [zero_s, g_eq, zero_r]
    if mt:
        blocks.append(-sp.kron(b12, sp.eye(m), format="csr"))
        blocks.append(sp.csr_matrix((n * m, mt)))
    a_eq = sp.hstack(blocks, format="csr")
    b_eq = b11.ravel()

    s_col = sp.csr_matrix(-lifted.c.reshape(-1, 1))
    g_in = sp.kron(eye_n, sp.csr_matrix(h.reshape(1, -1)), format="csr")
    blocks = [s_col, g_in, sp.csr_matrix(-b11)]
    if mt:
        blocks.append(sp.csr_matrix((n, mt * m)))
        blocks.append(b12)
    a_in = sp.hstack(blocks, format="csr")

    lower = np.full(nv, -np.inf)
    upper = np.full(nv, np.inf)
    lower[0] = 0.0
    upper[0] = S_MAX
    lower[1:1 + n_g] = 0.0
    objective = np.zeros(nv)
    objective[0] = 1.0
    return lp.LpProblem(objective=objective, a_in=a_in, b_in=np.zeros(n),
                        a_eq=a_eq, b_eq=b_eq, lower=lower, upper=upper,
                        name="app")


def build_opp3(lifted: LiftedPolytope, nominal: HPolytope) -> lp.LpProblem:
    """LP for the fixed-cross-section approximation.

    Variables (s, G, r, u0): minimize s subject to G F = (u-columns of B),
    G H <= B [r; -u0] + s c, G >= 0.
    """
    f, h, b11, b12 = _blocks(lifted, nominal)
    n, m, mt, k = lifted.n_rows, lifted.m, lifted.m_tilde, f.shape[0]
    n_g = n * k
    nv = 1 + n_g + m + mt
    g_eq = sp.kron(sp.eye(n, format="csr"), f.T, format="csr")
    blocks = [sp.csr_matrix((n * m, 1)), g_eq, sp.csr_matrix((n * m, m))]
    if mt:
        blocks.append(sp.csr_matrix((n * m, mt)))
    a_eq = sp.hstack(blocks, format="csr")
    b_eq = b11.ravel()

    s_col = sp.csr_matrix(-lifted.c.reshape(-1, 1))
    g_in = sp.kron(sp.eye(n, format="csr"), sp.csr_matrix(h.reshape(1, -1)), format="csr")
    blocks = [s_col, g_in, sp.csr_matrix(-b11)]
    if mt:
        blocks.append(b12)
    a_in = sp.hstack(blocks, format="csr")

    lower = np.full(nv, -np.inf)
    upper = np.full(nv, np.inf)
    lower[0] = 0.0
    upper[0] = S_MAX
    lower[1:1 + n_g] = 0.0
    objective = np.zeros(nv)
    objective[0] = 1.0
    return lp.LpProblem(objective=objective, a_in=a_in, b_in=np.zeros(n),
                        a_eq=a_eq, b_eq=b_eq, lower=lower, upper=upper,
                        name="opp3")


@dataclass(frozen=True)
class AppSolution:
    """Solved affine-rule approximation: homothet plus reconstruction rule."""

    s: float
    r: np.ndarray
    w: np.ndarray          # (m_tilde, m)
    v: np.ndarray          # (m_tilde,)
    g: np.ndarray          # (n, k) certificate, nonnegative

    @property
    def lam(self) -> float:
        return 1.0 / self.s

    @property
    def mu(self) -> np.ndarray:
        return -self.r / self.s

    @property
    def homothet(self) -> Homothet:
        return Homothet(self.lam, self.mu)

    @cached_property
    def rule_offset(self) -> np.ndarray:
        """Translate of the reconstruction rule on battery coordinates."""
        return self.lam * (self.w @ self.r + self.v)

    def rule_apply(self, z: np.ndarray) -> np.ndarray:
        """Retained coordinates for an aggregate profile z of the homothet."""
        return self.w @ z + self.rule_offset

    def residuals(self, lifted: LiftedPolytope, nominal: HPolytope) -> dict[str, float]:
        f, h = nominal.a, nominal.c
        eq = self.g @ f - (lifted.u_block + lifted.tail_block @ self.w)
        ineq = (self.g @ h
                - (lifted.u_block @ self.r - lifted.tail_block @ self.v)
                - self.s * lifted.c)
        return {
            "g_negativity": float(np.max(-self.g, initial=0.0)),
            "equality": float(np.abs(eq).max(initial=0.0)),
            "inequality": float(np.max(ineq, initial=0.0)),
        }

    def to_dict(self, group_ids: Optional[Sequence[str]] = None,
                with_certificate: bool = False) -> dict:
        d = {
            "s": self.s,
            "r": [float(x) for x in self.r],
            "W": [[float(x) for x in row] for row in self.w],
            "V": [float(x) for x in self.v],
            "lam": self.lam,
            "mu": [float(x) for x in self.mu],
        }
        if group_ids is not None:
            d["group_ids"] = list(group_ids)
        if with_certificate:
            d["G"] = [[float(x) for x in row] for row in self.g]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AppSolution":
        g = np.asarray(d.get("G", []), dtype=float)
        if g.size == 0:
            g = np.zeros((0, 0))
        return cls(s=float(d["s"]), r=np.asarray(d["r"], float),
                   w=np.asarray(d["W"], float).reshape(len(d["V"]), len(d["r"])),
                   v=np.asarray(d["V"], float), g=g)


@dataclass(frozen=True)
class Opp3Solution:
    s: float
    r: np.ndarray
    u0: np.ndarray
    g: np.ndarray

    @property
    def lam(self) -> float:
        return 1.0 / self.s

    @property
    def mu(self) -> np.ndarray:
        return -self.r / self.s

    @property
    def homothet(self) -> Homothet:
        return Homothet(self.lam, self.mu)


def _checked_s(sol: lp.LpSolution, what: str) -> float:
    if sol.status != lp.OPTIMAL:
        raise EmptyOrDegenerate(f"{what}: LP terminated {sol.status}")
    s = float(sol.x[0])
    if s <= S_MIN:
        raise EmptyOrDegenerate(f"{what}: degenerate scale s = {s:g}")
    if s >= S_MAX * 0.1:
        raise EmptyOrDegenerate(f"{what}: scale guard hit, s = {s:g}")
    return s


def _maybe_dump_lifted(lifted: LiftedPolytope) -> None:
    rows = [f"m={lifted.m} m_tilde={lifted.m_tilde} delta={lifted.delta}"]
    rows += [" ".join(f"{v:.12g}" for v in row) + f" <= {c:.12g}"
             for row, c in zip(lifted.b, lifted.c)]
    lp.dump_text("lifted", "txt", "\n".join(rows) + "\n")


def solve_app(lifted: LiftedPolytope, nominal: HPolytope,
              tol: float = APP_TOL) -> AppSolution:
    """Solve the affine-rule approximation to an AppSolution."""
    _maybe_dump_lifted(lifted)
    problem = build_app(lifted, nominal)
    sol = lp.solve_lp(problem, tol_feas=tol, tol_opt=tol)
    s = _checked_s(sol, "app")
    n, m, mt, k = lifted.n_rows, lifted.m, lifted.m_tilde, nominal.n_rows
    x = sol.x
    g = x[1:1 + n * k].reshape(n, k)
    r = x[1 + n * k:1 + n * k + m]
    w = x[1 + n * k + m:1 + n * k + m + mt * m].reshape(mt, m)
    v = x[1 + n * k + m + mt * m:]
    return AppSolution(s=s, r=r, w=w, v=v, g=np.maximum(g, 0.0))


def solve_opp3(lifted: LiftedPolytope, nominal: HPolytope,
               tol: float = APP_TOL) -> Opp3Solution:
    """Solve the fixed-cross-section approximation."""
    problem = build_opp3(lifted, nominal)
    sol = lp.solve_lp(problem, tol_feas=tol, tol_opt=tol)
    s = _checked_s(sol, "opp3")
    n, m, mt, k = lifted.n_rows, lifted.m, lifted.m_tilde, nominal.n_rows
    x = sol.x
    g = x[1:1 + n * k].reshape(n, k)
    r = x[1 + n * k:1 + n * k + m]
    u0 = x[1 + n * k + m:]
    return Opp3Solution(s=s, r=r, u0=u0, g=np.maximum(g, 0.0))
