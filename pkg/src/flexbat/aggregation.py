"""Multi-stage aggregation into one virtual battery, and dispatch back down.

Stage 1 partitions the fleet into groups and solves the affine-rule
approximation per group against a cohort-shared nominal battery (cohort =
groups with equal span, i.e. minimum arrival and maximum departure).
Homothets of one shared nominal add coordinate-wise (scaled Minkowski sum),
so cohorts collapse without further LPs. Later stages treat each battery
as a unit and repeat with `fanout` children per node until a single root
remains. The tree records every decision rule and elimination map, which
is exactly what dispatch needs to turn any battery-feasible aggregate
profile into admissible per-task schedules.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import (DispatchInfeasible, EmptyOrDegenerate, NotInBattery,
                     ValidationError)
from .fleet import ChargingTask, Fleet
from .geometry import Homothet, VirtualBattery, battery_to_hpolytope, homothet_apply_battery
from .projection import (AppSolution, EliminationMap, FlexUnit, eliminate,
                         solve_app)

TREE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Leaf:
    task_id: str


@dataclass(frozen=True)
class AppNode:
    """One solved approximation: children aggregated against `nominal`."""

    label: str
    children: tuple["TreeNode", ...]
    units: tuple[FlexUnit, ...]
    coords: tuple[int, ...]
    nominal: VirtualBattery
    app: AppSolution
    elim: EliminationMap

    @property
    def lam(self) -> float:
        return self.app.lam

    @property
    def mu(self) -> np.ndarray:
        return self.app.mu

    @property
    def battery(self) -> VirtualBattery:
        return homothet_apply_battery(self.app.homothet, self.nominal)


@dataclass(frozen=True)
class CohortNode:
    """Children sharing one nominal base; their homothets add directly."""

    label: str
    children: tuple[AppNode, ...]
    coords: tuple[int, ...]
    base: VirtualBattery

    @property
    def lam(self) -> float:
        return sum(c.lam for c in self.children)

    @property
    def mu(self) -> np.ndarray:
        return np.sum([c.mu for c in self.children], axis=0)

    @property
    def battery(self) -> VirtualBattery:
        return homothet_apply_battery(Homothet(self.lam, self.mu), self.base)


TreeNode = Union[Leaf, AppNode, CohortNode]


@dataclass(frozen=True)
class AggregateConfig:
    group_size: int = 10
    fanout: int = 11
    policy: str = "window-sorted"
    seed: Optional[int] = None
    workers: int = 1

    def __post_init__(self):
        if self.group_size < 1:
            raise ValidationError("group_size must be at least 1")
        if self.fanout < 2:
            raise ValidationError("fanout must be at least 2")
        if self.policy not in ("random", "window-sorted"):
            raise ValidationError(f"unknown partition policy {self.policy!r}")
        if self.workers < 1:
            raise ValidationError("workers must be at least 1")

    def to_dict(self) -> dict:
        return {"group_size": self.group_size, "fanout": self.fanout,
                "policy": self.policy, "seed": self.seed, "workers": self.workers}


@dataclass(frozen=True)
class AggregationTree:
    root: TreeNode
    m: int
    delta: float
    battery: VirtualBattery           # root battery over the full horizon
    n_stages: int
    stage1_groups: int
    stage1_cohorts: int
    config: dict

    def leaf_ids(self) -> list[str]:
        out: list[str] = []

        def walk(node: TreeNode) -> None:
            if isinstance(node, Leaf):
                out.append(node.task_id)
            else:
                for child in node.children:
                    walk(child)

        walk(self.root)
        return out


def partition_fleet(fleet: Fleet, group_size: int, policy: str = "window-sorted",
                    seed: Optional[int] = None) -> list[list[ChargingTask]]:
    """Disjoint cover of the fleet by groups of at most `group_size` tasks."""
    if group_size < 1:
        raise ValidationError("group_size must be at least 1")
    if policy == "random":
        rng = np.random.default_rng(seed)
        order = [fleet.tasks[k] for k in rng.permutation(fleet.n)]
    elif policy == "window-sorted":
        order = sorted(fleet.tasks, key=lambda t: (t.a, t.d, t.id))
    else:
        raise ValidationError(f"unknown partition policy {policy!r}")
    return [order[i:i + group_size] for i in range(0, len(order), group_size)]


def _mean_nominal(units: Sequence[FlexUnit], coords: Sequence[int],
                  delta: float) -> VirtualBattery:
    """Parameter means over the units, on the given span (zeros off-window)."""
    coords = list(coords)
    n = len(units)
    lo = np.zeros(len(coords))
    hi = np.zeros(len(coords))
    for un in units:
        for k, t in enumerate(coords):
            if t in un.active:
                l, h = un.bound_at(t)
                lo[k] += l
                hi[k] += h
    lo /= n
    hi /= n
    e_low = sum(un.e_low for un in units) / n
    e_high = sum(un.e_high for un in units) / n
    e_low = min(max(e_low, delta * lo.sum()), delta * hi.sum())
    e_high = min(max(e_high, delta * lo.sum()), delta * hi.sum())
    e_low = min(e_low, e_high)
    return VirtualBattery(lo, hi, e_low, e_high)


def nominal_for_group(group: Sequence[ChargingTask], delta: float = 1.0) -> VirtualBattery:
    """Group-average battery over the group's span (min arrival..max departure).

    Upper bounds are the column averages of the max-rate charging matrix;
    lower bounds are zero; the energy interval is the group mean, clipped
    into what the power bounds can reach.
    """
    if not group:
        raise ValidationError("empty group has no nominal battery")
    units = [FlexUnit.from_task(t, delta) for t in group]
    a0 = min(t.a for t in group)
    d0 = max(t.d for t in group)
    return _mean_nominal(units, range(a0, d0 + 1), delta)


def _span(units: Sequence[FlexUnit]) -> tuple[int, ...]:
    lo = min(un.active[0] for un in units)
    hi = max(un.active[-1] for un in units)
    return tuple(range(lo, hi + 1))


def _unit_nominal_on_span(unit: FlexUnit, coords: tuple[int, ...]) -> VirtualBattery:
    lo = np.zeros(len(coords))
    hi = np.zeros(len(coords))
    for k, t in enumerate(coords):
        if t in unit.active:
            lo[k], hi[k] = unit.bound_at(t)
    return VirtualBattery(lo, hi, unit.e_low, unit.e_high)


def _most_constrained(units: Sequence[FlexUnit]) -> FlexUnit:
    return min(units, key=lambda un: (un.e_high - un.e_low,
                                      un.delta * un.hi.sum() - un.e_high,
                                      un.origin))


@dataclass
class _Solved:
    node: AppNode
    cohort_key: Optional[tuple]   # None when the shared nominal was abandoned


def _solve_chunk(label: str, units: list[FlexUnit], children: list[TreeNode],
                 coords: tuple[int, ...], nominal: VirtualBattery,
                 cohort_key: Optional[tuple], delta: float) -> list[_Solved]:
    """One homothet-approximation solve, with the degenerate-group retry ladder."""
    lifted = eliminate(units, coords=coords)

    def attempt(batt: VirtualBattery) -> AppNode:
        app = solve_app(lifted, battery_to_hpolytope(batt, delta=delta, coords=coords))
        return AppNode(label=label, children=tuple(children), units=tuple(units),
                       coords=coords, nominal=batt, app=app, elim=lifted.elim)

    try:
        return [_Solved(attempt(nominal), cohort_key)]
    except EmptyOrDegenerate:
        pass
    fallback = _unit_nominal_on_span(_most_constrained(units), coords)
    try:
        return [_Solved(attempt(fallback), None)]
    except EmptyOrDegenerate:
        pass
    # last resort: singleton groups; one unit against its own battery is exact
    out = []
    for k, (un, child) in enumerate(zip(units, children)):
        solo_coords = tuple(range(un.active[0], un.active[-1] + 1))
        solo = eliminate([un], coords=solo_coords)
        batt = _unit_nominal_on_span(un, solo_coords)
        app = solve_app(solo, battery_to_hpolytope(batt, delta=delta, coords=solo_coords))
        out.append(_Solved(
            AppNode(label=f"{label}.solo{k}", children=(child,), units=(un,),
                    coords=solo_coords, nominal=batt, app=app, elim=solo.elim),
            None))
    return out


def synthesize_battery(node: TreeNode, m: int) -> VirtualBattery:
    """Node battery re-embedded into the full horizon (zero bounds elsewhere)."""
    if isinstance(node, Leaf):
        raise ValidationError("leaves carry no battery")
    local = node.battery
    lo = np.zeros(m)
    hi = np.zeros(m)
    for k, t in enumerate(node.coords):
        lo[t - 1] = local.p_low[k]
        hi[t - 1] = local.p_high[k]
    return VirtualBattery(lo, hi, local.e_low, local.e_high)


def aggregate(fleet: Fleet, config: Optional[AggregateConfig] = None) -> AggregationTree:
    """Build the full aggregation tree and its root battery."""
    cfg = config or AggregateConfig()
    if fleet.n == 0:
        raise ValidationError("cannot aggregate an empty fleet")
    delta = fleet.delta
    rigid = [t.id for t in fleet.tasks if t.e_high - t.e_low <= 1e-12]
    if rigid:
        logging.warning("%d task(s) have a zero-width energy interval "
                        "(e.g. %s); the lifted system loses full "
                        "dimensionality but stays valid", len(rigid), rigid[0])

    groups = partition_fleet(fleet, cfg.group_size, cfg.policy, cfg.seed)
    level: list[tuple[FlexUnit, TreeNode]] = []
    stage = 0
    stage1_groups = len(groups)
    stage1_cohorts = 0

    def run_stage(chunks: list[tuple[list[FlexUnit], list[TreeNode]]],
                  stage_no: int) -> list[tuple[FlexUnit, TreeNode]]:
        spans = [_span(units) for units, _ in chunks]
        nominals = [_mean_nominal(units, span, delta)
                    for (units, _), span in zip(chunks, spans)]
        cohorts: dict[tuple, list[int]] = {}
        for idx, span in enumerate(spans):
            cohorts.setdefault((span[0], span[-1]), []).append(idx)
        shared: dict[int, VirtualBattery] = {}
        for key, members in cohorts.items():
            batt = nominals[members[0]] if len(members) == 1 else _mean_nominal(
                [un for k in members for un in chunks[k][0]],
                range(key[0], key[1] + 1), delta)
            for k in members:
                shared[k] = batt

        def solve_one(idx: int) -> list[_Solved]:
            units, children = chunks[idx]
            key = (spans[idx][0], spans[idx][-1])
            return _solve_chunk(f"s{stage_no}g{idx:03d}", units, children,
                                spans[idx], shared[idx], key, delta)

        if cfg.workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                solved_lists = list(pool.map(solve_one, range(len(chunks))))
        else:
            solved_lists = [solve_one(i) for i in range(len(chunks))]

        by_cohort: dict[tuple, list[AppNode]] = {}
        standalone: list[AppNode] = []
        for solved in solved_lists:
            for item in solved:
                if item.cohort_key is None:
                    standalone.append(item.node)
                else:
                    by_cohort.setdefault(item.cohort_key, []).append(item.node)
        merged: list[TreeNode] = []
        for key in sorted(by_cohort):
            members = by_cohort[key]
            if len(members) == 1:
                merged.append(members[0])
            else:
                merged.append(CohortNode(
                    label=f"s{stage_no}c{key[0]:02d}_{key[1]:02d}",
                    children=tuple(members), coords=members[0].coords,
                    base=members[0].nominal))
        merged.extend(standalone)
        out = []
        for node in merged:
            unit = FlexUnit.from_battery(node.battery, node.coords,
                                         origin=node.label, delta=delta)
            out.append((unit, node))
        return out

    # stage 1: task groups
    stage = 1
    chunks = [([FlexUnit.from_task(t, delta) for t in g], [Leaf(t.id) for t in g])
              for g in groups]
    level = run_stage(chunks, stage)
    stage1_cohorts = len(level)

    while len(level) > 1:
        stage += 1
        level.sort(key=lambda pair: (pair[0].active[0], pair[0].active[-1],
                                     getattr(pair[1], "label", "")))
        chunks = [([u for u, _ in level[i:i + cfg.fanout]],
                   [nd for _, nd in level[i:i + cfg.fanout]])
                  for i in range(0, len(level), cfg.fanout)]
        level = run_stage(chunks, stage)

    root = level[0][1]
    return AggregationTree(
        root=root, m=fleet.m, delta=delta,
        battery=synthesize_battery(root, fleet.m),
        n_stages=stage, stage1_groups=stage1_groups,
        stage1_cohorts=stage1_cohorts, config=cfg.to_dict())


@dataclass(frozen=True)
class DispatchResult:
    task_ids: tuple[str, ...]
    schedule: np.ndarray                      # N x m kW, rows follow task_ids
    group_profiles: dict[str, np.ndarray]     # node label -> full-horizon profile
    clamped: tuple[tuple[str, int, float], ...]


def _embed(values: np.ndarray, coords: Sequence[int], m: int) -> np.ndarray:
    out = np.zeros(m)
    for k, t in enumerate(coords):
        out[t - 1] = values[k]
    return out


def dispatch(tree: AggregationTree, u: np.ndarray, tol: float = 1e-6) -> DispatchResult:
    """Split a battery-feasible aggregate profile into per-task schedules.

    Violations up to `tol` (solver noise) are clamped onto the admissible
    bounds and recorded; anything larger raises, since the tree's
    certificates should make it impossible.
    """
    u = np.asarray(u, dtype=float).ravel()
    if u.size != tree.m:
        raise NotInBattery(f"profile length {u.size} vs horizon {tree.m}")
    if not tree.battery.contains(u, delta=tree.delta, tol=tol):
        raise NotInBattery("profile is not inside the root battery")
    rows: dict[str, np.ndarray] = {}
    profiles: dict[str, np.ndarray] = {}
    clamp_log: list[tuple[str, int, float]] = []

    def clamp(label: str, active: Sequence[int], values: np.ndarray,
              lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        out = np.clip(values, lo, hi)
        moved = np.abs(out - values)
        for k in np.where(moved > 0)[0]:
            if moved[k] > tol:
                raise DispatchInfeasible(
                    f"{label}: slot {active[k]} violates bounds by {moved[k]:.3e}")
            clamp_log.append((label, int(active[k]), float(moved[k])))
        return out

    def walk(node: TreeNode, z: np.ndarray) -> None:
        profiles[node.label] = _embed(z, node.coords, tree.m)
        if isinstance(node, CohortNode):
            lam, mu = node.lam, node.mu
            for child in node.children:
                walk(child, (child.lam / lam) * (z - mu) + child.mu)
            return
        utilde = node.app.rule_apply(z)
        parts = node.elim.reconstruct(z, utilde)
        for child, unit, part in zip(node.children, node.units, parts):
            part = clamp(unit.origin, unit.active, part, unit.lo, unit.hi)
            if isinstance(child, Leaf):
                rows[child.task_id] = _embed(part, unit.active, tree.m)
            else:
                z_child = _embed(part, unit.active, tree.m)[np.asarray(child.coords) - 1]
                walk(child, z_child)

    root = tree.root
    if isinstance(root, Leaf):
        raise ValidationError("tree has no aggregation node")
    z_root = u[np.asarray(root.coords) - 1]
    off = np.ones(tree.m, dtype=bool)
    off[np.asarray(root.coords) - 1] = False
    if np.any(np.abs(u[off]) > tol):
        raise NotInBattery("profile draws power outside the aggregated span")
    walk(root, z_root)
    ids = tuple(tree.leaf_ids())
    schedule = np.vstack([rows[tid] for tid in ids])
    return DispatchResult(task_ids=ids, schedule=schedule,
                          group_profiles=profiles, clamped=tuple(clamp_log))


def bounds_report(battery: VirtualBattery) -> np.ndarray:
    """Rows (t, p_low, p_high), one per slot, ready for CSV/plotting."""
    slots = np.arange(1, battery.m + 1, dtype=float)
    return np.column_stack([slots, battery.p_low, battery.p_high])


def _node_to_dict(node: TreeNode, with_certificates: bool) -> dict:
    if isinstance(node, Leaf):
        return {"kind": "leaf", "task_id": node.task_id}
    if isinstance(node, AppNode):
        return {
            "kind": "app",
            "label": node.label,
            "coords": list(node.coords),
            "nominal": node.nominal.to_dict(),
            "app": node.app.to_dict(group_ids=[un.origin for un in node.units],
                                    with_certificate=with_certificates),
            "elim": node.elim.to_dict(),
            "units": [
                {"active": list(un.active), "lo": [float(v) for v in un.lo],
                 "hi": [float(v) for v in un.hi], "e_low_kwh": un.e_low,
                 "e_high_kwh": un.e_high, "origin": un.origin}
                for un in node.units
            ],
            "children": [_node_to_dict(c, with_certificates) for c in node.children],
        }
    return {
        "kind": "cohort",
        "label": node.label,
        "coords": list(node.coords),
        "base": node.base.to_dict(),
        "children": [_node_to_dict(c, with_certificates) for c in node.children],
    }


def _node_from_dict(d: dict, delta: float) -> TreeNode:
    kind = d["kind"]
    if kind == "leaf":
        return Leaf(task_id=d["task_id"])
    children = tuple(_node_from_dict(c, delta) for c in d["children"])
    coords = tuple(int(t) for t in d["coords"])
    if kind == "app":
        units = tuple(
            FlexUnit(active=tuple(u["active"]), lo=np.asarray(u["lo"], float),
                     hi=np.asarray(u["hi"], float), e_low=float(u["e_low_kwh"]),
                     e_high=float(u["e_high_kwh"]), origin=u["origin"], delta=delta)
            for u in d["units"])
        return AppNode(
            label=d["label"], children=children, units=units, coords=coords,
            nominal=VirtualBattery.from_dict(d["nominal"]),
            app=AppSolution.from_dict(d["app"]),
            elim=EliminationMap.from_dict(d["elim"]))
    if kind == "cohort":
        return CohortNode(label=d["label"], children=children, coords=coords,
                          base=VirtualBattery.from_dict(d["base"]))
    raise ValidationError(f"unknown tree node kind {kind!r}")


def tree_to_dict(tree: AggregationTree, with_certificates: bool = False) -> dict:
    return {
        "version": TREE_FORMAT_VERSION,
        "m": tree.m,
        "delta_h": tree.delta,
        "n_stages": tree.n_stages,
        "stage1_groups": tree.stage1_groups,
        "stage1_cohorts": tree.stage1_cohorts,
        "config": tree.config,
        "battery": tree.battery.to_dict(),
        "root": _node_to_dict(tree.root, with_certificates),
    }


def tree_from_dict(d: dict) -> AggregationTree:
    if int(d.get("version", -1)) != TREE_FORMAT_VERSION:
        raise ValidationError(f"unsupported tree format version {d.get('version')!r}")
    delta = float(d["delta_h"])
    return AggregationTree(
        root=_node_from_dict(d["root"], delta),
        m=int(d["m"]), delta=delta,
        battery=VirtualBattery.from_dict(d["battery"]),
        n_stages=int(d["n_stages"]),
        stage1_groups=int(d["stage1_groups"]),
        stage1_cohorts=int(d["stage1_cohorts"]),
        config=dict(d["config"]))


def save_tree(tree: AggregationTree, path: str, with_certificates: bool = False) -> None:
    with open(path, "w") as fh:
        json.dump(tree_to_dict(tree, with_certificates), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_tree(path: str) -> AggregationTree:
    with open(path) as fh:
        return tree_from_dict(json.load(fh))
