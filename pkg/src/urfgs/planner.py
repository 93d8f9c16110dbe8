"""Downstream decisions on a radio map: AP ranking and failure-aware grid planning.

Paths are walks on a 4-connected grid that start at ``start`` and end the
first time they reach ``goal`` (reaching the goal is the stop action).  A
walk of ``k`` moves visits ``k + 1`` cells, the start included and repeats
counted; its failure fraction is the share of those visits whose cell power
is below the threshold.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .radio.propagation import RadioConfig, RadioLink, trace_power, watts_to_dbm

MOVES = ((-1, 0), (0, -1), (0, 1), (1, 0))
POWER_FLOOR_DBM = -300.0


class PlanningError(ValueError):
    pass


@dataclass
class PlanningGrid:
    power: np.ndarray                 # (rows, cols) mean cell power, dBm
    start: tuple
    goal: tuple
    power_threshold: float            # dBm
    max_steps: int
    failure_probability: float = 0.0
    obstacles: np.ndarray | None = None

    def __post_init__(self):
        self.power = np.asarray(self.power, dtype=np.float64)
        if self.power.ndim != 2:
            raise PlanningError("power map must be 2-D")
        if self.obstacles is None:
            self.obstacles = np.zeros(self.power.shape, bool)
        self.obstacles = np.asarray(self.obstacles, dtype=bool)
        if self.obstacles.shape != self.power.shape:
            raise PlanningError("obstacle mask shape differs from the power map")
        self.start = tuple(int(x) for x in self.start)
        self.goal = tuple(int(x) for x in self.goal)
        for name, c in (("start", self.start), ("goal", self.goal)):
            if not self.inside(c):
                raise PlanningError(f"{name} {c} is outside the grid")
            if self.obstacles[c]:
                raise PlanningError(f"{name} {c} is an obstacle")
        if not 0.0 <= self.failure_probability <= 1.0:
            raise PlanningError("failure probability must lie in [0, 1]")
        if self.max_steps < 0:
            raise PlanningError("max_steps must be non-negative")

    @property
    def shape(self):
        return self.power.shape

    def inside(self, c) -> bool:
        return 0 <= c[0] < self.shape[0] and 0 <= c[1] < self.shape[1]

    def failed(self) -> np.ndarray:
        return self.power < self.power_threshold

    def neighbours(self, c):
        """Free 4-neighbours in ascending (row, col) order."""
        out = []
        for dr, dc in MOVES:
            n = (c[0] + dr, c[1] + dc)
            if self.inside(n) and not self.obstacles[n]:
                out.append(n)
        return out


@dataclass
class PlanResult:
    path: list | None                 # cells start..goal, [] when start == goal, None when infeasible
    failure_fraction: float | None
    satisfying: bool

    @property
    def feasible(self) -> bool:
        return self.path is not None

    @property
    def length(self) -> int | None:
        return None if self.path is None else max(len(self.path) - 1, 0)


def failure_fraction(path, grid: PlanningGrid) -> float:
    if not path:
        return 0.0
    bad = grid.failed()
    return sum(bool(bad[c]) for c in path) / len(path)


def _forward(grid: PlanningGrid):
    """reach[k][cell] = set of failure counts of walks with k moves ending at cell (goal only at the end)."""
    bad = grid.failed()
    reach = [{grid.start: {int(bad[grid.start])}}]
    for _ in range(grid.max_steps):
        nxt: dict = {}
        for c, fs in reach[-1].items():
            if c == grid.goal:
                continue
            for n in grid.neighbours(c):
                add = int(bad[n])
                nxt.setdefault(n, set()).update(f + add for f in fs)
        reach.append(nxt)
    return reach


def _backward(grid: PlanningGrid, k: int):
    """can[i][cell] = failure counts collectable on steps i+1..k ending at the goal at step k."""
    bad = grid.failed()
    can = [dict() for _ in range(k + 1)]
    can[k][grid.goal] = {0}
    for i in range(k - 1, -1, -1):
        for c in np.ndindex(grid.shape):
            if grid.obstacles[c] or c == grid.goal:
                continue
            s = set()
            for n in grid.neighbours(c):
                s.update(f + int(bad[n]) for f in can[i + 1].get(n, ()))
            if s:
                can[i][c] = s
    return can


def plan_path(grid: PlanningGrid) -> PlanResult:
    """Walk minimizing the failure fraction; ties: fewer moves, then lexicographic cells."""
    if grid.start == grid.goal:
        return PlanResult([], 0.0, True)
    reach = _forward(grid)
    best = None
    for k in range(1, grid.max_steps + 1):
        for f in sorted(reach[k].get(grid.goal, ())):
            key = (Fraction(f, k + 1), k)
            if best is None or key < best[0]:
                best = (key, k, f)
    if best is None:
        return PlanResult(None, None, False)
    _, k, f = best
    bad = grid.failed()
    can = _backward(grid, k)
    path = [grid.start]
    remaining = f - int(bad[grid.start])
    for i in range(1, k + 1):
        for n in grid.neighbours(path[-1]):
            need = remaining - int(bad[n])
            if need in can[i].get(n, ()):
                path.append(n)
                remaining = need
                break
        else:  # pragma: no cover - the backward table guarantees a continuation
            raise RuntimeError("planner lost the optimal walk")
    frac = f / (k + 1)
    return PlanResult(path, frac, frac <= grid.failure_probability + 1e-12)


def shortest_path(grid: PlanningGrid) -> PlanResult:
    """Geometry-only baseline: fewest moves, lexicographically smallest among those."""
    flat = PlanningGrid(np.zeros(grid.shape), grid.start, grid.goal, -1.0, grid.max_steps,
                        grid.failure_probability, grid.obstacles)
    res = plan_path(flat)
    if res.path is None:
        return res
    frac = failure_fraction(res.path, grid)
    return PlanResult(res.path, frac, frac <= grid.failure_probability + 1e-12)


def brute_force_plan(grid: PlanningGrid) -> PlanResult:
    """Exhaustive depth-first enumeration of every admissible walk (test oracle)."""
    if grid.start == grid.goal:
        return PlanResult([], 0.0, True)
    bad = grid.failed()
    goal = grid.goal
    best = [None]

    def visit(path, fails):
        c = path[-1]
        k = len(path) - 1
        if c == goal:
            key = (Fraction(fails, k + 1), k, list(path))
            if best[0] is None or key < best[0]:
                best[0] = key
            return
        left = grid.max_steps - k
        if abs(c[0] - goal[0]) + abs(c[1] - goal[1]) > left:
            return
        for dr, dc in MOVES:
            n = (c[0] + dr, c[1] + dc)
            if grid.inside(n) and not grid.obstacles[n]:
                path.append(n)
                visit(path, fails + int(bad[n]))
                path.pop()

    visit([grid.start], int(bad[grid.start]))
    if best[0] is None:
        return PlanResult(None, None, False)
    frac, _, path = best[0]
    return PlanResult(path, float(frac), float(frac) <= grid.failure_probability + 1e-12)


def improvement_rate(baseline_path, radio_path, grid: PlanningGrid, eps: float = 1e-12) -> float:
    """Relative failure-fraction reduction in percent; 0 when the baseline never fails."""
    fb = failure_fraction(baseline_path, grid)
    fr = failure_fraction(radio_path, grid)
    if fb == 0.0:
        return 0.0
    return 100.0 * (fb - fr) / max(fb, eps)


# -- radio map products -------------------------------------------------------------------------------

def _dbm(p):
    return float(watts_to_dbm(p)) if p > 0 else POWER_FLOOR_DBM


@dataclass
class ApCandidateReport:
    positions: np.ndarray        # (K, 3)
    mean_power_dbm: np.ndarray   # (K,)
    ranks: np.ndarray            # rank of each candidate, 0 = best
    order: np.ndarray            # candidate indices, best first

    @property
    def best(self) -> int:
        return int(self.order[0])

    @property
    def worst(self) -> int:
        return int(self.order[-1])


def rank_from_means(means) -> tuple[np.ndarray, np.ndarray]:
    """(order, ranks) for descending means; ties keep candidate order."""
    means = np.asarray(means, dtype=np.float64)
    order = np.argsort(-means, kind="stable")
    ranks = np.empty(len(means), dtype=np.int64)
    ranks[order] = np.arange(len(means))
    return order, ranks


def rank_aps(candidates, rx_set, scene, frequency: float, tx_power: float = 1.0,
             config: RadioConfig | None = None, linear: bool = False, power_fn=None) -> ApCandidateReport:
    """Rank Tx candidates by received power averaged over the Rx set.

    The average is taken over dBm values unless ``linear`` is set.
    ``power_fn(tx, rx)`` overrides the traced power (watts), e.g. with an oracle.
    """
    cand = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    rxs = np.atleast_2d(np.asarray(rx_set, dtype=np.float64))
    if len(cand) == 0 or len(rxs) == 0:
        raise PlanningError("candidate and receiver sets must be non-empty")
    if power_fn is None:
        power_fn = lambda tx, rx: trace_power(RadioLink(tx, rx, frequency, tx_power), scene,
                                              config=config, with_paths=False)[0]
    means = []
    for tx in cand:
        p = np.array([power_fn(tx, rx) for rx in rxs])
        means.append(_dbm(p.mean()) if linear else float(np.mean([_dbm(x) for x in p])))
    means = np.asarray(means)
    order, ranks = rank_from_means(means)
    return ApCandidateReport(cand, means, ranks, order)


def cell_power_map(scene, tx, frequency: float, shape, origin=(0.0, 0.0), height: float = 1.0,
                   cell: float = 1.0, tx_power: float = 1.0, config: RadioConfig | None = None,
                   subsample: int = 3, power_fn=None) -> np.ndarray:
    """Per-cell dBm-domain mean power over a ``subsample`` x ``subsample`` lattice.

    Cell (r, c) covers x in origin[0] + [c, c+1) * cell and y in origin[1] + [r, r+1) * cell.
    """
    if power_fn is None:
        power_fn = lambda t, r: trace_power(RadioLink(t, r, frequency, tx_power), scene,
                                            config=config, with_paths=False)[0]
    rows, cols = shape
    offs = (np.arange(subsample) + 0.5) / subsample * cell
    out = np.zeros((rows, cols))
    tx = np.asarray(tx, dtype=np.float64)
    for r in range(rows):
        for c in range(cols):
            vals = [_dbm(power_fn(tx, np.array([origin[0] + c * cell + ox, origin[1] + r * cell + oy, height])))
                    for oy in offs for ox in offs]
            out[r, c] = float(np.mean(vals))
    return out
