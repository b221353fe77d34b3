"""Grid path planning over a world view (believed or ground truth).

The planner is complete on the grid: breadth-first distance fields from the
goal cells, greedy descent from the gripper. Views are plain dicts of object
positions so the scripted policy can plan against its own (possibly stale)
belief with the exact machinery recovery uses against ground truth.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .core import Action, ActionKind, make_action

Cell = tuple[int, int, int]

_AXIS_DELTAS = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]


@dataclass
class WorldView:
    """Positions and gripper pose as some agent believes them to be."""

    grid_size: int
    positions: dict[str, Cell]
    containers: dict[str, Optional[str]]
    bins: tuple[str, ...]
    gripper_position: Cell
    holding: Optional[str] = None
    gripper_open: bool = True
    reach: int = 1

    def blocking_cells(self) -> frozenset[Cell]:
        return frozenset(
            pos
            for oid, pos in self.positions.items()
            if self.containers.get(oid) is None and oid != self.holding
        )


def chebyshev(a: Cell, b: Cell) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]), abs(a[2] - b[2]))


class RoutePlanner:
    """Caches BFS distance fields keyed by (obstacles, goal set)."""

    def __init__(self, grid_size: int):
        self.grid_size = grid_size
        self._fields: dict[tuple, dict[Cell, int]] = {}

    def clear(self) -> None:
        self._fields.clear()

    def in_grid(self, cell: Cell) -> bool:
        g = self.grid_size
        return 0 <= cell[0] < g and 0 <= cell[1] < g and 0 <= cell[2] < g

    def distance_field(self, goals: frozenset[Cell], obstacles: frozenset[Cell]) -> dict[Cell, int]:
        key = (goals, obstacles)
        cached = self._fields.get(key)
        if cached is not None:
            return cached
        dist: dict[Cell, int] = {}
        frontier = []
        for cell in goals:
            if self.in_grid(cell) and cell not in obstacles:
                dist[cell] = 0
                frontier.append(cell)
        d = 0
        while frontier:
            d += 1
            nxt = []
            for cell in frontier:
                for dd in _AXIS_DELTAS:
                    nb = (cell[0] + dd[0], cell[1] + dd[1], cell[2] + dd[2])
                    if nb not in dist and self.in_grid(nb) and nb not in obstacles:
                        dist[nb] = d
                        nxt.append(nb)
            frontier = nxt
        self._fields[key] = dist
        return dist

    def step_toward(self, start: Cell, goals: frozenset[Cell], obstacles: frozenset[Cell]) -> Optional[Cell]:
        """Next cell on a shortest path from start into the goal set, or None."""
        if start in goals:
            return start
        dist = self.distance_field(goals, obstacles)
        if start not in dist:
            return None
        best = None
        best_d = dist[start]
        for dd in _AXIS_DELTAS:
            nb = (start[0] + dd[0], start[1] + dd[1], start[2] + dd[2])
            d = dist.get(nb)
            if d is not None and d < best_d:
                best_d = d
                best = nb
        return best

    def adjacent_cells(self, cell: Cell, reach: int) -> frozenset[Cell]:
        """Cells from which an object at `cell` is within grasp/release reach."""
        out = set()
        for dx in range(-reach, reach + 1):
            for dy in range(-reach, reach + 1):
                for dz in range(-reach, reach + 1):
                    nb = (cell[0] + dx, cell[1] + dy, cell[2] + dz)
                    if self.in_grid(nb):
                        out.add(nb)
        return frozenset(out)


def _move_action(current: Cell, nxt: Cell, dim: int) -> Action:
    delta = (nxt[0] - current[0], nxt[1] - current[1], nxt[2] - current[2])
    return make_action(ActionKind.MOVE, delta=delta, dim=dim)


def next_action_for_subgoal(
    view: WorldView,
    planner: RoutePlanner,
    block: str,
    target_bin: str,
    action_dim: int = 8,
) -> Optional[Action]:
    """One step of the pick-and-place routine for `block` -> `target_bin`.

    Returns None when the view already satisfies the subgoal. Falls back to
    noop when no route exists (a corrupted view can paint the planner into a
    corner; the episode then burns steps rather than crashing).
    """
    if view.containers.get(block) == target_bin:
        return None
    obstacles = view.blocking_cells()
    grip = view.gripper_position
    reach = view.reach

    if view.holding == block:
        bin_pos = view.positions[target_bin]
        if chebyshev(grip, bin_pos) <= reach:
            offset = tuple(bin_pos[i] - grip[i] for i in range(3))
            return make_action(ActionKind.RELEASE, target_object=target_bin,
                               target_offset=offset, dim=action_dim)
        goal_cells = planner.adjacent_cells(bin_pos, reach) - obstacles
        nxt = planner.step_toward(grip, frozenset(goal_cells), obstacles)
        if nxt is None or nxt == grip:
            return make_action(ActionKind.NOOP, dim=action_dim)
        return _move_action(grip, nxt, action_dim)

    if view.holding is not None:
        # wrong object in hand; put it down here if possible
        if grip not in obstacles:
            return make_action(ActionKind.RELEASE, dim=action_dim)
        return make_action(ActionKind.NOOP, dim=action_dim)

    block_pos = view.positions.get(block)
    if block_pos is None:
        return make_action(ActionKind.NOOP, dim=action_dim)
    if chebyshev(grip, block_pos) <= reach:
        if not view.gripper_open:
            return make_action(ActionKind.OPEN, dim=action_dim)
        offset = tuple(block_pos[i] - grip[i] for i in range(3))
        return make_action(ActionKind.GRASP, target_object=block, target_offset=offset, dim=action_dim)
    goal_cells = planner.adjacent_cells(block_pos, reach) - obstacles
    nxt = planner.step_toward(grip, frozenset(goal_cells), obstacles)
    if nxt is None or nxt == grip:
        return make_action(ActionKind.NOOP, dim=action_dim)
    return _move_action(grip, nxt, action_dim)


def goto_maneuver(
    view: WorldView,
    planner: RoutePlanner,
    target_position: Cell,
    target_open: bool,
    action_dim: int = 8,
    max_moves: int = 64,
) -> list[Action]:
    """Action sequence returning the gripper to a remembered configuration.

    Moves along a shortest route to the recorded pose, then restores the
    recorded open/closed state. Objects are not repositioned; this is the
    forward-recovery analog of going back to a known-good configuration.
    """
    actions: list[Action] = []
    obstacles = view.blocking_cells()
    pos = view.gripper_position
    for _ in range(max_moves):
        if pos == target_position:
            break
        nxt = planner.step_toward(pos, frozenset({target_position}) - obstacles, obstacles)
        if nxt is None or nxt == pos:
            break
        delta = (nxt[0] - pos[0], nxt[1] - pos[1], nxt[2] - pos[2])
        actions.append(make_action(ActionKind.RECOVER_GOTO, delta=delta, dim=action_dim))
        pos = nxt
    if target_open and not view.gripper_open:
        actions.append(make_action(ActionKind.OPEN, dim=action_dim))
    elif not target_open and view.gripper_open:
        actions.append(make_action(ActionKind.CLOSE, dim=action_dim))
    if not actions:
        actions.append(make_action(ActionKind.NOOP, dim=action_dim))
    return actions
