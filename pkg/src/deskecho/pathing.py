"""Grid and pose-lattice search used by episode validation and the scripted
navigation controller.
"""

from __future__ import annotations

import math
from heapq import heappop, heappush

from .world import FORWARD_STEP, NavAction, OccupancyGrid, normalize_angle, sweep_blocked

_NEIGHBORS4 = ((1, 0), (-1, 0), (0, 1), (0, -1))


def astar_cells(grid: OccupancyGrid, start, goals) -> list | None:
    """A* over free cells (4-connected) to the nearest of ``goals``.

    Returns the cell path including both endpoints, or None.
    """
    goals = {g for g in goals if grid.in_grid(g) and not grid.blocked[g]}
    if not goals:
        return None
    if not grid.in_grid(start) or grid.blocked[start]:
        return None
    if start in goals:
        return [start]

    def h(cell):
        return min(math.hypot(cell[0] - g[0], cell[1] - g[1]) for g in goals)

    open_set = [(h(start), 0.0, start)]
    came_from = {}
    g_score = {start: 0.0}
    while open_set:
        _, g, current = heappop(open_set)
        if current in goals:
            path = [current]
            while current in came_from:
                current = came_from[current]
                path.append(current)
            return path[::-1]
        if g > g_score.get(current, math.inf):
            continue
        for di, dj in _NEIGHBORS4:
            nxt = (current[0] + di, current[1] + dj)
            if not grid.in_grid(nxt) or grid.blocked[nxt]:
                continue
            tentative = g + 1.0
            if tentative < g_score.get(nxt, math.inf):
                g_score[nxt] = tentative
                came_from[nxt] = current
                heappush(open_set, (tentative + h(nxt), tentative, nxt))
    return None


def cells_within(grid: OccupancyGrid, center, radius: float) -> list:
    """Free cells whose center lies within ``radius`` of a point."""
    lo = grid.cell_of((center[0] - radius, center[1] - radius))
    hi = grid.cell_of((center[0] + radius, center[1] + radius))
    out = []
    for i in range(lo[0], hi[0] + 1):
        for j in range(lo[1], hi[1] + 1):
            cell = (i, j)
            if not grid.in_grid(cell) or grid.blocked[cell]:
                continue
            cx, cy = grid.center_of(cell)
            if math.hypot(cx - center[0], cy - center[1]) <= radius:
                out.append(cell)
    return out


def _pose_key(pos, heading):
    return (round(pos[0] * 1e6), round(pos[1] * 1e6),
            round(normalize_angle(heading) / (math.pi / 2.0)) % 4)


def plan_nav_actions(grid: OccupancyGrid, start_pos, start_heading,
                     goal, radius: float = 0.5,
                     max_states: int = 20000) -> list[NavAction] | None:
    """BFS over the (0.5 m step, quarter-turn) pose lattice reachable from
    the start, using the same swept-segment collision rule as stepping.
    Returns the action list ending with Stop, or None when no stop pose
    within ``radius`` of the goal is reachable.
    """
    start = (start_pos, normalize_angle(start_heading))
    if math.dist(start_pos, goal) <= radius:
        return [NavAction.STOP]
    frontier = [start]
    seen = {_pose_key(*start)}
    parent = {}
    while frontier and len(seen) < max_states:
        nxt_frontier = []
        for pos, heading in frontier:
            key = _pose_key(pos, heading)
            moves = [
                (NavAction.TURN_LEFT, pos, normalize_angle(heading + math.pi / 2.0)),
                (NavAction.TURN_RIGHT, pos, normalize_angle(heading - math.pi / 2.0)),
            ]
            fwd = (pos[0] + FORWARD_STEP * math.cos(heading),
                   pos[1] + FORWARD_STEP * math.sin(heading))
            if not sweep_blocked(pos, fwd, grid):
                moves.append((NavAction.MOVE_FORWARD, fwd, heading))
            for action, npos, nheading in moves:
                nkey = _pose_key(npos, nheading)
                if nkey in seen:
                    continue
                seen.add(nkey)
                parent[nkey] = (key, action)
                if math.dist(npos, goal) <= radius:
                    actions = _reconstruct(parent, _pose_key(*start), nkey)
                    actions.append(NavAction.STOP)
                    return actions
                nxt_frontier.append((npos, nheading))
        frontier = nxt_frontier
    return None


def _reconstruct(parent, start_key, end_key):
    actions = []
    key = end_key
    while key != start_key:
        prev_key, action = parent[key]
        actions.append(action)
        key = prev_key
    return actions[::-1]


def reachable_stop_exists(grid: OccupancyGrid, start_pos, start_heading,
                          goal, radius: float = 0.5) -> bool:
    return plan_nav_actions(grid, start_pos, start_heading, goal, radius) is not None
