"""Precomputed motion plans over floor positions.

Plans are keyed by positions only; orientations are reconciled at query time.
That is exact for movement (orientation never gates a move in this
environment) and costs at most one extra turn step per agent at the end of a
plan, bounding query cost to optimal-plus-one per agent.

Joint plans come from breadth-first search over the two-player product graph
using the environment's collision rules, so replaying a joint plan through
``KitchenEnv.step`` tracks it exactly.
"""

from __future__ import annotations

import pickle
from dataclasses import dataclass, field
from typing import Optional

from .env import (
    ACTION_ORIENTATION,
    MOVE_ACTIONS,
    OFFSETS,
    ORIENTATION_ACTION,
    Action,
    Orientation,
)
from .layouts import Layout, Pos

Pair = tuple[Pos, Pos]
JointAction = tuple[Action, Action]

_CACHE_VERSION = 1
_MOTION_CHOICES = MOVE_ACTIONS + (Action.NOOP,)


class UnreachableGoal(Exception):
    pass


@dataclass(frozen=True)
class MotionQuery:
    cost: int
    actions: list
    corrected: tuple[bool, ...]


@dataclass
class MotionPlanLibrary:
    layout: Layout
    single_dist: dict[Pos, dict[Pos, int]]
    joint_dist: dict[Pair, dict[Pair, int]]
    joint_parent: dict[Pair, dict[Pair, tuple[Pair, JointAction]]]
    _transitions: dict = field(default_factory=dict, repr=False)


def _move_target(layout: Layout, pos: Pos, action: Action) -> Pos:
    if action is Action.NOOP:
        return pos
    dx, dy = OFFSETS[ACTION_ORIENTATION[action]]
    target = (pos[0] + dx, pos[1] + dy)
    return target if layout.is_floor(target) else pos


def _step_pair(layout: Layout, pair: Pair, joint: JointAction) -> Pair:
    a = _move_target(layout, pair[0], joint[0])
    b = _move_target(layout, pair[1], joint[1])
    if a == b:
        return pair
    if a == pair[1] and b == pair[0]:
        return pair
    return (a, b)


def precompute(layout: Layout) -> MotionPlanLibrary:
    floors = layout.floor_cells
    single_dist: dict[Pos, dict[Pos, int]] = {}
    for source in floors:
        dist = {source: 0}
        frontier = [source]
        while frontier:
            nxt = []
            for pos in frontier:
                for nb in layout.floor_neighbors(pos):
                    if nb not in dist:
                        dist[nb] = dist[pos] + 1
                        nxt.append(nb)
            frontier = nxt
        single_dist[source] = dist

    pairs = [(a, b) for a in floors for b in floors if a != b]
    joint_moves = [(a, b) for a in _MOTION_CHOICES for b in _MOTION_CHOICES]
    transitions: dict[Pair, list[tuple[Pair, JointAction]]] = {}
    for pair in pairs:
        outs = []
        for joint in joint_moves:
            nxt = _step_pair(layout, pair, joint)
            if nxt != pair:
                outs.append((nxt, joint))
        transitions[pair] = outs

    joint_dist: dict[Pair, dict[Pair, int]] = {}
    joint_parent: dict[Pair, dict[Pair, tuple[Pair, JointAction]]] = {}
    for start in pairs:
        dist = {start: 0}
        parent: dict[Pair, tuple[Pair, JointAction]] = {}
        frontier = [start]
        while frontier:
            nxt_frontier = []
            for pair in frontier:
                for nxt, joint in transitions[pair]:
                    if nxt not in dist:
                        dist[nxt] = dist[pair] + 1
                        parent[nxt] = (pair, joint)
                        nxt_frontier.append(nxt)
            frontier = nxt_frontier
        joint_dist[start] = dist
        joint_parent[start] = parent
    return MotionPlanLibrary(
        layout=layout,
        single_dist=single_dist,
        joint_dist=joint_dist,
        joint_parent=joint_parent,
    )


def single_path(
    library: MotionPlanLibrary,
    start: Pos,
    goal: Pos,
    prefer_final: Optional[Orientation] = None,
) -> list[Action]:
    """One shortest action path; when possible the last move already points
    in ``prefer_final`` so no turn step is needed afterwards.
    """
    layout = library.layout
    dist = library.single_dist.get(start)
    if dist is None or goal not in dist:
        raise UnreachableGoal(f"no path {start} -> {goal}")
    actions: list[Action] = []
    cur = goal
    while cur != start:
        d = dist[cur]
        chosen = None
        if not actions and prefer_final is not None:
            dx, dy = OFFSETS[prefer_final]
            cand = (cur[0] - dx, cur[1] - dy)
            if layout.is_floor(cand) and dist.get(cand) == d - 1:
                chosen = (cand, ORIENTATION_ACTION[prefer_final])
        if chosen is None:
            for action in MOVE_ACTIONS:
                dx, dy = OFFSETS[ACTION_ORIENTATION[action]]
                cand = (cur[0] - dx, cur[1] - dy)
                if layout.is_floor(cand) and dist.get(cand) == d - 1:
                    chosen = (cand, action)
                    break
        assert chosen is not None
        cur, action = chosen
        actions.append(action)
    actions.reverse()
    return actions


def _require_turnable(layout: Layout, cell: Pos, facing: Orientation) -> None:
    dx, dy = OFFSETS[facing]
    faced = (cell[0] + dx, cell[1] + dy)
    if layout.is_floor(faced):
        raise ValueError(
            f"required facing {facing.name} from {cell} points at floor; "
            "a turn there would move the player"
        )


def query_single(
    library: MotionPlanLibrary,
    start: Pos,
    goal: Pos,
    orientation: Orientation,
    required_facing: Optional[Orientation] = None,
) -> MotionQuery:
    actions = single_path(library, start, goal, prefer_final=required_facing)
    final = ACTION_ORIENTATION[actions[-1]] if actions else orientation
    corrected = False
    if required_facing is not None and final is not required_facing:
        _require_turnable(library.layout, goal, required_facing)
        actions = actions + [ORIENTATION_ACTION[required_facing]]
        corrected = True
    return MotionQuery(cost=len(actions), actions=actions, corrected=(corrected,))


def _joint_path_raw(
    library: MotionPlanLibrary, starts: Pair, goals: Pair
) -> list[JointAction]:
    if starts == goals:
        return []
    parents = library.joint_parent.get(starts)
    dist = library.joint_dist.get(starts)
    if parents is None or dist is None or goals not in dist:
        raise UnreachableGoal(f"no joint path {starts} -> {goals}")
    steps: list[tuple[Pair, JointAction]] = []
    cur = goals
    while cur != starts:
        prev, joint = parents[cur]
        steps.append((cur, joint))
        cur = prev
    steps.reverse()
    # Canonicalize: any component that did not change position becomes Noop.
    # Blocked-into-wall moves are the only such components on tree paths
    # (mutual blocks are self-loops and never tree edges), so this never
    # changes the other player's resolution.
    path: list[JointAction] = []
    prev_pair = starts
    for pair, joint in steps:
        canon = tuple(
            joint[k] if pair[k] != prev_pair[k] else Action.NOOP for k in (0, 1)
        )
        path.append(canon)  # type: ignore[arg-type]
        prev_pair = pair
    return path


def query(
    library: MotionPlanLibrary,
    starts: Pair,
    goals: Pair,
    orientations: tuple[Orientation, Orientation],
    required_facings: tuple[Optional[Orientation], Optional[Orientation]] = (None, None),
) -> MotionQuery:
    """Joint plan from ``starts`` to ``goals`` with optional final facings.

    Facing corrections reuse post-arrival Noop slots when the plan has them,
    otherwise one shared extra step is appended; each agent adds at most one
    step over the stored position-only optimum.
    """
    if goals[0] == goals[1]:
        raise UnreachableGoal("players cannot occupy the same goal cell")
    path = [list(j) for j in _joint_path_raw(library, starts, goals)]
    corrected = [False, False]
    appended: list[Action] = [Action.NOOP, Action.NOOP]
    need_append = False
    for k in (0, 1):
        moves = [t for t, j in enumerate(path) if j[k] is not Action.NOOP]
        final = ACTION_ORIENTATION[path[moves[-1]][k]] if moves else orientations[k]
        want = required_facings[k]
        if want is None or final is want:
            continue
        _require_turnable(library.layout, goals[k], want)
        turn = ORIENTATION_ACTION[want]
        corrected[k] = True
        arrival = moves[-1] + 1 if moves else 0
        slot = next(
            (t for t in range(arrival, len(path)) if path[t][k] is Action.NOOP), None
        )
        if slot is None:
            appended[k] = turn
            need_append = True
        else:
            path[slot][k] = turn
    if need_append:
        path.append(appended)
    actions = [tuple(j) for j in path]
    return MotionQuery(cost=len(actions), actions=actions, corrected=tuple(corrected))


def feature_goals(layout: Layout, cell: Pos) -> list[tuple[Pos, Orientation]]:
    """Floor cells from which a feature cell can be faced, with the facing."""
    out = []
    for nb in sorted(layout.floor_neighbors(cell), key=lambda p: (p[1], p[0])):
        delta = (cell[0] - nb[0], cell[1] - nb[1])
        orientation = next(o for o, off in OFFSETS.items() if off == delta)
        out.append((nb, orientation))
    return out


def save_library(library: MotionPlanLibrary, path: str) -> None:
    payload = {
        "version": _CACHE_VERSION,
        "layout_digest": library.layout.digest(),
        "single_dist": library.single_dist,
        "joint_dist": library.joint_dist,
        "joint_parent": library.joint_parent,
    }
    with open(path, "wb") as fh:
        pickle.dump(payload, fh)


def load_library(path: str, layout: Layout) -> MotionPlanLibrary:
    with open(path, "rb") as fh:
        payload = pickle.load(fh)
    if payload["version"] != _CACHE_VERSION:
        raise ValueError(f"cache version {payload['version']} unsupported")
    if payload["layout_digest"] != layout.digest():
        raise ValueError("cache was built for a different layout")
    return MotionPlanLibrary(
        layout=layout,
        single_dist=payload["single_dist"],
        joint_dist=payload["joint_dist"],
        joint_parent=payload["joint_parent"],
    )


_LIBRARIES: dict[str, MotionPlanLibrary] = {}


def get_library(layout: Layout) -> MotionPlanLibrary:
    """Process-wide memoized precompute."""
    key = layout.digest()
    if key not in _LIBRARIES:
        _LIBRARIES[key] = precompute(layout)
    return _LIBRARIES[key]
