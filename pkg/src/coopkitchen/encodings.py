"""State representations.

Two encodings live here:

- ``featurize``: the 64-value hand-designed vector used by behavior cloning.
  Two 27-value player blocks (ego first) plus a 10-value ego-relative pot
  block. See FEATURE_SCHEMA for the exact slot meanings.
- ``encode_lossless``: a 20-plane grid tensor used by the conv policies.
  ``decode_lossless`` inverts it up to the timestep, which the planes cannot
  carry (decode returns timestep 0).

All relative positions are (target - origin) in grid coordinates. Absent or
unreachable targets encode as (0, 0). "Closest" means shortest walking
distance over the origin player's floor component, ties broken by row-major
order of the target cell.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .env import (
    COOK_TIME,
    OFFSETS,
    ObjectKind,
    Orientation,
    PlayerState,
    PotState,
    WorldState,
)
from .layouts import Layout, Pos, Tile

FEATURE_DIM = 64
NUM_PLANES = 20

_ORIENT_ORDER = (
    Orientation.NORTH,
    Orientation.SOUTH,
    Orientation.WEST,
    Orientation.EAST,
)
_HELD_ORDER = (ObjectKind.ONION, ObjectKind.DISH, ObjectKind.SOUP)
_POT_BUCKETS = ("empty", "one_onion", "two_onions", "cooking", "ready")

_PLAYER_SLOTS = [
    "rel_partner_dx", "rel_partner_dy",
    "rel_loose_onion_dx", "rel_loose_onion_dy",
    "rel_loose_dish_dx", "rel_loose_dish_dy",
    "rel_loose_soup_dx", "rel_loose_soup_dy",
    "rel_onion_dispenser_dx", "rel_onion_dispenser_dy",
    "rel_dish_dispenser_dx", "rel_dish_dispenser_dy",
    "rel_serving_dx", "rel_serving_dy",
    "orient_north", "orient_south", "orient_west", "orient_east",
    "empty_counter_north", "empty_counter_south",
    "empty_counter_west", "empty_counter_east",
    "held_onion", "held_dish", "held_soup",
    "abs_x", "abs_y",
]

FEATURE_SCHEMA: tuple[str, ...] = tuple(
    [f"ego_{s}" for s in _PLAYER_SLOTS]
    + [f"partner_{s}" for s in _PLAYER_SLOTS]
    + [f"rel_pot_{b}_{c}" for b in _POT_BUCKETS for c in ("dx", "dy")]
)
assert len(FEATURE_SCHEMA) == FEATURE_DIM

PLANE_SCHEMA: tuple[str, ...] = (
    "ego_position",
    "ego_orient_north", "ego_orient_south", "ego_orient_west", "ego_orient_east",
    "partner_position",
    "partner_orient_north", "partner_orient_south",
    "partner_orient_west", "partner_orient_east",
    "pot_locations",
    "onion_dispensers",
    "dish_dispensers",
    "serving_areas",
    "loose_onions",
    "loose_dishes",
    "loose_soups",
    "pot_onion_count",
    "pot_cook_timer",
    "held_objects",
)
assert len(PLANE_SCHEMA) == NUM_PLANES


@lru_cache(maxsize=4096)
def _distances(layout: Layout, source: Pos) -> dict[Pos, int]:
    """BFS walking distance from a floor cell to each floor cell."""
    dist = {source: 0}
    frontier = [source]
    while frontier:
        nxt: list[Pos] = []
        for pos in frontier:
            for nb in layout.floor_neighbors(pos):
                if nb not in dist:
                    dist[nb] = dist[pos] + 1
                    nxt.append(nb)
        frontier = nxt
    return dist


def _closest(layout: Layout, dist: dict[Pos, int], cells) -> Pos | None:
    """Pick the reachable cell (approached via adjacent floor) at minimal
    walking distance; ties resolved row-major.
    """
    best: tuple[int, int, int] | None = None
    best_cell: Pos | None = None
    for cell in cells:
        ds = [dist[n] for n in layout.floor_neighbors(cell) if n in dist]
        if not ds:
            continue
        key = (min(ds), cell[1], cell[0])
        if best is None or key < best:
            best = key
            best_cell = cell
    return best_cell


def _pot_bucket(pot: PotState, cook_time: int) -> str:
    if pot.onions == 0:
        return "empty"
    if pot.onions == 1:
        return "one_onion"
    if pot.onions == 2:
        return "two_onions"
    return "ready" if pot.is_ready(cook_time) else "cooking"


def _rel(origin: Pos, target: Pos | None) -> tuple[float, float]:
    if target is None:
        return (0.0, 0.0)
    return (float(target[0] - origin[0]), float(target[1] - origin[1]))


def _player_block(
    state: WorldState, layout: Layout, index: int, out: list[float]
) -> None:
    me = state.players[index]
    other = state.players[1 - index]
    dist = _distances(layout, me.position)
    loose = {k: [] for k in _HELD_ORDER}
    for pos, kind in state.counter_objects:
        loose[kind].append(pos)
    out.extend(_rel(me.position, other.position))
    for kind in _HELD_ORDER:
        out.extend(_rel(me.position, _closest(layout, dist, loose[kind])))
    out.extend(_rel(me.position, _closest(layout, dist, layout.onion_dispensers)))
    out.extend(_rel(me.position, _closest(layout, dist, layout.dish_dispensers)))
    out.extend(_rel(me.position, _closest(layout, dist, layout.serving_areas)))
    for o in _ORIENT_ORDER:
        out.append(1.0 if me.orientation is o else 0.0)
    occupied = {pos for pos, _ in state.counter_objects}
    for o in _ORIENT_ORDER:
        dx, dy = OFFSETS[o]
        cell = (me.position[0] + dx, me.position[1] + dy)
        is_empty_counter = (
            layout.in_bounds(cell)
            and layout.tile(cell) is Tile.COUNTER
            and cell not in occupied
        )
        out.append(1.0 if is_empty_counter else 0.0)
    for kind in _HELD_ORDER:
        out.append(1.0 if me.held is kind else 0.0)
    out.extend((float(me.position[0]), float(me.position[1])))


def featurize(
    state: WorldState, layout: Layout, player_index: int, cook_time: int = COOK_TIME
) -> np.ndarray:
    out: list[float] = []
    _player_block(state, layout, player_index, out)
    _player_block(state, layout, 1 - player_index, out)
    me = state.players[player_index]
    dist = _distances(layout, me.position)
    by_bucket: dict[str, list[Pos]] = {b: [] for b in _POT_BUCKETS}
    for pos, pot in state.pots:
        by_bucket[_pot_bucket(pot, cook_time)].append(pos)
    for bucket in _POT_BUCKETS:
        out.extend(_rel(me.position, _closest(layout, dist, by_bucket[bucket])))
    vec = np.asarray(out, dtype=np.float64)
    assert vec.shape == (FEATURE_DIM,)
    return vec


def encode_lossless(
    state: WorldState, layout: Layout, player_index: int, cook_time: int = COOK_TIME
) -> np.ndarray:
    h, w = layout.height, layout.width
    planes = np.zeros((NUM_PLANES, h, w), dtype=np.float64)
    me = state.players[player_index]
    other = state.players[1 - player_index]

    def mark(channel: int, pos: Pos, value: float = 1.0) -> None:
        planes[channel, pos[1], pos[0]] = value

    mark(0, me.position)
    mark(1 + _ORIENT_ORDER.index(me.orientation), me.position)
    mark(5, other.position)
    mark(6 + _ORIENT_ORDER.index(other.orientation), other.position)
    for pos in layout.pots:
        mark(10, pos)
    for pos in layout.onion_dispensers:
        mark(11, pos)
    for pos in layout.dish_dispensers:
        mark(12, pos)
    for pos in layout.serving_areas:
        mark(13, pos)
    loose_channel = {ObjectKind.ONION: 14, ObjectKind.DISH: 15, ObjectKind.SOUP: 16}
    for pos, kind in state.counter_objects:
        mark(loose_channel[kind], pos)
    for pos, pot in state.pots:
        mark(17, pos, float(pot.onions))
        mark(18, pos, float(pot.cook_timer) if pot.cook_timer is not None else 0.0)
    held_code = {ObjectKind.ONION: 1.0, ObjectKind.DISH: 2.0, ObjectKind.SOUP: 3.0}
    for player in state.players:
        if player.held is not None:
            mark(19, player.position, held_code[player.held])
    return planes


def decode_lossless(
    planes: np.ndarray, layout: Layout, player_index: int, cook_time: int = COOK_TIME
) -> WorldState:
    """Rebuild the WorldState (timestep 0). ``player_index`` says which seat
    the ego channels describe, so seat order is restored exactly.
    """
    assert planes.shape == (NUM_PLANES, layout.height, layout.width)

    def single_pos(channel: int) -> Pos:
        ys, xs = np.nonzero(planes[channel])
        assert len(ys) == 1
        return (int(xs[0]), int(ys[0]))

    def orient_at(base: int, pos: Pos) -> Orientation:
        for k, o in enumerate(_ORIENT_ORDER):
            if planes[base + k, pos[1], pos[0]] == 1.0:
                return o
        raise ValueError(f"no orientation plane set at {pos}")

    code_held = {1.0: ObjectKind.ONION, 2.0: ObjectKind.DISH, 3.0: ObjectKind.SOUP}

    def player_at(pos_channel: int, orient_base: int) -> PlayerState:
        pos = single_pos(pos_channel)
        code = planes[19, pos[1], pos[0]]
        return PlayerState(
            position=pos,
            orientation=orient_at(orient_base, pos),
            held=code_held.get(float(code)),
        )

    ego = player_at(0, 1)
    partner = player_at(5, 6)
    players = [partner, partner]
    players[player_index] = ego
    players[1 - player_index] = partner
    pots = []
    for pos in sorted(layout.pots):
        onions = int(planes[17, pos[1], pos[0]])
        timer = int(planes[18, pos[1], pos[0]]) if onions == 3 else None
        pots.append((pos, PotState(onions=onions, cook_timer=timer)))
    channel_loose = {14: ObjectKind.ONION, 15: ObjectKind.DISH, 16: ObjectKind.SOUP}
    counters = []
    for channel, kind in channel_loose.items():
        for y, x in zip(*np.nonzero(planes[channel])):
            counters.append(((int(x), int(y)), kind))
    return WorldState(
        players=(players[0], players[1]),
        pots=tuple(pots),
        counter_objects=tuple(sorted(counters)),
        timestep=0,
    )
