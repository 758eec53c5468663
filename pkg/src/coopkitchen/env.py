"""Two-player cooperative cooking MDP.

Dynamics in one step, in order:

1. every full pot that is still cooking ticks its timer up by one,
2. both movement actions resolve jointly (collisions block, see
   :func:`resolve_motion`),
3. interacts apply, player 1 before player 2 when both touch the same cell.

Consequences of that order: the step that drops the third onion into a pot
does not tick it (the timer starts at 0 on that step), and a soup can be
picked up on the exact step its timer reaches ``cook_time``.

The shared sparse reward is ``soup_reward`` per delivered soup. Shaping
events are reported per player so training code can form shaped rewards.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Iterable, Optional

from .layouts import Layout, Pos, Tile, validate_layout

COOK_TIME = 20
SOUP_REWARD = 20
POT_CAPACITY = 3


class Action(enum.IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    NOOP = 4
    INTERACT = 5


class Orientation(enum.IntEnum):
    NORTH = 0
    SOUTH = 1
    WEST = 2
    EAST = 3


MOVE_ACTIONS = (Action.UP, Action.DOWN, Action.LEFT, Action.RIGHT)

ACTION_ORIENTATION = {
    Action.UP: Orientation.NORTH,
    Action.DOWN: Orientation.SOUTH,
    Action.LEFT: Orientation.WEST,
    Action.RIGHT: Orientation.EAST,
}

ORIENTATION_ACTION = {o: a for a, o in ACTION_ORIENTATION.items()}

OFFSETS: dict[Orientation, Pos] = {
    Orientation.NORTH: (0, -1),
    Orientation.SOUTH: (0, 1),
    Orientation.WEST: (-1, 0),
    Orientation.EAST: (1, 0),
}


class ObjectKind(enum.Enum):
    ONION = "onion"
    DISH = "dish"
    SOUP = "soup"


class ShapingEvent(enum.Enum):
    ONION_IN_POT = "onion_in_pot"
    DISH_PICKUP_WHILE_COOKING = "dish_pickup_while_cooking"
    SOUP_PICKUP = "soup_pickup"


SHAPING_MAGNITUDES = {
    ShapingEvent.ONION_IN_POT: 3.0,
    ShapingEvent.DISH_PICKUP_WHILE_COOKING: 3.0,
    ShapingEvent.SOUP_PICKUP: 5.0,
}


@dataclass(frozen=True)
class PotState:
    """``cook_timer`` is None until the pot has three onions."""

    onions: int = 0
    cook_timer: Optional[int] = None

    def is_full(self) -> bool:
        return self.onions >= POT_CAPACITY

    def is_cooking(self, cook_time: int = COOK_TIME) -> bool:
        return self.cook_timer is not None and self.cook_timer < cook_time

    def is_ready(self, cook_time: int = COOK_TIME) -> bool:
        return self.cook_timer is not None and self.cook_timer >= cook_time


@dataclass(frozen=True)
class PlayerState:
    position: Pos
    orientation: Orientation
    held: Optional[ObjectKind] = None

    def facing(self) -> Pos:
        dx, dy = OFFSETS[self.orientation]
        return (self.position[0] + dx, self.position[1] + dy)


@dataclass(frozen=True)
class WorldState:
    players: tuple[PlayerState, PlayerState]
    pots: tuple[tuple[Pos, PotState], ...]
    counter_objects: tuple[tuple[Pos, ObjectKind], ...]
    timestep: int = 0

    def pot(self, pos: Pos) -> Optional[PotState]:
        for p, s in self.pots:
            if p == pos:
                return s
        return None

    def counter_object(self, pos: Pos) -> Optional[ObjectKind]:
        for p, k in self.counter_objects:
            if p == pos:
                return k
        return None

    def content(self) -> tuple:
        """Everything except the timestep; hash key for planners."""
        return (self.players, self.pots, self.counter_objects)

    def with_pot(self, pos: Pos, pot: PotState) -> "WorldState":
        pots = tuple((p, pot if p == pos else s) for p, s in self.pots)
        return replace(self, pots=pots)

    def with_counter_object(self, pos: Pos, kind: Optional[ObjectKind]) -> "WorldState":
        items = [(p, k) for p, k in self.counter_objects if p != pos]
        if kind is not None:
            items.append((pos, kind))
        items.sort()
        return replace(self, counter_objects=tuple(items))

    def with_player(self, index: int, player: PlayerState) -> "WorldState":
        players = list(self.players)
        players[index] = player
        return replace(self, players=(players[0], players[1]))

    def to_dict(self) -> dict:
        return {
            "players": [
                {
                    "position": list(p.position),
                    "orientation": p.orientation.name.lower(),
                    "held": p.held.value if p.held else None,
                }
                for p in self.players
            ],
            "pots": [
                {"position": list(pos), "onions": s.onions, "cook_timer": s.cook_timer}
                for pos, s in self.pots
            ],
            "counter_objects": [
                {"position": list(pos), "kind": k.value}
                for pos, k in self.counter_objects
            ],
            "timestep": self.timestep,
        }

    @staticmethod
    def from_dict(data: dict) -> "WorldState":
        players = tuple(
            PlayerState(
                position=tuple(p["position"]),
                orientation=Orientation[p["orientation"].upper()],
                held=ObjectKind(p["held"]) if p["held"] else None,
            )
            for p in data["players"]
        )
        pots = tuple(
            (tuple(e["position"]), PotState(e["onions"], e["cook_timer"]))
            for e in data["pots"]
        )
        counters = tuple(
            (tuple(e["position"]), ObjectKind(e["kind"]))
            for e in data["counter_objects"]
        )
        return WorldState(
            players=players,  # type: ignore[arg-type]
            pots=tuple(sorted(pots)),
            counter_objects=tuple(sorted(counters)),
            timestep=data["timestep"],
        )


@dataclass(frozen=True)
class StepResult:
    state: WorldState
    reward: int
    events: tuple[tuple[ShapingEvent, ...], tuple[ShapingEvent, ...]]

    def shaped_rewards(self) -> tuple[float, float]:
        return tuple(
            sum(SHAPING_MAGNITUDES[e] for e in evs) for evs in self.events
        )  # type: ignore[return-value]


class InvalidLayoutError(ValueError):
    def __init__(self, name: str, violations: list[str]):
        super().__init__(f"layout {name!r} invalid: " + "; ".join(violations))
        self.violations = violations


def resolve_motion(
    layout: Layout,
    positions: tuple[Pos, Pos],
    orientations: tuple[Orientation, Orientation],
    actions: tuple[Action, Action],
) -> tuple[tuple[Pos, Pos], tuple[Orientation, Orientation]]:
    """Joint movement. Movement actions always set orientation; the position
    change is cancelled for both players when they target the same cell or
    attempt to swap positions. Walking into the cell the other player is
    simultaneously vacating (following) is allowed.
    """
    new_orients = list(orientations)
    desired = list(positions)
    for i, action in enumerate(actions):
        if action in ACTION_ORIENTATION:
            orient = ACTION_ORIENTATION[action]
            new_orients[i] = orient
            dx, dy = OFFSETS[orient]
            target = (positions[i][0] + dx, positions[i][1] + dy)
            if layout.is_floor(target):
                desired[i] = target
    if desired[0] == desired[1]:
        desired = list(positions)
    elif desired[0] == positions[1] and desired[1] == positions[0]:
        desired = list(positions)
    return (desired[0], desired[1]), (new_orients[0], new_orients[1])


@dataclass(frozen=True)
class InteractOutcome:
    state: WorldState
    reward: int
    events: tuple[ShapingEvent, ...]


class KitchenEnv:
    """Stateless stepper: ``step(state, actions) -> StepResult``."""

    def __init__(
        self,
        layout: Layout,
        cook_time: int = COOK_TIME,
        soup_reward: int = SOUP_REWARD,
    ):
        violations = validate_layout(layout)
        if violations:
            raise InvalidLayoutError(layout.name, violations)
        self.layout = layout
        self.cook_time = cook_time
        self.soup_reward = soup_reward

    def reset(self) -> WorldState:
        players = tuple(
            PlayerState(position=pos, orientation=Orientation.NORTH, held=None)
            for pos in self.layout.starts
        )
        pots = tuple((pos, PotState()) for pos in sorted(self.layout.pots))
        return WorldState(
            players=players,  # type: ignore[arg-type]
            pots=pots,
            counter_objects=(),
            timestep=0,
        )

    def step(self, state: WorldState, actions: tuple[Action, Action]) -> StepResult:
        state = self._tick_pots(state)
        positions = (state.players[0].position, state.players[1].position)
        orients = (state.players[0].orientation, state.players[1].orientation)
        new_pos, new_orient = resolve_motion(self.layout, positions, orients, actions)
        for i in (0, 1):
            state = state.with_player(
                i,
                replace(
                    state.players[i], position=new_pos[i], orientation=new_orient[i]
                ),
            )
        reward = 0
        events: list[tuple[ShapingEvent, ...]] = [(), ()]
        for i in (0, 1):
            if actions[i] == Action.INTERACT:
                outcome = self.interact_effect(state, i)
                state = outcome.state
                reward += outcome.reward
                events[i] = outcome.events
        state = replace(state, timestep=state.timestep + 1)
        return StepResult(state=state, reward=reward, events=(events[0], events[1]))

    def _tick_pots(self, state: WorldState) -> WorldState:
        pots = []
        for pos, pot in state.pots:
            if pot.is_cooking(self.cook_time):
                pot = replace(pot, cook_timer=pot.cook_timer + 1)
            pots.append((pos, pot))
        return replace(state, pots=tuple(pots))

    def interact_effect(self, state: WorldState, player_index: int) -> InteractOutcome:
        """Apply one player's interact against the cell it faces. No-op when
        nothing applies (wrong object, empty hands at a pot, full pot, ...).
        """
        player = state.players[player_index]
        target = player.facing()
        if not self.layout.in_bounds(target):
            return InteractOutcome(state, 0, ())
        tile = self.layout.tile(target)
        held = player.held
        events: list[ShapingEvent] = []
        reward = 0

        if tile is Tile.ONION_DISPENSER:
            if held is None:
                state = state.with_player(
                    player_index, replace(player, held=ObjectKind.ONION)
                )
        elif tile is Tile.DISH_DISPENSER:
            if held is None:
                state = state.with_player(
                    player_index, replace(player, held=ObjectKind.DISH)
                )
                if any(
                    pot.is_full() and not pot.is_ready(self.cook_time)
                    for _, pot in state.pots
                ):
                    events.append(ShapingEvent.DISH_PICKUP_WHILE_COOKING)
        elif tile is Tile.POT:
            pot = state.pot(target)
            assert pot is not None
            if held is ObjectKind.ONION and not pot.is_full():
                onions = pot.onions + 1
                timer = 0 if onions == POT_CAPACITY else None
                state = state.with_pot(target, PotState(onions, timer))
                state = state.with_player(player_index, replace(player, held=None))
                events.append(ShapingEvent.ONION_IN_POT)
            elif held is ObjectKind.DISH and pot.is_ready(self.cook_time):
                state = state.with_pot(target, PotState())
                state = state.with_player(
                    player_index, replace(player, held=ObjectKind.SOUP)
                )
                events.append(ShapingEvent.SOUP_PICKUP)
        elif tile is Tile.SERVING:
            if held is ObjectKind.SOUP:
                state = state.with_player(player_index, replace(player, held=None))
                reward = self.soup_reward
        elif tile is Tile.COUNTER:
            on_counter = state.counter_object(target)
            if held is None and on_counter is not None:
                state = state.with_counter_object(target, None)
                state = state.with_player(player_index, replace(player, held=on_counter))
            elif held is not None and on_counter is None:
                state = state.with_counter_object(target, held)
                state = state.with_player(player_index, replace(player, held=None))
        return InteractOutcome(state, reward, tuple(events))

    def rollout(
        self,
        policy,
        horizon: int,
        state: Optional[WorldState] = None,
    ) -> tuple[list[WorldState], list[tuple[Action, Action]], list[int]]:
        """Run a joint policy ``policy(state) -> (Action, Action)``. Returns
        (states including the final one, joint actions, per-step rewards).
        """
        if state is None:
            state = self.reset()
        states = [state]
        actions: list[tuple[Action, Action]] = []
        rewards: list[int] = []
        for _ in range(horizon):
            joint = policy(state)
            result = self.step(state, joint)
            actions.append(joint)
            rewards.append(result.reward)
            state = result.state
            states.append(state)
        return states, actions, rewards


def object_census(layout: Layout, state: WorldState) -> dict[str, int]:
    """Count objects by kind across hands, counters, and pots (a full pot
    holds its onions until harvest). Useful for conservation checks.
    """
    counts = {"onion": 0, "dish": 0, "soup": 0}
    for player in state.players:
        if player.held is not None:
            counts[player.held.value] += 1
    for _, kind in state.counter_objects:
        counts[kind.value] += 1
    for _, pot in state.pots:
        counts["onion"] += pot.onions
    return counts


def ascii_render(layout: Layout, state: WorldState, cook_time: int = COOK_TIME) -> str:
    """Grid snapshot for replay and debugging: players as 1/2, counter
    objects as their initial, pots as onion count or ! when ready.
    """
    rows = [
        [layout.grid[y][x].value for x in range(layout.width)]
        for y in range(layout.height)
    ]
    for pos, kind in state.counter_objects:
        rows[pos[1]][pos[0]] = kind.value[0]
    for pos, pot in state.pots:
        if pot.is_ready(cook_time):
            rows[pos[1]][pos[0]] = "!"
        elif pot.onions:
            rows[pos[1]][pos[0]] = str(pot.onions)
    for i, player in enumerate(state.players):
        x, y = player.position
        rows[y][x] = str(i + 1)
    lines = ["".join(r) for r in rows]
    for i, player in enumerate(state.players):
        held = player.held.value if player.held else "nothing"
        lines.append(
            f"p{i + 1} at {player.position} facing"
            f" {player.orientation.name.lower()} holding {held}"
        )
    lines.append(f"t={state.timestep}")
    return "\n".join(lines)


def all_joint_actions() -> Iterable[tuple[Action, Action]]:
    for a in Action:
        for b in Action:
            yield (a, b)
