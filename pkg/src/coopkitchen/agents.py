"""Agent interface and the simple built-in agents.

An agent maps (state, seat, rng) to one of the six actions. Stateful agents
(plan followers, stuck trackers) implement ``reset`` which callers invoke at
episode boundaries. Agents that can report a distribution over actions expose
``action_probabilities``; that is what determinization and prediction metrics
consume.
"""

from __future__ import annotations

from typing import Optional, Protocol, runtime_checkable

import numpy as np

from .env import (
    ACTION_ORIENTATION,
    OFFSETS,
    ORIENTATION_ACTION,
    Action,
    KitchenEnv,
    ObjectKind,
    WorldState,
)
from .layouts import Pos
from .motion import MotionPlanLibrary, feature_goals, get_library, single_path

NUM_ACTIONS = len(Action)

_MOVE_OFFSETS = {a: OFFSETS[o] for a, o in ACTION_ORIENTATION.items()}


@runtime_checkable
class Agent(Protocol):
    def act(
        self, state: WorldState, player_index: int, rng: np.random.Generator
    ) -> Action: ...

    def reset(self) -> None: ...


class AgentBase:
    def reset(self) -> None:
        pass


class NoopAgent(AgentBase):
    def act(self, state, player_index, rng) -> Action:
        return Action.NOOP

    def action_probabilities(self, state, player_index) -> np.ndarray:
        probs = np.zeros(NUM_ACTIONS)
        probs[Action.NOOP] = 1.0
        return probs


class RandomAgent(AgentBase):
    def act(self, state, player_index, rng) -> Action:
        return Action(int(rng.integers(NUM_ACTIONS)))

    def action_probabilities(self, state, player_index) -> np.ndarray:
        return np.full(NUM_ACTIONS, 1.0 / NUM_ACTIONS)


class ScriptedCookAgent(AgentBase):
    """A fixed-role kitchen worker: the onion role shuttles onions into pots,
    the dish role carries dishes to pots, collects soups and serves them.
    Moves along shortest own-component paths, ignoring the partner, and with
    probability ``sluggishness`` idles instead of acting — a crude stand-in
    for slow, imperfect human play.
    """

    def __init__(
        self,
        env: KitchenEnv,
        role: str = "onion",
        sluggishness: float = 0.2,
        library: Optional[MotionPlanLibrary] = None,
    ):
        if role not in ("onion", "dish"):
            raise ValueError(f"unknown scripted role {role!r}")
        self.env = env
        self.layout = env.layout
        self.role = role
        self.sluggishness = sluggishness
        self.lib = library or get_library(env.layout)

    def act(self, state, player_index, rng) -> Action:
        if self.sluggishness and rng.random() < self.sluggishness:
            return Action.NOOP
        return self.scripted_action(state, player_index)

    def action_probabilities(self, state, player_index) -> np.ndarray:
        probs = np.zeros(NUM_ACTIONS)
        action = self.scripted_action(state, player_index)
        probs[action] += 1.0 - self.sluggishness
        probs[Action.NOOP] += self.sluggishness
        return probs

    # -- deterministic part ---------------------------------------------------

    def scripted_action(self, state: WorldState, player_index: int) -> Action:
        me = state.players[player_index]
        target = self._target(state, me.position, me.held)
        if target is None:
            return Action.NOOP
        cell, ready = target
        other = state.players[1 - player_index]
        step = self._step_toward(
            me.position, me.orientation, cell, other.position, player_index)
        if step is Action.INTERACT and not ready:
            step = None
        if step is None:
            # waiting in place: give way if the partner is pushing into us
            if other.facing() == me.position:
                for action, (ox, oy) in _MOVE_OFFSETS.items():
                    nxt = (me.position[0] + ox, me.position[1] + oy)
                    if nxt != other.position and self.layout.is_floor(nxt):
                        return action
            return Action.NOOP
        return step

    def _target(self, state, pos, held) -> Optional[tuple[Pos, bool]]:
        """Feature cell to work and whether interacting there is useful now.

        A carrier whose load has no destination yet (onion with every pot
        full, dish with nothing cooking) hovers by its home dispenser rather
        than camping on the pot access cell, which would wall off one-lane
        kitchens.
        """
        layout = self.layout
        if held is ObjectKind.SOUP:
            return self._nearest(pos, layout.serving_areas)
        if held is ObjectKind.ONION:
            pots = [p for p, pot in state.pots if pot.onions < 3]
            return self._nearest(pos, pots) or self._hover(
                pos, layout.onion_dispensers)
        if held is ObjectKind.DISH:
            full = {p: pot.is_ready(self.env.cook_time)
                    for p, pot in state.pots if pot.onions == 3}
            best = self._nearest(pos, list(full))
            if best is not None:
                return (best[0], full[best[0]])
            return self._hover(pos, layout.dish_dispensers)
        sources = (
            layout.onion_dispensers if self.role == "onion"
            else layout.dish_dispensers
        )
        return self._nearest(pos, sources)

    def _hover(self, pos: Pos, cells) -> Optional[tuple[Pos, bool]]:
        spot = self._nearest(pos, cells)
        if spot is None:
            return None
        return (spot[0], False)

    def _nearest(self, pos: Pos, cells) -> Optional[tuple[Pos, bool]]:
        reach = self.lib.single_dist.get(pos, {})
        best = None
        for cell in cells:
            for access, _ in feature_goals(self.layout, cell):
                d = reach.get(access)
                if d is None:
                    continue
                key = (d, cell[1], cell[0])
                if best is None or key < best[0]:
                    best = (key, cell)
        if best is None:
            return None
        return (best[1], True)

    def _step_toward(
        self, pos, orientation, cell, partner: Pos, index: int
    ) -> Optional[Action]:
        reach = self.lib.single_dist.get(pos, {})
        best = None
        for access, facing in feature_goals(self.layout, cell):
            d = reach.get(access)
            if d is None:
                continue
            key = (d, access[1], access[0])
            if best is None or key < best[0]:
                best = (key, access, facing)
        if best is None:
            return None
        _, access, facing = best
        if pos == access:
            if orientation is facing:
                return Action.INTERACT
            return ORIENTATION_ACTION[facing]
        step = single_path(self.lib, pos, access, prefer_final=facing)[0]
        return self._detour(step, pos, access, partner, index)

    def _detour(
        self, step: Action, pos: Pos, access: Pos, partner: Pos, index: int
    ) -> Action:
        """Reroute when the planned move runs into the partner; without this
        two head-on shuttlers block each other forever. Prefer an
        equal-length detour; failing that the second seat (or the only seat
        with room) steps aside, and otherwise keep pushing — the partner may
        move.
        """
        dx, dy = _MOVE_OFFSETS[step]
        if (pos[0] + dx, pos[1] + dy) != partner:
            return step
        goal_dist = self.lib.single_dist[access]
        here = goal_dist.get(pos)
        sidestep = None
        for action, (ox, oy) in _MOVE_OFFSETS.items():
            nxt = (pos[0] + ox, pos[1] + oy)
            if nxt == partner or not self.layout.is_floor(nxt):
                continue
            if here is not None and goal_dist.get(nxt) == here - 1:
                return action
            sidestep = sidestep or action
        if sidestep is not None and self._yields(pos, partner, index):
            return sidestep
        return step

    def _yields(self, pos: Pos, partner: Pos, index: int) -> bool:
        if index == 1:
            return True
        theirs = [
            nb for nb in self.layout.floor_neighbors(partner) if nb != pos
        ]
        return not theirs
