"""Near-optimal coupled planning over high-level actions.

A high-level action is "walk to a feature and use it": fetch an onion or dish,
drop an onion into a pot, collect a ready soup onto a held dish, or serve.
Counters are deliberately not offered as drop targets, so layouts that can
only be solved by passing objects over counters yield NoPlanFound.

``JointPlanner.plan`` runs A* over world-state contents where each edge is a
joint high-level action pair realized as a joint motion plan plus interacts,
simulated through the real environment. Costs are therefore exact: replaying
a plan's low-level actions reproduces its claimed reward step for step.

Waiting is modeled only where an agent must idle: a soup collector arriving
early stands at the pot until the cook finishes (bounded), while the partner
is free to run any other action in the same segment.
"""

from __future__ import annotations

import heapq
import itertools

import numpy as np
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

from .env import (
    Action,
    KitchenEnv,
    ObjectKind,
    Orientation,
    WorldState,
)
from .layouts import Pos
from .motion import (
    MotionPlanLibrary,
    UnreachableGoal,
    feature_goals,
    get_library,
    query,
)

JointAction = tuple[Action, Action]

DEFAULT_LOOKAHEAD = 3
# extra idle steps a soup collector may spend at the pot beyond one full cook
WAIT_SLACK = 6


class NoPlanFound(Exception):
    pass


class HLKind(IntEnum):
    GET_ONION = 0
    GET_DISH = 1
    PUT_ONION_IN_POT = 2
    GET_SOUP = 3
    SERVE_SOUP = 4
    PLACE_ON_COUNTER = 5
    IDLE = 6


# what the actor must hold for the action to apply
_REQUIRED_HELD = {
    HLKind.GET_ONION: None,
    HLKind.GET_DISH: None,
    HLKind.PUT_ONION_IN_POT: ObjectKind.ONION,
    HLKind.GET_SOUP: ObjectKind.DISH,
    HLKind.SERVE_SOUP: ObjectKind.SOUP,
}
# what the actor holds after a successful interact
_RESULT_HELD = {
    HLKind.GET_ONION: ObjectKind.ONION,
    HLKind.GET_DISH: ObjectKind.DISH,
    HLKind.PUT_ONION_IN_POT: None,
    HLKind.GET_SOUP: ObjectKind.SOUP,
    HLKind.SERVE_SOUP: None,
}


@dataclass(frozen=True)
class HighLevelAction:
    """A feature use grounded to one approach cell.

    ``target`` is the feature cell; ``access`` the floor cell to stand on and
    ``facing`` the orientation into the feature. Idle carries the player's
    current cell as both target and access and no facing.
    """

    kind: HLKind
    target: Pos
    access: Pos
    facing: Optional[Orientation]

    @property
    def is_idle(self) -> bool:
        return self.kind is HLKind.IDLE


JointHL = tuple[HighLevelAction, HighLevelAction]


@dataclass(frozen=True)
class JointPlan:
    hl_actions: tuple[JointHL, ...]
    low_level: tuple[JointAction, ...]
    cost: int
    deliveries: int
    delivery_times: tuple[int, ...]
    states: tuple[WorldState, ...]

    def total_reward(self, soup_reward: int) -> int:
        return self.deliveries * soup_reward


@dataclass(frozen=True)
class _Segment:
    state: WorldState
    actions: tuple[JointAction, ...]
    rewards: tuple[int, ...]
    deliveries: int
    delivery_times: tuple[int, ...]
    states: tuple[WorldState, ...]

    @property
    def duration(self) -> int:
        return len(self.actions)


def _player_options(
    state: WorldState, layout, lib: MotionPlanLibrary, index: int
) -> list[HighLevelAction]:
    """Applicable non-idle actions for one player, in canonical order."""
    me = state.players[index]
    reach = lib.single_dist.get(me.position, {})
    options: list[tuple] = []

    def add(kind: HLKind, target: Pos) -> None:
        for access, facing in feature_goals(layout, target):
            if access in reach:
                options.append((kind.value, target[1], target[0], access[1],
                                access[0], kind, target, access, facing))

    if me.held is None:
        for pos in layout.onion_dispensers:
            add(HLKind.GET_ONION, pos)
        for pos in layout.dish_dispensers:
            add(HLKind.GET_DISH, pos)
    elif me.held is ObjectKind.ONION:
        for pos, pot in state.pots:
            if pot.onions < 3:
                add(HLKind.PUT_ONION_IN_POT, pos)
    elif me.held is ObjectKind.DISH:
        for pos, pot in state.pots:
            # two onions suffice: the collector may wait out the third
            # onion and the cook at the pot
            if pot.onions >= 2:
                add(HLKind.GET_SOUP, pos)
    elif me.held is ObjectKind.SOUP:
        for pos in layout.serving_areas:
            add(HLKind.SERVE_SOUP, pos)

    options.sort(key=lambda t: t[:5])
    return [HighLevelAction(*t[5:]) for t in options]


def _idle(state: WorldState, index: int) -> HighLevelAction:
    pos = state.players[index].position
    return HighLevelAction(HLKind.IDLE, pos, pos, None)


def enumerate_joint_actions(
    state: WorldState, layout, lib: Optional[MotionPlanLibrary] = None
) -> list[JointHL]:
    """All applicable joint pairs, each player's options ordered by kind then
    target then approach cell, idle last; at most one side idles.
    """
    lib = lib or get_library(layout)
    opts = [
        _player_options(state, layout, lib, 0) + [_idle(state, 0)],
        _player_options(state, layout, lib, 1) + [_idle(state, 1)],
    ]
    pairs = []
    for a, b in itertools.product(opts[0], opts[1]):
        if a.is_idle and b.is_idle:
            continue
        if a.access == b.access:
            continue
        pairs.append((a, b))
    return pairs


def _soup_lower_bound(state: WorldState, remaining: int, cook_time: int) -> int:
    """Admissible remaining-cost bound: at most two serves land per step, and
    the first still-needed delivery cannot beat the kitchen's physics.
    """
    if remaining <= 0:
        return 0
    if any(p.held is ObjectKind.SOUP for p in state.players):
        first = 1
    elif any(pot.is_ready(cook_time) for _, pot in state.pots) or any(
        kind is ObjectKind.SOUP for _, kind in state.counter_objects
    ):
        first = 2
    else:
        cooking = [
            pot.cook_timer for _, pot in state.pots if pot.is_cooking(cook_time)
        ]
        if cooking:
            first = cook_time - max(cooking) + 1
        else:
            first = cook_time + 2
    return max((remaining + 1) // 2, first)


class JointPlanner:
    """A* planner and coupled-replanning executor for one environment."""

    def __init__(
        self,
        env: KitchenEnv,
        lookahead_deliveries: int = DEFAULT_LOOKAHEAD,
        library: Optional[MotionPlanLibrary] = None,
    ):
        self.env = env
        self.layout = env.layout
        self.lookahead = lookahead_deliveries
        self.lib = library or get_library(env.layout)
        self._segments: dict = {}
        # per-content pinned joint action, for a deterministic policy
        self._action_cache: dict = {}
        # plan being executed by policy_step: (plan, next index, expected content)
        self._exec: Optional[tuple[JointPlan, int, object]] = None

    # -- segment realization ------------------------------------------------

    def _segment(self, state: WorldState, pair: JointHL) -> Optional[_Segment]:
        key = (state.content(), pair)
        if key in self._segments:
            return self._segments[key]
        outcome = self._simulate(state, pair)
        self._segments[key] = outcome
        return outcome

    def _simulate(self, state: WorldState, pair: JointHL) -> Optional[_Segment]:
        env = self.env
        goals = (pair[0].access, pair[1].access)
        starts = (state.players[0].position, state.players[1].position)
        orients = (state.players[0].orientation, state.players[1].orientation)
        facings = (pair[0].facing, pair[1].facing)
        try:
            motion = query(self.lib, starts, goals, orients, facings)
        except UnreachableGoal:
            return None
        path = list(motion.actions)
        arrivals = []
        for k in (0, 1):
            moves = [t for t, j in enumerate(path) if j[k] is not Action.NOOP]
            arrivals.append(moves[-1] + 1 if moves else 0)
        pending = [not pair[k].is_idle for k in (0, 1)]
        waited = [0, 0]
        max_wait = env.cook_time + WAIT_SLACK

        cur = state
        actions: list[JointAction] = []
        rewards: list[int] = []
        states: list[WorldState] = []
        delivery_times: list[int] = []
        t = 0
        while t < len(path) or any(pending):
            base = list(path[t]) if t < len(path) else [Action.NOOP, Action.NOOP]
            attempt = list(base)
            for k in (0, 1):
                if pending[k] and t >= arrivals[k] and base[k] is Action.NOOP:
                    attempt[k] = Action.INTERACT
            while True:
                result = env.step(cur, (attempt[0], attempt[1]))
                failed = None
                for k in (0, 1):
                    if attempt[k] is not Action.INTERACT or not pending[k]:
                        continue
                    if result.state.players[k].held is _RESULT_HELD[pair[k].kind]:
                        continue
                    failed = k
                    break
                if failed is None:
                    break
                if pair[failed].kind is HLKind.GET_SOUP:
                    # pot not ready yet: stand and wait, bounded
                    attempt[failed] = Action.NOOP
                    waited[failed] += 1
                    if waited[failed] > max_wait:
                        return None
                else:
                    return None
            for k in (0, 1):
                if attempt[k] is Action.INTERACT and pending[k]:
                    pending[k] = False
            cur = result.state
            actions.append((attempt[0], attempt[1]))
            rewards.append(result.reward)
            states.append(cur)
            for _ in range(result.reward // env.soup_reward):
                delivery_times.append(t + 1)
            t += 1
            if t > len(path) + max_wait + 2:
                return None
        return _Segment(
            state=cur,
            actions=tuple(actions),
            rewards=tuple(rewards),
            deliveries=sum(rewards) // env.soup_reward,
            delivery_times=tuple(delivery_times),
            states=tuple(states),
        )

    # -- search ---------------------------------------------------------------

    def plan(
        self, state: WorldState, lookahead_deliveries: Optional[int] = None
    ) -> JointPlan:
        lookahead = (
            self.lookahead if lookahead_deliveries is None else lookahead_deliveries
        )
        found = self._astar(state, lookahead)
        if found is not None:
            return found
        # the full lookahead is unreachable; settle for the best count
        best = self._max_achievable(state, lookahead)
        if best == 0:
            raise NoPlanFound(
                f"no soup delivery is achievable on {self.layout.name}"
            )
        result = self._astar(state, best)
        assert result is not None
        return result

    def _astar(self, state: WorldState, lookahead: int) -> Optional[JointPlan]:
        cook = self.env.cook_time
        start_key = (state.content(), 0)
        counter = itertools.count()
        h0 = _soup_lower_bound(state, lookahead, cook)
        heap = [(h0, 0, (), next(counter), state, 0, None)]
        # node: (f, g, delivery_times, tiebreak, state, deliveries, backptr)
        best_g: dict = {start_key: 0}
        parents: dict = {}
        while heap:
            f, g, times, tie, cur, dels, back = heapq.heappop(heap)
            key = (cur.content(), dels)
            if g > best_g.get(key, g):
                continue
            if dels >= lookahead:
                return self._reconstruct(parents, back, state)
            for pair in enumerate_joint_actions(cur, self.layout, self.lib):
                seg = self._segment(cur, pair)
                if seg is None:
                    continue
                ng = g + seg.duration
                nd = min(dels + seg.deliveries, lookahead)
                nkey = (seg.state.content(), nd)
                if best_g.get(nkey, ng + 1) <= ng:
                    continue
                best_g[nkey] = ng
                ntimes = times + tuple(g + dt for dt in seg.delivery_times)
                nh = _soup_lower_bound(seg.state, lookahead - nd, cook)
                node_id = next(counter)
                parents[node_id] = (back, pair, seg)
                heapq.heappush(
                    heap,
                    (ng + nh, ng, ntimes, node_id, seg.state, nd, node_id),
                )
        return None

    def _max_achievable(self, state: WorldState, cap: int) -> int:
        """Exhaustive search (no goal) for the highest reachable delivery
        count below ``cap``.
        """
        seen = {state.content()}
        frontier = [state]
        best = 0
        while frontier:
            nxt = []
            for cur in frontier:
                for pair in enumerate_joint_actions(cur, self.layout, self.lib):
                    seg = self._segment(cur, pair)
                    if seg is None:
                        continue
                    best = max(best, seg.deliveries)
                    if best >= cap:
                        return cap
                    c = seg.state.content()
                    if c not in seen:
                        seen.add(c)
                        nxt.append(seg.state)
            frontier = nxt
        return best

    def _reconstruct(self, parents, node_id, start: WorldState) -> JointPlan:
        chain = []
        while node_id is not None:
            back, pair, seg = parents[node_id]
            chain.append((pair, seg))
            node_id = back
        chain.reverse()
        hl = tuple(pair for pair, _ in chain)
        low: list[JointAction] = []
        states: list[WorldState] = []
        delivery_times: list[int] = []
        offset = 0
        for _, seg in chain:
            low.extend(seg.actions)
            states.extend(seg.states)
            delivery_times.extend(offset + dt for dt in seg.delivery_times)
            offset += seg.duration
        return JointPlan(
            hl_actions=hl,
            low_level=tuple(low),
            cost=len(low),
            deliveries=sum(seg.deliveries for _, seg in chain),
            delivery_times=tuple(delivery_times),
            states=tuple(states),
        )

    # -- execution ------------------------------------------------------------

    def policy_step(self, state: WorldState) -> JointAction:
        """Joint action of the coupled-replanning policy: follow the active
        plan while the world matches its predictions, replan from scratch on
        any deviation (both-noop when no delivery is achievable).

        The first action seen for a state content is pinned, so the policy is
        a deterministic function of the state within one planner instance.
        """
        key = state.content()
        pinned = self._action_cache.get(key)
        if pinned is not None:
            self._advance_exec(key, pinned)
            return pinned
        action: Optional[JointAction] = None
        if self._exec is not None:
            plan, index, expected = self._exec
            if expected == key and index < len(plan.low_level):
                action = plan.low_level[index]
                nxt = (
                    plan.states[index].content()
                    if index < len(plan.states)
                    else None
                )
                self._exec = (plan, index + 1, nxt)
        if action is None:
            self._exec = None
            try:
                plan = self.plan(state)
            except NoPlanFound:
                plan = None
            if plan is None or not plan.low_level:
                action = (Action.NOOP, Action.NOOP)
            else:
                action = plan.low_level[0]
                self._exec = (plan, 1, plan.states[0].content())
        self._action_cache[key] = action
        return action

    def _advance_exec(self, key, action: JointAction) -> None:
        if self._exec is None:
            return
        plan, index, expected = self._exec
        if (
            expected == key
            and index < len(plan.low_level)
            and plan.low_level[index] == action
        ):
            nxt = plan.states[index].content() if index < len(plan.states) else None
            self._exec = (plan, index + 1, nxt)
        else:
            self._exec = None


def cp_policy_step(planner: JointPlanner, state: WorldState) -> JointAction:
    return planner.policy_step(state)


@dataclass
class CPPolicy:
    """One seat of the coupled-replanning policy as a distribution (always a
    point mass), for partner modelling and prediction metrics.
    """

    planner: JointPlanner

    def action_probabilities(self, state: WorldState, player_index: int):
        probs = np.zeros(len(Action))
        probs[self.planner.policy_step(state)[player_index]] = 1.0
        return probs

    def act(self, state: WorldState, player_index: int, rng) -> Action:
        return self.planner.policy_step(state)[player_index]

    def reset(self) -> None:
        pass


@dataclass
class CPAgent:
    """Coupled planning as a single-seat agent: replan jointly, play own
    component. Keeps the current plan and follows it while the world matches
    its predictions, replanning on any deviation.
    """

    planner: JointPlanner
    _plan: Optional[JointPlan] = field(default=None, repr=False)
    _step: int = 0

    def reset(self) -> None:
        self._plan = None
        self._step = 0

    def act(self, state: WorldState, player_index: int, rng=None) -> Action:
        plan = self._plan
        if plan is not None and self._step > 0:
            on_track = (
                self._step <= len(plan.states)
                and plan.states[self._step - 1].content() == state.content()
                and self._step < len(plan.low_level)
            )
            if not on_track:
                plan = None
        if plan is None:
            try:
                plan = self.planner.plan(state)
            except NoPlanFound:
                return Action.NOOP
            self._plan = plan
            self._step = 0
            if not plan.low_level:
                return Action.NOOP
        action = plan.low_level[self._step][player_index]
        self._step += 1
        return action
