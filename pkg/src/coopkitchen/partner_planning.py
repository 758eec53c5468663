"""Best response to a fixed partner policy via a two-layer search.

The partner model is determinized first: its action distribution collapses to
the argmax with ties broken by the fixed action order (Up, Down, Left, Right,
Noop, Interact). That makes the embedded problem a single-agent deterministic
MDP. The low layer runs A* over world states where every edge pairs one of my
motion actions (or a final Interact) with the move the partner model picks;
the high layer chains completed feature uses toward a delivery target,
computing motion on demand rather than ahead of time.

Search work is capped by an expansion budget shared across both layers. When
the cap trips mid-search the best partial plan found so far is used; only
when not even one feature use completed does ``SearchBudgetExceeded``
surface.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .env import Action, KitchenEnv, WorldState
from .motion import MotionPlanLibrary, get_library
from .planning import (
    _RESULT_HELD,
    HighLevelAction,
    HLKind,
    _player_options,
    _soup_lower_bound,
)

NUM_ACTIONS = len(Action)

DEFAULT_BUDGET = 200_000
DEFAULT_LOOKAHEAD = 2

_MOTION_CHOICES = (Action.UP, Action.DOWN, Action.LEFT, Action.RIGHT, Action.NOOP)


class SearchBudgetExceeded(Exception):
    """The expansion cap tripped before any usable plan existed."""


class DeterminizedPolicy:
    """Argmax view of a stochastic policy; pure given (state content, seat).

    Repeated queries are memoized so the search sees one consistent partner.
    """

    def __init__(self, policy):
        self.policy = policy
        self._memo: dict = {}

    def query(self, state: WorldState, player_index: int) -> Action:
        key = (state.content(), player_index)
        hit = self._memo.get(key)
        if hit is None:
            probs = np.asarray(
                self.policy.action_probabilities(state, player_index))
            hit = Action(int(np.argmax(probs)))
            self._memo[key] = hit
        return hit

    def act(self, state, player_index, rng) -> Action:
        return self.query(state, player_index)

    def action_probabilities(self, state, player_index) -> np.ndarray:
        probs = np.zeros(NUM_ACTIONS)
        probs[self.query(state, player_index)] = 1.0
        return probs

    def reset(self) -> None:
        inner = getattr(self.policy, "reset", None)
        if inner is not None:
            inner()


def determinize(policy) -> DeterminizedPolicy:
    if isinstance(policy, DeterminizedPolicy):
        return policy
    return DeterminizedPolicy(policy)


@dataclass(frozen=True)
class PartnerPlan:
    """My low-level actions with the world states they should produce."""

    actions: tuple[Action, ...]
    states: tuple[WorldState, ...]
    cost: int
    deliveries: int
    complete: bool


_WAIT = HighLevelAction(HLKind.IDLE, (-1, -1), (-1, -1), None)


class PartnerAwarePlanner:
    def __init__(
        self,
        env: KitchenEnv,
        partner,
        self_index: int,
        lookahead: int = DEFAULT_LOOKAHEAD,
        budget: int = DEFAULT_BUDGET,
        library: Optional[MotionPlanLibrary] = None,
    ):
        self.env = env
        self.layout = env.layout
        self.partner = determinize(partner)
        self.index = self_index
        self.lookahead = lookahead
        self.budget = budget
        self.lib = library or get_library(env.layout)
        self._tie = itertools.count()

    # -- public ---------------------------------------------------------------

    def plan(self, state: WorldState) -> PartnerPlan:
        """Best plan reaching ``lookahead`` more deliveries, or the best
        partial plan the budget allowed. Raises SearchBudgetExceeded when the
        cap trips with nothing accomplished at all.
        """
        self._spent = 0
        try:
            return self._high_search(state)
        except _BudgetHit:
            partial = self._partial_plan()
            if partial is None:
                raise SearchBudgetExceeded(
                    f"no plan within {self.budget} expansions") from None
            return partial

    def plan_action(self, state: WorldState) -> Action:
        plan = self.plan(state)
        if not plan.actions:
            return Action.NOOP
        return plan.actions[0]

    # -- high layer -------------------------------------------------------

    def _high_search(self, root: WorldState) -> PartnerPlan:
        cook = self.env.cook_time
        goal = self.lookahead
        heap: list = []
        # node: (state, deliveries, parent_id, my segment actions, seg states)
        nodes = [(root, 0, None, (), ())]
        best_g: dict = {(root.content(), 0): 0}
        h0 = _soup_lower_bound(root, goal, cook)
        heapq.heappush(heap, (h0, 0, next(self._tie), 0))
        self._best_partial = None  # (deliveries, -g, node_id, g)
        self._nodes_ref = nodes

        while heap:
            f, g, _, node_id = heapq.heappop(heap)
            state, deliveries, _, _, _ = nodes[node_id]
            if g > best_g.get((state.content(), min(deliveries, goal)), g):
                continue
            if deliveries >= goal:
                return self._reconstruct(nodes, node_id, g, deliveries, True)
            if node_id != 0:
                cand = (deliveries, -g, node_id, g)
                if self._best_partial is None or cand[:2] > self._best_partial[:2]:
                    self._best_partial = cand
            for hl in self._edges(state):
                seg = self._low_search(state, hl)
                if seg is None:
                    continue
                actions, states, gained = seg
                child_state = states[-1]
                child_deliveries = deliveries + gained
                child_g = g + len(actions)
                key = (child_state.content(), min(child_deliveries, goal))
                if best_g.get(key, child_g + 1) <= child_g:
                    continue
                best_g[key] = child_g
                nodes.append((child_state, child_deliveries, node_id,
                              actions, states))
                h = _soup_lower_bound(child_state, goal - child_deliveries, cook)
                heapq.heappush(
                    heap,
                    (child_g + h, child_g, next(self._tie), len(nodes) - 1))
        partial = self._partial_plan()
        if partial is not None:
            return partial
        return PartnerPlan((), (), 0, 0, False)

    def _edges(self, state: WorldState) -> list[HighLevelAction]:
        return _player_options(state, self.layout, self.lib, self.index) + [_WAIT]

    def _partial_plan(self) -> Optional[PartnerPlan]:
        best = getattr(self, "_best_partial", None)
        if best is None:
            return None
        deliveries, neg_g, node_id, g = best
        return self._reconstruct(self._nodes_ref, node_id, g, deliveries, False)

    def _reconstruct(self, nodes, node_id, g, deliveries, complete) -> PartnerPlan:
        actions: list[Action] = []
        states: list[WorldState] = []
        while node_id is not None:
            _, _, parent, seg_actions, seg_states = nodes[node_id]
            actions[:0] = seg_actions
            states[:0] = seg_states
            node_id = parent
        return PartnerPlan(tuple(actions), tuple(states), g, deliveries, complete)

    # -- low layer --------------------------------------------------------

    def _charge(self) -> None:
        self._spent += 1
        if self._spent > self.budget:
            raise _BudgetHit()

    def _partner_move(self, state: WorldState) -> Action:
        return self.partner.query(state, 1 - self.index)

    def _joint(self, mine: Action, partner: Action) -> tuple[Action, Action]:
        if self.index == 0:
            return (mine, partner)
        return (partner, mine)

    def _low_search(self, root: WorldState, hl: HighLevelAction):
        """My shortest action path that completes ``hl`` under the partner
        model, or one waiting step for the idle pseudo-action. Returns
        (actions, resulting states, deliveries gained) or None.
        """
        env = self.env
        reward_unit = env.soup_reward
        if hl.is_idle:
            self._charge()
            result = env.step(root, self._joint(Action.NOOP, self._partner_move(root)))
            gained = result.reward // reward_unit
            if result.state.content() == root.content() and gained == 0:
                return None
            return ((Action.NOOP,), (result.state,), gained)

        start_h = self.lib.single_dist.get(
            root.players[self.index].position, {}).get(hl.access)
        if start_h is None:
            return None
        heap: list = []
        nodes = [(root, None, None, 0)]  # (state, parent, my action, gained)
        seen = {(root.content(), 0): 0}
        heapq.heappush(heap, (start_h + 1, 0, next(self._tie), 0, False))
        while heap:
            f, g, _, node_id, done = heapq.heappop(heap)
            state, _, _, gained = nodes[node_id]
            if done:
                return self._low_path(nodes, node_id)
            self._charge()
            partner_action = self._partner_move(state)
            me = state.players[self.index]
            candidates = list(_MOTION_CHOICES)
            if me.position == hl.access and me.orientation is hl.facing:
                candidates.append(Action.INTERACT)
            for action in candidates:
                result = env.step(state, self._joint(action, partner_action))
                nxt = result.state
                step_gain = result.reward // reward_unit
                total_gain = gained + step_gain
                if action is Action.INTERACT:
                    if nxt.players[self.index].held is not _RESULT_HELD[hl.kind]:
                        continue
                    if hl.kind is HLKind.SERVE_SOUP and step_gain == 0:
                        continue
                    nodes.append((nxt, node_id, action, total_gain))
                    heapq.heappush(
                        heap,
                        (g + 1, g + 1, next(self._tie), len(nodes) - 1, True))
                    continue
                key = (nxt.content(), total_gain)
                child_g = g + 1
                if seen.get(key, child_g + 1) <= child_g:
                    continue
                seen[key] = child_g
                nodes.append((nxt, node_id, action, total_gain))
                h = self.lib.single_dist.get(
                    nxt.players[self.index].position, {}).get(hl.access)
                if h is None:
                    continue
                heapq.heappush(
                    heap,
                    (child_g + h + 1, child_g, next(self._tie),
                     len(nodes) - 1, False))
        return None

    def _low_path(self, nodes, node_id):
        actions: list[Action] = []
        states: list[WorldState] = []
        gained = nodes[node_id][3]
        while node_id is not None:
            state, parent, action, _ = nodes[node_id]
            if action is not None:
                actions.append(action)
                states.append(state)
            node_id = parent
        actions.reverse()
        states.reverse()
        return (tuple(actions), tuple(states), gained)


class _BudgetHit(Exception):
    pass


def plan_with_partner(
    env: KitchenEnv,
    state: WorldState,
    partner,
    self_index: int,
    lookahead: int = DEFAULT_LOOKAHEAD,
    budget: int = DEFAULT_BUDGET,
    library: Optional[MotionPlanLibrary] = None,
) -> Action:
    """First action of the best plan against the determinized partner."""
    planner = PartnerAwarePlanner(
        env, partner, self_index, lookahead=lookahead, budget=budget,
        library=library)
    return planner.plan_action(state)


class PartnerAwareAgent:
    """Plays the planner's best response, replanning after each completed
    feature use or whenever the world leaves the predicted path (the real
    partner need not follow the model).
    """

    def __init__(
        self,
        env: KitchenEnv,
        partner,
        self_index: int,
        lookahead: int = DEFAULT_LOOKAHEAD,
        budget: int = DEFAULT_BUDGET,
        library: Optional[MotionPlanLibrary] = None,
    ):
        self.planner = PartnerAwarePlanner(
            env, partner, self_index, lookahead=lookahead, budget=budget,
            library=library)
        self.index = self_index
        self._pending: list = []

    def reset(self) -> None:
        self._pending = []
        self.planner.partner.reset()

    def act(self, state: WorldState, player_index: int, rng) -> Action:
        if player_index != self.index:
            raise ValueError(
                f"planner built for seat {self.index}, asked to act as "
                f"{player_index}")
        if self._pending:
            expected, action = self._pending[0]
            if expected == state.content():
                self._pending.pop(0)
                return action
            self._pending = []
        try:
            plan = self.planner.plan(state)
        except SearchBudgetExceeded:
            return Action.NOOP
        if not plan.actions:
            return Action.NOOP
        # actions[i + 1] applies once the world matches predicted states[i]
        contents = [s.content() for s in plan.states]
        self._pending = list(zip(contents[:-1], plan.actions[1:]))
        return plan.actions[0]


def detect_period(states, max_period: int = 4) -> Optional[int]:
    """Smallest period at which the trajectory tail repeats, observed over
    two full cycles; None when the tail is not periodic.
    """
    contents = [s.content() if isinstance(s, WorldState) else s for s in states]
    n = len(contents)
    for period in range(1, max_period + 1):
        if n < 2 * period:
            return None
        if all(contents[-1 - k] == contents[-1 - k - period]
               for k in range(period)):
            return period
    return None
