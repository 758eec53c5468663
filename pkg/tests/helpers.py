"""Shared oracles and generators, written independently of the modules they
check: plain breadth-first/enumeration searches over full state spaces.
"""

from collections import deque

import numpy as np

from coopkitchen.env import (
    ACTION_ORIENTATION,
    MOVE_ACTIONS,
    Action,
    KitchenEnv,
    Orientation,
    resolve_motion,
)


def full_state_single_cost(layout, start, orientation, goal, facing=None):
    """Optimal number of move actions for one agent (no partner) to stand at
    ``goal`` facing ``facing`` (any orientation if None). BFS over the full
    (position, orientation) space using the real movement rule: a move action
    always turns, and moves only if the target is floor.
    """

    def done(pos, orient):
        return pos == goal and (facing is None or orient is facing)

    if done(start, orientation):
        return 0
    seen = {(start, orientation)}
    queue = deque([(start, orientation, 0)])
    while queue:
        pos, orient, d = queue.popleft()
        for action in MOVE_ACTIONS:
            new_orient = ACTION_ORIENTATION[action]
            dx, dy = {
                Orientation.NORTH: (0, -1),
                Orientation.SOUTH: (0, 1),
                Orientation.WEST: (-1, 0),
                Orientation.EAST: (1, 0),
            }[new_orient]
            target = (pos[0] + dx, pos[1] + dy)
            new_pos = target if layout.is_floor(target) else pos
            if done(new_pos, new_orient):
                return d + 1
            if (new_pos, new_orient) not in seen:
                seen.add((new_pos, new_orient))
                queue.append((new_pos, new_orient, d + 1))
    return None


def full_state_joint_cost(layout, starts, orientations, goals, facings=(None, None)):
    """Optimal joint cost over the full ((pos, orient), (pos, orient)) space
    with the environment's collision rules. Both agents must satisfy their
    goal simultaneously.
    """
    motion = MOVE_ACTIONS + (Action.NOOP,)

    def done(state):
        for k in (0, 1):
            (pos, orient) = state[k]
            if pos != goals[k]:
                return False
            if facings[k] is not None and orient is not facings[k]:
                return False
        return True

    start_state = ((starts[0], orientations[0]), (starts[1], orientations[1]))
    if done(start_state):
        return 0
    seen = {start_state}
    queue = deque([(start_state, 0)])
    while queue:
        state, d = queue.popleft()
        positions = (state[0][0], state[1][0])
        orients = (state[0][1], state[1][1])
        for a in motion:
            for b in motion:
                new_pos, new_orient = resolve_motion(
                    layout, positions, orients, (a, b)
                )
                nxt = ((new_pos[0], new_orient[0]), (new_pos[1], new_orient[1]))
                if done(nxt):
                    return d + 1
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append((nxt, d + 1))
    return None


def random_rollout_states(env: KitchenEnv, steps: int, seed: int):
    """States visited by uniformly random joint actions."""
    rng = np.random.default_rng(seed)
    state = env.reset()
    states = [state]
    for _ in range(steps):
        joint = (Action(int(rng.integers(6))), Action(int(rng.integers(6))))
        state = env.step(state, joint).state
        states.append(state)
    return states


def exhaustive_best_reward(env: KitchenEnv, horizon: int, frozen_seat=None):
    """True optimum of total sparse reward within ``horizon`` steps, by
    dynamic programming over all reachable state contents with memoized
    transitions. Independent of every planner module. ``frozen_seat`` pins
    that seat to Noop, giving the best response against a motionless partner.
    """
    base = env.reset()
    if frozen_seat is None:
        joint_actions = [(a, b) for a in Action for b in Action]
    elif frozen_seat == 0:
        joint_actions = [(Action.NOOP, b) for b in Action]
    else:
        joint_actions = [(a, Action.NOOP) for a in Action]

    transitions = {}

    def expand(content):
        key = content
        if key in transitions:
            return transitions[key]
        state = _state_from_content(base, content)
        outs = []
        for joint in joint_actions:
            result = env.step(state, joint)
            outs.append((result.state.content(), result.reward))
        transitions[key] = outs
        return outs

    reachable = {base.content()}
    frontier = [base.content()]
    depth = 0
    while frontier and depth < horizon:
        nxt = []
        for content in frontier:
            for out_content, _ in expand(content):
                if out_content not in reachable:
                    reachable.add(out_content)
                    nxt.append(out_content)
        frontier = nxt
        depth += 1

    value = {content: 0 for content in reachable}
    for _ in range(horizon):
        new_value = {}
        for content in reachable:
            best = 0
            for out_content, reward in transitions.get(content, expand(content)):
                v = reward + value.get(out_content, 0)
                if v > best:
                    best = v
            new_value[content] = best
        value = new_value
    return value[base.content()]


def _state_from_content(base, content):
    from dataclasses import replace

    players, pots, counters = content
    return replace(
        base, players=players, pots=pots, counter_objects=counters, timestep=0
    )
