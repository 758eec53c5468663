"""Pairing experiments, prediction metrics, and matrix reports.

Agents enter as declarative specs (kind + optional model path) and are
resolved to action-producing policies per evaluation seat. Pairings run a
fixed number of episodes split over evaluation seed groups; the reported
standard error is computed across those seed groups, not across episodes.
Rewards from shorter planning horizons are scaled up to the standard
400-step horizon so numbers stay comparable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .agents import NUM_ACTIONS, NoopAgent, RandomAgent, ScriptedCookAgent
from .bc import BCAgent, BCModel
from .env import Action, KitchenEnv, WorldState
from .layouts import Layout, load_layout
from .nets import PolicyValueNet, load_model
from .partner_planning import PartnerAwareAgent
from .planning import CPAgent, JointPlanner
from .ppo import PPOAgent
from .trajectories import Trajectory

EVAL_HORIZON = 400
PLANNING_HORIZON = 100

POLICY_NET_KINDS = ("SP", "PBT", "PPO_BC", "PPO_HProxy")
BC_KINDS = ("BC", "H_Proxy")
PLANNER_PARTNERED_KINDS = ("P_BC", "P_HProxy")


class ModelLoadFailure(RuntimeError):
    pass


class EmptyData(ValueError):
    pass


@dataclass(frozen=True)
class AgentSpec:
    """Declarative reference to an evaluable policy.

    ``model`` is a checkpoint path for learned kinds, a role name for
    ``scripted``, or an already-constructed agent for ``object``.
    ``player_index`` optionally pins the spec to one seat.
    """

    kind: str
    model: Optional[object] = None
    player_index: Optional[int] = None

    @classmethod
    def parse(cls, text: str) -> "AgentSpec":
        """``kind`` or ``kind:model``, e.g. ``cp``, ``BC:runs/bc.npz``,
        ``scripted:dish``. Kind matching is case-insensitive."""
        kind, _, model = text.strip().partition(":")
        if not kind:
            raise ValueError(f"empty agent spec {text!r}")
        canonical = {k.lower(): k for k in (
            *POLICY_NET_KINDS, *BC_KINDS, *PLANNER_PARTNERED_KINDS,
            "CP", "scripted", "random", "noop", "object")}
        return cls(canonical.get(kind.lower(), kind), model or None)

    def label(self) -> str:
        if self.kind == "scripted" and self.model:
            return f"scripted:{self.model}"
        return self.kind


def reward_scale(horizon: int) -> float:
    """Factor that makes shorter-horizon rewards comparable to the
    standard 400-step evaluations (x4 at the planning horizon of 100)."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    return EVAL_HORIZON / horizon


def _load_policy_net(path: str) -> PolicyValueNet:
    try:
        model, _ = load_model(str(path))
    except (OSError, KeyError, ValueError) as exc:
        raise ModelLoadFailure(f"cannot load policy net {path!r}: {exc}")
    if not isinstance(model, PolicyValueNet):
        raise ModelLoadFailure(f"{path!r} is not a policy/value checkpoint")
    return model


def _load_bc(path: str) -> BCModel:
    try:
        return BCModel.load(str(path))
    except (OSError, KeyError, ValueError) as exc:
        raise ModelLoadFailure(f"cannot load imitation model {path!r}: {exc}")


def resolve_agent(spec: Union[AgentSpec, object], env: KitchenEnv,
                  seat: int):
    """Build the agent behind a spec for the given seat. Objects with an
    ``act`` method pass through untouched."""
    if not isinstance(spec, AgentSpec):
        if hasattr(spec, "act"):
            return spec
        raise ModelLoadFailure(f"not an agent or spec: {spec!r}")
    if spec.player_index is not None and spec.player_index != seat:
        raise ValueError(
            f"spec {spec.label()} pinned to seat {spec.player_index}, "
            f"placed on {seat}")
    kind = spec.kind
    if kind == "object":
        return resolve_agent(spec.model, env, seat)
    if kind in POLICY_NET_KINDS:
        return PPOAgent(_load_policy_net(spec.model), env)
    if kind in BC_KINDS:
        return BCAgent(_load_bc(spec.model), env)
    if kind == "CP":
        return CPAgent(JointPlanner(env))
    if kind in PLANNER_PARTNERED_KINDS:
        partner = BCAgent(_load_bc(spec.model), env)
        return PartnerAwareAgent(env, partner, self_index=seat)
    if kind == "scripted":
        return ScriptedCookAgent(env, role=spec.model or "onion")
    if kind == "random":
        return RandomAgent()
    if kind == "noop":
        return NoopAgent()
    raise ModelLoadFailure(f"unknown agent kind {kind!r}")


# -- pairings -----------------------------------------------------------------


@dataclass
class PairingResult:
    layout_name: str
    agent_a: str
    agent_b: str
    horizon: int
    episodes: int
    seeds: int
    mean_reward: float
    stderr: float
    per_seed_means: list
    scale: float
    switched: Optional["PairingResult"] = None


def _episode_reward(env: KitchenEnv, agents, horizon: int,
                    rngs) -> float:
    for agent in agents:
        agent.reset()
    state = env.reset()
    total = 0.0
    for _ in range(horizon):
        joint = (agents[0].act(state, 0, rngs[0]),
                 agents[1].act(state, 1, rngs[1]))
        result = env.step(state, joint)
        state = result.state
        total += result.reward
    return total


def _run_one_order(env: KitchenEnv, a, b, horizon: int, episodes: int,
                   seeds: int, base_seed: int) -> tuple:
    agent_a = resolve_agent(a, env, 0)
    agent_b = resolve_agent(b, env, 1)
    group_sizes = [episodes // seeds + (1 if g < episodes % seeds else 0)
                   for g in range(seeds)]
    per_seed_means = []
    rewards: list = []
    for group, size in enumerate(group_sizes):
        group_rewards = []
        for episode in range(size):
            # seeded per (group, episode, seat): results do not depend on
            # execution order
            rngs = (np.random.default_rng((base_seed, group, episode, 0)),
                    np.random.default_rng((base_seed, group, episode, 1)))
            group_rewards.append(
                _episode_reward(env, (agent_a, agent_b), horizon, rngs))
        rewards.extend(group_rewards)
        per_seed_means.append(float(np.mean(group_rewards)))
    mean = float(np.mean(rewards))
    if seeds > 1:
        stderr = float(np.std(per_seed_means, ddof=1) / np.sqrt(seeds))
    else:
        stderr = 0.0
    return mean, stderr, per_seed_means


def run_pairing(a, b, layout, horizon: int = EVAL_HORIZON,
                episodes: int = 100, seeds: int = 5, base_seed: int = 0,
                env: Optional[KitchenEnv] = None,
                include_switched: bool = True) -> PairingResult:
    """Mean sparse episode reward for the ordered pair (a on seat 0), with
    the switched-start variant attached."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if env is None:
        env = KitchenEnv(layout if isinstance(layout, Layout)
                         else load_layout(layout))
    scale = reward_scale(horizon)
    mean, stderr, per_seed = _run_one_order(
        env, a, b, horizon, episodes, seeds, base_seed)

    def label(spec) -> str:
        return spec.label() if isinstance(spec, AgentSpec) \
            else type(spec).__name__

    result = PairingResult(
        layout_name=env.layout.name, agent_a=label(a), agent_b=label(b),
        horizon=horizon, episodes=episodes, seeds=seeds,
        mean_reward=mean * scale, stderr=stderr * scale,
        per_seed_means=[m * scale for m in per_seed], scale=scale)
    if include_switched:
        result.switched = run_pairing(
            b, a, layout, horizon=horizon, episodes=episodes, seeds=seeds,
            base_seed=base_seed, env=env, include_switched=False)
    return result


# -- prediction metrics -------------------------------------------------------


def prediction_metrics(model, trajectories: Iterable[Trajectory],
                       epsilon: float = 1e-3,
                       player_index: Optional[int] = None,
                       env: Optional[KitchenEnv] = None) -> tuple:
    """Cross-entropy (probability floored at epsilon) and top-1 accuracy of
    the model as a predictor of the recorded actions."""
    trajectories = list(trajectories)
    if env is None and trajectories:
        env = trajectories[0].env()
    agent = resolve_agent(model, env, player_index or 0) \
        if env is not None else model
    losses: list = []
    hits: list = []
    for trajectory in trajectories:
        seats = (player_index,) if player_index is not None else (0, 1)
        for step in trajectory.steps:
            for seat in seats:
                probs = agent.action_probabilities(step.state, seat)
                action = int(step.joint_action[seat])
                losses.append(-np.log(max(float(probs[action]), epsilon)))
                hits.append(int(np.argmax(probs)) == action)
    if not losses:
        raise EmptyData("no decision points in the given trajectories")
    return float(np.mean(losses)), float(np.mean(hits))


# -- matrix reports -----------------------------------------------------------


def pairing_matrix(agents: Sequence[AgentSpec], layouts: Sequence[str],
                   proxy: AgentSpec, gold: Optional[AgentSpec] = None,
                   horizon: int = EVAL_HORIZON, episodes: int = 100,
                   seeds: int = 5, base_seed: int = 0) -> list:
    """Every agent paired with itself and with the proxy on every layout,
    both start orders, plus gold-standard rows; one dict per row."""
    rows: list = []

    def add(result: PairingResult, start_order: str) -> None:
        rows.append({
            "layout": result.layout_name,
            "agent": result.agent_a if start_order == "ab"
            else result.agent_b,
            "partner": result.agent_b if start_order == "ab"
            else result.agent_a,
            "start_order": start_order,
            "mean_reward": result.mean_reward,
            "stderr": result.stderr,
            "episodes": result.episodes,
            "horizon": result.horizon,
        })

    def both_orders(a, b, layout) -> None:
        result = run_pairing(a, b, layout, horizon=horizon,
                             episodes=episodes, seeds=seeds,
                             base_seed=base_seed)
        add(result, "ab")
        add(result.switched, "ba")

    for layout in layouts:
        for agent in agents:
            both_orders(agent, agent, layout)
            both_orders(agent, proxy, layout)
        if gold is not None:
            both_orders(gold, proxy, layout)
    return rows


def write_rows_csv(rows: Sequence[dict], path: str) -> None:
    if not rows:
        raise EmptyData("nothing to write")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
