"""Trajectory persistence, quality filtering, and imitation datasets.

Files are line-delimited JSON: a header line carrying the layout grid and
environment parameters, one line per step (pre-action state snapshot, joint
action, sparse reward, per-player shaping events), and a final-state line.
Every load replays the actions through the environment and fails loudly on
the first divergence, so a trajectory that loads is certified faithful.

Low-scoring or truncated human sessions are dropped by per-layout reward
thresholds (strictly-below drops; hitting the threshold keeps) and a minimum
length. Joint trajectories are partitioned into two disjoint halves - one to
clone, one to evaluate against - then split into per-seat samples with an
85/15 train/validation division.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .encodings import featurize
from .env import Action, KitchenEnv, ShapingEvent, WorldState
from .layouts import Layout, parse_layout, serialize_layout

FORMAT_VERSION = 1

# sessions scoring strictly below their layout's bar are discarded
REWARD_THRESHOLDS = {
    "cramped_room": 220,
    "asymmetric_advantages": 280,
    "coordination_ring": 150,
    "forced_coordination": 160,
    "counter_circuit": 180,
}
MIN_LENGTH = 1200
TRAIN_FRACTION = 0.85


class CorruptTrajectory(Exception):
    def __init__(self, message: str, step_index: Optional[int] = None):
        super().__init__(message)
        self.step_index = step_index


class UnknownLayout(KeyError):
    pass


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryStep:
    state: WorldState
    joint_action: tuple[Action, Action]
    reward: int
    events: tuple[tuple[ShapingEvent, ...], tuple[ShapingEvent, ...]]


@dataclass
class Trajectory:
    layout: Layout
    horizon: int
    steps: list[TrajectoryStep]
    final_state: WorldState
    metadata: dict = field(default_factory=dict)
    cook_time: Optional[int] = None
    soup_reward: Optional[int] = None

    @property
    def length(self) -> int:
        return len(self.steps)

    @property
    def total_reward(self) -> int:
        return sum(step.reward for step in self.steps)

    def env(self) -> KitchenEnv:
        kwargs = {}
        if self.cook_time is not None:
            kwargs["cook_time"] = self.cook_time
        if self.soup_reward is not None:
            kwargs["soup_reward"] = self.soup_reward
        return KitchenEnv(self.layout, **kwargs)


def record_rollout(
    env: KitchenEnv,
    agents,
    horizon: int,
    seed: int = 0,
    metadata: Optional[dict] = None,
) -> Trajectory:
    """Roll agents for ``horizon`` steps and package the result."""
    rng = np.random.default_rng(seed)
    for agent in agents:
        reset = getattr(agent, "reset", None)
        if reset is not None:
            reset()
    state = env.reset()
    steps: list[TrajectoryStep] = []
    for _ in range(horizon):
        joint = (agents[0].act(state, 0, rng), agents[1].act(state, 1, rng))
        result = env.step(state, joint)
        steps.append(TrajectoryStep(state, joint, result.reward, result.events))
        state = result.state
    meta = dict(metadata or {})
    meta.setdefault("source", "simulated")
    meta.setdefault("seed", seed)
    return Trajectory(
        layout=env.layout,
        horizon=horizon,
        steps=steps,
        final_state=state,
        metadata=meta,
        cook_time=env.cook_time,
        soup_reward=env.soup_reward,
    )


def certify(trajectory: Trajectory) -> None:
    """Replay the recorded actions and compare every state, reward, and
    event; raises CorruptTrajectory with the first divergent step index.
    """
    if not trajectory.steps:
        raise CorruptTrajectory("empty trajectory", step_index=None)
    env = trajectory.env()
    state = trajectory.steps[0].state
    for t, step in enumerate(trajectory.steps):
        if state != step.state:
            raise CorruptTrajectory(
                f"state mismatch at step {t}", step_index=t)
        result = env.step(state, step.joint_action)
        if result.reward != step.reward:
            raise CorruptTrajectory(
                f"reward mismatch at step {t}: replay {result.reward} != "
                f"recorded {step.reward}", step_index=t)
        if result.events != step.events:
            raise CorruptTrajectory(
                f"event mismatch at step {t}", step_index=t)
        state = result.state
    if state != trajectory.final_state:
        raise CorruptTrajectory(
            "final state mismatch", step_index=len(trajectory.steps))


# -- file format ---------------------------------------------------------


def save(trajectory: Trajectory, path: str) -> None:
    """Write atomically: a crash mid-save never leaves a partial file."""
    header = {
        "kind": "header",
        "version": FORMAT_VERSION,
        "layout_name": trajectory.layout.name,
        "layout_grid": serialize_layout(trajectory.layout),
        "horizon": trajectory.horizon,
        "cook_time": trajectory.cook_time,
        "soup_reward": trajectory.soup_reward,
        "metadata": trajectory.metadata,
    }
    lines = [json.dumps(header)]
    for t, step in enumerate(trajectory.steps):
        lines.append(json.dumps({
            "kind": "step",
            "t": t,
            "state": step.state.to_dict(),
            "actions": [int(a) for a in step.joint_action],
            "reward": step.reward,
            "events": [[e.name for e in evs] for evs in step.events],
        }))
    lines.append(json.dumps({
        "kind": "final", "state": trajectory.final_state.to_dict()}))
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write("\n".join(lines) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path: str) -> Trajectory:
    """Parse and certify; a trajectory that loads replays exactly."""
    with open(path) as handle:
        lines = [line for line in handle.read().splitlines() if line.strip()]
    if not lines:
        raise CorruptTrajectory(f"{path}: empty file")
    header = json.loads(lines[0])
    if header.get("kind") != "header":
        raise CorruptTrajectory(f"{path}: missing header line")
    if header.get("version") != FORMAT_VERSION:
        raise CorruptTrajectory(
            f"{path}: unsupported version {header.get('version')}")
    layout = parse_layout(header["layout_grid"], header["layout_name"])
    steps: list[TrajectoryStep] = []
    final_state: Optional[WorldState] = None
    for line in lines[1:]:
        record = json.loads(line)
        kind = record.get("kind")
        if kind == "step":
            steps.append(TrajectoryStep(
                state=WorldState.from_dict(record["state"]),
                joint_action=(Action(record["actions"][0]),
                              Action(record["actions"][1])),
                reward=record["reward"],
                events=tuple(
                    tuple(ShapingEvent[name] for name in evs)
                    for evs in record["events"]),
            ))
        elif kind == "final":
            final_state = WorldState.from_dict(record["state"])
        else:
            raise CorruptTrajectory(f"{path}: unknown record kind {kind!r}")
    if final_state is None:
        raise CorruptTrajectory(f"{path}: missing final state")
    trajectory = Trajectory(
        layout=layout,
        horizon=header["horizon"],
        steps=steps,
        final_state=final_state,
        metadata=header.get("metadata", {}),
        cook_time=header.get("cook_time"),
        soup_reward=header.get("soup_reward"),
    )
    certify(trajectory)
    return trajectory


# -- filtering and datasets ------------------------------------------------


def filter_human_data(
    trajectories: Sequence[Trajectory], layout: str
) -> list[Trajectory]:
    """Keep sessions on ``layout`` that are long enough and score at least
    the layout's reward bar (strictly lower scores drop).
    """
    if layout not in REWARD_THRESHOLDS:
        raise UnknownLayout(layout)
    threshold = REWARD_THRESHOLDS[layout]
    kept = []
    for trajectory in trajectories:
        if trajectory.layout.name != layout:
            raise ValueError(
                f"trajectory tagged {trajectory.layout.name!r}, expected "
                f"{layout!r}")
        if trajectory.length < MIN_LENGTH:
            continue
        if trajectory.total_reward < threshold:
            continue
        kept.append(trajectory)
    return kept


@dataclass
class SingleAgentDataset:
    """Per-seat imitation samples: every joint step contributes one sample
    for each seat, featurized for that seat's perspective.
    """

    layout: Layout
    entries: list[tuple[WorldState, int, Action]]
    features: np.ndarray
    labels: np.ndarray
    train_indices: np.ndarray
    val_indices: np.ndarray

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def train_features(self) -> np.ndarray:
        return self.features[self.train_indices]

    @property
    def train_labels(self) -> np.ndarray:
        return self.labels[self.train_indices]

    @property
    def val_features(self) -> np.ndarray:
        return self.features[self.val_indices]

    @property
    def val_labels(self) -> np.ndarray:
        return self.labels[self.val_indices]


def build_dataset(
    trajectories: Sequence[Trajectory],
    seed: int = 0,
    val_fraction: float = 1.0 - TRAIN_FRACTION,
) -> SingleAgentDataset:
    """Split joint steps into per-seat samples and divide train/validation
    at the sample level with a seeded shuffle.
    """
    if not trajectories:
        raise InsufficientData("no trajectories")
    layout = trajectories[0].layout
    cook_time = trajectories[0].cook_time or KitchenEnv(layout).cook_time
    entries: list[tuple[WorldState, int, Action]] = []
    rows: list[np.ndarray] = []
    labels: list[int] = []
    for trajectory in trajectories:
        for step in trajectory.steps:
            for seat in (0, 1):
                entries.append((step.state, seat, step.joint_action[seat]))
                rows.append(
                    featurize(step.state, layout, seat, cook_time))
                labels.append(int(step.joint_action[seat]))
    features = np.stack(rows)
    label_array = np.asarray(labels, dtype=np.int64)
    order = np.random.default_rng(seed).permutation(len(entries))
    n_val = int(round(len(entries) * val_fraction))
    val_indices = np.sort(order[:n_val])
    train_indices = np.sort(order[n_val:])
    return SingleAgentDataset(
        layout=layout,
        entries=entries,
        features=features,
        labels=label_array,
        train_indices=train_indices,
        val_indices=val_indices,
    )


def split_trajectories(
    trajectories: Sequence[Trajectory], rng_seed: int
) -> tuple[list[Trajectory], list[Trajectory]]:
    """Disjoint random halves of the joint trajectories (first half gets the
    odd one out), original order preserved within each half."""
    if len(trajectories) < 2:
        raise InsufficientData(
            f"need at least 2 joint trajectories, got {len(trajectories)}")
    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(len(trajectories))
    half = (len(trajectories) + 1) // 2
    first = [trajectories[i] for i in sorted(order[:half])]
    second = [trajectories[i] for i in sorted(order[half:])]
    return first, second


def split_and_partition(
    trajectories: Sequence[Trajectory], rng_seed: int
) -> tuple[SingleAgentDataset, SingleAgentDataset]:
    """Disjoint random halves of the joint trajectories, one per model under
    comparison, each turned into a per-seat dataset.
    """
    first, second = split_trajectories(trajectories, rng_seed)
    return (
        build_dataset(first, seed=rng_seed * 2 + 1),
        build_dataset(second, seed=rng_seed * 2 + 2),
    )
