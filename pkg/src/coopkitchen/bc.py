"""Behavior cloning over the 64-dim features, with the stuck-escape rule.

The cloned policy is a two-hidden-layer softmax network trained with Adam on
cross entropy. Execution wraps the network with a small patch: an agent that
has sat on the same tile for three consecutive decisions takes a uniformly
random action instead of sampling the model, which breaks the positional
loops cloned policies otherwise fall into. The tracker is caller-updated
(once per step, before acting); ``bc_act`` itself never mutates it.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .agents import AgentBase, NUM_ACTIONS
from .encodings import FEATURE_DIM, featurize
from .env import Action, COOK_TIME, KitchenEnv, WorldState
from .layouts import Layout
from .nets import MLP, Adam, cross_entropy, load_model, save_model
from .trajectories import SingleAgentDataset

HIDDEN_SIZES = (64, 64)
STUCK_WINDOW = 3


class EmptyDataset(ValueError):
    pass


class NonFiniteLoss(RuntimeError):
    pass


class NoValidPair(UserWarning):
    """No candidate pair satisfies proxy reward >= cloned-model reward."""


@dataclass
class BCConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    adam_epsilon: float = 1e-8
    seed: int = 0


# per-layout epoch counts; learning rate and epsilon are shared
BC_CONFIGS = {
    "cramped_room": BCConfig(epochs=100),
    "asymmetric_advantages": BCConfig(epochs=120),
    "coordination_ring": BCConfig(epochs=120),
    "forced_coordination": BCConfig(epochs=90),
    "counter_circuit": BCConfig(epochs=110),
}


class BCModel:
    """Cloned softmax policy plus the configuration that trained it."""

    def __init__(self, net: Optional[MLP] = None,
                 config: Optional[BCConfig] = None):
        self.config = config or BCConfig()
        self.net = net or MLP(FEATURE_DIM, HIDDEN_SIZES, NUM_ACTIONS,
                              seed=self.config.seed)

    def distribution(self, features: np.ndarray) -> np.ndarray:
        probs = self.net.distribution(features)
        return probs[0] if features.ndim == 1 else probs

    def save(self, path: str) -> None:
        save_model(self.net, path, extra={"bc_config": np.asarray([
            self.config.learning_rate, self.config.epochs,
            self.config.batch_size, self.config.adam_epsilon,
            self.config.seed])})

    @staticmethod
    def load(path: str) -> "BCModel":
        net, extra = load_model(path)
        if not isinstance(net, MLP):
            raise ValueError(f"{path}: not a cloned-policy network")
        config = BCConfig()
        if "bc_config" in extra:
            raw = extra["bc_config"]
            config = BCConfig(learning_rate=float(raw[0]),
                              epochs=int(raw[1]), batch_size=int(raw[2]),
                              adam_epsilon=float(raw[3]), seed=int(raw[4]))
        return BCModel(net, config)


@dataclass
class BCTrainResult:
    model: BCModel
    train_losses: list[float]
    val_losses: list[float]
    best_epoch: int
    best_val_loss: float
    best_params: np.ndarray

    def best_model(self) -> BCModel:
        model = BCModel(config=self.model.config)
        model.net.store.load_flat(self.best_params)
        return model


def train_bc(dataset: SingleAgentDataset,
             config: Optional[BCConfig] = None) -> BCTrainResult:
    """Minimize cross entropy on the train split for the configured epoch
    count, recording per-epoch train/validation losses and the best
    validation snapshot. Falls back to the train split for "validation"
    losses when the dataset has no validation samples.
    """
    config = config or BCConfig()
    train_x, train_y = dataset.train_features, dataset.train_labels
    if len(train_y) == 0:
        raise EmptyDataset("train split is empty")
    val_x, val_y = dataset.val_features, dataset.val_labels
    if len(val_y) == 0:
        val_x, val_y = train_x, train_y
    net = MLP(train_x.shape[1], HIDDEN_SIZES, NUM_ACTIONS, seed=config.seed)
    optimizer = Adam(net.store, lr=config.learning_rate,
                     eps=config.adam_epsilon)
    rng = np.random.default_rng(config.seed)
    train_losses: list[float] = []
    val_losses: list[float] = []
    best_epoch, best_val = -1, float("inf")
    best_params = net.store.copy_flat()
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_y))
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            net.store.zero_grad()
            loss, dlogits = cross_entropy(net.forward(train_x[batch]),
                                          train_y[batch])
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"epoch {epoch}: loss {loss}")
            net.backward(dlogits)
            optimizer.step()
        train_losses.append(cross_entropy(net.forward(train_x), train_y)[0])
        val_loss = cross_entropy(net.forward(val_x), val_y)[0]
        if not np.isfinite(val_loss):
            raise NonFiniteLoss(f"epoch {epoch}: validation loss {val_loss}")
        val_losses.append(val_loss)
        if val_loss < best_val:
            best_epoch, best_val = epoch, val_loss
            best_params = net.store.copy_flat()
    return BCTrainResult(
        model=BCModel(net, config),
        train_losses=train_losses,
        val_losses=val_losses,
        best_epoch=best_epoch,
        best_val_loss=best_val,
        best_params=best_params,
    )


class StuckTracker:
    """Ring buffer of the last three positions of the controlled player."""

    def __init__(self, window: int = STUCK_WINDOW):
        self.window = window
        self._positions: deque = deque(maxlen=window)

    def update(self, position: tuple[int, int]) -> None:
        self._positions.append(position)

    def is_stuck(self) -> bool:
        return (len(self._positions) == self.window
                and len(set(self._positions)) == 1)

    def reset(self) -> None:
        self._positions.clear()

    @property
    def positions(self) -> tuple:
        return tuple(self._positions)


def bc_act(model: BCModel, state: WorldState, layout: Layout,
           player_index: int, tracker: StuckTracker,
           rng: np.random.Generator, cook_time: int = COOK_TIME) -> Action:
    """Sample the model distribution, or a uniform action when the tracker
    shows three consecutive identical positions. Reads the tracker only;
    the caller records positions.
    """
    if tracker.is_stuck():
        return Action(int(rng.integers(NUM_ACTIONS)))
    probs = model.distribution(
        featurize(state, layout, player_index, cook_time))
    return Action(int(rng.choice(NUM_ACTIONS, p=probs)))


class BCAgent(AgentBase):
    """Rollout adapter: updates per-seat trackers and applies bc_act."""

    def __init__(self, model: BCModel, env: KitchenEnv):
        self.model = model
        self.layout = env.layout
        self.cook_time = env.cook_time
        self._trackers = (StuckTracker(), StuckTracker())

    def act(self, state: WorldState, player_index: int,
            rng: np.random.Generator) -> Action:
        tracker = self._trackers[player_index]
        tracker.update(state.players[player_index].position)
        return bc_act(self.model, state, self.layout, player_index, tracker,
                      rng, cook_time=self.cook_time)

    def action_probabilities(self, state: WorldState,
                             player_index: int) -> np.ndarray:
        # the raw model distribution; the stuck patch is execution-only
        return self.model.distribution(
            featurize(state, self.layout, player_index, self.cook_time))

    def reset(self) -> None:
        for tracker in self._trackers:
            tracker.reset()


@dataclass
class SelectedPair:
    bc: object
    proxy: object
    bc_reward: float
    proxy_reward: float
    fallback: bool = False


def select_model_pair(candidates_bc: Sequence, candidates_proxy: Sequence,
                      eval_rollouts: Callable[[object], float]
                      ) -> SelectedPair:
    """Pick one cloned model and one proxy so the proxy's self-play reward
    is at least the cloned model's, with the smallest such gap (ties: higher
    combined reward, then lower candidate indices). If no ordered pair
    exists, warn and return the best-reward candidate from each side.
    """
    if not candidates_bc or not candidates_proxy:
        raise ValueError("need at least one candidate per side")
    bc_rewards = [float(eval_rollouts(c)) for c in candidates_bc]
    proxy_rewards = [float(eval_rollouts(c)) for c in candidates_proxy]
    ordered = [
        (proxy_rewards[j] - bc_rewards[i],
         -(bc_rewards[i] + proxy_rewards[j]), i, j)
        for i in range(len(candidates_bc))
        for j in range(len(candidates_proxy))
        if proxy_rewards[j] >= bc_rewards[i]
    ]
    if ordered:
        _, _, i, j = min(ordered)
        return SelectedPair(candidates_bc[i], candidates_proxy[j],
                            bc_rewards[i], proxy_rewards[j])
    i = int(np.argmax(bc_rewards))
    j = int(np.argmax(proxy_rewards))
    warnings.warn(
        "no proxy candidate reaches the cloned model's self-play reward; "
        "falling back to the best-reward pair", NoValidPair)
    return SelectedPair(candidates_bc[i], candidates_proxy[j],
                        bc_rewards[i], proxy_rewards[j], fallback=True)
