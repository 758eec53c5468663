"""Proximal policy optimization over the lossless grid encoding.

One policy/value network drives the learning seat of every parallel
environment; the other seat is either the same network (self-play), a fixed
partner model, or a per-episode mixture of the two whose fixed-partner
probability follows a linear annealing window. Rewards during collection are
the shared sparse reward plus the learner's own shaping events, weighted by
a schedule that decays to zero at the shaping horizon.

Updates are standard clipped-surrogate PPO with GAE advantages (normalized
per batch), an entropy bonus, a mean-squared value loss, and gradient-norm
clipping. The batch is shuffled once and split into the configured number of
minibatch shards; each shard receives the configured number of consecutive
gradient steps. All gradients are analytic (see nets) and finite-checked.
Timestep counters sum environment steps across all parallel environments.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .agents import AgentBase, NUM_ACTIONS
from .encodings import NUM_PLANES, encode_lossless
from .env import Action, KitchenEnv, SHAPING_MAGNITUDES, WorldState
from .nets import Adam, PolicyValueNet, log_softmax, save_model


class NonFiniteGradient(RuntimeError):
    pass


@dataclass(frozen=True)
class Schedule:
    """Linear interpolation from start_value to end_value over
    [start_t, end_t]; constant outside."""

    start_value: float
    end_value: float
    end_t: float
    start_t: float = 0.0

    def value(self, t: float) -> float:
        if t <= self.start_t:
            return self.start_value
        if t >= self.end_t:
            return self.end_value
        fraction = (t - self.start_t) / (self.end_t - self.start_t)
        return self.start_value + fraction * (self.end_value - self.start_value)


@dataclass
class PPOConfig:
    total_timesteps: int
    learning_rate: float = 1e-3
    lr_annealing_factor: float = 1.0
    entropy_coef: float = 0.1
    vf_coef: float = 0.5
    gamma: float = 0.99
    gae_lambda: float = 0.98
    clip_range: float = 0.05
    max_grad_norm: float = 0.1
    grad_steps_per_minibatch: int = 8
    minibatch_count: int = 6
    minibatch_size: int = 2000
    n_envs: int = 30
    episode_horizon: int = 400
    shaping_horizon: float = 2.5e6
    # (start_t, end_t) over which the fixed-partner episode fraction rises
    # from 0 to 1; None trains against the fixed partner from the start
    selfplay_window: Optional[tuple[float, float]] = None

    def __post_init__(self):
        for name in ("gamma", "gae_lambda", "clip_range"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {value}")
        if self.shaping_horizon < 0:
            raise ValueError("shaping_horizon must be >= 0")

    @property
    def steps_per_iteration(self) -> int:
        return self.minibatch_count * self.minibatch_size // self.n_envs

    def lr_schedule(self) -> Schedule:
        return Schedule(self.learning_rate,
                        self.learning_rate / self.lr_annealing_factor,
                        end_t=self.total_timesteps)

    def shaping_schedule(self) -> Schedule:
        if self.shaping_horizon == 0:
            return Schedule(0.0, 0.0, end_t=1.0)
        return Schedule(1.0, 0.0, end_t=self.shaping_horizon)

    def fixed_partner_schedule(self) -> Schedule:
        """Probability that an episode is played against the fixed partner."""
        if self.selfplay_window is None:
            return Schedule(1.0, 1.0, end_t=1.0)
        start_t, end_t = self.selfplay_window
        return Schedule(0.0, 1.0, start_t=start_t, end_t=end_t)


PPO_SP_CONFIGS = {
    "cramped_room": PPOConfig(
        total_timesteps=5_000_000, learning_rate=1e-3, shaping_horizon=2.5e6),
    "asymmetric_advantages": PPOConfig(
        total_timesteps=5_000_000, learning_rate=1e-3, shaping_horizon=2.5e6),
    "coordination_ring": PPOConfig(
        total_timesteps=7_000_000, learning_rate=6e-4, shaping_horizon=3.5e6),
    "forced_coordination": PPOConfig(
        total_timesteps=5_000_000, learning_rate=8e-4, shaping_horizon=2.5e6),
    "counter_circuit": PPOConfig(
        total_timesteps=5_000_000, learning_rate=8e-4, shaping_horizon=2.5e6),
}

PPO_PARTNERED_CONFIGS = {
    "cramped_room": PPOConfig(
        total_timesteps=4_000_000, learning_rate=1e-3, lr_annealing_factor=3,
        vf_coef=0.5, shaping_horizon=1e6, selfplay_window=(5e5, 3e6),
        minibatch_count=10, minibatch_size=1200),
    "asymmetric_advantages": PPOConfig(
        total_timesteps=8_000_000, learning_rate=1e-3, lr_annealing_factor=3,
        vf_coef=0.5, shaping_horizon=6e6, selfplay_window=(1e6, 7e6),
        minibatch_count=12, minibatch_size=1000),
    "coordination_ring": PPOConfig(
        total_timesteps=7_000_000, learning_rate=1e-3,
        lr_annealing_factor=1.5, vf_coef=0.5, shaping_horizon=5e6,
        selfplay_window=(2e6, 6e6), minibatch_count=15, minibatch_size=800),
    "forced_coordination": PPOConfig(
        total_timesteps=5_000_000, learning_rate=1.5e-3,
        lr_annealing_factor=2, vf_coef=0.1, shaping_horizon=4e6,
        selfplay_window=None, minibatch_count=15, minibatch_size=800),
    "counter_circuit": PPOConfig(
        total_timesteps=5_000_000, learning_rate=1.5e-3,
        lr_annealing_factor=3, vf_coef=0.1, shaping_horizon=4e6,
        selfplay_window=(1e6, 4e6), minibatch_count=15, minibatch_size=800),
}


# -- batches -----------------------------------------------------------------


@dataclass
class RolloutBatch:
    """Time-major learner-seat samples from parallel environments."""

    obs: np.ndarray          # (T, E, C, H, W)
    actions: np.ndarray      # (T, E) int
    log_probs: np.ndarray    # (T, E)
    values: np.ndarray       # (T, E)
    rewards: np.ndarray      # (T, E) sparse + weighted shaping
    sparse_rewards: np.ndarray  # (T, E)
    dones: np.ndarray        # (T, E) 1.0 at episode-ending steps
    last_values: np.ndarray  # (E,) bootstrap values for truncated episodes
    events: list             # [(t, env, ShapingEvent), ...] learner seat
    episode_returns: list    # (sparse, shaped) per episode finished

    @property
    def size(self) -> int:
        return self.obs.shape[0] * self.obs.shape[1]

    def flat(self) -> dict:
        t, e = self.actions.shape
        return {
            "obs": self.obs.reshape(t * e, *self.obs.shape[2:]),
            "actions": self.actions.reshape(t * e),
            "log_probs": self.log_probs.reshape(t * e),
            "values": self.values.reshape(t * e),
        }


def compute_gae(batch: RolloutBatch, gamma: float,
                lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and value targets, time-major."""
    t_len, _ = batch.rewards.shape
    advantages = np.zeros_like(batch.rewards)
    carry = 0.0
    for t in reversed(range(t_len)):
        next_values = batch.last_values if t == t_len - 1 \
            else batch.values[t + 1]
        mask = 1.0 - batch.dones[t]
        delta = (batch.rewards[t] + gamma * next_values * mask
                 - batch.values[t])
        carry = delta + gamma * lam * mask * carry
        advantages[t] = carry
    return advantages, advantages + batch.values


# -- loss and update ----------------------------------------------------------


def ppo_loss_and_grads(policy: PolicyValueNet, obs: np.ndarray,
                       actions: np.ndarray, old_log_probs: np.ndarray,
                       advantages: np.ndarray, returns: np.ndarray,
                       config: PPOConfig,
                       accumulate: bool = True) -> dict:
    """Clipped-surrogate + value + entropy loss; writes analytic gradients
    into the policy's store (zeroing first unless ``accumulate``)."""
    n = len(actions)
    logits, values = policy.forward(obs)
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    logp = logp_all[np.arange(n), actions]
    ratio = np.exp(logp - old_log_probs)
    clipped = np.clip(ratio, 1.0 - config.clip_range, 1.0 + config.clip_range)
    surrogate = np.minimum(ratio * advantages, clipped * advantages)
    policy_loss = -float(surrogate.mean())
    value_error = values - returns
    value_loss = float((value_error ** 2).mean())
    entropies = -(probs * logp_all).sum(axis=1)
    entropy = float(entropies.mean())
    total = (policy_loss + config.vf_coef * value_loss
             - config.entropy_coef * entropy)

    # gradient of the surrogate flows only where the unclipped branch is
    # the active minimum; elsewhere the clip zeroes it
    unclipped_active = ratio * advantages <= clipped * advantages
    dlogp = np.where(unclipped_active, -advantages * ratio, 0.0) / n
    dlogits = dlogp[:, None] * (np.eye(NUM_ACTIONS)[actions] - probs)
    # entropy term: dH/dlogits_k = -p_k (logp_k + H)
    dlogits += (config.entropy_coef / n) * probs * (
        logp_all + entropies[:, None])
    dvalues = (2.0 * config.vf_coef / n) * value_error

    if not accumulate:
        policy.store.zero_grad()
    policy.backward(dlogits, dvalues)
    return {
        "total_loss": total,
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy,
        "approx_kl": float((old_log_probs - logp).mean()),
        "clip_fraction": float((~unclipped_active).mean()),
    }


def ppo_update(policy: PolicyValueNet, batch: RolloutBatch,
               config: PPOConfig, optimizer: Optional[Adam] = None,
               lr: Optional[float] = None,
               rng: Optional[np.random.Generator] = None) -> dict:
    """One PPO step over the batch: shuffle once, split into shards, take
    the configured consecutive gradient steps on each shard."""
    optimizer = optimizer or Adam(policy.store, lr=config.learning_rate)
    rng = rng or np.random.default_rng(0)
    advantages, returns = compute_gae(batch, config.gamma, config.gae_lambda)
    flat = batch.flat()
    adv = advantages.reshape(-1)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    ret = returns.reshape(-1)
    order = rng.permutation(batch.size)
    shards = np.array_split(order, config.minibatch_count)
    stats: dict = {}
    for shard in shards:
        for _ in range(config.grad_steps_per_minibatch):
            policy.store.zero_grad()
            stats = ppo_loss_and_grads(
                policy, flat["obs"][shard], flat["actions"][shard],
                flat["log_probs"][shard], adv[shard], ret[shard], config)
            if not np.all(np.isfinite(policy.store.grad)):
                raise NonFiniteGradient(
                    f"non-finite gradient (loss {stats['total_loss']})")
            stats["grad_norm"] = policy.store.clip_grad_norm(
                config.max_grad_norm)
            optimizer.step(lr=lr)
    return stats


# -- rollout collection --------------------------------------------------------


class _EnvSlot:
    """One parallel environment: state, episode clock, seat assignment,
    partner mode, and a private stream of randomness."""

    def __init__(self, env: KitchenEnv, rng: np.random.Generator):
        self.env = env
        self.rng = rng
        self.state: WorldState = env.reset()
        self.t = 0
        self.learner_seat = 0
        self.use_fixed = False
        self.sparse_total = 0.0
        self.shaped_total = 0.0

    def begin_episode(self, fixed_fraction: float,
                      partner_available: bool) -> None:
        self.state = self.env.reset()
        self.t = 0
        self.learner_seat = int(self.rng.integers(2))
        self.use_fixed = (partner_available
                          and self.rng.random() < fixed_fraction)
        self.sparse_total = 0.0
        self.shaped_total = 0.0


class RolloutRunner:
    """Steps n_envs environments with the learner on a randomized seat and
    the partner drawn per episode from {self-copy, fixed model}."""

    def __init__(self, env: KitchenEnv, config: PPOConfig,
                 partner_factory: Optional[Callable[[], object]] = None,
                 seed: int = 0, initial_timesteps: int = 0):
        self.env = env
        self.layout = env.layout
        self.config = config
        self.fixed_schedule = config.fixed_partner_schedule()
        self.shaping_schedule = config.shaping_schedule()
        self.timesteps = initial_timesteps
        self.episodes = 0
        self._slots = []
        self._partners = []
        root = np.random.default_rng(seed)
        for _ in range(config.n_envs):
            slot = _EnvSlot(env, np.random.default_rng(root.integers(2**63)))
            self._slots.append(slot)
            self._partners.append(partner_factory() if partner_factory
                                  else None)
        self._partner_available = partner_factory is not None
        for slot in self._slots:
            slot.begin_episode(self.fixed_schedule.value(self.timesteps),
                               self._partner_available)

    def _encode(self, seats: Sequence[int]) -> np.ndarray:
        return np.stack([
            encode_lossless(slot.state, self.layout, seat, self.env.cook_time)
            for slot, seat in zip(self._slots, seats)])

    def _sample(self, policy: PolicyValueNet, seats: Sequence[int]
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        obs = self._encode(seats)
        logits, values = policy.forward(obs)
        logp_all = log_softmax(logits)
        probs = np.exp(logp_all)
        actions = np.array([
            slot.rng.choice(NUM_ACTIONS, p=probs[i])
            for i, slot in enumerate(self._slots)])
        return obs, actions, logp_all[np.arange(len(actions)), actions], values

    def collect(self, policy: PolicyValueNet, steps: int) -> RolloutBatch:
        e = len(self._slots)
        planes = (NUM_PLANES, self.layout.height, self.layout.width)
        obs = np.zeros((steps, e, *planes))
        actions = np.zeros((steps, e), dtype=np.int64)
        log_probs = np.zeros((steps, e))
        values = np.zeros((steps, e))
        rewards = np.zeros((steps, e))
        sparse = np.zeros((steps, e))
        dones = np.zeros((steps, e))
        events: list = []
        episode_returns: list = []
        for t in range(steps):
            learner_seats = [slot.learner_seat for slot in self._slots]
            obs_t, act_t, logp_t, val_t = self._sample(policy, learner_seats)
            # partner actions: batched self-copy for self-play slots,
            # per-slot fixed models elsewhere
            partner_actions: list = [None] * e
            self_slots = [i for i, slot in enumerate(self._slots)
                          if not slot.use_fixed]
            if self_slots:
                partner_obs = np.stack([
                    encode_lossless(self._slots[i].state, self.layout,
                                    1 - self._slots[i].learner_seat,
                                    self.env.cook_time)
                    for i in self_slots])
                logits, _ = policy.forward(partner_obs)
                partner_probs = np.exp(log_softmax(logits))
                for row, i in enumerate(self_slots):
                    partner_actions[i] = Action(int(
                        self._slots[i].rng.choice(
                            NUM_ACTIONS, p=partner_probs[row])))
            shaping_weight = self.shaping_schedule.value(self.timesteps)
            for i, slot in enumerate(self._slots):
                seat = slot.learner_seat
                if partner_actions[i] is None:
                    partner_actions[i] = self._partners[i].act(
                        slot.state, 1 - seat, slot.rng)
                joint = [Action.NOOP, Action.NOOP]
                joint[seat] = Action(int(act_t[i]))
                joint[1 - seat] = partner_actions[i]
                result = self.env.step(slot.state, (joint[0], joint[1]))
                shaped = sum(SHAPING_MAGNITUDES[ev] for ev in result.events[seat])
                for ev in result.events[seat]:
                    events.append((t, i, ev))
                rewards[t, i] = result.reward + shaping_weight * shaped
                sparse[t, i] = result.reward
                slot.sparse_total += result.reward
                slot.shaped_total += result.reward + shaping_weight * shaped
                slot.state = result.state
                slot.t += 1
                self.timesteps += 1
                if slot.t >= self.config.episode_horizon:
                    dones[t, i] = 1.0
                    episode_returns.append((slot.sparse_total,
                                            slot.shaped_total))
                    self.episodes += 1
                    partner = self._partners[i]
                    if partner is not None:
                        partner.reset()
                    slot.begin_episode(
                        self.fixed_schedule.value(self.timesteps),
                        self._partner_available)
            obs[t] = obs_t
            actions[t] = act_t
            log_probs[t] = logp_t
            values[t] = val_t
        last_seats = [slot.learner_seat for slot in self._slots]
        _, last_values = policy.forward(self._encode(last_seats))
        return RolloutBatch(
            obs=obs, actions=actions, log_probs=log_probs, values=values,
            rewards=rewards, sparse_rewards=sparse, dones=dones,
            last_values=last_values, events=events,
            episode_returns=episode_returns)


# -- training loops -------------------------------------------------------------


@dataclass
class TrainResult:
    policy: PolicyValueNet
    curve: list   # per-update dicts: timesteps, mean episode returns, losses
    config: PPOConfig
    seed: int

    def save(self, path: str) -> None:
        save_model(self.policy, path)


def _train(env: KitchenEnv, config: PPOConfig, seed: int,
           partner_factory: Optional[Callable[[], object]],
           progress: Optional[Callable[[dict], None]] = None) -> TrainResult:
    planes = (NUM_PLANES, env.layout.height, env.layout.width)
    policy = PolicyValueNet(planes, seed=seed)
    optimizer = Adam(policy.store, lr=config.learning_rate)
    runner = RolloutRunner(env, config, partner_factory, seed=seed)
    update_rng = np.random.default_rng(seed + 1)
    lr_schedule = config.lr_schedule()
    steps = config.steps_per_iteration
    iterations = config.total_timesteps // (steps * config.n_envs)
    curve: list = []
    for update in range(iterations):
        batch = runner.collect(policy, steps)
        lr = lr_schedule.value(runner.timesteps)
        stats = ppo_update(policy, batch, config, optimizer, lr=lr,
                           rng=update_rng)
        returns = batch.episode_returns or [(0.0, 0.0)]
        record = {
            "update": update,
            "timesteps": runner.timesteps,
            "lr": lr,
            "mean_sparse_return": float(np.mean([r[0] for r in returns])),
            "mean_shaped_return": float(np.mean([r[1] for r in returns])),
            **stats,
        }
        curve.append(record)
        if progress is not None:
            progress(record)
    return TrainResult(policy=policy, curve=curve, config=config, seed=seed)


def train_selfplay(env: KitchenEnv, config: PPOConfig, seed: int = 0,
                   progress: Optional[Callable[[dict], None]] = None
                   ) -> TrainResult:
    """PPO with the partner seat driven by the same network."""
    return _train(env, config, seed, partner_factory=None, progress=progress)


def train_with_partner(env: KitchenEnv, partner_factory: Callable[[], object],
                       config: PPOConfig, seed: int = 0,
                       progress: Optional[Callable[[dict], None]] = None
                       ) -> TrainResult:
    """PPO against a fixed partner, with the self-play fraction annealed
    away over the configured window (None: fixed partner throughout)."""
    return _train(env, config, seed, partner_factory=partner_factory,
                  progress=progress)


class PPOAgent(AgentBase):
    """Trained policy as a rollout agent (samples the distribution)."""

    def __init__(self, policy: PolicyValueNet, env: KitchenEnv):
        self.policy = policy
        self.layout = env.layout
        self.cook_time = env.cook_time

    def _distribution(self, state: WorldState, player_index: int
                      ) -> np.ndarray:
        obs = encode_lossless(state, self.layout, player_index,
                              self.cook_time)
        logits, _ = self.policy.forward(obs)
        return np.exp(log_softmax(logits))[0]

    def act(self, state: WorldState, player_index: int,
            rng: np.random.Generator) -> Action:
        probs = self._distribution(state, player_index)
        return Action(int(rng.choice(NUM_ACTIONS, p=probs)))

    def action_probabilities(self, state: WorldState,
                             player_index: int) -> np.ndarray:
        return self._distribution(state, player_index)
