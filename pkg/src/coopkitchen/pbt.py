"""Population-based training over the PPO learner.

A small population of policies trains in round-robin pairings: every
unordered pair plays, and within a pairing each side takes one learning
stint while the other is frozen as the partner. After all pairings, each
member's fitness is its mean sparse episode reward as a learner; the worst
member is replaced by an exact copy of the best (parameters and optimizer
moments) and its hyperparameters are mutated.

Mutation touches each tunable hyperparameter independently with probability
1/3, scaling by 0.75 or 1.25 (integer counts rounded, floored at 1). The
GAE lambda moves additively by half its distance to the nearest of {0, 1}
instead, which keeps it inside the open interval forever.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Optional

import numpy as np

from .encodings import NUM_PLANES
from .env import KitchenEnv
from .nets import Adam, PolicyValueNet, load_model, save_model
from .ppo import PPOAgent, PPOConfig, RolloutRunner, ppo_update

MUTATION_PROBABILITY = 1.0 / 3.0
MUTATION_FACTORS = (0.75, 1.25)


def mutate_lambda(value: float, rng: np.random.Generator) -> float:
    """Shift by half the distance to the nearest boundary of (0, 1)."""
    epsilon = min(value, 1.0 - value)
    sign = 1.0 if rng.integers(2) else -1.0
    new = value + sign * epsilon / 2.0
    # the exact rule never reaches a boundary, but float rounding can land
    # on 1.0 (or 0.0) from the last representable value inside; step back in
    if new <= 0.0:
        new = float(np.nextafter(0.0, 1.0))
    elif new >= 1.0:
        new = float(np.nextafter(1.0, 0.0))
    return new


def mutate_scale(value: float, rng: np.random.Generator) -> float:
    return value * MUTATION_FACTORS[int(rng.integers(2))]


@dataclass(frozen=True)
class MutableHyperparams:
    """Per-member tunables; everything else is fixed across the population."""

    gae_lambda: float = 0.98
    clip_range: float = 0.05
    learning_rate: float = 5e-3
    grad_steps_per_minibatch: int = 8
    entropy_coef: float = 0.5
    vf_coef: float = 0.1

    def mutate(self, rng: np.random.Generator) -> "MutableHyperparams":
        changes = {}
        for spec in fields(self):
            if rng.random() >= MUTATION_PROBABILITY:
                continue
            value = getattr(self, spec.name)
            if spec.name == "gae_lambda":
                changes[spec.name] = mutate_lambda(value, rng)
            elif spec.type in ("int", int):
                changes[spec.name] = max(1, round(mutate_scale(value, rng)))
            else:
                changes[spec.name] = mutate_scale(value, rng)
        return replace(self, **changes) if changes else self

    def as_array(self) -> np.ndarray:
        return np.array([self.gae_lambda, self.clip_range,
                         self.learning_rate,
                         float(self.grad_steps_per_minibatch),
                         self.entropy_coef, self.vf_coef])

    @staticmethod
    def from_array(values: np.ndarray) -> "MutableHyperparams":
        return MutableHyperparams(
            gae_lambda=float(values[0]), clip_range=float(values[1]),
            learning_rate=float(values[2]),
            grad_steps_per_minibatch=int(round(values[3])),
            entropy_coef=float(values[4]), vf_coef=float(values[5]))


@dataclass
class PBTConfig:
    env_steps_per_agent: int
    shaping_horizon: float
    initial: MutableHyperparams = field(default_factory=MutableHyperparams)
    population_size: int = 3
    iteration_timesteps: int = 40_000
    minibatch_count: int = 10
    minibatch_size: int = 2000
    n_envs: int = 50
    episode_horizon: int = 400
    gamma: float = 0.99
    max_grad_norm: float = 0.1

    def ppo_config(self, hyper: MutableHyperparams) -> PPOConfig:
        return PPOConfig(
            total_timesteps=self.env_steps_per_agent,
            learning_rate=hyper.learning_rate,
            entropy_coef=hyper.entropy_coef,
            vf_coef=hyper.vf_coef,
            gamma=self.gamma,
            gae_lambda=hyper.gae_lambda,
            clip_range=hyper.clip_range,
            max_grad_norm=self.max_grad_norm,
            grad_steps_per_minibatch=hyper.grad_steps_per_minibatch,
            minibatch_count=self.minibatch_count,
            minibatch_size=self.minibatch_size,
            n_envs=self.n_envs,
            episode_horizon=self.episode_horizon,
            shaping_horizon=self.shaping_horizon,
            selfplay_window=None)


PBT_CONFIGS = {
    "cramped_room": PBTConfig(
        env_steps_per_agent=8_000_000, shaping_horizon=3e6,
        initial=MutableHyperparams(learning_rate=2e-3)),
    "asymmetric_advantages": PBTConfig(
        env_steps_per_agent=11_000_000, shaping_horizon=5e6,
        initial=MutableHyperparams(learning_rate=8e-4)),
    "coordination_ring": PBTConfig(
        env_steps_per_agent=5_000_000, shaping_horizon=4e6,
        initial=MutableHyperparams(learning_rate=8e-4)),
    "forced_coordination": PBTConfig(
        env_steps_per_agent=8_000_000, shaping_horizon=7e6,
        initial=MutableHyperparams(learning_rate=3e-3)),
    "counter_circuit": PBTConfig(
        env_steps_per_agent=6_000_000, shaping_horizon=4e6,
        initial=MutableHyperparams(learning_rate=1e-3)),
}


class PBTMember:
    """One population slot: policy, optimizer state, tunables, step clock."""

    def __init__(self, index: int, env: KitchenEnv, config: PBTConfig,
                 seed: int):
        self.index = index
        planes = (NUM_PLANES, env.layout.height, env.layout.width)
        self.policy = PolicyValueNet(planes, seed=seed)
        self.optimizer = Adam(self.policy.store,
                              lr=config.initial.learning_rate)
        self.hyper = config.initial
        self.timesteps = 0
        self.lineage = [index]   # indices copied from, oldest first

    def agent(self, env: KitchenEnv) -> PPOAgent:
        return PPOAgent(self.policy, env)

    def adopt(self, source: "PBTMember",
              rng: np.random.Generator) -> None:
        """Exact exploit copy of the source, then mutated tunables."""
        self.policy.store.load_flat(source.policy.store.copy_flat())
        self.optimizer.copy_state_from(source.optimizer)
        self.timesteps = source.timesteps
        self.lineage = source.lineage + [self.index]
        self.hyper = source.hyper.mutate(rng)

    def save(self, path: str) -> None:
        save_model(self.policy, path,
                   extra={"pbt_hyperparams": self.hyper.as_array(),
                          "pbt_timesteps": np.array([self.timesteps])})

    @staticmethod
    def load(path: str, env: KitchenEnv, config: PBTConfig) -> "PBTMember":
        policy, extra = load_model(path)
        member = PBTMember(0, env, config, seed=0)
        member.policy = policy
        member.optimizer = Adam(policy.store)
        if "pbt_hyperparams" in extra:
            member.hyper = MutableHyperparams.from_array(
                extra["pbt_hyperparams"])
        if "pbt_timesteps" in extra:
            member.timesteps = int(extra["pbt_timesteps"][0])
        return member


def run_stint(member: PBTMember, partner: PBTMember, env: KitchenEnv,
              config: PBTConfig, seed: int) -> float:
    """Train the member against the frozen partner for one stint; returns
    the mean sparse episode reward observed while learning."""
    ppo_config = config.ppo_config(member.hyper)
    runner = RolloutRunner(
        env, ppo_config,
        partner_factory=lambda: partner.agent(env),
        seed=seed, initial_timesteps=member.timesteps)
    update_rng = np.random.default_rng(seed + 1)
    steps = ppo_config.steps_per_iteration
    iterations = max(1, config.iteration_timesteps
                     // (steps * config.n_envs))
    sparse_returns: list = []
    for _ in range(iterations):
        batch = runner.collect(member.policy, steps)
        ppo_update(member.policy, batch, ppo_config, member.optimizer,
                   rng=update_rng)
        sparse_returns.extend(r[0] for r in batch.episode_returns)
    member.timesteps = runner.timesteps
    return float(np.mean(sparse_returns)) if sparse_returns else 0.0


def pbt_iteration(population: list, env: KitchenEnv, config: PBTConfig,
                  rng: np.random.Generator) -> dict:
    """All round-robin pairings, fitness ranking, and one exploit step."""
    pairings = list(itertools.combinations(range(len(population)), 2))
    scores: dict = {i: [] for i in range(len(population))}
    for i, j in pairings:
        for learner, frozen in ((i, j), (j, i)):
            seed = int(rng.integers(2 ** 63))
            reward = run_stint(population[learner], population[frozen],
                               env, config, seed)
            scores[learner].append(reward)
    fitness = {i: float(np.mean(s)) for i, s in scores.items()}
    ranked = sorted(fitness, key=lambda i: fitness[i])
    worst, best = ranked[0], ranked[-1]
    replaced = None
    if worst != best:
        population[worst].adopt(population[best], rng)
        replaced = worst
    return {
        "pairings": pairings,
        "fitness": fitness,
        "best": best,
        "replaced": replaced,
        "hyperparams": [member.hyper for member in population],
        "timesteps": [member.timesteps for member in population],
    }


@dataclass
class PBTResult:
    population: list
    history: list
    config: PBTConfig

    def best_member(self) -> PBTMember:
        if not self.history:
            return self.population[0]
        return self.population[self.history[-1]["best"]]


def train_pbt(env: KitchenEnv, config: PBTConfig, seed: int = 0,
              progress: Optional[Callable[[dict], None]] = None
              ) -> PBTResult:
    """Run PBT until every member has consumed its env-step budget.

    Each PBT iteration gives every member population_size - 1 learning
    stints of iteration_timesteps env steps.
    """
    rng = np.random.default_rng(seed)
    population = [
        PBTMember(i, env, config, seed=int(rng.integers(2 ** 63)))
        for i in range(config.population_size)]
    per_iteration = (config.population_size - 1) * config.iteration_timesteps
    iterations = max(1, config.env_steps_per_agent // per_iteration)
    history: list = []
    for iteration in range(iterations):
        record = pbt_iteration(population, env, config, rng)
        record["iteration"] = iteration
        record["population"] = population
        history.append(record)
        if progress is not None:
            progress(record)
    return PBTResult(population=population, history=history, config=config)
