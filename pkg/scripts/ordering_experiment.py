"""Desk-scale partner-ordering experiment.

Trains, per seed, a self-play PPO policy and a partnered PPO policy (same
hyperparameters, partner annealed from self to the scripted dish cook), then
scores three pairings at horizon 100: self-play with itself, self-play with
the proxy, partnered with the proxy. The headline orderings are

    partnered + proxy > self-play + proxy
    self-play + self  > self-play + proxy

counted per seed. Writes one CSV row per (seed, pairing) and prints the
verdicts. Regenerate the shipped numbers with:

    python scripts/ordering_experiment.py --out runs/ordering.csv
"""

import argparse
import csv
import sys
import time

from coopkitchen.agents import ScriptedCookAgent
from coopkitchen.env import KitchenEnv
from coopkitchen.evaluation import AgentSpec, run_pairing
from coopkitchen.layouts import load_layout
from coopkitchen.motion import get_library
from coopkitchen.ppo import PPOAgent, PPOConfig, train_selfplay, train_with_partner

PAIRINGS = ("sp_self", "sp_proxy", "partnered_proxy")


def arm_config(steps: int, window=None) -> PPOConfig:
    return PPOConfig(total_timesteps=steps, learning_rate=1e-3, gamma=0.95,
                     gae_lambda=0.9, entropy_coef=0.03, minibatch_count=10,
                     minibatch_size=300, n_envs=30, episode_horizon=150,
                     shaping_horizon=1e9, selfplay_window=window)


def run_seed(env: KitchenEnv, steps: int, seed: int,
             episodes: int, eval_seeds: int) -> dict:
    lib = get_library(env.layout)
    sp = train_selfplay(env, arm_config(steps), seed=seed)
    partnered = train_with_partner(
        env, lambda: ScriptedCookAgent(env, role="dish", library=lib),
        arm_config(steps, window=(0.0, steps / 2)), seed=seed)

    sp_spec = AgentSpec("object", PPOAgent(sp.policy, env))
    pa_spec = AgentSpec("object", PPOAgent(partnered.policy, env))
    proxy = AgentSpec("scripted", "dish")
    sides = {"sp_self": (sp_spec, sp_spec), "sp_proxy": (sp_spec, proxy),
             "partnered_proxy": (pa_spec, proxy)}
    scores = {}
    for label, (a, b) in sides.items():
        pairing = run_pairing(a, b, env.layout, horizon=100,
                              episodes=episodes, seeds=eval_seeds, env=env)
        scores[label] = (pairing.mean_reward
                         + pairing.switched.mean_reward) / 2.0
    return scores


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="partner-ordering experiment on the micro layout")
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--steps", type=int, default=300_000)
    parser.add_argument("--episodes", type=int, default=30)
    parser.add_argument("--eval-seeds", type=int, default=3)
    parser.add_argument("--layout", default="micro")
    parser.add_argument("--cook-time", type=int, default=2)
    parser.add_argument("--out", help="CSV path (default: stdout)")
    args = parser.parse_args(argv)

    env = KitchenEnv(load_layout(args.layout), cook_time=args.cook_time)
    rows = []
    ordering_partnered = 0
    ordering_selfplay = 0
    t0 = time.time()
    for seed in range(args.seeds):
        scores = run_seed(env, args.steps, seed, args.episodes,
                          args.eval_seeds)
        ordering_partnered += scores["partnered_proxy"] > scores["sp_proxy"]
        ordering_selfplay += scores["sp_self"] > scores["sp_proxy"]
        for label in PAIRINGS:
            rows.append({"seed": seed, "pairing": label,
                         "mean_reward": round(scores[label], 2)})
        print(f"seed {seed}: " + "  ".join(
            f"{label} {scores[label]:.1f}" for label in PAIRINGS), flush=True)

    handle = open(args.out, "w", newline="") if args.out else sys.stdout
    writer = csv.DictWriter(handle, fieldnames=["seed", "pairing",
                                                "mean_reward"])
    writer.writeheader()
    writer.writerows(rows)
    if args.out:
        handle.close()

    print(f"partnered+proxy > sp+proxy in {ordering_partnered}/{args.seeds} "
          f"seeds; sp+self > sp+proxy in {ordering_selfplay}/{args.seeds} "
          f"seeds; wall time {(time.time() - t0) / 60:.1f} min")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
