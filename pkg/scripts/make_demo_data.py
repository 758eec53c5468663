"""Generate demonstration trajectories for the imitation pipeline.

Rolls demonstrator pairs (scripted role cooks or coupled planners) on a
layout and writes certified trajectory files that `coopkitchen data` and
`coopkitchen bc` consume. Example:

    python scripts/make_demo_data.py --layout cramped_room --demonstrator cp \
        --pairs 8 --horizon 400 --out-dir data/cramped_room
"""

import argparse
import os

from coopkitchen.agents import ScriptedCookAgent
from coopkitchen.env import KitchenEnv
from coopkitchen.layouts import load_layout
from coopkitchen.motion import get_library
from coopkitchen.planning import CPAgent, JointPlanner
from coopkitchen.trajectories import record_rollout, save


def build_pair(env: KitchenEnv, kind: str, sluggishness: float):
    if kind == "cp":
        return (CPAgent(JointPlanner(env)), CPAgent(JointPlanner(env)))
    lib = get_library(env.layout)
    dish = ScriptedCookAgent(env, role="dish", sluggishness=sluggishness,
                             library=lib)
    onion = ScriptedCookAgent(env, role="onion", sluggishness=sluggishness,
                              library=lib)
    return (dish, onion)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="demonstration data builder")
    parser.add_argument("--layout", default="cramped_room")
    parser.add_argument("--demonstrator", choices=("scripted", "cp"),
                        default="scripted")
    parser.add_argument("--pairs", type=int, default=8)
    parser.add_argument("--horizon", type=int, default=400)
    parser.add_argument("--cook-time", type=int)
    parser.add_argument("--sluggishness", type=float, default=0.2)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out-dir", required=True)
    args = parser.parse_args(argv)

    layout = load_layout(args.layout)
    env = (KitchenEnv(layout, cook_time=args.cook_time)
           if args.cook_time else KitchenEnv(layout))
    os.makedirs(args.out_dir, exist_ok=True)
    for i in range(args.pairs):
        agents = build_pair(env, args.demonstrator, args.sluggishness)
        if i % 2:
            agents = (agents[1], agents[0])   # both seat orders in the data
        trajectory = record_rollout(
            env, agents, args.horizon, seed=args.seed + i,
            metadata={"source": f"demo-{args.demonstrator}"})
        path = os.path.join(args.out_dir, f"{layout.name}_{i:04d}.traj")
        save(trajectory, path)
        reward = sum(s.reward for s in trajectory.steps)
        print(f"{path}: reward {reward}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
