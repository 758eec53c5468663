"""Command line entry point: every workflow in the package behind one
``coopkitchen`` command.

Subcommands mirror the module layout: ``layout`` (validate), ``data``
(filter/split/stats), ``bc`` (train/eval/select), ``rl``
(train-sp/train-partnered/train-pbt), ``plan`` (precompute/joint/partner),
``eval`` (pairing/predict), plus ``rollout``, ``serve``, and ``replay``.

Exit codes: 0 success, 1 runtime failure (the module error is printed to
stderr), 2 usage error. All randomness flows from ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import glob
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import trajectories
from .agents import ScriptedCookAgent
from .bc import BC_CONFIGS, BCAgent, BCConfig, BCModel, select_model_pair, train_bc
from .env import KitchenEnv, ascii_render
from .evaluation import (AgentSpec, pairing_matrix, prediction_metrics,
                         resolve_agent, run_pairing, write_rows_csv)
from .layouts import LAYOUTS_DIR_ENV, LayoutError, load_layout, validate_layout
from .motion import get_library, load_library, precompute, save_library
from .partner_planning import PartnerAwareAgent
from .pbt import PBT_CONFIGS, PBTConfig, train_pbt
from .planning import JointPlanner
from .ppo import (PPO_PARTNERED_CONFIGS, PPO_SP_CONFIGS, PPOConfig,
                  train_selfplay, train_with_partner)
from .trajectories import build_dataset, load, save, split_trajectories


def _load_config_file(path: str) -> dict:
    """YAML (or JSON, a YAML subset) mapping of config field names."""
    import yaml

    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping of config fields")
    return data


def _coerce_fields(cls, data: dict) -> dict:
    """Cast loaded values to the dataclass field types. YAML 1.1 reads
    unsigned-exponent floats like ``2.5e6`` as strings; tolerate that."""
    import dataclasses

    types = {f.name: f.type for f in dataclasses.fields(cls)}
    unknown = set(data) - set(types)
    if unknown:
        raise ValueError(f"unknown config fields {sorted(unknown)}")
    coerced = {}
    for key, value in data.items():
        declared = str(types[key])
        if value is None or key == "selfplay_window":
            coerced[key] = value
        elif declared.startswith("int"):
            coerced[key] = int(value)
        elif declared.startswith("float"):
            coerced[key] = float(value)
        else:
            coerced[key] = value
    return coerced


def _trajectory_paths(inputs: Sequence[str]) -> list[str]:
    """Expand directories to their sorted ``*.traj`` files."""
    paths: list[str] = []
    for item in inputs:
        if os.path.isdir(item):
            paths.extend(sorted(glob.glob(os.path.join(item, "*.traj"))))
        else:
            paths.append(item)
    if not paths:
        raise ValueError("no trajectory files found")
    return paths


def _load_trajectories(inputs: Sequence[str]) -> list:
    return [load(path) for path in _trajectory_paths(inputs)]


def _write_curve(path: str, records: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(records[0]))
        writer.writeheader()
        writer.writerows(records)


def _env(args) -> KitchenEnv:
    layout = load_layout(args.layout)
    cook_time = getattr(args, "cook_time", None)
    return KitchenEnv(layout) if cook_time is None \
        else KitchenEnv(layout, cook_time=cook_time)


# -- layout -----------------------------------------------------------------


def cmd_layout_validate(args) -> int:
    try:
        layout = load_layout(args.file)
    except LayoutError as exc:
        print(f"{args.file}: {exc}")
        return 1
    violations = validate_layout(layout)
    for violation in violations:
        print(violation)
    if violations:
        return 1
    print(f"{layout.name}: ok")
    return 0


# -- data -------------------------------------------------------------------


def cmd_data_filter(args) -> int:
    loaded = _load_trajectories(args.files)
    on_layout = [t for t in loaded if t.layout.name == args.layout]
    kept = trajectories.filter_human_data(on_layout, args.layout)
    os.makedirs(args.out, exist_ok=True)
    for index, trajectory in enumerate(kept):
        save(trajectory, os.path.join(args.out, f"{args.layout}_{index:04d}.traj"))
    print(f"kept {len(kept)} of {len(loaded)} trajectories -> {args.out}")
    return 0


def cmd_data_split(args) -> int:
    loaded = _load_trajectories(args.files)
    first, second = split_trajectories(loaded, args.seed)
    for group, out_dir in ((first, args.out_a), (second, args.out_b)):
        os.makedirs(out_dir, exist_ok=True)
        for index, trajectory in enumerate(group):
            save(trajectory, os.path.join(out_dir, f"{index:04d}.traj"))
    print(f"split {len(loaded)} -> {len(first)} in {args.out_a}, "
          f"{len(second)} in {args.out_b}")
    return 0


def cmd_data_stats(args) -> int:
    loaded = _load_trajectories(args.files)
    by_layout: dict = {}
    for trajectory in loaded:
        by_layout.setdefault(trajectory.layout.name, []).append(trajectory)
    writer = csv.writer(sys.stdout)
    writer.writerow(["layout", "trajectories", "steps", "mean_reward",
                     "sources"])
    for name in sorted(by_layout):
        group = by_layout[name]
        sources = sorted({t.metadata.get("source", "?") for t in group})
        writer.writerow([
            name, len(group), sum(t.length for t in group),
            f"{np.mean([t.total_reward for t in group]):.2f}",
            "|".join(sources)])
    return 0


# -- bc ---------------------------------------------------------------------


def _bc_config(args, layout_name: Optional[str]) -> BCConfig:
    base = BC_CONFIGS.get(layout_name or "", BCConfig())
    return BCConfig(
        learning_rate=args.lr if args.lr is not None else base.learning_rate,
        epochs=args.epochs if args.epochs is not None else base.epochs,
        batch_size=args.batch_size or base.batch_size,
        seed=args.seed)


def cmd_bc_train(args) -> int:
    loaded = _load_trajectories(args.data)
    dataset = build_dataset(loaded, seed=args.seed,
                            val_fraction=args.val_fraction)
    config = _bc_config(args, loaded[0].layout.name)
    result = train_bc(dataset, config)
    result.best_model().save(args.out)
    if args.curve:
        _write_curve(args.curve, [
            {"epoch": i, "train_loss": tr, "val_loss": va}
            for i, (tr, va) in enumerate(
                zip(result.train_losses, result.val_losses))])
    print(f"trained on {len(dataset.train_labels)} samples; best epoch "
          f"{result.best_epoch} val loss {result.best_val_loss:.4f} "
          f"-> {args.out}")
    return 0


def cmd_bc_eval(args) -> int:
    model = BCModel.load(args.model)
    loaded = _load_trajectories(args.data)
    dataset = build_dataset(loaded, seed=args.seed,
                            val_fraction=args.val_fraction)
    features, labels = dataset.val_features, dataset.val_labels
    if len(labels) == 0:
        features, labels = dataset.train_features, dataset.train_labels
    probs = model.distribution(features)
    logp = np.log(np.maximum(probs[np.arange(len(labels)), labels], 1e-12))
    accuracy = float(np.mean(np.argmax(probs, axis=1) == labels))
    print(f"cross_entropy {-float(np.mean(logp)):.4f} accuracy "
          f"{accuracy:.4f} samples {len(labels)}")
    return 0


def cmd_bc_select(args) -> int:
    env = _env(args)
    candidates_bc = [BCModel.load(path) for path in args.bc]
    candidates_proxy = [BCModel.load(path) for path in args.proxy]

    def eval_rollouts(model: BCModel) -> float:
        agent = AgentSpec("object", BCAgent(model, env))
        result = run_pairing(agent, agent, env.layout, horizon=args.horizon,
                             episodes=args.episodes, seeds=args.seeds,
                             base_seed=args.seed, env=env,
                             include_switched=False)
        return result.mean_reward

    selected = select_model_pair(candidates_bc, candidates_proxy,
                                 eval_rollouts)
    bc_path = args.bc[candidates_bc.index(selected.bc)]
    proxy_path = args.proxy[candidates_proxy.index(selected.proxy)]
    print(f"bc {bc_path} reward {selected.bc_reward:.2f}")
    print(f"proxy {proxy_path} reward {selected.proxy_reward:.2f}")
    if selected.fallback:
        print("fallback: no proxy reached the cloned model's reward")
    return 0


# -- rl ---------------------------------------------------------------------


def _ppo_config(args, table: dict) -> PPOConfig:
    if args.config:
        fields = _coerce_fields(PPOConfig, _load_config_file(args.config))
        if fields.get("selfplay_window"):
            fields["selfplay_window"] = tuple(
                float(v) for v in fields["selfplay_window"])
        config = PPOConfig(**fields)
    elif args.layout in table:
        config = table[args.layout]
    else:
        raise ValueError(
            f"no preset for layout {args.layout!r}; pass --config")
    if args.steps is not None:
        from dataclasses import replace
        config = replace(config, total_timesteps=args.steps)
    return config


def _train_progress(record: dict) -> None:
    print(f"update {record['update']} t {record['timesteps']} "
          f"sparse {record['mean_sparse_return']:.2f} "
          f"shaped {record['mean_shaped_return']:.2f}", flush=True)


def cmd_rl_train_sp(args) -> int:
    env = _env(args)
    config = _ppo_config(args, PPO_SP_CONFIGS)
    result = train_selfplay(env, config, seed=args.seed,
                            progress=_train_progress if args.verbose else None)
    result.save(args.out)
    if args.curve:
        _write_curve(args.curve, result.curve)
    print(f"trained {config.total_timesteps} steps -> {args.out}")
    return 0


def cmd_rl_train_partnered(args) -> int:
    env = _env(args)
    config = _ppo_config(args, PPO_PARTNERED_CONFIGS)
    spec = AgentSpec.parse(args.partner)

    def partner_factory():
        return resolve_agent(spec, env, 1)

    result = train_with_partner(env, partner_factory, config, seed=args.seed,
                                progress=_train_progress if args.verbose
                                else None)
    result.save(args.out)
    if args.curve:
        _write_curve(args.curve, result.curve)
    print(f"trained {config.total_timesteps} steps with {spec.label()} "
          f"-> {args.out}")
    return 0


def cmd_rl_train_pbt(args) -> int:
    env = _env(args)
    if args.config:
        fields = _coerce_fields(PBTConfig, _load_config_file(args.config))
        if isinstance(fields.get("initial"), dict):
            from .pbt import MutableHyperparams
            fields["initial"] = MutableHyperparams(
                **_coerce_fields(MutableHyperparams, fields["initial"]))
        config = PBTConfig(**fields)
    elif args.layout in PBT_CONFIGS:
        config = PBT_CONFIGS[args.layout]
    else:
        raise ValueError(
            f"no preset for layout {args.layout!r}; pass --config")
    os.makedirs(args.out_dir, exist_ok=True)

    def snapshot(record: dict) -> None:
        iteration = record["iteration"]
        for member in record["population"]:
            member.save(os.path.join(
                args.out_dir, f"iter{iteration:03d}_member{member.index}.npz"))
        print(f"iteration {iteration} fitness "
              f"{[round(v, 2) for v in record['fitness'].values()]} "
              f"replaced {record['replaced']}", flush=True)

    result = train_pbt(env, config, seed=args.seed, progress=snapshot)
    best_path = os.path.join(args.out_dir, "best.npz")
    result.best_member().save(best_path)
    print(f"{len(result.history)} iterations -> {best_path}")
    return 0


# -- plan -------------------------------------------------------------------


def cmd_plan_precompute(args) -> int:
    layout = load_layout(args.layout)
    library = precompute(layout)
    path = args.out or f"{layout.name}.motion"
    save_library(library, path)
    print(f"{len(library.single_dist)} single-agent entries -> {path}")
    return 0


def cmd_plan_joint(args) -> int:
    env = _env(args)
    library = load_library(args.library, env.layout) if args.library \
        else get_library(env.layout)
    planner = JointPlanner(env, lookahead_deliveries=args.lookahead,
                           library=library)
    state = env.reset()
    plan = planner.plan(state)
    for step, joint in enumerate(plan.low_level):
        print(f"{step:3d} {joint[0].name:<8} {joint[1].name}")
    replayed = 0
    for joint in plan.low_level:
        result = env.step(state, joint)
        state, replayed = result.state, replayed + result.reward
    print(f"deliveries {plan.deliveries} cost {plan.cost} "
          f"replayed_reward {replayed}")
    return 0


def cmd_plan_partner(args) -> int:
    env = _env(args)
    partner_spec = AgentSpec.parse(args.partner)
    partner = resolve_agent(partner_spec, env, 1)
    agent = PartnerAwareAgent(env, partner, self_index=0)
    pair = AgentSpec("object", agent), AgentSpec("object", partner)
    result = run_pairing(*pair, env.layout, horizon=args.horizon,
                         episodes=args.episodes, seeds=args.seeds,
                         base_seed=args.seed, env=env,
                         include_switched=False)
    print(f"mean_reward {result.mean_reward:.2f} stderr {result.stderr:.2f} "
          f"scale x{args.scale:g}")
    print(f"scaled_reward {result.mean_reward * args.scale / result.scale:.2f}")
    return 0


# -- eval ---------------------------------------------------------------------


def _matrix_row_job(payload: tuple) -> list:
    agents, layouts, proxy, gold, horizon, episodes, seeds, base_seed = payload
    return pairing_matrix(agents, layouts, proxy=proxy, gold=gold,
                          horizon=horizon, episodes=episodes, seeds=seeds,
                          base_seed=base_seed)


def cmd_eval_pairing(args) -> int:
    agents = [AgentSpec.parse(item) for item in args.agents]
    proxy = AgentSpec.parse(args.proxy)
    gold = AgentSpec.parse(args.gold) if args.gold else None
    layouts = args.layouts
    if args.jobs > 1 and len(layouts) > 1:
        from concurrent.futures import ProcessPoolExecutor

        jobs = [(agents, [name], proxy, gold, args.horizon, args.episodes,
                 args.seeds, args.seed) for name in layouts]
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = [row for chunk in pool.map(_matrix_row_job, jobs)
                    for row in chunk]
    else:
        rows = pairing_matrix(agents, layouts, proxy=proxy, gold=gold,
                              horizon=args.horizon, episodes=args.episodes,
                              seeds=args.seeds, base_seed=args.seed)
    if args.out:
        write_rows_csv(rows, args.out)
        print(f"{len(rows)} rows -> {args.out}")
    else:
        writer = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    return 0


def cmd_eval_predict(args) -> int:
    spec = AgentSpec.parse(args.model)
    loaded = _load_trajectories(args.data)
    cross_entropy, accuracy = prediction_metrics(
        spec, loaded, epsilon=args.epsilon, player_index=args.seat)
    print(f"cross_entropy {cross_entropy:.4f} accuracy {accuracy:.4f}")
    return 0


# -- rollout / serve / replay -------------------------------------------------


def cmd_rollout(args) -> int:
    env = _env(args)
    agents = [resolve_agent(AgentSpec.parse(item), env, seat)
              for seat, item in enumerate((args.a, args.b))]
    trajectory = trajectories.record_rollout(
        env, agents, horizon=args.horizon, seed=args.seed)
    print(f"episode_reward {trajectory.total_reward}")
    if args.save:
        save(trajectory, args.save)
        print(f"saved -> {args.save}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    if args.layouts_dir:
        os.environ[LAYOUTS_DIR_ENV] = args.layouts_dir
    app = create_app(trajectory_dir=args.trajectory_dir,
                     default_seed=args.seed)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_replay(args) -> int:
    trajectory = load(args.file)
    if args.ascii:
        env = trajectory.env()
        for step in trajectory.steps:
            print(ascii_render(trajectory.layout, step.state,
                               cook_time=env.cook_time))
            print(f"t={step.state.timestep} actions "
                  f"{step.joint_action[0].name}/{step.joint_action[1].name} "
                  f"reward {step.reward}")
        print(ascii_render(trajectory.layout, trajectory.final_state,
                           cook_time=env.cook_time))
    print(f"layout {trajectory.layout.name} steps {trajectory.length} "
          f"total_reward {trajectory.total_reward} certified ok")
    return 0


# -- parser -------------------------------------------------------------------


def _add_seed(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0,
                        help="base seed for all randomness")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coopkitchen",
        description="two-player cooking coordination: environment, planners, "
                    "learning, evaluation, live play")
    tree = parser.add_subparsers(dest="group", required=True)

    layout = tree.add_parser("layout", help="layout file tools")
    layout_sub = layout.add_subparsers(dest="command", required=True)
    validate = layout_sub.add_parser("validate",
                                     help="print violations; exit 0 iff none")
    validate.add_argument("file")
    validate.set_defaults(func=cmd_layout_validate)

    data = tree.add_parser("data", help="trajectory dataset tools")
    data_sub = data.add_subparsers(dest="command", required=True)
    data_filter = data_sub.add_parser(
        "filter", help="keep qualifying trajectories for one layout")
    data_filter.add_argument("files", nargs="+")
    data_filter.add_argument("--layout", required=True)
    data_filter.add_argument("--out", required=True)
    data_filter.set_defaults(func=cmd_data_filter)
    data_split = data_sub.add_parser(
        "split", help="disjoint random halves for model/proxy training")
    data_split.add_argument("files", nargs="+")
    data_split.add_argument("--out-a", required=True)
    data_split.add_argument("--out-b", required=True)
    _add_seed(data_split)
    data_split.set_defaults(func=cmd_data_split)
    data_stats = data_sub.add_parser("stats",
                                     help="per-layout dataset summary CSV")
    data_stats.add_argument("files", nargs="+")
    data_stats.set_defaults(func=cmd_data_stats)

    bc = tree.add_parser("bc", help="behavior cloning")
    bc_sub = bc.add_subparsers(dest="command", required=True)
    bc_train = bc_sub.add_parser("train", help="clone a policy from data")
    bc_train.add_argument("--data", nargs="+", required=True)
    bc_train.add_argument("--out", required=True)
    bc_train.add_argument("--epochs", type=int)
    bc_train.add_argument("--lr", type=float)
    bc_train.add_argument("--batch-size", type=int)
    bc_train.add_argument("--val-fraction", type=float, default=0.15)
    bc_train.add_argument("--curve", help="per-epoch loss CSV path")
    _add_seed(bc_train)
    bc_train.set_defaults(func=cmd_bc_train)
    bc_eval = bc_sub.add_parser("eval",
                                help="held-out loss/accuracy of a model")
    bc_eval.add_argument("--model", required=True)
    bc_eval.add_argument("--data", nargs="+", required=True)
    bc_eval.add_argument("--val-fraction", type=float, default=0.15)
    _add_seed(bc_eval)
    bc_eval.set_defaults(func=cmd_bc_eval)
    bc_select = bc_sub.add_parser(
        "select", help="pick a model/proxy pair by self-play reward")
    bc_select.add_argument("--layout", required=True)
    bc_select.add_argument("--bc", nargs="+", required=True)
    bc_select.add_argument("--proxy", nargs="+", required=True)
    bc_select.add_argument("--cook-time", type=int)
    bc_select.add_argument("--horizon", type=int, default=400)
    bc_select.add_argument("--episodes", type=int, default=10)
    bc_select.add_argument("--seeds", type=int, default=1)
    _add_seed(bc_select)
    bc_select.set_defaults(func=cmd_bc_select)

    rl = tree.add_parser("rl", help="reinforcement learning")
    rl_sub = rl.add_subparsers(dest="command", required=True)
    for name, func, extra in (
            ("train-sp", cmd_rl_train_sp, ()),
            ("train-partnered", cmd_rl_train_partnered, ("--partner",))):
        sub = rl_sub.add_parser(name)
        sub.add_argument("--layout", required=True)
        for flag in extra:
            sub.add_argument(flag, required=True,
                             help="partner agent spec, e.g. BC:model.npz")
        sub.add_argument("--config", help="YAML config file")
        sub.add_argument("--steps", type=int,
                         help="override total environment steps")
        sub.add_argument("--cook-time", type=int)
        sub.add_argument("--out", required=True)
        sub.add_argument("--curve", help="training curve CSV path")
        sub.add_argument("--verbose", action="store_true")
        _add_seed(sub)
        sub.set_defaults(func=func)
    rl_pbt = rl_sub.add_parser("train-pbt")
    rl_pbt.add_argument("--layout", required=True)
    rl_pbt.add_argument("--config", help="YAML config file")
    rl_pbt.add_argument("--cook-time", type=int)
    rl_pbt.add_argument("--out-dir", required=True,
                        help="per-iteration population snapshots land here")
    _add_seed(rl_pbt)
    rl_pbt.set_defaults(func=cmd_rl_train_pbt)

    plan = tree.add_parser("plan", help="search-based planners")
    plan_sub = plan.add_subparsers(dest="command", required=True)
    precompute_cmd = plan_sub.add_parser(
        "precompute", help="motion plan library cache for a layout")
    precompute_cmd.add_argument("layout")
    precompute_cmd.add_argument("--out")
    precompute_cmd.set_defaults(func=cmd_plan_precompute)
    plan_joint = plan_sub.add_parser("joint",
                                     help="joint plan from the start state")
    plan_joint.add_argument("layout")
    plan_joint.add_argument("--lookahead", type=int, default=2)
    plan_joint.add_argument("--cook-time", type=int)
    plan_joint.add_argument("--library", help="precomputed .motion cache")
    plan_joint.set_defaults(func=cmd_plan_joint)
    plan_partner = plan_sub.add_parser(
        "partner", help="partner-aware planning against a model")
    plan_partner.add_argument("layout")
    plan_partner.add_argument("--partner", required=True,
                              help="partner agent spec, e.g. BC:model.npz")
    plan_partner.add_argument("--horizon", type=int, default=100)
    plan_partner.add_argument("--scale", type=float, default=4.0)
    plan_partner.add_argument("--episodes", type=int, default=10)
    plan_partner.add_argument("--seeds", type=int, default=1)
    plan_partner.add_argument("--cook-time", type=int)
    _add_seed(plan_partner)
    plan_partner.set_defaults(func=cmd_plan_partner)

    evaluate = tree.add_parser("eval", help="pairing and prediction metrics")
    eval_sub = evaluate.add_subparsers(dest="command", required=True)
    pairing = eval_sub.add_parser("pairing",
                                  help="agent x layout pairing matrix CSV")
    pairing.add_argument("--agents", nargs="+", required=True,
                         help="agent specs kind[:model]")
    pairing.add_argument("--layouts", nargs="+", required=True)
    pairing.add_argument("--proxy", default="CP",
                         help="evaluation partner spec")
    pairing.add_argument("--gold", help="gold-standard agent spec")
    pairing.add_argument("--horizon", type=int, default=400)
    pairing.add_argument("--episodes", type=int, default=100)
    pairing.add_argument("--seeds", type=int, default=5)
    pairing.add_argument("--jobs", type=int, default=1,
                         help="parallel workers across layouts")
    pairing.add_argument("--out", help="CSV path (default: stdout)")
    _add_seed(pairing)
    pairing.set_defaults(func=cmd_eval_pairing)
    predict = eval_sub.add_parser(
        "predict", help="cross-entropy/accuracy of a model on data")
    predict.add_argument("--model", required=True, help="agent spec")
    predict.add_argument("--data", nargs="+", required=True)
    predict.add_argument("--epsilon", type=float, default=1e-3)
    predict.add_argument("--seat", type=int, choices=(0, 1))
    _add_seed(predict)
    predict.set_defaults(func=cmd_eval_predict)

    rollout = tree.add_parser("rollout", help="one evaluation episode")
    rollout.add_argument("--layout", required=True)
    rollout.add_argument("--a", required=True, help="seat 0 agent spec")
    rollout.add_argument("--b", required=True, help="seat 1 agent spec")
    rollout.add_argument("--horizon", type=int, default=400)
    rollout.add_argument("--cook-time", type=int)
    rollout.add_argument("--save", help="write the trajectory here")
    _add_seed(rollout)
    rollout.set_defaults(func=cmd_rollout)

    serve = tree.add_parser("serve", help="live play session server")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--layouts-dir",
                       help=f"overrides ${LAYOUTS_DIR_ENV}")
    serve.add_argument("--trajectory-dir", default="trajectories")
    _add_seed(serve)
    serve.set_defaults(func=cmd_serve)

    replay = tree.add_parser("replay",
                             help="certify and display a trajectory file")
    replay.add_argument("file")
    replay.add_argument("--ascii", action="store_true",
                        help="frame-by-frame grid rendering")
    replay.set_defaults(func=cmd_replay)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:   # surface module errors as exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
