import numpy as np
import pytest
from hypothesis import given, strategies as st

from coopkitchen.agents import RandomAgent
from coopkitchen.bc import (
    BC_CONFIGS,
    BCAgent,
    BCConfig,
    BCModel,
    EmptyDataset,
    NonFiniteLoss,
    NoValidPair,
    StuckTracker,
    bc_act,
    select_model_pair,
    train_bc,
)
from coopkitchen.encodings import FEATURE_DIM, featurize
from coopkitchen.env import Action, KitchenEnv
from coopkitchen.layouts import load_layout
from coopkitchen.planning import CPAgent, JointPlanner
from coopkitchen.trajectories import (
    SingleAgentDataset,
    build_dataset,
    record_rollout,
)


def make_dataset(features, labels, layout, val_count=0):
    n = len(labels)
    entries = [(None, 0, Action(int(labels[i]))) for i in range(n)]
    return SingleAgentDataset(
        layout=layout,
        entries=entries,
        features=np.asarray(features, dtype=np.float64),
        labels=np.asarray(labels, dtype=np.int64),
        train_indices=np.arange(n - val_count),
        val_indices=np.arange(n - val_count, n),
    )


@pytest.fixture(scope="module")
def cp_clone():
    """BC model trained on 5k coupled-planning demonstration pairs."""
    env = KitchenEnv(load_layout("cramped_room"))
    agents = [CPAgent(JointPlanner(env)), CPAgent(JointPlanner(env))]
    trajectory = record_rollout(env, agents, 2500, seed=0)
    dataset = build_dataset([trajectory], seed=0)
    result = train_bc(dataset, BC_CONFIGS["cramped_room"])
    return result, dataset


def test_table_configs():
    assert BC_CONFIGS["cramped_room"].epochs == 100
    assert BC_CONFIGS["forced_coordination"].epochs == 90
    for config in BC_CONFIGS.values():
        assert config.learning_rate == 1e-3
        assert config.adam_epsilon == 1e-8


def test_distribution_normalized():
    model = BCModel()
    rng = np.random.default_rng(0)
    single = model.distribution(rng.normal(size=FEATURE_DIM))
    assert single.shape == (6,)
    assert abs(single.sum() - 1.0) < 1e-6
    batch = model.distribution(rng.normal(size=(9, FEATURE_DIM)))
    assert batch.shape == (9, 6)
    assert np.allclose(batch.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(batch >= 0)


def test_empty_dataset_raises():
    layout = load_layout("cramped_room")
    dataset = make_dataset(np.zeros((0, FEATURE_DIM)), np.zeros(0), layout)
    with pytest.raises(EmptyDataset):
        train_bc(dataset)


def test_non_finite_loss_raises():
    layout = load_layout("cramped_room")
    features = np.full((8, FEATURE_DIM), np.nan)
    dataset = make_dataset(features, np.zeros(8), layout)
    with pytest.raises(NonFiniteLoss):
        train_bc(dataset, BCConfig(epochs=1))


def test_degenerate_fit_predicts_up():
    layout = load_layout("cramped_room")
    env = KitchenEnv(layout)
    row = featurize(env.reset(), layout, 0)
    features = np.tile(row, (64, 1))
    labels = np.full(64, int(Action.UP))
    dataset = make_dataset(features, labels, layout)
    result = train_bc(dataset, BCConfig(epochs=100))
    probs = result.model.distribution(row)
    assert probs[Action.UP] > 0.99


def test_loss_history_and_best_snapshot():
    layout = load_layout("cramped_room")
    rng = np.random.default_rng(1)
    features = rng.normal(size=(120, FEATURE_DIM))
    labels = rng.integers(0, 6, size=120)
    dataset = make_dataset(features, labels, layout, val_count=20)
    result = train_bc(dataset, BCConfig(epochs=12, seed=2))
    assert len(result.train_losses) == 12
    assert len(result.val_losses) == 12
    assert result.best_val_loss == min(result.val_losses)
    assert result.val_losses[result.best_epoch] == result.best_val_loss
    best = result.best_model()
    loss_terms = best.net.forward(dataset.val_features)
    from coopkitchen.nets import cross_entropy
    loss, _ = cross_entropy(loss_terms, dataset.val_labels)
    assert loss == pytest.approx(result.best_val_loss, abs=1e-9)


def test_cp_demonstrator_oracle(cp_clone):
    result, dataset = cp_clone
    logits = result.model.net.forward(dataset.val_features)
    accuracy = (np.argmax(logits, axis=1) == dataset.val_labels).mean()
    assert accuracy >= 0.9
    assert result.val_losses[-1] < np.log(6)
    assert result.best_val_loss <= np.log(6)


def test_training_deterministic():
    layout = load_layout("cramped_room")
    rng = np.random.default_rng(3)
    features = rng.normal(size=(80, FEATURE_DIM))
    labels = rng.integers(0, 6, size=80)
    dataset = make_dataset(features, labels, layout, val_count=10)
    one = train_bc(dataset, BCConfig(epochs=5, seed=9))
    two = train_bc(dataset, BCConfig(epochs=5, seed=9))
    assert np.array_equal(one.model.net.store.flat, two.model.net.store.flat)
    assert one.train_losses == two.train_losses


def test_save_load_round_trip(tmp_path):
    model = BCModel(config=BCConfig(epochs=42, seed=7))
    path = str(tmp_path / "bc.npz")
    model.save(path)
    loaded = BCModel.load(path)
    assert loaded.config == model.config
    x = np.random.default_rng(0).normal(size=(4, FEATURE_DIM))
    assert np.array_equal(loaded.distribution(x), model.distribution(x))


# -- stuck rule --------------------------------------------------------------


def test_stuck_tracker_fires_on_exactly_three():
    tracker = StuckTracker()
    p, q = (1, 1), (2, 1)
    tracker.update(p)
    assert not tracker.is_stuck()
    tracker.update(p)
    assert not tracker.is_stuck()
    tracker.update(p)
    assert tracker.is_stuck()
    tracker.update(q)
    assert not tracker.is_stuck()
    tracker.reset()
    assert tracker.positions == ()


def test_stuck_tracker_alternation_not_stuck():
    tracker = StuckTracker()
    for pos in [(1, 1), (2, 1), (1, 1)]:
        tracker.update(pos)
    assert not tracker.is_stuck()


@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), max_size=12))
def test_stuck_tracker_matches_definition(positions):
    tracker = StuckTracker()
    for pos in positions:
        tracker.update(pos)
    expected = len(positions) >= 3 and len(set(positions[-3:])) == 1
    assert tracker.is_stuck() == expected


def test_bc_act_uniform_when_stuck():
    layout = load_layout("cramped_room")
    env = KitchenEnv(layout)
    state = env.reset()
    pos = state.players[0].position
    tracker = StuckTracker()
    for _ in range(3):
        tracker.update(pos)
    model = BCModel()
    rng = np.random.default_rng(0)
    draws = [bc_act(model, state, layout, 0, tracker, rng)
             for _ in range(1200)]
    counts = np.bincount([int(a) for a in draws], minlength=6)
    assert set(draws) == set(Action)
    assert np.all(counts / 1200 > 0.10) and np.all(counts / 1200 < 0.24)


def test_bc_act_uniform_overrides_peaked_model():
    layout = load_layout("cramped_room")
    env = KitchenEnv(layout)
    state = env.reset()
    row = featurize(state, layout, 0)
    dataset = make_dataset(np.tile(row, (64, 1)),
                           np.full(64, int(Action.UP)), layout)
    model = train_bc(dataset, BCConfig(epochs=100)).model
    tracker = StuckTracker()
    for _ in range(3):
        tracker.update(state.players[0].position)
    rng = np.random.default_rng(1)
    draws = {bc_act(model, state, layout, 0, tracker, rng)
             for _ in range(60)}
    assert draws != {Action.UP}


def test_bc_act_seeded_reproducible():
    layout = load_layout("cramped_room")
    env = KitchenEnv(layout)
    state = env.reset()
    model = BCModel()
    tracker = StuckTracker()
    tracker.update((1, 1))
    first = [bc_act(model, state, layout, 0, tracker,
                    np.random.default_rng(5)) for _ in range(3)]
    assert first[0] == first[1] == first[2]


def test_bc_agent_rollout_and_reset(cp_clone):
    result, _ = cp_clone
    env = KitchenEnv(load_layout("cramped_room"))
    agent = BCAgent(result.model, env)
    partner = RandomAgent()
    rng = np.random.default_rng(0)
    state = env.reset()
    for _ in range(50):
        probs = agent.action_probabilities(state, 0)
        assert abs(probs.sum() - 1.0) < 1e-6
        joint = (agent.act(state, 0, rng), partner.act(state, 1, rng))
        state = env.step(state, joint).state
    assert agent._trackers[0].positions != ()
    agent.reset()
    assert agent._trackers[0].positions == ()


# -- model pair selection ------------------------------------------------------


class Candidate:
    def __init__(self, reward):
        self.reward = reward


def test_select_pair_spec_example():
    bcs = [Candidate(40), Candidate(60)]
    proxies = [Candidate(50), Candidate(70)]
    picked = select_model_pair(bcs, proxies, lambda c: c.reward)
    assert (picked.bc_reward, picked.proxy_reward) == (60, 70)
    assert picked.bc is bcs[1] and picked.proxy is proxies[1]
    assert not picked.fallback


def test_select_pair_single_candidates_ordered():
    picked = select_model_pair([Candidate(30)], [Candidate(45)],
                               lambda c: c.reward)
    assert not picked.fallback
    assert (picked.bc_reward, picked.proxy_reward) == (30, 45)


def test_select_pair_single_candidates_misordered_warns():
    with pytest.warns(NoValidPair):
        picked = select_model_pair([Candidate(50)], [Candidate(45)],
                                   lambda c: c.reward)
    assert picked.fallback
    assert (picked.bc_reward, picked.proxy_reward) == (50, 45)


def test_select_pair_fallback_best_rewards():
    bcs = [Candidate(90), Candidate(95)]
    proxies = [Candidate(10), Candidate(20)]
    with pytest.warns(NoValidPair):
        picked = select_model_pair(bcs, proxies, lambda c: c.reward)
    assert picked.bc is bcs[1] and picked.proxy is proxies[1]


def test_select_pair_deterministic():
    bcs = [Candidate(40), Candidate(40)]
    proxies = [Candidate(40), Candidate(40)]
    one = select_model_pair(bcs, proxies, lambda c: c.reward)
    two = select_model_pair(bcs, proxies, lambda c: c.reward)
    assert one.bc is two.bc and one.proxy is two.proxy
    assert one.bc is bcs[0] and one.proxy is proxies[0]
