import json

import numpy as np
import pytest

from coopkitchen.agents import NoopAgent
from coopkitchen.env import Action, KitchenEnv
from coopkitchen.evaluation import AgentSpec
from coopkitchen.layouts import load_layout
from coopkitchen.server import (DEFAULT_TICK_MS, GameSession,
                                IncompleteSession, InvalidSeatConfig,
                                SeatNotJoined, SessionFinished, create_app)
from coopkitchen.trajectories import load as load_trajectory


def make_session(**overrides):
    env = KitchenEnv(load_layout("micro"), cook_time=2)
    kwargs = dict(seats=("human", AgentSpec("scripted", "dish")),
                  tick_ms=10, horizon=30, seed=0)
    kwargs.update(overrides)
    return GameSession(env, **kwargs)


# -- session core ---------------------------------------------------------------


def test_session_waits_for_humans_then_runs():
    session = make_session()
    assert session.status == "waiting"
    with pytest.raises(SeatNotJoined):
        session.tick()
    session.join(0)
    assert session.status == "running"
    payload = session.tick()
    assert payload["timestep"] == 1
    assert payload["countdown"] == 29


def test_ai_only_session_runs_immediately():
    session = make_session(seats=(AgentSpec("noop"), AgentSpec("noop")))
    assert session.status == "running"
    assert session.human_seats == []
    session.tick()
    assert session.timestep == 1


def test_seat_config_validation():
    env = KitchenEnv(load_layout("micro"), cook_time=2)
    with pytest.raises(InvalidSeatConfig):
        GameSession(env, seats=("human",))
    with pytest.raises(InvalidSeatConfig):
        GameSession(env, seats=("human", AgentSpec("mystery")))
    with pytest.raises(InvalidSeatConfig):
        GameSession(env, seats=("human", "human"), tick_ms=0)
    with pytest.raises(InvalidSeatConfig):
        make_session().join(1)   # seat 1 is an agent


def test_default_action_is_noop():
    session = make_session(seats=("human", AgentSpec("noop")))
    session.join(0)
    start = session.state
    session.tick()   # no input submitted
    step = session.steps[0]
    assert step.joint_action == (Action.NOOP, Action.NOOP)
    assert step.state.players[0].position == start.players[0].position


def test_last_writer_wins_within_tick():
    session = make_session(seats=("human", AgentSpec("noop")))
    session.join(0)
    session.submit_action(0, Action.UP)
    session.submit_action(0, Action.LEFT)
    session.tick()
    assert session.steps[0].joint_action[0] == Action.LEFT
    # the pending slot is consumed: next tick defaults to Noop again
    session.tick()
    assert session.steps[1].joint_action[0] == Action.NOOP


def test_submit_requires_join_and_running():
    session = make_session(seats=("human", AgentSpec("noop")))
    with pytest.raises(SeatNotJoined):
        session.submit_action(0, Action.UP)
    with pytest.raises(InvalidSeatConfig):
        session.submit_action(1, Action.UP)
    session.join(0)
    session.submit_action(0, Action.UP)
    for _ in range(session.horizon):
        session.tick()
    assert session.status == "finished"
    with pytest.raises(SessionFinished):
        session.submit_action(0, Action.UP)
    with pytest.raises(SessionFinished):
        session.tick()


def test_exactly_one_step_per_tick_and_agent_seats_act():
    session = make_session(
        seats=(AgentSpec("scripted", "onion"), AgentSpec("scripted", "dish")))
    for expected in range(1, 11):
        session.tick()
        assert session.timestep == expected
    actions = {a for step in session.steps for a in step.joint_action}
    assert actions != {Action.NOOP}   # the scripted pair actually moves


def test_finalize_round_trip(tmp_path):
    session = make_session(
        seats=(AgentSpec("scripted", "onion"), AgentSpec("scripted", "dish")),
        horizon=40)
    with pytest.raises(IncompleteSession):
        session.trajectory()
    while session.status != "finished":
        session.tick()
    path = session.finalize(str(tmp_path))
    loaded = load_trajectory(path)   # load() re-certifies the replay
    assert loaded.length == 40
    assert loaded.metadata["source"] == "AI-AI"
    assert loaded.metadata["session"] == session.id
    assert loaded.total_reward == session.total_reward


def test_source_tags():
    assert make_session().source_tag() == "human-AI"
    assert make_session(seats=("human", "human")).source_tag() \
        == "human-human"
    assert make_session(
        seats=(AgentSpec("noop"), AgentSpec("noop"))).source_tag() == "AI-AI"


def test_human_human_session(tmp_path):
    session = make_session(seats=("human", "human"), horizon=5)
    session.join(0)
    assert session.status == "waiting"
    session.join(1)
    assert session.status == "running"
    session.submit_action(0, Action.RIGHT)
    session.submit_action(1, Action.LEFT)
    payload = session.tick()
    assert payload["joint_action"] == [int(Action.RIGHT), int(Action.LEFT)]
    while session.status != "finished":
        session.tick()
    path = session.finalize(str(tmp_path))
    assert load_trajectory(path).metadata["source"] == "human-human"


def test_broadcast_payload_shape():
    session = make_session(seats=(AgentSpec("noop"), AgentSpec("noop")))
    payload = session.tick()
    for key in ("type", "session", "status", "timestep", "horizon",
                "countdown", "reward", "score", "joint_action", "state",
                "cook_time"):
        assert key in payload
    assert payload["type"] == "state"
    json.dumps(payload)   # wire-serializable


def test_sessions_are_deterministic_given_inputs(tmp_path):
    def play():
        session = make_session(
            seats=(AgentSpec("scripted", "onion"),
                   AgentSpec("scripted", "dish")),
            horizon=25, seed=4)
        while session.status != "finished":
            session.tick()
        return session.trajectory()

    a, b = play(), play()
    assert len(a.steps) == len(b.steps)
    for step_a, step_b in zip(a.steps, b.steps):
        assert step_a.joint_action == step_b.joint_action
    assert a.total_reward == b.total_reward


# -- transport ------------------------------------------------------------------


@pytest.fixture()
def client(tmp_path):
    from fastapi.testclient import TestClient
    app = create_app(trajectory_dir=str(tmp_path / "trajectories"))
    with TestClient(app) as client:
        yield client


def test_http_session_lifecycle(client):
    created = client.post("/sessions", json={
        "layout": "micro", "cook_time": 2, "horizon": 8, "tick_ms": 5,
        "seats": ["scripted:onion", "scripted:dish"]}).json()
    assert created["status"] == "running"
    listing = client.get("/sessions").json()
    assert [s["id"] for s in listing] == [created["id"]]
    detail = client.get(f"/sessions/{created['id']}").json()
    assert detail["layout"] == "micro"
    assert client.get("/sessions/nope").status_code == 404


def test_http_create_validates(client):
    response = client.post("/sessions", json={
        "layout": "micro", "seats": ["human"]})
    assert response.status_code == 400
    response = client.post("/sessions", json={
        "layout": "no_such_layout", "seats": ["human", "human"]})
    assert response.status_code == 400


def test_finalize_endpoint_guards(client):
    created = client.post("/sessions", json={
        "layout": "micro", "cook_time": 2, "horizon": 400,
        "seats": ["human", "noop"]}).json()
    response = client.post(f"/sessions/{created['id']}/finalize")
    assert response.status_code == 409


def test_websocket_play_and_finalize(client, tmp_path):
    created = client.post("/sessions", json={
        "layout": "micro", "cook_time": 2, "horizon": 6, "tick_ms": 5,
        "seats": ["human", "noop"]}).json()
    session_id = created["id"]
    with client.websocket_connect(f"/session/{session_id}") as socket:
        first = json.loads(socket.receive_text())
        assert first["type"] == "state" and first["status"] == "waiting"
        socket.send_text(json.dumps({"type": "join", "seat": 0}))
        joined = json.loads(socket.receive_text())
        assert joined["type"] == "joined" and joined["seat"] == 0
        socket.send_text(json.dumps({"type": "action",
                                     "action": int(Action.RIGHT)}))
        seen_states = 0
        while True:
            message = json.loads(socket.receive_text())
            if message["type"] == "state":
                seen_states += 1
                assert message["timestep"] <= 6
            elif message["type"] == "end":
                break
        assert seen_states == 6
    path = client.post(f"/sessions/{session_id}/finalize").json()["path"]
    loaded = load_trajectory(path)
    assert loaded.metadata["source"] == "human-AI"
    assert loaded.length == 6


def test_websocket_rejects_unknown_session(client):
    with client.websocket_connect("/session/ghost") as socket:
        message = json.loads(socket.receive_text())
        assert message["type"] == "error"


def test_websocket_action_before_join_errors(client):
    created = client.post("/sessions", json={
        "layout": "micro", "cook_time": 2, "horizon": 5, "tick_ms": 5,
        "seats": ["human", "noop"]}).json()
    with client.websocket_connect(f"/session/{created['id']}") as socket:
        json.loads(socket.receive_text())
        socket.send_text(json.dumps({"type": "action", "action": 0}))
        message = json.loads(socket.receive_text())
        assert message["type"] == "error"
