"""Live play sessions over WebSockets.

A session holds the authoritative world state and advances it exactly once
per tick: each human seat contributes its most recently submitted action
since the last tick (default Noop, last writer wins), agent seats query
their policies, and the joint action goes through the environment. Clients
only render broadcasts; dropped or duplicated client messages can never
desynchronize the game, and tick timing jitter cannot change semantics
because all logic keys off tick order alone.

Finished sessions persist their step log in the standard trajectory format
(tagged human-AI / human-human / AI-AI), which replays and certifies like
any recorded rollout.
"""

from __future__ import annotations

import asyncio
import itertools
import json
import os
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket
from fastapi.websockets import WebSocketDisconnect

from .env import Action, KitchenEnv, WorldState
from .evaluation import AgentSpec, resolve_agent
from .layouts import load_layout
from . import trajectories
from .trajectories import Trajectory, TrajectoryStep

DEFAULT_TICK_MS = 150
DEFAULT_HORIZON = 400


class InvalidSeatConfig(ValueError):
    pass


class SessionFinished(RuntimeError):
    pass


class SeatNotJoined(RuntimeError):
    pass


class IncompleteSession(RuntimeError):
    pass


_counter = itertools.count(1)


def _next_id() -> str:
    return f"game-{next(_counter):04d}"


class GameSession:
    """One game: authoritative state, seat wiring, and the step log."""

    def __init__(self, env: KitchenEnv, seats, tick_ms: int = DEFAULT_TICK_MS,
                 horizon: int = DEFAULT_HORIZON, seed: int = 0,
                 session_id: Optional[str] = None):
        if len(seats) != 2:
            raise InvalidSeatConfig("exactly two seats required")
        if tick_ms <= 0 or horizon < 1:
            raise InvalidSeatConfig("tick_ms and horizon must be positive")
        self.id = session_id or _next_id()
        self.env = env
        self.layout = env.layout
        self.tick_ms = tick_ms
        self.horizon = horizon
        self.agents: dict = {}
        self.human_seats: list = []
        for seat, config in enumerate(seats):
            if config == "human":
                self.human_seats.append(seat)
            else:
                try:
                    self.agents[seat] = resolve_agent(config, env, seat)
                except Exception as exc:
                    raise InvalidSeatConfig(
                        f"seat {seat}: {exc}") from exc
        self.seat_labels = [
            "human" if i in self.human_seats
            else (seats[i].label() if isinstance(seats[i], AgentSpec)
                  else type(self.agents[i]).__name__)
            for i in range(2)]
        self.joined: set = set()
        self.state: WorldState = env.reset()
        self.steps: list = []
        self.pending: dict = {}
        self.total_reward = 0.0
        self._rng = np.random.default_rng(seed)
        for agent in self.agents.values():
            agent.reset()

    @property
    def status(self) -> str:
        if len(self.steps) >= self.horizon:
            return "finished"
        if self.joined >= set(self.human_seats):
            return "running"
        return "waiting"

    @property
    def timestep(self) -> int:
        return len(self.steps)

    def join(self, seat: int) -> None:
        if seat not in self.human_seats:
            raise InvalidSeatConfig(f"seat {seat} is not a human seat")
        self.joined.add(seat)

    def submit_action(self, seat: int, action: Action) -> None:
        """Record the seat's intent for the next tick (last writer wins)."""
        if self.status == "finished":
            raise SessionFinished(self.id)
        if seat not in self.human_seats:
            raise InvalidSeatConfig(f"seat {seat} is not a human seat")
        if seat not in self.joined:
            raise SeatNotJoined(f"seat {seat} has not joined")
        self.pending[seat] = Action(action)

    def tick(self) -> dict:
        """Advance the game one step and return the broadcast payload."""
        if self.status == "finished":
            raise SessionFinished(self.id)
        if self.status == "waiting":
            raise SeatNotJoined("waiting for human seats to join")
        joint = []
        for seat in range(2):
            if seat in self.agents:
                joint.append(self.agents[seat].act(self.state, seat,
                                                   self._rng))
            else:
                joint.append(self.pending.pop(seat, Action.NOOP))
        result = self.env.step(self.state, (joint[0], joint[1]))
        self.steps.append(TrajectoryStep(self.state, (joint[0], joint[1]),
                                         result.reward, result.events))
        self.state = result.state
        self.total_reward += result.reward
        return self.broadcast_payload(reward=result.reward,
                                      joint=(int(joint[0]), int(joint[1])))

    def broadcast_payload(self, reward: float = 0.0,
                          joint: Optional[tuple] = None) -> dict:
        return {
            "type": "state",
            "session": self.id,
            "status": self.status,
            "timestep": self.timestep,
            "horizon": self.horizon,
            "countdown": self.horizon - self.timestep,
            "reward": reward,
            "score": self.total_reward,
            "joint_action": list(joint) if joint else None,
            "state": self.state.to_dict(),
            "cook_time": self.env.cook_time,
        }

    def source_tag(self) -> str:
        humans = len(self.human_seats)
        return {2: "human-human", 1: "human-AI", 0: "AI-AI"}[humans]

    def trajectory(self) -> Trajectory:
        if self.status != "finished":
            raise IncompleteSession(
                f"{self.id} at step {self.timestep}/{self.horizon}")
        return Trajectory(
            layout=self.layout, horizon=self.horizon, steps=self.steps,
            final_state=self.state,
            metadata={"source": self.source_tag(), "session": self.id,
                      "seats": self.seat_labels},
            cook_time=self.env.cook_time,
            soup_reward=self.env.soup_reward)

    def finalize(self, out_dir: str) -> str:
        trajectory = self.trajectory()
        trajectories.certify(trajectory)
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, f"{self.id}.traj")
        trajectories.save(trajectory, path)
        return path

    def summary(self) -> dict:
        return {
            "id": self.id,
            "layout": self.layout.name,
            "status": self.status,
            "seats": self.seat_labels,
            "joined": sorted(self.joined),
            "timestep": self.timestep,
            "horizon": self.horizon,
            "score": self.total_reward,
            "tick_ms": self.tick_ms,
        }


# -- transport ------------------------------------------------------------------


def _parse_seat(value) -> object:
    """Seat config from the wire: 'human' or an agent spec string
    'kind[:model]'."""
    if value == "human":
        return "human"
    if isinstance(value, str):
        try:
            return AgentSpec.parse(value)
        except ValueError as exc:
            raise InvalidSeatConfig(str(exc))
    raise InvalidSeatConfig(f"bad seat entry {value!r}")


def create_app(trajectory_dir: str = "trajectories", default_seed: int = 0):
    """FastAPI application exposing session management plus the live
    socket endpoint. One JSON object per WebSocket text frame."""
    app = FastAPI(title="kitchen play service")
    sessions: dict = {}
    watchers: dict = {}
    tick_tasks: dict = {}
    app.state.sessions = sessions

    async def broadcast(session_id: str, payload: dict) -> None:
        for socket in list(watchers.get(session_id, [])):
            try:
                await socket.send_text(json.dumps(payload))
            except Exception:
                watchers[session_id].discard(socket)

    async def run_ticks(session: GameSession) -> None:
        while session.status == "running":
            await asyncio.sleep(session.tick_ms / 1000.0)
            if session.status != "running":
                break
            payload = session.tick()
            await broadcast(session.id, payload)
        if session.status == "finished":
            await broadcast(session.id, {
                "type": "end", "session": session.id,
                "score": session.total_reward,
                "timestep": session.timestep})

    def ensure_ticking(session: GameSession) -> None:
        task = tick_tasks.get(session.id)
        if session.status == "running" and (task is None or task.done()):
            tick_tasks[session.id] = asyncio.get_event_loop().create_task(
                run_ticks(session))

    @app.post("/sessions")
    async def create_session(config: dict):
        try:
            layout = load_layout(config["layout"])
            env = KitchenEnv(layout,
                             cook_time=int(config.get("cook_time", 20)))
            seats = [_parse_seat(s) for s in config["seats"]]
            session = GameSession(
                env, seats,
                tick_ms=int(config.get("tick_ms", DEFAULT_TICK_MS)),
                horizon=int(config.get("horizon", DEFAULT_HORIZON)),
                seed=int(config.get("seed", default_seed)))
        except (KeyError, ValueError, OSError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        sessions[session.id] = session
        watchers[session.id] = set()
        ensure_ticking(session)   # AI-AI games start immediately
        return {"id": session.id, **session.summary()}

    @app.get("/sessions")
    async def list_sessions():
        return [s.summary() for s in sessions.values()]

    @app.get("/sessions/{session_id}")
    async def get_session(session_id: str):
        if session_id not in sessions:
            raise HTTPException(status_code=404, detail="no such session")
        return sessions[session_id].summary()

    @app.post("/sessions/{session_id}/finalize")
    async def finalize_session(session_id: str):
        if session_id not in sessions:
            raise HTTPException(status_code=404, detail="no such session")
        try:
            path = sessions[session_id].finalize(trajectory_dir)
        except IncompleteSession as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return {"path": path}

    @app.websocket("/session/{session_id}")
    async def session_socket(socket: WebSocket, session_id: str):
        await socket.accept()
        session = sessions.get(session_id)
        if session is None:
            await socket.send_text(json.dumps(
                {"type": "error", "error": "no such session"}))
            await socket.close()
            return
        watchers[session_id].add(socket)
        seat: Optional[int] = None
        try:
            await socket.send_text(json.dumps(session.broadcast_payload()))
            while True:
                message = json.loads(await socket.receive_text())
                kind = message.get("type")
                if kind == "join":
                    try:
                        seat = int(message["seat"])
                        session.join(seat)
                    except (InvalidSeatConfig, KeyError,
                            ValueError) as exc:
                        await socket.send_text(json.dumps(
                            {"type": "error", "error": str(exc)}))
                        continue
                    await socket.send_text(json.dumps(
                        {"type": "joined", "seat": seat,
                         **session.summary()}))
                    ensure_ticking(session)
                elif kind == "action":
                    try:
                        session.submit_action(
                            seat if seat is not None else -1,
                            Action(int(message["action"])))
                    except (SessionFinished, SeatNotJoined,
                            InvalidSeatConfig, ValueError) as exc:
                        await socket.send_text(json.dumps(
                            {"type": "error", "error": str(exc)}))
                else:
                    await socket.send_text(json.dumps(
                        {"type": "error",
                         "error": f"unknown message type {kind!r}"}))
        except WebSocketDisconnect:
            pass
        finally:
            watchers[session_id].discard(socket)

    return app
