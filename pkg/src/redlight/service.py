"""Real-time session server for driver-in-the-loop runs.

One WebSocket connection carries one session: JSON command messages in
(open, pedal, pause, resume, reset, step, close) and JSON frame messages
out, one frame per 0.1 s simulation tick.  Commands are queued and applied
only at tick boundaries; a slow client gets frames dropped rather than
stalling the tick loop.  ``/health`` reports the live session count.
"""

from __future__ import annotations

import asyncio
import contextlib
import logging
from dataclasses import dataclass, field

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .scenarios import CANONICAL, variant
from .sim import POLICY_HUMAN, SIM_DT, World

log = logging.getLogger(__name__)

SCHEMA = "redlight-frame-v1"
PACE_MIN = 0.25
PACE_MAX = 4.0
SEND_TIMEOUT = 0.05   # s before an outbound frame is dropped

COMMANDS = ("open", "pedal", "pause", "resume", "reset", "step", "close")


@dataclass
class SessionState:
    """Single driver-in-the-loop world plus its pacing and input state."""

    scenario_id: str
    seed: int = 0
    pace: float = 1.0
    paused: bool = False
    world: World = field(init=False)

    def __post_init__(self):
        if self.scenario_id not in CANONICAL:
            raise KeyError(f"unknown scenario {self.scenario_id!r}")
        self.pace = float(min(max(self.pace, PACE_MIN), PACE_MAX))
        self.reset()

    def reset(self) -> None:
        cfg = variant(CANONICAL[self.scenario_id], self.seed)
        self.world = World(cfg, engine="advisory",
                           driver_policy=POLICY_HUMAN)

    def set_pedal(self, throttle: float, brake: float) -> None:
        throttle = float(min(max(throttle, 0.0), 1.0))
        brake = float(min(max(brake, 0.0), 1.0))
        self.world.pedal = (throttle, brake)

    def tick(self) -> dict:
        """Advance the world one 0.1 s step and return the outbound frame."""
        self.world.step()
        return self.frame()

    def frame(self) -> dict:
        world = self.world
        session = world.session
        warning = None
        plan = None
        if session is not None and session.latest is not None:
            sig = session.latest.signal
            warning = {"u": sig.u, "color": sig.color,
                       "diameter_fraction": sig.diameter_fraction,
                       "stale": sig.stale}
            plan = {"t": [round(v, 3) for v in session.latest.plan_t],
                    "x": [round(v, 3) for v in session.latest.plan_x],
                    "v": [round(v, 3) for v in session.latest.plan_v]}
        return {
            "type": "frame",
            "schema": SCHEMA,
            "t": round(world.t, 3),
            "phase": world.timeline.phase_at(world.t),
            "stop_bar_position_m": 0.0,
            "vehicles": [
                {"id": v.id, "position_m": round(v.position, 3),
                 "speed_mps": round(v.speed, 3),
                 "accel_mps2": round(v.accel, 3),
                 "length_m": v.length, "is_ego": v.is_ego}
                for v in world.vehicles
            ],
            "warning": warning,
            "plan": plan,
            "baseline_warning": bool(world.baseline_flag),
            "paused": self.paused,
        }


def _error(message: str) -> dict:
    return {"type": "error", "schema": SCHEMA, "message": message}


def create_app() -> FastAPI:
    app = FastAPI(title="redlight live service")
    app.state.sessions = 0

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "sessions": app.state.sessions}

    @app.websocket("/session")
    async def session_socket(ws: WebSocket) -> None:
        await ws.accept()
        app.state.sessions += 1
        try:
            await _serve(ws)
        except WebSocketDisconnect:
            pass
        finally:
            app.state.sessions -= 1

    return app


async def _send_frame(ws: WebSocket, frame: dict) -> None:
    """Best-effort send: a client that cannot keep up loses frames."""
    try:
        await asyncio.wait_for(ws.send_json(frame), timeout=SEND_TIMEOUT)
    except asyncio.TimeoutError:
        log.debug("dropped frame at t=%s (slow client)", frame.get("t"))


async def _serve(ws: WebSocket) -> None:
    state: SessionState | None = None
    queue: asyncio.Queue = asyncio.Queue()
    disconnect = object()

    async def reader() -> None:
        try:
            while True:
                await queue.put(await ws.receive_json())
        except Exception:   # disconnect or malformed stream ends the session
            await queue.put(disconnect)

    reader_task = asyncio.create_task(reader())
    try:
        while True:
            # apply every queued command at the tick boundary
            timeout = None
            if state is not None and not state.paused:
                timeout = SIM_DT / state.pace
            try:
                cmd = await asyncio.wait_for(queue.get(), timeout=timeout)
            except asyncio.TimeoutError:
                cmd = None
            if cmd is disconnect:
                return

            if cmd is not None:
                state, done = await _apply(ws, state, cmd)
                if done:
                    return
                continue
            if state is not None and not state.paused:
                await _send_frame(ws, state.tick())
    finally:
        reader_task.cancel()
        with contextlib.suppress(asyncio.CancelledError):
            await reader_task


async def _apply(ws: WebSocket, state: SessionState | None,
                 cmd: dict) -> tuple[SessionState | None, bool]:
    kind = cmd.get("type")
    if kind not in COMMANDS:
        await ws.send_json(_error(f"unknown command {kind!r}"))
        return state, False
    if kind == "open":
        try:
            opened = SessionState(
                scenario_id=cmd.get("scenario", ""),
                seed=int(cmd.get("seed", 0)),
                pace=float(cmd.get("pace", 1.0)),
                paused=bool(cmd.get("paused", False)),
            )
        except KeyError as exc:
            # failed open leaves any existing session untouched
            await ws.send_json(_error(str(exc)))
            return state, False
        await ws.send_json(opened.frame())
        return opened, False
    if state is None:
        await ws.send_json(_error("no open session"))
        return None, False
    if kind == "pedal":
        state.set_pedal(float(cmd.get("throttle", 0.0)),
                        float(cmd.get("brake", 0.0)))
    elif kind == "pause":
        state.paused = True
    elif kind == "resume":
        state.paused = False
    elif kind == "reset":
        state.reset()
        await ws.send_json(state.frame())
    elif kind == "step":
        for _ in range(max(1, int(cmd.get("n", 1)))):
            await ws.send_json(state.tick())
    elif kind == "close":
        return None, True
    return state, False


app = create_app()


def main() -> None:  # pragma: no cover - thin launcher
    import argparse

    import uvicorn

    parser = argparse.ArgumentParser(description="redlight live service")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8321)
    args = parser.parse_args()
    uvicorn.run(app, host=args.host, port=args.port)


if __name__ == "__main__":  # pragma: no cover
    main()
