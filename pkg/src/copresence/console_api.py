"""Facilitator console endpoint: GET /session, POST /command, WS /events.

The console is a pure view/controller: every mutation travels through the
same serialized session queue as any facilitator client, so killing the
console can never change session state. Requests must carry the session
token printed at server startup (Authorization: Bearer <token> or a
?token= query parameter).

If a built frontend exists (frontend/dist next to the repo root, or a
directory named by COPRESENCE_CONSOLE_DIST), it is served at /.
"""

from __future__ import annotations

import asyncio
import json
import os
from pathlib import Path

from aiohttp import WSMsgType, web

from .protocol import FacilitatorCommand, ProtocolError


def _authorized(server, request: web.Request) -> bool:
    if server.console_token is None:
        return True
    header = request.headers.get("Authorization", "")
    if header == f"Bearer {server.console_token}":
        return True
    return request.query.get("token") == server.console_token


def _frontend_dist() -> Path | None:
    env = os.environ.get("COPRESENCE_CONSOLE_DIST")
    candidates = [Path(env)] if env else []
    candidates.append(Path(__file__).resolve().parents[2] / "frontend" / "dist")
    for c in candidates:
        if c.is_dir() and (c / "index.html").exists():
            return c
    return None


async def start_console(server, port: int):
    """Start the console site; returns the aiohttp runner (cleanup() to stop)."""

    async def get_session(request: web.Request) -> web.Response:
        if not _authorized(server, request):
            return web.json_response({"error": "unauthorized"}, status=401)
        return web.json_response(server.session.view())

    async def post_command(request: web.Request) -> web.Response:
        if not _authorized(server, request):
            return web.json_response({"error": "unauthorized"}, status=401)
        try:
            body = await request.json()
            cmd = FacilitatorCommand(
                str(body["action"]), body.get("key"), body.get("value")
            )
        except (json.JSONDecodeError, KeyError, TypeError, ProtocolError) as e:
            return web.json_response({"error": f"bad command: {e}"}, status=400)
        replies = server.session.ingest_console(cmd)
        if replies:
            return web.json_response({"error": replies[0].detail, "code": replies[0].code}, status=409)
        return web.json_response({"ok": True})

    async def ws_events(request: web.Request) -> web.WebSocketResponse:
        if not _authorized(server, request):
            raise web.HTTPUnauthorized()
        ws = web.WebSocketResponse(heartbeat=20)
        await ws.prepare(request)
        queue: asyncio.Queue = asyncio.Queue(maxsize=512)
        server.event_subscribers.add(queue)
        try:
            sender = asyncio.create_task(_pump(queue, ws))
            async for msg in ws:
                if msg.type in (WSMsgType.ERROR, WSMsgType.CLOSE):
                    break
        finally:
            server.event_subscribers.discard(queue)
            sender.cancel()
        return ws

    async def _pump(queue: asyncio.Queue, ws: web.WebSocketResponse) -> None:
        try:
            while True:
                event = await queue.get()
                await ws.send_str(json.dumps(event, sort_keys=True))
        except (ConnectionError, asyncio.CancelledError, RuntimeError):
            pass

    app = web.Application()
    app.router.add_get("/session", get_session)
    app.router.add_post("/command", post_command)
    app.router.add_get("/events", ws_events)
    dist = _frontend_dist()
    if dist is not None:
        async def index(_request: web.Request) -> web.FileResponse:
            return web.FileResponse(dist / "index.html")

        app.router.add_get("/", index)
        app.router.add_static("/assets", dist / "assets" if (dist / "assets").is_dir() else dist)
    else:
        async def placeholder(_request: web.Request) -> web.Response:
            return web.Response(text="console frontend not built; API at /session /command /events")

        app.router.add_get("/", placeholder)

    runner = web.AppRunner(app)
    await runner.setup()
    site = web.TCPSite(runner, "0.0.0.0", port)
    await site.start()
    actual_port = site._server.sockets[0].getsockname()[1]  # resolves port 0
    return runner, actual_port
