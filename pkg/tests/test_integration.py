"""End-to-end tests over real sockets: server, bots, console API, faults."""

import asyncio
import io
import json

import pytest

from copresence import states
from copresence.botclient import Bot, parse_script, run_ensemble_async
from copresence.netdiag import FaultProfile, probe_transport, stability_gate
from copresence.protocol import (
    PROTOCOL_VERSION,
    FacilitatorCommand,
    JoinAccept,
    JoinRequest,
    PoseUpdate,
    Role,
    WorldFrame,
)
from copresence.psychometrics import data_path
from copresence.server import EventLog, SessionConfig, SessionServer
from copresence.simdyn import IntegratorParams
from copresence.spatial import Pose, Vec3
from copresence.transport import connect_tcp


def short_sequences(per_state=0.4, phases=(("preparation", 2), ("journey", 3), ("integration", 1))):
    out = []
    for phase, n in phases:
        doc = {
            "version": 1,
            "phase": phase,
            "states": [{"name": f"{phase[:4]}{i}", "duration": per_state} for i in range(n)],
        }
        out.append(states.parse_sequence(json.dumps(doc).encode()))
    return tuple(out)


def config_for_tests(**kw):
    defaults = dict(
        max_participants=4,
        tick_rate=30.0,
        sequences=short_sequences(),
        auto_start=False,
        port=0,
        integrator=IntegratorParams(dt=0.002, friction=5.0, kT=0.1, rng_seed=11),
    )
    defaults.update(kw)
    return SessionConfig(**defaults)


async def start_server(config=None, log=None):
    server = SessionServer(config or config_for_tests(), log or EventLog(stream=io.StringIO()))
    await server.start()
    return server


class FacilitatorClient:
    def __init__(self, transport, accept):
        self.transport = transport
        self.id = accept.participant_id
        self.frames = []
        self.seq = 0

    @staticmethod
    async def join(port):
        t = await connect_tcp("127.0.0.1", port, "facilitator")
        await t.send(JoinRequest(PROTOCOL_VERSION, Role.FACILITATOR, "hq"))
        reply = await t.recv()
        assert isinstance(reply, JoinAccept), reply
        return FacilitatorClient(t, reply)

    async def send_pose(self, x=0.0, z=0.0):
        self.seq += 1
        p = Pose(Vec3(x, 1.6, z))
        await self.transport.send(PoseUpdate(self.seq, p, p, p))

    async def command(self, action, key=None, value=None):
        await self.transport.send(FacilitatorCommand(action, key, value))

    async def close(self):
        await self.transport.close()

    async def pump_frames(self, seconds):
        deadline = asyncio.get_running_loop().time() + seconds
        while asyncio.get_running_loop().time() < deadline:
            try:
                m = await asyncio.wait_for(self.transport.recv(), timeout=0.25)
            except asyncio.TimeoutError:
                continue
            if m is None:
                return
            if isinstance(m, WorldFrame):
                self.frames.append(m)


def load_script(name):
    return parse_script(data_path(f"bot_scripts/{name}.json").read_bytes())


class TestServerBasics:
    def test_idle_bot_receives_frames_at_tick_rate(self):
        async def scenario():
            server = await start_server(config_for_tests(auto_start=True))
            try:
                script = parse_script(json.dumps({
                    "version": 1, "name": "idler",
                    "actions": [{"type": "idle", "for": 3.0}],
                }).encode())
                bot = Bot("127.0.0.1", server.port, script, max_seconds=20.0)
                return await bot.run()
            finally:
                await server.stop()

        report = asyncio.run(scenario())
        assert not report.errors
        # ~3 s at 30 Hz; generous slack for CI scheduling
        assert 60 <= report.frames_received <= 120
        assert report.states_observed[:1] == ["prep0"]

    def test_fifth_participant_rejected_when_full(self):
        async def scenario():
            server = await start_server(config_for_tests(max_participants=4, auto_start=True))
            try:
                script = parse_script(json.dumps({
                    "version": 1, "name": "drop-in",
                    "actions": [{"type": "idle", "for": 1.0}],
                }).encode())
                reports = await run_ensemble_async(
                    "127.0.0.1", server.port, [script] * 5, until_finished=False, max_seconds=15.0
                )
                return reports
            finally:
                await server.stop()

        reports = asyncio.run(scenario())
        rejected = [r for r in reports if r.errors]
        assert len(rejected) == 1
        assert "session full" in rejected[0].errors[0]
        assert all(not r.errors for r in reports if r is not rejected[0])

    def test_diag_probe_against_live_server(self):
        async def scenario():
            server = await start_server()
            try:
                t = await connect_tcp("127.0.0.1", server.port)
                report = await probe_transport(t, n=25, interval_ms=2, timeout_ms=500)
                await t.close()
                return report
            finally:
                await server.stop()

        report = asyncio.run(scenario())
        assert report.loss_fraction == 0.0
        assert report.verdict == "good"
        assert stability_gate(report).passed


class TestSpectate:
    def test_spectating_facilitator_absent_from_all_frames_but_receives_them(self):
        async def scenario():
            server = await start_server(config_for_tests(auto_start=False))
            try:
                fac = await FacilitatorClient.join(server.port)
                await fac.send_pose()
                await fac.command("spectate", value=True)
                await fac.command("resume")
                script = parse_script(json.dumps({
                    "version": 1, "name": "watcher",
                    "actions": [{"type": "idle", "for": 2.0}],
                }).encode())
                bot = Bot("127.0.0.1", server.port, script, max_seconds=15.0)
                bot_task = asyncio.create_task(bot.run())
                await fac.pump_frames(2.0)
                report = await bot_task
                await fac.close()
                return fac, report
            finally:
                await server.stop()

        fac, report = asyncio.run(scenario())
        assert len(fac.frames) > 30  # spectator still receives every frame
        assert all(fac.id not in [a.id for a in f.avatars] for f in fac.frames)
        assert not report.errors

    def test_visible_facilitator_appears_in_frames(self):
        async def scenario():
            server = await start_server(config_for_tests(auto_start=True))
            try:
                fac = await FacilitatorClient.join(server.port)
                await fac.send_pose()
                await fac.pump_frames(1.0)
                await fac.close()
                return fac
            finally:
                await server.stop()

        fac = asyncio.run(scenario())
        assert any(fac.id in [a.id for a in f.avatars] for f in fac.frames)


class TestChoreography:
    def test_coalesce_luminosity_approaches_full_merge(self):
        # long settle idle so every bot is still streaming when the slowest
        # one reaches the center, even under loaded CI scheduling
        script = parse_script(json.dumps({
            "version": 1, "name": "coalesce-settle",
            "actions": [
                {"type": "idle", "for": 1.0},
                {"type": "move_to", "to": [0.0, 0.0], "over": 4.0},
                {"type": "idle", "for": 6.0},
            ],
        }).encode())

        async def scenario():
            server = await start_server(config_for_tests(auto_start=True, sequences=short_sequences(per_state=8.0)))
            try:
                return await run_ensemble_async(
                    "127.0.0.1", server.port, [script] * 4, until_finished=False, max_seconds=40.0,
                )
            finally:
                await server.stop()

        reports = asyncio.run(scenario())
        assert all(not r.errors for r in reports)
        # all four bodies end at their local centers = one shared point;
        # judge at the last tick every bot observed
        traces = [dict(r.luminosity_trace) for r in reports]
        common = set(traces[0]).intersection(*[set(t) for t in traces[1:]])
        assert common
        last = max(common)
        finals = [t[last] for t in traces]
        assert all(abs(l - 10.0) / 10.0 < 0.05 for l in finals), finals
        # luminosity is non-decreasing over the final stretch of convergence
        tail_ticks = sorted(t for t in common if t >= last - 45)
        tail = [traces[0][t] for t in tail_ticks]
        assert all(b >= a - 1e-6 for a, b in zip(tail, tail[1:]))

    def test_hold_thread_changes_sim_against_control(self):
        async def run_one(script_name):
            server = await start_server(config_for_tests(auto_start=True, sequences=short_sequences(per_state=6.0)))
            try:
                reports = await run_ensemble_async(
                    "127.0.0.1", server.port, [load_script(script_name)],
                    until_finished=False, max_seconds=30.0,
                )
                fac = await FacilitatorClient.join(server.port)
                await fac.pump_frames(0.2)
                positions = fac.frames[-1].sim_positions
                await fac.close()
                return positions
            finally:
                await server.stop()

        async def scenario():
            touched = await run_one("hold_thread")
            control = await run_one("coalesce")
            return touched, control

        touched, control = asyncio.run(scenario())
        assert touched != control

    def test_mimic_and_breathing_scripts_run_clean(self):
        async def scenario():
            server = await start_server(config_for_tests(auto_start=True, sequences=short_sequences(per_state=8.0)))
            try:
                return await run_ensemble_async(
                    "127.0.0.1", server.port,
                    [load_script("breathing_arms"), load_script("mimic"), load_script("bow")],
                    until_finished=False, max_seconds=40.0,
                )
            finally:
                await server.stop()

        reports = asyncio.run(scenario())
        assert all(not r.errors for r in reports)
        assert all(r.frames_received > 100 for r in reports)


class TestFaultedRuns:
    def test_faulted_ensemble_consistent_final_state(self):
        async def scenario():
            server = await start_server(config_for_tests(auto_start=False, sequences=short_sequences(per_state=0.5)))
            try:
                fac = await FacilitatorClient.join(server.port)
                await fac.command("spectate", value=True)

                async def conduct():
                    # wait until everyone is visible, then start the script
                    while True:
                        await fac.pump_frames(0.2)
                        if fac.frames and len(fac.frames[-1].avatars) == 4:
                            break
                    await fac.command("resume")
                    await fac.pump_frames(6.0)

                conductor = asyncio.create_task(conduct())
                reports = await run_ensemble_async(
                    "127.0.0.1", server.port, [load_script("coalesce")] * 4,
                    fault=FaultProfile(seed=99, drop_p=0.05, jitter_ms=100.0),
                    until_finished=True, max_seconds=45.0,
                )
                await conductor
                await fac.close()
                return reports
            finally:
                await server.stop()

        reports = asyncio.run(scenario())
        assert all(not r.errors for r in reports)
        assert all(r.saw_finished for r in reports)
        expected = ["prep0", "prep1", "jour0", "jour1", "jour2", "inte0"]
        for r in reports:
            assert r.states_observed == expected
            assert r.max_pose_staleness_ms < 10_000
        assert len({r.final_state_name for r in reports}) == 1

    def test_last_pose_delivered_gives_lossless_final_positions(self):
        # eventual consistency: with drops but an idle tail of re-sent poses,
        # the final applied pose equals the no-fault run's
        async def run_once(fault):
            server = await start_server(config_for_tests(auto_start=True, sequences=short_sequences(per_state=4.0)))
            try:
                fac = await FacilitatorClient.join(server.port)
                await fac.command("spectate", value=True)
                script = load_script("coalesce")
                pump = asyncio.create_task(fac.pump_frames(25.0))
                reports = await run_ensemble_async(
                    "127.0.0.1", server.port, [script] * 2, fault=fault,
                    until_finished=False, max_seconds=30.0,
                )
                assert all(not r.errors for r in reports)
                pump.cancel()
                await fac.close()
                full = [f for f in fac.frames if len(f.avatars) == 2]
                assert full, "facilitator never saw both bots"
                return {a.id: a.head.position for a in full[-1].avatars}
            finally:
                await server.stop()

        async def scenario():
            clean = await run_once(None)
            lossy = await run_once(FaultProfile(seed=5, drop_p=0.2))
            return clean, lossy

        clean, lossy = asyncio.run(scenario())
        assert set(clean) == set(lossy) != set()
        for pid, pos in clean.items():
            other = lossy[pid]
            assert abs(pos.x - other.x) < 1e-9
            assert abs(pos.z - other.z) < 1e-9


class TestConsoleApi:
    def test_session_view_command_and_event_stream(self):
        import aiohttp

        async def scenario():
            config = config_for_tests(auto_start=False, console_port=0, sequences=short_sequences(per_state=30.0))
            server = SessionServer(config, EventLog(stream=io.StringIO()), console_token="sekrit")
            await server.start()
            try:
                base = f"http://127.0.0.1:{server.console_port}"
                headers = {"Authorization": "Bearer sekrit"}
                async with aiohttp.ClientSession() as http:
                    # unauthorized requests are rejected
                    async with http.get(f"{base}/session") as resp:
                        assert resp.status == 401
                    # authorized view
                    async with http.get(f"{base}/session", headers=headers) as resp:
                        assert resp.status == 200
                        view = await resp.json()
                    assert view["started"] is False
                    assert "registry" in view and "global.light_level" in view["registry"]

                    # subscribe to events, then drive commands
                    events = []
                    async with http.ws_connect(f"{base}/events", headers=headers) as ws:
                        async with http.post(f"{base}/command", json={"action": "resume"}, headers=headers) as resp:
                            assert resp.status == 200
                        async with http.post(
                            f"{base}/command",
                            json={"action": "set_override", "key": "global.light_level", "value": 0.15},
                            headers=headers,
                        ) as resp:
                            assert resp.status == 200
                        async with http.post(f"{base}/command", json={"action": "skip"}, headers=headers) as resp:
                            assert resp.status == 200
                        deadline = asyncio.get_running_loop().time() + 3.0
                        while asyncio.get_running_loop().time() < deadline and len(events) < 3:
                            msg = await ws.receive(timeout=1.0)
                            if msg.type == aiohttp.WSMsgType.TEXT:
                                events.append(json.loads(msg.data))

                    async with http.get(f"{base}/session", headers=headers) as resp:
                        after = await resp.json()
                    # bad command rejected with a structured error
                    async with http.post(f"{base}/command", json={"action": "warp"}, headers=headers) as resp:
                        assert resp.status == 400
                return view, after, events
            finally:
                await server.stop()

        view, after, events = asyncio.run(scenario())
        assert after["started"] is True
        assert after["overrides"] == {"global.light_level": 0.15}
        assert after["state"]["index"] == 1  # the skip advanced the timeline
        kinds = [e["type"] for e in events]
        assert "state-entered" in kinds
        assert all("event_id" in e for e in events)
        ids = [e["event_id"] for e in events]
        assert ids == sorted(ids)
