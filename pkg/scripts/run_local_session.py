#!/usr/bin/env python3
"""Demo: one full scripted session with four bots, time-compressed.

Starts a server on an ephemeral port, joins a spectating facilitator that
kicks off the three-phase script (compressed 100x so it finishes in about
half a minute), runs four converging bots, and prints what everyone saw.
Pass --console-port to also expose the facilitator console while it runs.
"""

import argparse
import asyncio
import io
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from copresence import states
from copresence.botclient import parse_script, run_ensemble_async
from copresence.netdiag import FaultProfile
from copresence.psychometrics import data_path
from copresence.server import EventLog, SessionConfig, SessionServer
from copresence.simdyn import IntegratorParams


async def run(console_port, drop_p, jitter_ms, compression):
    shipped = [
        states.parse_sequence(data_path(f"sequences/{n}.json").read_bytes())
        for n in ("preparation", "journey", "integration")
    ]
    config = SessionConfig(
        max_participants=4,
        sequences=tuple(states.compressed(s, compression) for s in shipped),
        auto_start=False,
        port=0,
        console_port=console_port,
        integrator=IntegratorParams(dt=0.002, friction=5.0, kT=0.1, rng_seed=1),
    )
    log_sink = io.StringIO()
    server = SessionServer(config, EventLog(stream=log_sink), console_token="demo")
    await server.start()
    print(f"server on port {server.port}" + (f", console on {server.console_port} (token: demo)" if console_port is not None else ""))

    from test_integration import FacilitatorClient  # scripted facilitator

    try:
        fac = await FacilitatorClient.join(server.port)
        await fac.command("spectate", value=True)

        async def conduct():
            while True:
                await fac.pump_frames(0.2)
                if fac.frames and len(fac.frames[-1].avatars) == 4:
                    break
            print("all four participants visible; starting the script")
            await fac.command("resume")
            await fac.pump_frames(90.0)

        conductor = asyncio.create_task(conduct())
        script = parse_script(data_path("bot_scripts/coalesce.json").read_bytes())
        fault = FaultProfile(seed=7, drop_p=drop_p, jitter_ms=jitter_ms) if (drop_p or jitter_ms) else None
        reports = await run_ensemble_async(
            "127.0.0.1", server.port, [script] * 4, fault=fault,
            until_finished=True, max_seconds=120.0,
        )
        conductor.cancel()
        await fac.close()

        print("\n== bot reports ==")
        for r in reports:
            peak = max(v for _, v in r.luminosity_trace)
            print(
                f"  {r.participant_id}: {r.frames_received} frames, "
                f"{len(r.states_observed)} states, peak luminosity {peak:.2f}, "
                f"max pose staleness {r.max_pose_staleness_ms:.0f} ms"
            )
        event_lines = log_sink.getvalue().splitlines()
        print(f"\nsession log: {len(event_lines)} events")
    finally:
        await server.stop()


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--console-port", type=int, default=None)
    parser.add_argument("--drop-p", type=float, default=0.0)
    parser.add_argument("--jitter-ms", type=float, default=0.0)
    parser.add_argument("--compression", type=float, default=0.01, help="duration scale factor")
    args = parser.parse_args()
    asyncio.run(run(args.console_port, args.drop_p, args.jitter_ms, args.compression))
    return 0


if __name__ == "__main__":
    sys.exit(main())
