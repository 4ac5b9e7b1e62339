"""Single entry point: serve, bot, ensemble, diag, score, compare, replay.

All subcommands are non-interactive and deterministic given their inputs
and seeds. Machine-readable output goes to stdout as single-line JSON with
--json. Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import asyncio
import csv
import io
import json
import secrets
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import botclient, netdiag, psychometrics, states, stats
from .protocol import DEFAULT_PORT
from .server import EventLog, SessionConfig, SessionServer, replay_log

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

SHIPPED_SEQUENCES = ("preparation", "journey", "integration")


class CliError(RuntimeError):
    """Runtime failure with a message for stderr."""


def _read_file(path: str) -> bytes:
    p = Path(path)
    if not p.exists():
        raise CliError(f"no such file: {path}")
    return p.read_bytes()


def _parse_endpoint(value: str) -> tuple[str, int]:
    if ":" in value:
        host, _, port = value.rpartition(":")
        return host or "127.0.0.1", int(port)
    return value, DEFAULT_PORT


def _load_sequences(paths: Sequence[str]) -> tuple[states.StateSequence, ...]:
    if not paths:
        paths = [str(psychometrics.data_path(f"sequences/{name}.json")) for name in SHIPPED_SEQUENCES]
    out = []
    for path in paths:
        try:
            out.append(states.parse_sequence(_read_file(path)))
        except states.SchemaError as e:
            raise CliError(f"{path}: {e}") from e
    return tuple(out)


def _load_script(ref: str) -> botclient.BotScript:
    shipped = psychometrics.data_path(f"bot_scripts/{ref}.json")
    path = shipped if shipped.exists() and not Path(ref).exists() else Path(ref)
    if not path.exists():
        raise CliError(f"no such script: {ref} (shipped: bow, breathing_arms, mimic, coalesce, hold_thread)")
    try:
        return botclient.parse_script(path.read_bytes())
    except states.SchemaError as e:
        raise CliError(f"{path}: {e}") from e


def _load_fault(path: Optional[str]) -> Optional[netdiag.FaultProfile]:
    if path is None:
        return None
    try:
        obj = json.loads(_read_file(path).decode("utf-8"))
        return netdiag.FaultProfile(
            seed=int(obj.get("seed", 0)),
            base_delay_ms=float(obj.get("base_delay_ms", 0.0)),
            jitter_ms=float(obj.get("jitter_ms", 0.0)),
            drop_p=float(obj.get("drop_p", 0.0)),
            dup_p=float(obj.get("dup_p", 0.0)),
        )
    except (json.JSONDecodeError, ValueError) as e:
        raise CliError(f"{path}: bad fault profile: {e}") from e


def _write_text(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# --- subcommands -----------------------------------------------------------


def cmd_serve(args: argparse.Namespace) -> int:
    sequences = _load_sequences(args.states or [])
    config_obj = {}
    if args.config:
        try:
            config_obj = json.loads(_read_file(args.config).decode("utf-8"))
        except json.JSONDecodeError as e:
            raise CliError(f"{args.config}: bad config JSON: {e}") from e
    config_obj.pop("sequences", None)
    base = SessionConfig.from_jsonable(config_obj) if config_obj else SessionConfig()
    from dataclasses import replace

    config = replace(
        base,
        sequences=sequences,
        port=args.port,
        console_port=args.console_port,
        auto_start=args.auto_start or base.auto_start,
    )
    log = EventLog(path=args.log) if args.log else EventLog()
    token = secrets.token_urlsafe(12)

    async def main() -> None:
        server = SessionServer(config, log, console_token=token)
        await server.start()
        print(f"session server on port {server.port}", flush=True)
        if config.console_port is not None:
            print(f"console on port {config.console_port}, token {token}", flush=True)
        try:
            await server.serve_forever()
        except asyncio.CancelledError:
            pass
        finally:
            await server.stop()

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def cmd_bot(args: argparse.Namespace) -> int:
    host, port = _parse_endpoint(args.server)
    script = _load_script(args.script)
    report = botclient.run_bot(
        host, port, script, name=args.name or script.name,
        until_finished=args.until_finished, max_seconds=args.max_seconds,
    )
    print(json.dumps(report.to_json_dict(), sort_keys=True))
    return EXIT_RUNTIME if report.errors else EXIT_OK


def cmd_ensemble(args: argparse.Namespace) -> int:
    host, port = _parse_endpoint(args.server)
    names = args.scripts or ["coalesce"]
    scripts = [_load_script(names[i % len(names)]) for i in range(args.n)]
    fault = _load_fault(args.fault)
    try:
        reports = botclient.run_ensemble(
            host, port, scripts, fault=fault,
            until_finished=args.until_finished, max_seconds=args.max_seconds,
        )
    except botclient.EnsembleError as e:
        print(json.dumps({"error": str(e)}), file=sys.stderr)
        return EXIT_RUNTIME
    for r in reports:
        print(json.dumps(r.to_json_dict(), sort_keys=True))
    return EXIT_RUNTIME if any(r.errors for r in reports) else EXIT_OK


def cmd_diag(args: argparse.Namespace) -> int:
    host, port = _parse_endpoint(args.server)
    try:
        report = netdiag.probe(host, port, args.pings, interval_ms=args.interval_ms)
    except ConnectionError as e:
        raise CliError(str(e)) from e
    gate = netdiag.stability_gate(report)
    out = report.to_json_dict()
    out["gate"] = {"passed": gate.passed, "reason": gate.reason, "advice": list(gate.advice)}
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK if gate.passed else EXIT_RUNTIME


def _score_meq30(text: str, json_mode: bool) -> tuple[str, dict]:
    responses = psychometrics.load_meq30_csv(text)
    out = io.StringIO()
    w = csv.writer(out)
    w.writerow(["participant_id", *psychometrics.FACTORS, "complete_mte"])
    scores = {}
    for pid, resp in responses.items():
        s = psychometrics.score_meq30(resp)
        scores[pid] = s
        w.writerow([pid] + [f"{getattr(s, f):.6g}" for f in psychometrics.FACTORS] + [int(psychometrics.complete_mte(s))])
    summaries = psychometrics.factor_cohort_summaries(scores.values())
    n_complete = sum(1 for s in scores.values() if psychometrics.complete_mte(s))
    summary = {
        "n": len(scores),
        "complete_mte": n_complete,
        "complete_mte_fraction": n_complete / len(scores) if scores else 0.0,
        "factors": {f: {"mean": s.mean, "sd": s.sd} for f, s in summaries.items()},
    }
    return out.getvalue(), summary


def _score_edi(text: str, json_mode: bool) -> tuple[str, dict]:
    responses = psychometrics.load_edi_csv(text)
    out = io.StringIO()
    w = csv.writer(out)
    w.writerow(["participant_id", "dissolution_mean", "inflation_mean"])
    dis, inf = [], []
    for pid, resp in responses.items():
        s = psychometrics.score_edi(resp)
        dis.append(s.dissolution_mean)
        inf.append(s.inflation_mean)
        w.writerow([pid, f"{s.dissolution_mean:.6g}", f"{s.inflation_mean:.6g}"])
    summary = {"n": len(responses)}
    if len(dis) >= 2:
        summary["dissolution"] = {"mean": stats.mean(dis), "sd": stats.sample_sd(dis)}
        summary["inflation"] = {"mean": stats.mean(inf), "sd": stats.sample_sd(inf)}
    return out.getvalue(), summary


def _score_ics(text: str, json_mode: bool) -> tuple[str, dict]:
    pairs = psychometrics.load_ics_csv(text)
    out = io.StringIO()
    w = csv.writer(out)
    w.writerow(["participant_id", "pre", "post"])
    pre, post = [], []
    for pid, (a, b) in pairs.items():
        pre.append(a)
        post.append(b)
        w.writerow([pid, a, b])
    summary = {"n": len(pairs)}
    if len(pre) >= 2:
        summary["pre"] = {"mean": stats.mean(pre), "sd": stats.sample_sd(pre)}
        summary["post"] = {"mean": stats.mean(post), "sd": stats.sample_sd(post)}
        try:
            wil = stats.wilcoxon_signed_rank(pre, post)
            summary["wilcoxon"] = {"w": wil.w, "p_two_sided": wil.p_two_sided, "n_used": wil.n_used, "exact": wil.exact}
        except (ValueError, stats.DegenerateDataError) as e:
            summary["wilcoxon"] = {"error": str(e)}
    return out.getvalue(), summary


def _score_communitas(text: str, json_mode: bool) -> tuple[str, dict]:
    scored = psychometrics.load_communitas_csv(text)
    out = io.StringIO()
    w = csv.writer(out)
    w.writerow(["participant_id", "total8", "pct_of_max", "bond_participant", "bond_facilitator"])
    totals = []
    for pid, s in scored.items():
        totals.append(s.total8)
        w.writerow([pid, s.total8, f"{s.pct_of_max:.6g}", s.bond_participant, s.bond_facilitator])
    summary = {"n": len(scored)}
    if len(totals) >= 2:
        summary["total8"] = {"mean": stats.mean(totals), "sd": stats.sample_sd(totals)}
    return out.getvalue(), summary


def cmd_score(args: argparse.Namespace) -> int:
    text = _read_file(args.input).decode("utf-8")
    scorers = {"meq30": _score_meq30, "edi": _score_edi, "ics": _score_ics, "communitas": _score_communitas}
    try:
        table, summary = scorers[args.instrument](text, args.json)
    except (psychometrics.ResponseValidationError, ValueError) as e:
        raise CliError(str(e)) from e
    _write_text(args.out, table)
    if args.json:
        print(json.dumps({"instrument": args.instrument, **summary}, sort_keys=True))
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    try:
        scores = psychometrics.load_factor_scores_csv(_read_file(args.scores).decode("utf-8"))
        cohort = psychometrics.factor_cohort_summaries(scores.values())
        cohort_row, studies = psychometrics.load_reference_csv(_read_file(args.reference).decode("utf-8"))
    except (ValueError, psychometrics.ResponseValidationError) as e:
        raise CliError(str(e)) from e
    results = psychometrics.compare_to_reference(cohort, studies, alpha=args.alpha)
    out = io.StringIO()
    w = csv.writer(out)
    w.writerow(["label", "n_compared", "n_indistinguishable", "n_higher", "n_lower", "more_intense_on_all",
                *(f"{f}_p" for f in psychometrics.FACTORS)])
    for r in results:
        p_by_factor = {c.factor: c.p for c in r.comparisons}
        w.writerow(
            [r.label, r.n_compared, r.n_indistinguishable, r.n_higher, r.n_lower, int(r.more_intense_on_all)]
            + [f"{p_by_factor[f]:.5f}" if f in p_by_factor else "" for f in psychometrics.FACTORS]
        )
    _write_text(args.out, out.getvalue())
    counts = {
        "studies": len(results),
        "more_intense_on_all_4": sum(1 for r in results if r.n_compared == 4 and r.n_higher == 4),
        "indistinguishable_on_all_4": sum(1 for r in results if r.n_compared == 4 and r.n_indistinguishable == 4),
        "indistinguishable_on_exactly_3": sum(1 for r in results if r.n_compared == 4 and r.n_indistinguishable == 3),
    }
    if args.json:
        print(json.dumps(counts, sort_keys=True))
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    lines = _read_file(args.log).decode("utf-8").splitlines()
    try:
        result = replay_log(lines)
    except (ValueError, KeyError) as e:
        raise CliError(f"unreplayable log: {e}") from e
    print(json.dumps({
        "ticks": result.ticks,
        "frames_checked": result.frames_checked,
        "mismatches": list(result.mismatches),
        "ok": result.ok,
    }, sort_keys=True))
    return EXIT_OK if result.ok else EXIT_RUNTIME


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="copresence", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run a session server")
    p.add_argument("--port", type=int, default=DEFAULT_PORT)
    p.add_argument("--states", nargs="*", help="sequence JSON files (default: shipped 3-phase script)")
    p.add_argument("--config", help="session config JSON file")
    p.add_argument("--log", help="event log path (JSON lines)")
    p.add_argument("--console-port", type=int, default=None)
    p.add_argument("--auto-start", action="store_true", help="run the script without waiting for a facilitator")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("bot", help="run one scripted participant")
    p.add_argument("--server", required=True, help="host:port")
    p.add_argument("--script", required=True, help="shipped script name or JSON path")
    p.add_argument("--name", default="")
    p.add_argument("--until-finished", action="store_true")
    p.add_argument("--max-seconds", type=float, default=120.0)
    p.set_defaults(func=cmd_bot)

    p = sub.add_parser("ensemble", help="run N bots against one session")
    p.add_argument("--server", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--scripts", nargs="*", help="script names cycled across bots")
    p.add_argument("--fault", help="fault profile JSON file")
    p.add_argument("--until-finished", action="store_true")
    p.add_argument("--max-seconds", type=float, default=120.0)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("diag", help="latency/jitter/loss check against a server")
    p.add_argument("--server", required=True)
    p.add_argument("--pings", type=int, default=50)
    p.add_argument("--interval-ms", type=float, default=20.0)
    p.set_defaults(func=cmd_diag)

    p = sub.add_parser("score", help="score a questionnaire CSV")
    p.add_argument("instrument", choices=["meq30", "edi", "ics", "communitas"])
    p.add_argument("--input", required=True)
    p.add_argument("--out", default="-", help="output CSV path (default stdout)")
    p.add_argument("--json", action="store_true", help="print a one-line JSON summary")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("compare", help="compare factor scores to reference studies")
    p.add_argument("--scores", required=True, help="per-participant factor scores CSV")
    p.add_argument("--reference", required=True, help="reference summaries CSV")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out", default="-")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("replay", help="verify a session event log replays identically")
    p.add_argument("--log", required=True)
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        if e.code in (0, None):
            return EXIT_OK
        return EXIT_USAGE
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except ConnectionError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
