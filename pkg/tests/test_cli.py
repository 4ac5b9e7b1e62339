import asyncio
import csv
import io
import json
import subprocess
import sys
import threading
import time
from pathlib import Path

import pytest

from copresence.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from copresence.psychometrics import FACTOR_ITEMS, FACTORS, data_path, load_factor_scores_csv


@pytest.fixture()
def capsys_json(capsys):
    def last_json_line():
        lines = [l for l in capsys.readouterr().out.strip().splitlines() if l.startswith("{")]
        return json.loads(lines[-1])

    return last_json_line


def items_for_scores(scores):
    """Inverse construction: per-factor item values whose rounded factor
    scores equal the given integers (all bundled scores are achievable)."""
    items = [0] * 30
    for factor, target in scores.items():
        positions = FACTOR_ITEMS[factor]
        k = len(positions)
        total = round(target * k / 20.0)
        q, r = divmod(total, k)
        for j, pos in enumerate(positions):
            items[pos - 1] = q + (1 if j < r else 0)
    return items


class TestScoreMeq30:
    def test_inverse_construction_fixture_reproduces_bundled_scores(self, tmp_path, capsys_json):
        bundled = load_factor_scores_csv(data_path("table_sm1.csv").read_text())
        items_csv = tmp_path / "items.csv"
        with open(items_csv, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["participant_id"] + [f"item{i}" for i in range(1, 31)])
            for pid, s in bundled.items():
                w.writerow([pid] + items_for_scores({f: getattr(s, f) for f in FACTORS}))
        out_csv = tmp_path / "scores.csv"
        rc = main(["score", "meq30", "--input", str(items_csv), "--out", str(out_csv), "--json"])
        assert rc == EXIT_OK
        produced = load_factor_scores_csv(out_csv.read_text())
        assert len(produced) == 58
        for pid, s in bundled.items():
            got = produced[pid]
            for f in FACTORS:
                assert round(getattr(got, f)) == getattr(s, f), (pid, f)
        summary = capsys_json()
        assert summary["n"] == 58
        assert summary["complete_mte"] == 17

    def test_missing_input_file(self, capsys):
        assert main(["score", "meq30", "--input", "/no/such/file.csv"]) == EXIT_RUNTIME
        assert "/no/such/file.csv" in capsys.readouterr().err

    def test_bad_item_value(self, tmp_path, capsys):
        p = tmp_path / "bad.csv"
        p.write_text(
            "participant_id," + ",".join(f"item{i}" for i in range(1, 31)) + "\n"
            + "p1," + ",".join(["9"] * 30) + "\n"
        )
        assert main(["score", "meq30", "--input", str(p)]) == EXIT_RUNTIME


class TestCompare:
    def test_bundled_cohort_against_references(self, tmp_path, capsys_json):
        out_csv = tmp_path / "cmp.csv"
        rc = main([
            "compare",
            "--scores", str(data_path("table_sm1.csv")),
            "--reference", str(data_path("reference_meq30.csv")),
            "--alpha", "0.05",
            "--out", str(out_csv),
            "--json",
        ])
        assert rc == EXIT_OK
        counts = capsys_json()
        assert counts["studies"] == 27
        assert counts["more_intense_on_all_4"] == 3
        rows = list(csv.DictReader(io.StringIO(out_csv.read_text())))
        by_label = {r["label"]: r for r in rows}
        assert by_label["Bar '18, MeO-DMT"]["more_intense_on_all"] == "1"
        assert by_label["Vlis '18, ketamine"]["n_compared"] == "2"

    def test_usage_error_exit_code(self):
        assert main(["compare", "--scores"]) == EXIT_USAGE
        assert main(["frobnicate"]) == EXIT_USAGE
        assert main(["--help"]) == EXIT_OK


class TestScoreOtherInstruments:
    def test_ics_roundtrip_with_wilcoxon(self, tmp_path, capsys_json):
        p = tmp_path / "ics.csv"
        rows = ["participant_id,pre_choice,post_choice"]
        rows += [f"p{i},a,{'def'[i % 3]}" for i in range(12)]
        p.write_text("\n".join(rows) + "\n")
        rc = main(["score", "ics", "--input", str(p), "--out", str(tmp_path / "o.csv"), "--json"])
        assert rc == EXIT_OK
        summary = capsys_json()
        assert summary["post"]["mean"] > summary["pre"]["mean"]
        assert summary["wilcoxon"]["p_two_sided"] < 0.01

    def test_communitas(self, tmp_path, capsys_json):
        p = tmp_path / "comm.csv"
        header = "participant_id," + ",".join(f"item{i}" for i in range(1, 11))
        p.write_text(header + "\np1," + ",".join(["6"] * 10) + "\np2," + ",".join(["5"] * 10) + "\n")
        rc = main(["score", "communitas", "--input", str(p), "--out", str(tmp_path / "o.csv"), "--json"])
        assert rc == EXIT_OK
        assert capsys_json()["total8"]["mean"] == pytest.approx(44.0)

    def test_edi(self, tmp_path, capsys_json):
        p = tmp_path / "edi.csv"
        header = "participant_id," + ",".join(f"item{i}" for i in range(1, 17))
        p.write_text(header + "\np1," + ",".join(["40"] * 16) + "\np2," + ",".join(["60"] * 16) + "\n")
        rc = main(["score", "edi", "--input", str(p), "--out", str(tmp_path / "o.csv"), "--json"])
        assert rc == EXIT_OK
        assert capsys_json()["dissolution"]["mean"] == pytest.approx(50.0)


class TestReplayCommand:
    def test_replay_roundtrip_via_cli(self, tmp_path, capsys):
        import copresence.states as states
        from copresence.protocol import PROTOCOL_VERSION, JoinRequest, Role
        from copresence.server import EventLog, Session, SessionConfig
        from copresence.simdyn import IntegratorParams

        seq = states.parse_sequence(json.dumps({
            "version": 1, "phase": "journey",
            "states": [{"name": "a", "duration": 0.2}, {"name": "b", "duration": 0.2}],
        }).encode())
        log_path = tmp_path / "session.jsonl"
        s = Session(
            SessionConfig(sequences=(seq,), auto_start=True,
                          integrator=IntegratorParams(dt=0.002, friction=5.0, kT=0.1, rng_seed=3)),
            EventLog(path=str(log_path)),
        )
        s.handle_join(JoinRequest(PROTOCOL_VERSION, Role.PARTICIPANT))
        for _ in range(8):
            s.tick()
        s.close()
        rc = main(["replay", "--log", str(log_path)])
        assert rc == EXIT_OK
        out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert out["ok"] is True and out["frames_checked"] == 8


class TestServeAndDiagProcess:
    def test_serve_diag_bot_over_subprocess(self, tmp_path):
        # one real process running `serve`, drive it with diag and a bot
        seq = {
            "version": 1, "phase": "journey",
            "states": [{"name": "only", "duration": 60}],
        }
        seq_path = tmp_path / "seq.json"
        seq_path.write_text(json.dumps(seq))
        log_path = tmp_path / "run.jsonl"
        port = 38991
        proc = subprocess.Popen(
            [sys.executable, "-m", "copresence.cli", "serve", "--port", str(port),
             "--states", str(seq_path), "--log", str(log_path), "--auto-start"],
            stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True,
        )
        try:
            line = proc.stdout.readline()
            assert "session server on port" in line
            rc = main(["diag", "--server", f"127.0.0.1:{port}", "--pings", "20", "--interval-ms", "2"])
            assert rc == EXIT_OK
            script = tmp_path / "s.json"
            script.write_text(json.dumps({
                "version": 1, "name": "smoke",
                "actions": [{"type": "idle", "for": 1.0}],
            }))
            rc = main(["bot", "--server", f"127.0.0.1:{port}", "--script", str(script), "--max-seconds", "10"])
            assert rc == EXIT_OK
        finally:
            proc.terminate()
            proc.wait(timeout=10)

    def test_diag_unreachable_server(self):
        assert main(["diag", "--server", "127.0.0.1:1", "--pings", "3"]) == EXIT_RUNTIME
